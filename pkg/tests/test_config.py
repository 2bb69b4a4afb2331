import pytest
from hypothesis import given, settings, strategies as st

from beamre.config import ConfigError, SolverConfig, parse_config, render_config


def test_dbm_units():
    cfg = parse_config("M = 4\nK = 2\nPc = 30 dBm\nPmax = 40dBm\nsigma2 = -105 dBm\n")
    assert cfg.params.Pc == pytest.approx(1.0)
    assert cfg.params.Pmax == pytest.approx(10.0)
    assert cfg.params.sigma2 == pytest.approx(10 ** -13.5)


def test_other_units_and_lists():
    cfg = parse_config("M = 4\nK = 2\nN = 1, 3\nW = 10 MHz\nPs = 500 mW\n")
    assert cfg.params.N == (1, 3)
    assert cfg.params.W == 1e7
    assert cfg.params.Ps == pytest.approx(0.5)


def test_missing_required_key_is_named():
    with pytest.raises(ConfigError, match="'M'"):
        parse_config("K = 2\n")


def test_defaults_are_runnable():
    cfg = parse_config("M = 8\nK = 2\nbeta = 0.5\n")
    assert cfg.params.beta == 0.5
    assert cfg.params.N == (4, 4)
    assert cfg.solver == SolverConfig()
    assert cfg.sweep.kind is None


@pytest.mark.parametrize("text,line", [
    ("M = 4\nK = 2\nbogus = 1\n", 3),
    ("M = 4\n# comment\nK = two\n", 3),
    ("M = 4\nK = 2\nPmax = 3 parsecs\n", 3),
    ("M = 4\nK = 2\nK = 3\n", 3),
    ("M = 4\nK = 2\njust words\n", 3),
    ("M = 4\nK = 2\nN = 1, 2, 3\n", 3),
    ("M = 4\nK = 2\neps3 = -1\n", 3),
    ("M = 4\nK = 2\nsweep = pmax\nsweep_start = 40\nsweep_stop = 30\nsweep_step = 5\n", 5),
    ("M = 4\nK = 2\nsweep = nonsense\n", 3),
    ("M = 4\nK = 2\nsupport_fraction = 2\n", 3),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_sweep_range_is_inclusive():
    cfg = parse_config("M = 4\nK = 2\nsweep = pmax\nsweep_start = 30\n"
                       "sweep_stop = 50\nsweep_step = 5\n")
    assert cfg.sweep.values == (30.0, 35.0, 40.0, 45.0, 50.0)
    with pytest.raises(ConfigError):
        parse_config("M = 4\nK = 2\nsweep = pmax\nsweep_start = 30\nsweep_stop = 50\n")


def test_solver_validation():
    with pytest.raises(ValueError):
        SolverConfig(max_mm_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(eps1=0.0)


@settings(max_examples=40, deadline=None)
@given(M=st.integers(1, 64), K=st.integers(1, 6), beta=st.floats(0, 10),
       pmax=st.floats(0, 100), eps3=st.floats(1e-12, 1e-3), seed=st.integers(0, 2**31 - 1),
       kind=st.sampled_from([None, "pmax", "beta", "multistart"]),
       sf=st.floats(0.01, 1.0), jitter=st.booleans())
def test_render_roundtrip(M, K, beta, pmax, eps3, seed, kind, sf, jitter):
    text = (f"M = {M}\nK = {K}\nbeta = {beta!r}\nPmax = {pmax!r} W\neps3 = {eps3!r}\n"
            f"seed = {seed}\nsupport_fraction = {sf!r}\njitter = {str(jitter).lower()}\n")
    if kind:
        text += f"sweep = {kind}\nsweep_values = 1.5, 2.5\n"
    cfg = parse_config(text)
    assert parse_config(render_config(cfg)) == cfg
