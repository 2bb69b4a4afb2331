import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beamre.config import SolverConfig
from beamre.de import de_fixed_point, de_re_value
from beamre.mm import (
    de_objective_gradient,
    f_value,
    mm_derivative,
    mm_solve,
    stationarity_residual,
    surrogate_value,
    taylor_upper_bound,
)
from beamre.model import PowerAllocation
from beamre.oracle import fd_check

from conftest import make_params, make_stats, zero_stats

TIGHT = SolverConfig(eps1=1e-13, eps2=1e-12, eps3=1e-14, inner_rounds=20)


def _waterfill_closed_form(gamma, total):
    # lambda_m = (L - 1/gamma_m)^+ with sum(lambda) = total
    live = gamma > 0
    inv = np.sort(1.0 / gamma[live])
    for n in range(len(inv), 0, -1):
        level = (total + inv[:n].sum()) / n
        if level > inv[n - 1]:
            break
    out = np.zeros_like(gamma)
    out[live] = np.maximum(level - 1.0 / gamma[live], 0.0)
    return out


def test_derivative_matches_finite_differences(small):
    p, st_ = small
    lam = np.random.default_rng(0).uniform(0.1, 1.0, (p.K, p.M))
    d = mm_derivative(st_, PowerAllocation(lam), p.sigma2)
    for k, m in [(0, 2), (1, 5), (2, 7)]:
        def f(v, k=k, m=m):
            x = lam.copy()
            x[k, m] = v
            return f_value(st_, PowerAllocation(x), p.sigma2)
        assert fd_check(f, lam[k, m], 1e-5, d[k, m]) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_taylor_bound_is_an_upper_bound(seed):
    p = make_params(M=6, K=3, N=2)
    st_ = make_stats(p, seed=seed % 40, support_fraction=0.5)
    rng = np.random.default_rng(seed)
    a, b = (PowerAllocation(rng.uniform(0, 4, (3, 6))) for _ in range(2))
    ub = taylor_upper_bound(f_value(st_, a, p.sigma2), mm_derivative(st_, a, p.sigma2), b, a)
    assert ub >= f_value(st_, b, p.sigma2) - 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_surrogate_minorizes_and_touches(seed):
    p = make_params(M=6, K=2, N=2)
    st_ = make_stats(p, seed=seed % 40, support_fraction=0.5)
    rng = np.random.default_rng(seed)
    a, b = (PowerAllocation(rng.uniform(0, 1, (2, 6))) for _ in range(2))
    assert surrogate_value(st_, a, a, p) == pytest.approx(de_re_value(st_, a, p), rel=1e-9)
    assert surrogate_value(st_, b, a, p) <= de_re_value(st_, b, p) + 1e-12


def test_objective_gradient_matches_finite_differences(small):
    p, st_ = small
    lam = np.random.default_rng(2).uniform(0.1, 1.0, (p.K, p.M))
    _, grad = de_objective_gradient(st_, PowerAllocation(lam), p, SolverConfig(eps1=1e-13))
    for k, m in [(0, 3), (2, 4)]:
        def f(v, k=k, m=m):
            x = lam.copy()
            x[k, m] = v
            return de_objective_gradient(st_, PowerAllocation(x), p,
                                         SolverConfig(eps1=1e-13))[0]
        assert fd_check(f, lam[k, m], 1e-5, grad[k, m]) <= 1e-5


@pytest.mark.parametrize("seed,pmax_dbm", [(0, 20.0), (1, 35.0), (2, 45.0)])
def test_trace_nondecreasing_and_feasible(seed, pmax_dbm):
    p = make_params(M=16, K=3, N=2, pmax_dbm=pmax_dbm)
    st_ = make_stats(p, seed=seed)
    alloc, state = mm_solve(st_, p)
    tr = np.array(state.re_trace)
    assert np.all(np.diff(tr) >= -1e-9)
    assert state.converged and state.status == "converged"
    assert alloc.total <= p.Pmax * (1 + 1e-7)
    assert tr[-1] == pytest.approx(de_re_value(st_, alloc, p), rel=1e-12)
    assert stationarity_residual(st_, alloc, p) < 1e-3


@pytest.mark.parametrize("seed,pmax_dbm", [(0, 10.0), (1, 30.0), (2, 45.0)])
def test_single_user_matches_closed_form(seed, pmax_dbm):
    # one UT sees no interference, so the optimum water-fills over its own
    # DE gains at the power it ends up using
    p = make_params(M=8, K=1, N=2, pmax_dbm=pmax_dbm)
    st_ = make_stats(p, seed=seed, support_fraction=0.5)
    alloc, state = mm_solve(st_, p, TIGHT)
    assert state.converged
    s = de_fixed_point(st_, alloc, 0, p.sigma2, eps1=1e-13)
    expect = _waterfill_closed_form(s.gamma, alloc.total)
    np.testing.assert_allclose(alloc.lam[0], expect, rtol=0, atol=1e-6)


def test_zero_budget_and_zero_channel():
    p = make_params(M=4, K=2, pmax_dbm=30.0)
    alloc, state = mm_solve(make_stats(p), p.replace(Pmax=0.0))
    assert alloc.total == 0.0 and state.converged
    alloc, state = mm_solve(zero_stats(p), p)
    assert state.converged
    assert state.re_trace[-1] == 0.0


def test_rejects_bad_initial_allocation():
    p = make_params(M=4, K=2, pmax_dbm=30.0)
    st_ = make_stats(p)
    with pytest.raises(ValueError):
        mm_solve(st_, p, init_alloc=PowerAllocation.uniform(2, 4, 2 * p.Pmax))
    with pytest.raises(ValueError):
        mm_solve(st_, p, init_alloc=PowerAllocation.uniform(3, 4, p.Pmax))


def test_iteration_cap_reports_max_iter():
    p = make_params(M=16, K=4, N=2, pmax_dbm=45.0)
    st_ = make_stats(p, seed=4)
    _, state = mm_solve(st_, p, SolverConfig(max_mm_iter=1, eps3=1e-15))
    assert state.status == "max_iter" and not state.converged
    assert len(state.re_trace) == 2
    assert state.re_trace[1] >= state.re_trace[0]


def test_deterministic(small):
    p, st_ = small
    a1, s1 = mm_solve(st_, p)
    a2, s2 = mm_solve(st_, p)
    assert a1 == a2 and s1.re_trace == s2.re_trace
