import numpy as np
import pytest

from beamre.model import ChannelStats, SystemParams, dbm_to_watt, synth_coupling

# lines collected by test_acceptance and echoed in the terminal summary
ACCEPTANCE_LINES = []


def make_params(M=8, K=2, N=2, pmax_dbm=40.0, beta=0.5, **kw):
    base = dict(W=10e6, sigma2=dbm_to_watt(-105.0), xi=5.0, Pc=1.0, Ps=10.0)
    base.update(kw)
    return SystemParams(M=M, K=K, N=(N,) * K, Pmax=dbm_to_watt(pmax_dbm), beta=beta, **base)


def make_stats(params, seed=0, support_fraction=0.25, decay=0.1, pathloss_db=-120.0):
    return synth_coupling(params, pathloss_db, support_fraction, decay, seed)


def zero_stats(params):
    return ChannelStats(tuple(np.zeros((n, params.M)) for n in params.N))


@pytest.fixture
def small():
    p = make_params(M=8, K=3, N=2, pmax_dbm=40.0)
    return p, make_stats(p, seed=3, support_fraction=0.5)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def anchor_terms(params, stats, alloc):
    """DE gains and interference slopes at ``alloc``, as the MM loop builds them."""
    from beamre.de import de_fixed_point
    from beamre.mm import mm_derivative

    states = [de_fixed_point(stats, alloc, k, params.sigma2) for k in range(params.K)]
    return (np.array([s.gamma for s in states]), [s.gamma_tilde for s in states],
            mm_derivative(stats, alloc, params.sigma2))


def random_inner(seed, M=8, K=3, N=2, pmax_dbm=40.0):
    """A multi-user inner problem anchored at a random feasible allocation."""
    from beamre.model import PowerAllocation

    p = make_params(M=M, K=K, N=N, pmax_dbm=pmax_dbm)
    st = make_stats(p, seed=seed, support_fraction=0.5)
    rng = np.random.default_rng(seed)
    lam = rng.dirichlet(np.ones(K * M)).reshape(K, M) * p.Pmax * rng.uniform(0.2, 1.0)
    g, gt, d = anchor_terms(p, st, PowerAllocation(lam))
    return p, st, g, gt, d
