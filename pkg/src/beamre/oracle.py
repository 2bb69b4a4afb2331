"""Independent cross-checks for the solver chain.

None of these are meant to ship in a production loop. They exist to bound
and verify: an exhaustive grid over tiny instances, a projected-gradient
solver for the fixed-gain inner problem, central finite differences, and
DE-vs-Monte-Carlo rate comparisons.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._simplex import project_simplex
from .de import de_objective_batch, de_sum_rates
from .model import ChannelStats, PowerAllocation, SystemParams
from .powerctl import inner_problem
from .rates import mc_sum_rates

__all__ = [
    "OracleReport",
    "GRID_DIM_CAP",
    "MC_RATE_FLOOR",
    "grid_search_re",
    "refsolve_inner",
    "fd_check",
    "de_vs_mc_report",
]

LN2 = math.log(2.0)
GRID_DIM_CAP = 6
MC_RATE_FLOOR = 1e-6  # bits/s/Hz
_GRID_BATCH = 20000
ORACLE_KINDS = ("grid", "refsolver", "fd", "de_vs_mc")


@dataclass(frozen=True)
class OracleReport:
    kind: str
    gap: float
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ORACLE_KINDS:
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if not self.gap >= 0:
            raise ValueError("gap must be >= 0")


def _simplex_grid(dim: int, steps: int):
    """Integer points ``i >= 0`` with ``sum(i) <= steps``, yielded in chunks."""
    # stars and bars: choose dim cut positions among steps + dim slots
    chunk = []
    for cuts in itertools.combinations(range(steps + dim), dim):
        prev = -1
        pt = []
        for c in cuts:
            pt.append(c - prev - 1)
            prev = c
        chunk.append(pt)
        if len(chunk) == _GRID_BATCH:
            yield np.array(chunk, dtype=float)
            chunk = []
    if chunk:
        yield np.array(chunk, dtype=float)


def grid_search_re(stats: ChannelStats, params: SystemParams,
                   grid_points_per_dim: int) -> tuple[PowerAllocation, float]:
    """Best DE-RE over a uniform grid of ``{lambda >= 0, sum(lambda) <= Pmax}``.

    Each coordinate takes values ``i * Pmax / (G - 1)`` for ``G`` points per
    dimension; only points inside the budget are evaluated.
    """
    stats.check(params)
    dim = params.K * params.M
    if dim > GRID_DIM_CAP:
        raise ValueError(f"grid oracle is capped at K*M <= {GRID_DIM_CAP}, got {dim}")
    if grid_points_per_dim < 2:
        raise ValueError("grid_points_per_dim must be >= 2")
    steps = grid_points_per_dim - 1
    h = params.Pmax / steps
    best_re = -math.inf
    best = np.zeros((params.K, params.M))
    for pts in _simplex_grid(dim, steps):
        lam = (pts * h).reshape(-1, params.K, params.M)
        _, re = de_objective_batch(stats, lam, params)
        i = int(np.argmax(re))
        if re[i] > best_re:
            best_re = float(re[i])
            best = lam[i].copy()
    return PowerAllocation(best), best_re


def refsolve_inner(stats: ChannelStats, gammas, gamma_tildes, d, P_T: float, sigma2: float,
                   offset: float = 0.0, stall: float = 1e-9,
                   max_iter: int = 200000) -> tuple[PowerAllocation, float]:
    """Projected gradient ascent on the fixed-gain surrogate over ``sum(lambda) = P_T``.

    Armijo backtracking with a growing trial step; stops once the objective
    gain of an accepted step falls to ``stall`` (relative to ``max(1, |S|)``).
    Returns the allocation and the objective in bits.
    """
    if P_T < 0:
        raise ValueError("P_T must be >= 0")
    prob = inner_problem(stats, gammas, gamma_tildes, d, sigma2, offset)
    K, M = prob.K, prob.M
    if P_T == 0.0:
        x = np.zeros((K, M))
        return PowerAllocation(x), prob.value_nats(x) / LN2
    x = np.full((K, M), P_T / (K * M))
    val = prob.value_nats(x)
    step = P_T / max(np.abs(prob.gradient(x)).max(), 1e-300)
    for _ in range(max_iter):
        g = prob.gradient(x)
        while True:
            cand = project_simplex(x + step * g, P_T)
            cval = prob.value_nats(cand)
            # sufficient increase along the projected arc
            if cval >= val + 1e-4 * float((g * (cand - x)).sum()):
                break
            step *= 0.5
            if step < 1e-30 * P_T:
                return PowerAllocation(x), val / LN2
        gain = cval - val
        x, val = cand, cval
        step *= 2.0
        if gain <= stall * max(1.0, abs(val)):
            break
    return PowerAllocation(x), val / LN2


def fd_check(f: Callable[[float], float], x0: float, delta: float,
             analytic: float | Callable[[float], float]) -> float:
    """Relative gap between ``analytic`` and the central difference of ``f`` at ``x0``.

    ``analytic`` is the derivative value or a callable returning it. The gap
    is ``|a - fd| / max(|a|, |fd|)`` and 0 when both vanish.
    """
    if not delta > 0:
        raise ValueError("delta must be > 0")
    a = analytic(x0) if callable(analytic) else float(analytic)
    fd = (f(x0 + delta) - f(x0 - delta)) / (2.0 * delta)
    scale = max(abs(a), abs(fd))
    if scale == 0.0:
        return 0.0
    return abs(a - fd) / scale


def de_vs_mc_report(stats: ChannelStats, alloc: PowerAllocation, params: SystemParams,
                    n_samples: int, seed: int) -> OracleReport:
    """Per-UT and aggregate gaps between the DE rates and Monte-Carlo rates.

    Gaps are ``|DE - MC| / max(MC, floor)`` with the approximate (interference
    treated as Gaussian noise) rate as the Monte-Carlo reference.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    de = np.array(de_sum_rates(stats, alloc, params.sigma2))
    mc = np.array(mc_sum_rates(stats, alloc, params.sigma2, n_samples, seed))
    per_user = np.abs(de - mc) / np.maximum(mc, MC_RATE_FLOOR)
    agg = abs(de.sum() - mc.sum()) / max(mc.sum(), MC_RATE_FLOOR)
    return OracleReport("de_vs_mc", float(agg), {
        "de_rates": de.tolist(),
        "mc_rates": mc.tolist(),
        "per_user_gap": per_user.tolist(),
        "de_se": float(de.sum()),
        "mc_se": float(mc.sum()),
        "n_samples": int(n_samples),
        "seed": int(seed),
    })
