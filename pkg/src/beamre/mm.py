"""Minorization-maximization outer loop.

Each iteration linearises the concave interference term ``f`` at the
current allocation, freezes the DE gains there, and hands the resulting
concave-over-affine surrogate to the two-layer solver in
:mod:`beamre.powerctl`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from ._simplex import project_capped
from .config import SolverConfig
from .de import de_fixed_point, de_re_value, g_bar_nats
from .model import ChannelStats, PowerAllocation, SystemParams, budget_power, total_power
from .powerctl import PTSearchResult, inner_problem, pt_search
from .rates import interference_floor

__all__ = [
    "MMState",
    "mm_derivative",
    "f_value",
    "taylor_upper_bound",
    "surrogate_value",
    "de_objective_gradient",
    "stationarity_residual",
    "mm_solve",
]

LN2 = math.log(2.0)
# a refresh round that gains less than this fraction of eps3 ends the inner loop
_INNER_STOP = 0.01


@dataclass
class MMState:
    """Trace of one MM run.

    ``re_trace[0]`` is the DE-RE of the initial allocation; entry ``l`` is the
    value after ``l`` MM iterations (bits/J/Hz). ``d`` is the last
    linearisation (nats/W).
    """

    ell: int = 0
    alloc: PowerAllocation | None = None
    d: np.ndarray | None = None
    re_trace: list = field(default_factory=list)
    converged: bool = False
    status: str = "running"
    backtracks: int = 0
    pt_trace: list = field(default_factory=list)
    anchor_gaps: list = field(default_factory=list)


def mm_derivative(stats: ChannelStats, alloc: PowerAllocation, sigma2: float) -> np.ndarray:
    """Gradient of ``sum_k log det Kbar_k`` w.r.t. each UT's beam powers.

    Returns a ``(K, M)`` array in nats/W; row ``k`` only collects the terms of
    the other UTs ``k' != k``.
    """
    per_ut = np.array([(1.0 / interference_floor(stats, alloc, k, sigma2)) @ stats.omega[k]
                       for k in range(stats.K)])
    return per_ut.sum(axis=0)[None, :] - per_ut


def f_value(stats: ChannelStats, alloc: PowerAllocation, sigma2: float) -> float:
    """``sum_k log det Kbar_k(alloc)`` in nats."""
    return float(sum(np.log(interference_floor(stats, alloc, k, sigma2)).sum()
                     for k in range(stats.K)))


def taylor_upper_bound(f_value_at_anchor: float, d_at_anchor: np.ndarray,
                       alloc: PowerAllocation, anchor_alloc: PowerAllocation) -> float:
    """First-order expansion of ``f`` around the anchor; an upper bound on ``f``."""
    return float(f_value_at_anchor + (np.asarray(d_at_anchor) * (alloc.lam - anchor_alloc.lam)).sum())


def surrogate_value(stats: ChannelStats, alloc: PowerAllocation, anchor: PowerAllocation,
                    params: SystemParams, config: SolverConfig | None = None) -> float:
    """Surrogate DE-RE at ``alloc`` with ``f`` linearised at ``anchor`` (bits/J/Hz).

    Minorises :func:`~beamre.de.de_re_value` and touches it at ``anchor``.
    """
    cfg = config or SolverConfig()
    g = sum(g_bar_nats(de_fixed_point(stats, alloc, k, params.sigma2, cfg.eps1, cfg.max_fp_iter),
                       alloc.lam[k]) for k in range(stats.K))
    f_ub = taylor_upper_bound(f_value(stats, anchor, params.sigma2),
                              mm_derivative(stats, anchor, params.sigma2), alloc, anchor)
    c = 1.0 / total_power(alloc, params) + params.beta / budget_power(params)
    return c * (g - f_ub) / LN2


def de_objective_gradient(stats: ChannelStats, alloc: PowerAllocation,
                          params: SystemParams, config: SolverConfig | None = None):
    """DE sum rate (nats) and its gradient ``(K, M)`` w.r.t. the beam powers.

    The gain terms are differentiated with the auxiliaries held fixed, which
    is exact at the fixed point.
    """
    cfg = config or SolverConfig()
    states = [de_fixed_point(stats, alloc, k, params.sigma2, cfg.eps1, cfg.max_fp_iter)
              for k in range(stats.K)]
    lam = alloc.lam
    value = sum(g_bar_nats(s, lam[k]) - np.log(s.kbar).sum() for k, s in enumerate(states))
    cross = np.array([(1.0 / (s.gamma_tilde + s.kbar)) @ stats.omega[k]
                      for k, s in enumerate(states)])
    gamma = np.array([s.gamma for s in states])
    grad = gamma / (1.0 + gamma * lam) + (cross.sum(axis=0)[None, :] - cross)
    grad -= mm_derivative(stats, alloc, params.sigma2)
    return float(value), grad


def stationarity_residual(stats: ChannelStats, alloc: PowerAllocation, params: SystemParams,
                          config: SolverConfig | None = None) -> float:
    """Scale-free projected-gradient residual of DE-RE on the feasible set.

    Zero exactly at a KKT point; at most 1.
    """
    rate, grad = de_objective_gradient(stats, alloc, params, config)
    p_sum = total_power(alloc, params)
    c = 1.0 / p_sum + params.beta / budget_power(params)
    g = c * grad - params.xi * rate / p_sum ** 2
    scale = np.abs(g).max()
    if scale == 0.0 or params.Pmax == 0.0:
        return 0.0
    t = params.Pmax / scale
    step = project_capped(alloc.lam + t * g, params.Pmax) - alloc.lam
    return float(np.abs(step).max() / params.Pmax)


def _inner_model(stats, x, anchor, d, f_anchor, params, cfg):
    """Concave model of the surrogate with DE gains frozen at ``x``.

    Equals the surrogate sum rate (nats) at ``x``; ``d``/``f_anchor`` carry
    the linearisation made at ``anchor``.
    """
    states = [de_fixed_point(stats, x, k, params.sigma2, cfg.eps1, cfg.max_fp_iter)
              for k in range(stats.K)]
    offset = (-sum((1.0 - 1.0 / s.phi_tilde).sum() for s in states)
              - f_anchor + float((d * anchor.lam).sum()))
    return inner_problem(stats, [s.gamma for s in states], [s.gamma_tilde for s in states], d,
                         params.sigma2, offset)


def _surrogate_re(stats, x, anchor, d, f_anchor, params, cfg, warm=None):
    """Surrogate RE at ``x`` (bits/J/Hz).

    ``warm`` is an optional per-UT list of ``phi_tilde`` starts, updated in
    place; the fixed point is unique, so this only saves iterations.
    """
    g = 0.0
    for k in range(stats.K):
        s = de_fixed_point(stats, x, k, params.sigma2, cfg.eps1, cfg.max_fp_iter,
                           None if warm is None else warm[k])
        if warm is not None:
            warm[k] = s.phi_tilde
        g += g_bar_nats(s, x.lam[k])
    f_ub = taylor_upper_bound(f_anchor, d, x, anchor)
    c = 1.0 / total_power(x, params) + params.beta / budget_power(params)
    return c * (g - f_ub) / LN2


def _line_search(fn, start, start_val, target, xatol=1e-3):
    """Best point on the segment ``start -> target``.

    ``fn`` is quasi-concave along the segment (concave numerator over an
    affine denominator), so a bounded scalar search finds the maximiser.
    Falls back to ``start`` if nothing beats it.
    """
    diff = target.lam - start.lam
    res = minimize_scalar(lambda t: -fn(PowerAllocation(start.lam + t * diff)),
                          bounds=(0.0, 1.0), method="bounded", options={"xatol": xatol})
    cand_val = -res.fun
    t_end = 1.0
    end_val = fn(target)
    if end_val >= cand_val:
        res_t, cand_val = t_end, end_val
    else:
        res_t = float(res.x)
    if cand_val < start_val:
        return start, start_val, res.nfev
    return PowerAllocation(start.lam + res_t * diff), cand_val, res.nfev


def _solve_surrogate(stats, anchor, anchor_re, params, cfg, state):
    """Maximise the surrogate linearised at ``anchor``.

    Alternates the two-layer solve with refreshing the DE gains at the new
    point (``cfg.inner_rounds`` rounds at most); every round is accepted only
    if the surrogate does not decrease.
    """
    d = mm_derivative(stats, anchor, params.sigma2)
    f_anchor = f_value(stats, anchor, params.sigma2)
    state.d = d

    warm = [None] * stats.K

    def sur(x):
        return _surrogate_re(stats, x, anchor, d, f_anchor, params, cfg, warm)

    x, val = anchor, anchor_re
    traces = []
    for rnd in range(cfg.inner_rounds):
        prob = _inner_model(stats, x, anchor, d, f_anchor, params, cfg)
        if rnd == 0:
            c = 1.0 / total_power(anchor, params) + params.beta / budget_power(params)
            state.anchor_gaps.append(abs(c * prob.value_nats(anchor.lam) / LN2 - anchor_re))
        pt: PTSearchResult = pt_search(stats, None, None, None, params, cfg, x0=x.lam, prob=prob)
        traces.append(pt.trace)
        target = pt.alloc
        if target.total > params.Pmax:
            target = PowerAllocation(target.lam * (params.Pmax / target.total))
        new_x, new_val, tries = _line_search(sur, x, val, target)
        state.backtracks += tries
        gain = new_val - val
        x, val = new_x, new_val
        if gain <= _INNER_STOP * cfg.eps3:
            break
    state.pt_trace.append(traces)
    return x


def mm_solve(stats: ChannelStats, params: SystemParams, config: SolverConfig | None = None,
             init_alloc: PowerAllocation | None = None) -> tuple[PowerAllocation, MMState]:
    """Maximise DE resource efficiency by minorization-maximization.

    Starts from ``init_alloc`` (default: ``Pmax`` spread evenly over all
    ``K * M`` beams). Each iteration linearises the interference term at the
    current allocation and maximises the resulting surrogate with the
    two-layer scheme, refreshing the DE gains between passes.

    Returns the final allocation and the :class:`MMState`. When the iteration
    cap is hit, the last (and best) allocation is returned with
    ``state.converged = False``.
    """
    cfg = config or SolverConfig()
    stats.check(params)
    if init_alloc is None:
        init_alloc = PowerAllocation.uniform(params.K, params.M, params.Pmax)
    if init_alloc.lam.shape != (params.K, params.M):
        raise ValueError("init_alloc has the wrong shape")
    if init_alloc.total > params.Pmax * (1 + 1e-12) + 1e-12:
        raise ValueError("init_alloc exceeds the power budget")

    alloc = init_alloc
    re_val = de_re_value(stats, alloc, params, cfg.eps1, cfg.max_fp_iter)
    state = MMState(alloc=alloc, re_trace=[re_val])
    for ell in range(1, cfg.max_mm_iter + 1):
        cand = _solve_surrogate(stats, alloc, re_val, params, cfg, state)
        re_new = de_re_value(stats, cand, params, cfg.eps1, cfg.max_fp_iter)
        if re_new < re_val:
            # cannot happen for an exact minorizer; guards round-off
            cand, re_new = alloc, re_val
        delta = re_new - re_val
        alloc, re_val = cand, re_new
        state.ell = ell
        state.alloc = alloc
        state.re_trace.append(re_val)
        if abs(delta) <= cfg.eps3:
            state.converged = True
            state.status = "converged"
            break
    else:
        state.status = "max_iter"
    return alloc, state
