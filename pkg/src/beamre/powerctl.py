"""Two-layer solver for the per-iteration surrogate problem.

The inner layer maximises the concave surrogate sum rate at a fixed total
transmit power ``P_T`` by generalised multi-user water-filling: a bisection
on the water level ``mu`` wrapping Gauss-Seidel Newton sweeps over all
``(k, m)`` beams. The outer layer searches ``P_T`` in ``[0, Pmax]`` with a
derivative-assisted gradient ascent, using that ``d SE / d P_T = mu*``.

Units: the surrogate is evaluated in nats, ``mu`` is in nats/W. Public
``se_value`` / ``re_value`` fields are converted to bits.

The Gauss-Seidel sweep is the hot loop. It runs in the compiled
``beamre._wfcore`` extension when available and falls back to
``beamre._wfcore_py`` otherwise; set ``BEAMRE_PURE_PYTHON=1`` to force the
fallback.
"""

from __future__ import annotations

import importlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import SolverConfig
from .model import ChannelStats, PowerAllocation, SystemParams, _as_stack, budget_power

__all__ = [
    "BACKEND",
    "use_backend",
    "InnerProblem",
    "WaterfillResult",
    "PTSearchResult",
    "WaterfillError",
    "inner_problem",
    "nu",
    "nu_prime",
    "mu_upper_bound",
    "waterfill",
    "re_derivative",
    "pt_search",
]

LN2 = math.log(2.0)


def _load_backend(name: str | None = None):
    if name is None:
        name = "python" if os.environ.get("BEAMRE_PURE_PYTHON") else "cython"
    if name == "cython":
        try:
            return importlib.import_module("beamre._wfcore"), "cython"
        except ImportError:
            name = "python"
    if name != "python":
        raise ValueError(f"unknown backend {name!r}")
    return importlib.import_module("beamre._wfcore_py"), "python"


_core, BACKEND = _load_backend()


def use_backend(name: str) -> str:
    """Switch the sweep kernel to ``"cython"`` or ``"python"``.

    Returns the backend actually selected (``"python"`` if the extension is
    not built).
    """
    global _core, BACKEND
    _core, BACKEND = _load_backend(name)
    return BACKEND


class WaterfillError(RuntimeError):
    pass


@dataclass(frozen=True)
class InnerProblem:
    """Fixed data of one concave inner problem.

    ``rows``/``owner`` stack every coupling row of every UT; ``base`` holds
    ``gamma_tilde + sigma2`` per row. ``offset`` (nats) is the constant that
    makes the surrogate equal the DE objective at the MM anchor.
    """

    rows: np.ndarray
    owner: np.ndarray
    gamma: np.ndarray
    base: np.ndarray
    d: np.ndarray
    sigma2: float
    offset: float = 0.0

    @property
    def K(self) -> int:
        return self.gamma.shape[0]

    @property
    def M(self) -> int:
        return self.gamma.shape[1]

    def den(self, x: np.ndarray) -> np.ndarray:
        return _core.refresh_den(self.rows, self.owner, self.base, x)

    def value_nats(self, x: np.ndarray) -> float:
        """Surrogate sum rate at allocation ``x (K, M)`` in nats."""
        return float(np.log1p(self.gamma * x).sum() + np.log(self.den(x)).sum()
                     - (self.d * x).sum() + self.offset)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient of :meth:`value_nats`, shape ``(K, M)``."""
        inv = 1.0 / self.den(x)
        g = self.gamma / (1.0 + self.gamma * x) - self.d
        for k in range(self.K):
            sel = self.owner != k
            g[k] += inv[sel] @ self.rows[sel]
        return g

    def nu_all(self, x: np.ndarray, mu: float) -> np.ndarray:
        """Stationarity function of every beam at its current power."""
        return self.gradient(x) - mu

    def nu_at_zero(self, x: np.ndarray, mu: float) -> np.ndarray:
        """Stationarity function of every beam with that beam alone set to 0."""
        den = self.den(x)
        out = self.gamma - self.d - mu
        for k in range(self.K):
            sel = self.owner != k
            r = self.rows[sel]
            b = den[sel][:, None] - r * x[k][None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                out[k] += np.where(r > 0, r / b, 0.0).sum(axis=0)
        return out


def inner_problem(stats: ChannelStats, gammas, gamma_tildes, d, sigma2: float,
                  offset: float = 0.0) -> InnerProblem:
    rows, owner = _as_stack(stats.omega)
    gamma = np.ascontiguousarray(np.array(gammas, dtype=float).reshape(stats.K, stats.M))
    base = np.concatenate([np.asarray(gt, dtype=float) for gt in gamma_tildes]) + sigma2
    d = np.ascontiguousarray(np.array(d, dtype=float).reshape(stats.K, stats.M))
    return InnerProblem(rows=np.ascontiguousarray(rows), owner=owner, gamma=gamma, base=base,
                        d=d, sigma2=float(sigma2), offset=float(offset))


def _beam_terms(prob: InnerProblem, k: int, m: int, x: np.ndarray):
    sel = prob.owner != k
    r = prob.rows[sel, m]
    b = prob.den(x)[sel] - r * x[k, m]
    return prob.gamma[k, m], r, b


def nu(k: int, m: int, xbar: float, x: np.ndarray, prob: InnerProblem, mu: float) -> float:
    """Stationarity function of beam ``(k, m)`` with its power set to ``xbar``.

    The other powers are taken from ``x``.
    """
    g, r, b = _beam_terms(prob, k, m, np.asarray(x, dtype=float))
    t = b + r * xbar
    val = g / (1.0 + g * xbar) - prob.d[k, m] - mu
    nz = r != 0
    return float(val + (r[nz] / t[nz]).sum())


def nu_prime(k: int, m: int, xbar: float, x: np.ndarray, prob: InnerProblem,
             mu: float = 0.0) -> float:
    """Derivative of :func:`nu` with respect to ``xbar``; never positive."""
    g, r, b = _beam_terms(prob, k, m, np.asarray(x, dtype=float))
    t = b + r * xbar
    nz = r != 0
    return float(-(g * g) / (1.0 + g * xbar) ** 2 - (r[nz] ** 2 / t[nz] ** 2).sum())


def mu_upper_bound(prob: InnerProblem) -> float:
    """Water level above which every beam is switched off."""
    return float(prob.nu_at_zero(np.zeros((prob.K, prob.M)), 0.0).max())


@dataclass(frozen=True)
class WaterfillResult:
    """Inner solution at one total power.

    ``mu_star`` is in nats/W (it equals d SE / d P_T in nats);
    ``se_value`` is the surrogate sum rate in bits/s/Hz.
    """

    alloc: PowerAllocation
    mu_star: float
    se_value: float
    kkt_residual: float
    p_target: float
    bisect_iters: int = 0
    sweeps: int = 0
    fallbacks: int = 0

    @property
    def se_nats(self) -> float:
        return self.se_value * LN2

    @property
    def dse_dpt_bits(self) -> float:
        return self.mu_star / LN2


def kkt_residual(prob: InnerProblem, x: np.ndarray, mu: float, active_tol: float = 1e-10) -> float:
    """Largest violation of the two-branch stationarity conditions."""
    active = x > active_tol
    res = 0.0
    if np.any(active):
        res = float(np.abs(prob.nu_all(x, mu)[active]).max())
    if np.any(~active):
        res = max(res, float(np.maximum(prob.nu_at_zero(x, mu)[~active], 0.0).max()))
    return res


def _solve_mu(prob, x, mu, cfg: SolverConfig, sweep_tol):
    return _core.solve_at_mu(prob.rows, prob.owner, prob.gamma, prob.base, prob.d, x, float(mu),
                             cfg.eps4, sweep_tol, cfg.max_sweeps, cfg.max_newton_iter)


def _unbounded_at_zero(prob: InnerProblem) -> bool:
    # with mu = 0, a beam whose linear penalty is 0 but which still carries gain
    # has no finite maximiser
    cross = np.zeros((prob.K, prob.M))
    for k in range(prob.K):
        cross[k] = prob.rows[prob.owner != k].sum(axis=0)
    live = (prob.gamma > 0) | (cross > 0)
    return bool(np.any(live & (prob.d <= 0)))


def waterfill_problem(prob: InnerProblem, P_T: float, config: SolverConfig | None = None,
                      x0: np.ndarray | None = None) -> WaterfillResult:
    """Water-filling on a prepared :class:`InnerProblem`. See :func:`waterfill`."""
    cfg = config or SolverConfig()
    if P_T < 0:
        raise ValueError("P_T must be >= 0")
    K, M = prob.K, prob.M
    zeros = np.zeros((K, M))
    mu_max = mu_upper_bound(prob)
    if P_T == 0.0 or mu_max <= 0.0:
        x = zeros
        mu = max(mu_max, 0.0)
        return WaterfillResult(PowerAllocation(x), mu, prob.value_nats(x) / LN2,
                               kkt_residual(prob, x, mu), P_T)
    eps5 = cfg.eps5 * max(P_T, 1.0)
    sweep_tol = cfg.eps4
    x = np.ascontiguousarray(zeros if x0 is None else np.array(x0, dtype=float))
    sweeps = fallbacks = 0
    if not _unbounded_at_zero(prob):
        x_free = x.copy()
        s, fb = _solve_mu(prob, x_free, 0.0, cfg, sweep_tol)
        sweeps += s
        fallbacks += fb
        if x_free.sum() <= P_T + eps5:
            # power constraint slack: unconstrained maximiser
            return WaterfillResult(PowerAllocation(x_free), 0.0, prob.value_nats(x_free) / LN2,
                                   kkt_residual(prob, x_free, 0.0), P_T, 0, sweeps, fallbacks)
    # bracketed search on the decreasing map mu -> sum(x(mu)); midpoints are
    # replaced by Illinois false-position steps, which keep the bracket
    lo, hi = 0.0, mu_max
    f_lo = f_hi = None
    side = 0
    mu = 0.5 * (lo + hi)
    it = 0
    for it in range(1, cfg.max_bisect_iter + 1):
        s, fb = _solve_mu(prob, x, mu, cfg, sweep_tol)
        sweeps += s
        fallbacks += fb
        p_tot = x.sum()
        if not np.isfinite(p_tot):
            raise WaterfillError(f"unbounded beam power at mu={mu:g}")
        excess = p_tot - P_T
        if abs(excess) <= eps5:
            break
        if excess < 0:
            hi, f_hi = mu, excess
            if side == -1 and f_lo is not None:
                f_lo *= 0.5
            side = -1
        else:
            lo, f_lo = mu, excess
            if side == 1 and f_hi is not None:
                f_hi *= 0.5
            side = 1
        if f_lo is not None and f_hi is not None:
            new_mu = lo + (hi - lo) * f_lo / (f_lo - f_hi)
            if not lo < new_mu < hi:
                new_mu = 0.5 * (lo + hi)
        else:
            new_mu = 0.5 * (lo + hi)
        if new_mu == mu or hi - lo <= 1e-15 * hi:
            break
        mu = new_mu
    if abs(x.sum() - P_T) > max(eps5, 1e-9 * P_T):
        raise WaterfillError(
            f"water level bisection could not match P_T={P_T:g} (got {x.sum():g}) "
            f"after {it} iterations")
    return WaterfillResult(PowerAllocation(x.copy()), float(mu), prob.value_nats(x) / LN2,
                           kkt_residual(prob, x, mu), P_T, it, sweeps, fallbacks)


def waterfill(stats: ChannelStats, gammas, gamma_tildes, d, P_T: float, sigma2: float,
              config: SolverConfig | None = None, offset: float = 0.0,
              x0: np.ndarray | None = None) -> WaterfillResult:
    """Maximise the concave surrogate sum rate subject to ``sum(lambda) <= P_T``.

    Parameters
    ----------
    gammas : array_like, shape (K, M)
        DE gains ``gamma_{k,m}`` fixed at the MM anchor.
    gamma_tildes : sequence of arrays
        ``gamma_tilde_k`` per UT, each of length ``N_k``.
    d : array_like, shape (K, M)
        Linearised interference penalty per beam (nats/W).
    P_T : float
        Total transmit power (W).
    offset : float
        Constant added to the surrogate (nats).
    x0 : array_like, optional
        Warm start for the Newton sweeps.

    Returns
    -------
    WaterfillResult
        When the surrogate saturates below ``P_T`` the constraint is slack,
        ``mu_star`` is 0 and less than ``P_T`` is used.
    """
    prob = inner_problem(stats, gammas, gamma_tildes, d, sigma2, offset)
    return waterfill_problem(prob, P_T, config, x0)


def re_derivative(P_T: float, se_value: float, mu_star: float, params: SystemParams) -> float:
    """Derivative of ``(1/P_sum(P_T) + beta/P_tot) * SE(P_T)``.

    ``se_value`` and ``mu_star`` (= d SE / d P_T) must share a log base; the
    result is in the same base per J/Hz per W.
    """
    p_sum = params.xi * P_T + params.M * params.Pc + params.Ps
    ee_over_w = se_value / p_sum
    return ((1.0 + params.beta * p_sum / budget_power(params)) * mu_star
            - params.xi * ee_over_w) / p_sum


def re_of_pt(P_T: float, se_value: float, params: SystemParams) -> float:
    p_sum = params.xi * P_T + params.M * params.Pc + params.Ps
    return (1.0 / p_sum + params.beta / budget_power(params)) * se_value


@dataclass
class PTSearchResult:
    """Outcome of the outer search over total transmit power.

    ``trace`` holds ``(P_T, RE, dRE/dP_T)`` per evaluation, RE in bits/J/Hz.
    """

    p_opt: float
    re_value: float
    trace: list = field(default_factory=list)
    inner: WaterfillResult | None = None
    status: str = "converged"

    @property
    def alloc(self) -> PowerAllocation:
        return self.inner.alloc


def pt_search(stats: ChannelStats, gammas, gamma_tildes, d, params: SystemParams,
              config: SolverConfig | None = None, offset: float = 0.0,
              x0: np.ndarray | None = None, prob: InnerProblem | None = None) -> PTSearchResult:
    """Maximise surrogate RE over ``P_T in [0, Pmax]``.

    Gradient ascent from ``Pmax / 2`` with step ``step_scale * Pmax / |g0|``.
    A step that lowers RE is halved and retried. The derivative signs seen
    so far bracket the optimum (RE is unimodal in ``P_T``); proposals
    outside the bracket are replaced by the midpoint toward it. After an
    accepted step with unchanged derivative sign the step doubles.
    """
    cfg = config or SolverConfig()
    if prob is None:
        prob = inner_problem(stats, gammas, gamma_tildes, d, params.sigma2, offset)
    pmax = params.Pmax
    eps2 = cfg.eps2 * pmax
    trace = []
    warm = None if x0 is None else np.array(x0, dtype=float)

    def evaluate(p):
        nonlocal warm
        wf = waterfill_problem(prob, p, cfg, warm)
        warm = wf.alloc.lam
        re = re_of_pt(p, wf.se_value, params)
        g = re_derivative(p, wf.se_value, wf.dse_dpt_bits, params)
        trace.append((p, re, g))
        return wf, re, g

    if pmax == 0.0:
        wf, re, g = evaluate(0.0)
        return PTSearchResult(0.0, re, trace, wf)

    p = 0.5 * pmax
    wf, re, g = evaluate(p)
    lo, hi = 0.0, pmax
    lo_seen = hi_seen = False
    if g == 0.0:
        return PTSearchResult(p, re, trace, wf)
    step = cfg.step_scale * pmax / abs(g)
    status = "max_iter"
    for _ in range(cfg.max_pt_iter):
        if g > 0:
            lo, lo_seen = p, True
        elif g < 0:
            hi, hi_seen = p, True
        else:
            status = "converged"
            break
        if step * abs(g) < 1e-12 * pmax:
            status = "stalled"
            break
        cand = min(max(p + step * g, 0.0), pmax)
        if hi_seen and cand >= hi:
            cand = 0.5 * (p + hi)
        if lo_seen and cand <= lo:
            cand = 0.5 * (p + lo)
        if abs(cand - p) <= eps2 or (hi_seen and lo_seen and hi - lo <= eps2):
            status = "converged"
            break
        wf_c, re_c, g_c = evaluate(cand)
        if g_c > 0 and cand > lo:
            lo, lo_seen = cand, True
        elif g_c < 0 and cand < hi:
            hi, hi_seen = cand, True
        if re_c < re:
            step *= 0.5
            continue
        same_side = (g_c > 0) == (g > 0)
        p, wf, re, g = cand, wf_c, re_c, g_c
        step = step * 2.0 if same_side else step * 0.5
    return PTSearchResult(p, re, trace, wf, status)
