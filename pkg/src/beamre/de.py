"""Deterministic equivalent of the per-UT ergodic rate.

All diagonal operators collapse to products with the coupling matrix, so a
fixed-point solve costs ``O(N_k * M)`` per iteration. Internally everything
is in nats; the public rate functions return bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ChannelStats, PowerAllocation, SystemParams, budget_power, total_power
from .rates import interference_floor

__all__ = [
    "DEState",
    "DEConvergenceError",
    "de_fixed_point",
    "de_rate",
    "de_rate_nats",
    "de_sum_rates",
    "de_re_value",
    "de_objective_batch",
    "g_bar_nats",
]

LN2 = math.log(2.0)
DEFAULT_EPS1 = 1e-8
DEFAULT_MAX_FP_ITER = 1000


@dataclass(frozen=True)
class DEState:
    """Diagonals of the deterministic-equivalent auxiliaries for one UT."""

    phi_tilde: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray
    gamma_tilde: np.ndarray
    kbar: np.ndarray
    converged: bool
    iterations: int


class DEConvergenceError(RuntimeError):
    """Fixed-point iteration hit its cap; ``state`` holds the last iterate."""

    def __init__(self, message: str, state: DEState):
        super().__init__(message)
        self.state = state


def _fixed_point(om, lam, kbar, eps1, max_iter, phi_tilde0=None):
    """Batched fixed point over leading axis.

    ``om`` is ``(N, M)``, ``lam`` is ``(B, M)``, ``kbar`` is ``(B, N)``.
    Returns ``phi_tilde (B, N)``, ``phi (B, M)``, iterations, converged.
    """
    phi_t = np.ones_like(kbar) if phi_tilde0 is None else np.array(phi_tilde0, dtype=float)
    phi = 1.0 + lam * ((1.0 / (phi_t * kbar)) @ om)
    for it in range(1, max_iter + 1):
        new_t = 1.0 + ((lam / phi) @ om.T) / kbar
        phi = 1.0 + lam * ((1.0 / (new_t * kbar)) @ om)
        delta = np.max(np.abs(new_t - phi_t)) if new_t.size else 0.0
        phi_t = new_t
        if delta <= eps1:
            return phi_t, phi, it, True
    return phi_t, phi, max_iter, False


def de_fixed_point(stats: ChannelStats, alloc: PowerAllocation, k: int, sigma2: float,
                   eps1: float = DEFAULT_EPS1, max_iter: int = DEFAULT_MAX_FP_ITER,
                   phi_tilde0: np.ndarray | None = None) -> DEState:
    """Solve the coupled fixed point for UT ``k`` and derive the gamma terms.

    Starts from ``phi_tilde = 1`` unless ``phi_tilde0`` is given.

    Raises
    ------
    DEConvergenceError
        If the change in ``phi_tilde`` is still above ``eps1`` after
        ``max_iter`` iterations.
    """
    if not eps1 > 0:
        raise ValueError("eps1 must be > 0")
    om = stats.omega[k]
    lam = alloc.lam[k][None, :]
    kbar = interference_floor(stats, alloc, k, sigma2)[None, :]
    p0 = None if phi_tilde0 is None else np.asarray(phi_tilde0, dtype=float)[None, :]
    phi_t, phi, iters, ok = _fixed_point(om, lam, kbar, eps1, max_iter, p0)
    gamma = (1.0 / (phi_t * kbar)) @ om
    gamma_t = (lam / phi) @ om.T
    state = DEState(phi_tilde=phi_t[0], phi=phi[0], gamma=gamma[0], gamma_tilde=gamma_t[0],
                    kbar=kbar[0], converged=ok, iterations=iters)
    if not ok:
        raise DEConvergenceError(
            f"DE fixed point for UT {k} did not reach eps1={eps1:g} in {max_iter} iterations",
            state)
    return state


def g_bar_nats(state: DEState, lam_k: np.ndarray) -> float:
    """Deterministic equivalent of ``E log det(Kbar + G Lambda G^H)`` in nats."""
    return float(np.log1p(state.gamma * lam_k).sum()
                 + np.log(state.gamma_tilde + state.kbar).sum()
                 - (1.0 - 1.0 / state.phi_tilde).sum())


def de_rate_nats(state: DEState, lam_k: np.ndarray) -> float:
    return g_bar_nats(state, lam_k) - float(np.log(state.kbar).sum())


def de_rate(state: DEState, alloc: PowerAllocation, k: int, stats: ChannelStats | None = None,
            sigma2: float | None = None) -> float:
    """DE rate of UT ``k`` in bits/s/Hz from a converged ``state``.

    ``stats`` and ``sigma2`` are accepted for interface symmetry; the state
    already carries the interference floor it was solved with.
    """
    if not state.converged:
        raise ValueError("DE state did not converge")
    if stats is not None and sigma2 is not None:
        kbar = interference_floor(stats, alloc, k, sigma2)
        if not np.allclose(kbar, state.kbar, rtol=1e-12, atol=0.0):
            raise ValueError("state was computed for a different allocation")
    return de_rate_nats(state, alloc.lam[k]) / LN2


def de_states(stats, alloc, sigma2, eps1=DEFAULT_EPS1, max_iter=DEFAULT_MAX_FP_ITER):
    return [de_fixed_point(stats, alloc, k, sigma2, eps1, max_iter) for k in range(stats.K)]


def de_sum_rates(stats, alloc, sigma2, eps1=DEFAULT_EPS1, max_iter=DEFAULT_MAX_FP_ITER):
    return [de_rate_nats(s, alloc.lam[k]) / LN2
            for k, s in enumerate(de_states(stats, alloc, sigma2, eps1, max_iter))]


def de_re_value(stats: ChannelStats, alloc: PowerAllocation, params: SystemParams,
                eps1: float = DEFAULT_EPS1, max_iter: int = DEFAULT_MAX_FP_ITER) -> float:
    """DE resource efficiency ``(1/P_sum + beta/P_tot) * sum_k rate_k`` in bits/J/Hz."""
    se = sum(de_sum_rates(stats, alloc, params.sigma2, eps1, max_iter))
    return (1.0 / total_power(alloc, params) + params.beta / budget_power(params)) * se


def de_objective_batch(stats: ChannelStats, lam: np.ndarray, params: SystemParams,
                       eps1: float = DEFAULT_EPS1,
                       max_iter: int = DEFAULT_MAX_FP_ITER) -> tuple[np.ndarray, np.ndarray]:
    """DE sum rate (bits) and RE for a batch of allocations ``lam (B, K, M)``.

    Returns ``(se, re)`` arrays of length ``B``.
    """
    lam = np.asarray(lam, dtype=float)
    B = lam.shape[0]
    total = lam.sum(axis=1)
    se = np.zeros(B)
    for k, om in enumerate(stats.omega):
        own = lam[:, k, :]
        kbar = params.sigma2 + (total - own) @ om.T
        phi_t, phi, _, ok = _fixed_point(om, own, kbar, eps1, max_iter)
        if not ok:
            raise DEConvergenceError(f"batched DE fixed point for UT {k} did not converge", None)
        gamma = (1.0 / (phi_t * kbar)) @ om
        gamma_t = (own / phi) @ om.T
        se += (np.log1p(gamma * own).sum(axis=1)
               + np.log(gamma_t + kbar).sum(axis=1)
               - (1.0 - 1.0 / phi_t).sum(axis=1)
               - np.log(kbar).sum(axis=1))
    se /= LN2
    p_sum = params.xi * lam.sum(axis=(1, 2)) + params.M * params.Pc + params.Ps
    re = (1.0 / p_sum + params.beta / budget_power(params)) * se
    return se, re
