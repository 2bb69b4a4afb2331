"""Beam-domain covariance operators, Monte-Carlo ergodic rates and metrics.

Rates are returned in bits/s/Hz. Monte-Carlo draws are organised in fixed
blocks, each seeded from ``(seed, k, block)``, so any split of the blocks
across workers reproduces the serial estimate exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ChannelStats, PowerAllocation, SystemParams, budget_power, total_power

__all__ = [
    "MetricsReport",
    "pi_op",
    "xi_op",
    "interference_floor",
    "mc_rate_exact",
    "mc_rate_approx",
    "mc_sum_rates",
    "metrics",
    "MC_BLOCK",
]

LN2 = math.log(2.0)
MC_BLOCK = 250


def pi_op(omega_k: np.ndarray, x_diag: np.ndarray) -> np.ndarray:
    """Diagonal of ``E[G X G^H]`` for diagonal ``X``: ``omega_k @ x``."""
    omega_k = np.asarray(omega_k, dtype=float)
    x_diag = np.asarray(x_diag, dtype=float)
    if x_diag.shape[-1] != omega_k.shape[1]:
        raise ValueError(f"x has length {x_diag.shape[-1]}, expected {omega_k.shape[1]}")
    return x_diag @ omega_k.T


def xi_op(omega_k: np.ndarray, x_diag: np.ndarray) -> np.ndarray:
    """Diagonal of ``E[G^H X G]`` for diagonal ``X``: ``omega_k.T @ x``."""
    omega_k = np.asarray(omega_k, dtype=float)
    x_diag = np.asarray(x_diag, dtype=float)
    if x_diag.shape[-1] != omega_k.shape[0]:
        raise ValueError(f"x has length {x_diag.shape[-1]}, expected {omega_k.shape[0]}")
    return x_diag @ omega_k


def interference_floor(stats: ChannelStats, alloc: PowerAllocation, k: int,
                       sigma2: float) -> np.ndarray:
    """Diagonal of the mean interference-plus-noise covariance seen by UT ``k``."""
    lam = alloc.lam
    others = lam.sum(axis=0) - lam[k]
    return sigma2 + pi_op(stats.omega[k], others)


@dataclass(frozen=True)
class MetricsReport:
    """SE (bits/s/Hz), EE (bits/J), RE (bits/J/Hz) and consumed power (W)."""

    se: float
    ee: float
    re: float
    per_user_rates: tuple[float, ...]
    p_sum: float


def _check_mc(n_samples: int) -> None:
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")


def _draw_block(omega_k: np.ndarray, n: int, seed: int, k: int, block: int) -> np.ndarray:
    rng = np.random.default_rng([seed, k, block])
    shape = (n,) + omega_k.shape
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return np.sqrt(omega_k / 2.0) * (re + 1j * im)


def _logdet_hpd(a: np.ndarray) -> np.ndarray:
    # batched Hermitian positive-definite log-determinant (natural log)
    chol = np.linalg.cholesky(a)
    return 2.0 * np.log(np.abs(np.diagonal(chol, axis1=-2, axis2=-1))).sum(axis=-1)


def _blocks(n_samples: int):
    b = 0
    done = 0
    while done < n_samples:
        n = min(MC_BLOCK, n_samples - done)
        yield b, n
        b += 1
        done += n


def _mc_rate(stats, alloc, k, sigma2, n_samples, seed, exact: bool) -> float:
    _check_mc(n_samples)
    om = stats.omega[k]
    lam = alloc.lam
    own = lam[k]
    if not np.any(own) or not np.any(om):
        return 0.0
    others = lam.sum(axis=0) - own
    n_k = om.shape[0]
    eye = np.eye(n_k)
    kbar = sigma2 + pi_op(om, others)
    total = 0.0
    for b, n in _blocks(n_samples):
        g = _draw_block(om, n, seed, k, b)
        sig = (g * own) @ np.conj(np.swapaxes(g, -1, -2))
        if exact:
            noise = sigma2 * eye + (g * others) @ np.conj(np.swapaxes(g, -1, -2))
            vals = _logdet_hpd(noise + sig) - _logdet_hpd(noise)
        else:
            vals = _logdet_hpd(np.diag(kbar) + sig) - np.log(kbar).sum()
        total += float(vals.sum())
    return total / n_samples / LN2


def mc_rate_exact(stats: ChannelStats, alloc: PowerAllocation, k: int, sigma2: float,
                  n_samples: int, seed: int) -> float:
    """Ergodic rate of UT ``k`` with the instantaneous interference covariance.

    Beam-domain entries are drawn as independent circularly-symmetric complex
    Gaussians with variances ``omega[k]``.
    """
    return _mc_rate(stats, alloc, k, sigma2, n_samples, seed, exact=True)


def mc_rate_approx(stats: ChannelStats, alloc: PowerAllocation, k: int, sigma2: float,
                   n_samples: int, seed: int) -> float:
    """Ergodic rate of UT ``k`` with interference replaced by its mean.

    Uses the same draws as :func:`mc_rate_exact` for equal ``seed``.
    """
    return _mc_rate(stats, alloc, k, sigma2, n_samples, seed, exact=False)


def mc_sum_rates(stats, alloc, sigma2, n_samples, seed, exact=False) -> list[float]:
    fn = mc_rate_exact if exact else mc_rate_approx
    return [fn(stats, alloc, k, sigma2, n_samples, seed) for k in range(stats.K)]


def metrics(stats: ChannelStats, alloc: PowerAllocation, params: SystemParams,
            rate_fn: str | Callable = "de", n_samples: int = 2000,
            seed: int = 0) -> MetricsReport:
    """Assemble SE, EE and RE for ``alloc``.

    Parameters
    ----------
    rate_fn : {"de", "approx", "exact"} or callable
        Per-user rate model. A callable is invoked as
        ``rate_fn(stats, alloc, k, sigma2)`` and must return bits/s/Hz.
    """
    stats.check(params)
    if rate_fn == "de":
        from .de import de_sum_rates

        rates = de_sum_rates(stats, alloc, params.sigma2)
    elif rate_fn in ("approx", "exact"):
        rates = mc_sum_rates(stats, alloc, params.sigma2, n_samples, seed,
                             exact=(rate_fn == "exact"))
    elif callable(rate_fn):
        rates = [float(rate_fn(stats, alloc, k, params.sigma2)) for k in range(stats.K)]
    else:
        raise ValueError(f"unknown rate model {rate_fn!r}")
    se = float(sum(rates))
    p_sum = total_power(alloc, params)
    ee = params.W * se / p_sum
    re = ee / params.W + params.beta * se / budget_power(params)
    return MetricsReport(se=se, ee=ee, re=re, per_user_rates=tuple(rates), p_sum=p_sum)
