"""System parameters, statistical channel description and power model.

Everything in here works in linear units (watts, linear gains). dBm only
shows up in :func:`dbm_to_watt` / :func:`watt_to_dbm`, which the config
layer uses at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SystemParams",
    "ChannelStats",
    "PowerAllocation",
    "dbm_to_watt",
    "watt_to_dbm",
    "total_power",
    "budget_power",
    "synth_coupling",
    "read_coupling",
    "write_coupling",
]


def dbm_to_watt(x: float) -> float:
    """Convert a power in dBm to watts."""
    return 10.0 ** ((x - 30.0) / 10.0)


def watt_to_dbm(p: float) -> float:
    """Convert a power in watts to dBm."""
    return 10.0 * math.log10(p) + 30.0


@dataclass(frozen=True)
class SystemParams:
    """Physical and economic constants of one downlink cell.

    Parameters
    ----------
    M : int
        Number of BS antennas (equivalently, beams).
    K : int
        Number of user terminals.
    N : tuple of int
        Receive antennas per UT, length K.
    W : float
        Bandwidth in Hz.
    sigma2 : float
        Noise power in watts.
    xi : float
        Amplifier inefficiency.
    Pc : float
        Dynamic power per antenna in watts.
    Ps : float
        Static power in watts.
    Pmax : float
        Transmit power budget in watts.
    beta : float
        EE-SE weighting factor.
    """

    M: int
    K: int
    N: tuple[int, ...]
    W: float
    sigma2: float
    xi: float
    Pc: float
    Ps: float
    Pmax: float
    beta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "N", tuple(int(n) for n in self.N))
        if self.M < 1 or self.K < 1:
            raise ValueError("M and K must be >= 1")
        if len(self.N) != self.K:
            raise ValueError(f"N has {len(self.N)} entries, expected K={self.K}")
        if any(n < 1 for n in self.N):
            raise ValueError("every N_k must be >= 1")
        for name in ("W", "sigma2", "xi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("Pc", "Ps", "Pmax"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")

    def replace(self, **changes) -> "SystemParams":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ChannelStats:
    """Per-UT eigenmode coupling matrices.

    ``omega[k]`` has shape ``(N_k, M)``; entry ``[n, m]`` is the mean power
    gain between receive eigen-direction ``n`` of UT ``k`` and beam ``m``.
    """

    omega: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = []
        for k, om in enumerate(self.omega):
            a = np.array(om, dtype=float, copy=True)
            if a.ndim != 2:
                raise ValueError(f"omega[{k}] must be 2-D, got shape {a.shape}")
            if np.any(a < 0) or not np.all(np.isfinite(a)):
                raise ValueError(f"omega[{k}] has negative or non-finite entries")
            a.setflags(write=False)
            mats.append(a)
        if len({a.shape[1] for a in mats}) > 1:
            raise ValueError("all coupling matrices must have the same number of columns")
        object.__setattr__(self, "omega", tuple(mats))

    @property
    def K(self) -> int:
        return len(self.omega)

    @property
    def M(self) -> int:
        return self.omega[0].shape[1]

    @property
    def N(self) -> tuple[int, ...]:
        return tuple(a.shape[0] for a in self.omega)

    def check(self, params: SystemParams) -> None:
        """Raise ``ValueError`` unless the shapes agree with ``params``."""
        if self.K != params.K or self.M != params.M or self.N != params.N:
            raise ValueError(
                f"channel shapes (K={self.K}, M={self.M}, N={self.N}) do not match "
                f"params (K={params.K}, M={params.M}, N={params.N})"
            )

    def is_zero(self) -> bool:
        return all(not np.any(a) for a in self.omega)

    def __eq__(self, other):
        if not isinstance(other, ChannelStats):
            return NotImplemented
        return len(self.omega) == len(other.omega) and all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.omega, other.omega)
        )


@dataclass(frozen=True, eq=False)
class PowerAllocation:
    """Per-UT beam powers: ``lam`` has shape ``(K, M)`` in watts."""

    lam: np.ndarray

    def __post_init__(self):
        a = np.array(self.lam, dtype=float, copy=True)
        if a.ndim != 2:
            raise ValueError(f"allocation must be 2-D (K, M), got shape {a.shape}")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ValueError("allocation has negative or non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "lam", a)

    @classmethod
    def zeros(cls, K: int, M: int) -> "PowerAllocation":
        return cls(np.zeros((K, M)))

    @classmethod
    def uniform(cls, K: int, M: int, total: float) -> "PowerAllocation":
        return cls(np.full((K, M), total / (K * M)))

    @property
    def total(self) -> float:
        return float(self.lam.sum())

    def __eq__(self, other):
        if not isinstance(other, PowerAllocation):
            return NotImplemented
        return np.array_equal(self.lam, other.lam)


def total_power(alloc: PowerAllocation, params: SystemParams) -> float:
    """Consumed power ``xi * sum(lambda) + M * Pc + Ps`` in watts."""
    return params.xi * alloc.total + params.M * params.Pc + params.Ps


def budget_power(params: SystemParams) -> float:
    """Power consumed at full transmit budget, used to normalise the SE term."""
    return params.xi * params.Pmax + params.M * params.Pc + params.Ps


def synth_coupling(
    params: SystemParams,
    pathloss_db: float,
    support_fraction: float,
    decay: float,
    seed: int,
    jitter: bool = True,
) -> ChannelStats:
    """Draw sparse, clustered coupling matrices.

    Each UT sees a contiguous window of ``ceil(support_fraction * M)`` beams
    at a random offset. Inside the window the gain decays as
    ``exp(-decay * |m - center|)``, times a uniform jitter in ``[0.5, 1.5]``
    per entry. Every matrix is then scaled so its mean entry equals the
    linear pathloss.
    """
    if not 0.0 < support_fraction <= 1.0:
        raise ValueError(f"support_fraction must lie in (0, 1], got {support_fraction}")
    if decay < 0:
        raise ValueError("decay must be >= 0")
    M = params.M
    width = max(1, math.ceil(support_fraction * M - 1e-12))
    gain = 10.0 ** (pathloss_db / 10.0)
    rng = np.random.default_rng(seed)
    mats = []
    for n_k in params.N:
        offset = int(rng.integers(0, M - width + 1))
        center = offset + (width - 1) / 2.0
        cols = np.arange(offset, offset + width)
        profile = np.exp(-decay * np.abs(cols - center))
        if jitter:
            noise = rng.uniform(0.5, 1.5, size=(n_k, width))
        else:
            noise = np.ones((n_k, width))
        om = np.zeros((n_k, M))
        om[:, cols] = profile * noise
        om *= gain * n_k * M / om.sum()
        mats.append(om)
    return ChannelStats(tuple(mats))


def write_coupling(stats: ChannelStats, path) -> None:
    """Write ``stats`` in the plain-text coupling-matrix format.

    First line ``K M``; then for every UT a line with ``N_k`` followed by
    ``N_k`` rows of ``M`` space-separated reals.
    """
    lines = [f"{stats.K} {stats.M}"]
    for om in stats.omega:
        lines.append(str(om.shape[0]))
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in om)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_coupling(path) -> ChannelStats:
    """Parse a coupling-matrix file written by :func:`write_coupling`."""
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or len(rows[0]) != 2:
        raise ValueError(f"{path}: first line must be 'K M'")
    K, M = int(rows[0][0]), int(rows[0][1])
    pos = 1
    mats = []
    for k in range(K):
        if pos >= len(rows) or len(rows[pos]) != 1:
            raise ValueError(f"{path}: expected N_k line for UT {k}")
        n_k = int(rows[pos][0])
        pos += 1
        block = rows[pos:pos + n_k]
        if len(block) != n_k or any(len(r) != M for r in block):
            raise ValueError(f"{path}: UT {k} needs {n_k} rows of {M} values")
        mats.append(np.array([[float(v) for v in r] for r in block]))
        pos += n_k
    if pos != len(rows):
        raise ValueError(f"{path}: trailing data after {K} UTs")
    return ChannelStats(tuple(mats))


def _as_stack(mats: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack all coupling rows into one ``(sum N_k, M)`` array plus row owners."""
    rows = np.vstack(mats)
    owner = np.concatenate([np.full(a.shape[0], k, dtype=np.intp) for k, a in enumerate(mats)])
    return rows, owner
