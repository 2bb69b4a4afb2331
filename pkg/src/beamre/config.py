"""Solver settings and the flat ``key = value`` experiment config format.

Example::

    # a 32-antenna, 4-user cell
    M = 32
    K = 4
    N = 2
    Pmax = 45 dBm
    sigma2 = -105 dBm
    beta = 0.5
    sweep = pmax
    sweep_start = 30
    sweep_stop = 50
    sweep_step = 5

Powers accept ``W``, ``mW``, ``dBm`` or ``dBW`` suffixes (bare numbers are
watts); bandwidth accepts ``Hz``, ``kHz``, ``MHz`` or ``GHz``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace

from .model import SystemParams, dbm_to_watt, watt_to_dbm

__all__ = [
    "SolverConfig",
    "ChannelSpec",
    "SweepSpec",
    "ExperimentConfig",
    "ConfigError",
    "parse_config",
    "render_config",
    "load_config",
    "SWEEP_KINDS",
]

SWEEP_KINDS = ("pmax", "beta", "tradeoff", "convergence", "multistart", "rate_compare")


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances, caps and sampling settings of the whole solver chain.

    ``eps2`` is relative to ``Pmax`` and ``eps5`` relative to
    ``max(P_T, 1 W)``; the others are absolute (``eps1`` on the DE
    auxiliaries, ``eps3`` on RE in bits/J/Hz, ``eps4`` on Newton steps in W).
    """

    eps1: float = 1e-8
    eps2: float = 1e-6
    eps3: float = 1e-6
    eps4: float = 1e-10
    eps5: float = 1e-8
    step_scale: float = 0.1
    max_mm_iter: int = 50
    max_fp_iter: int = 1000
    max_newton_iter: int = 50
    max_bisect_iter: int = 200
    max_sweeps: int = 5000
    max_pt_iter: int = 200
    inner_rounds: int = 3
    mc_samples: int = 2000
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("eps") or f.name == "step_scale":
                if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                    raise ValueError(f"{f.name} must be a positive number, got {v!r}")
            elif f.name.startswith("max_") or f.name in ("mc_samples", "inner_rounds"):
                if not (isinstance(v, int) and v >= 1):
                    raise ValueError(f"{f.name} must be an integer >= 1, got {v!r}")


@dataclass(frozen=True)
class ChannelSpec:
    pathloss_db: float = -120.0
    support_fraction: float = 0.25
    decay: float = 0.1
    jitter: bool = True
    seed: int | None = None
    file: str | None = None


@dataclass(frozen=True)
class SweepSpec:
    kind: str | None = None
    values: tuple[float, ...] = ()
    multistart_count: int = 10
    seopt_beta_factor: float = 1e6


@dataclass(frozen=True)
class ExperimentConfig:
    params: SystemParams
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    output: str = "out"
    seed: int = 0
    threads: int = 1

    @property
    def channel_seed(self) -> int:
        return self.seed if self.channel.seed is None else self.channel.seed

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_POWER_UNITS = {"w": 1.0, "mw": 1e-3, "uw": 1e-6}
_FREQ_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}


def _split_unit(raw: str, line: int) -> tuple[float, str]:
    m = re.fullmatch(rf"\s*({_NUM})\s*([A-Za-z]*)\s*", raw)
    if not m:
        raise ConfigError(f"malformed number {raw.strip()!r}", line)
    return float(m.group(1)), m.group(2).lower()


def _power(raw, line):
    v, unit = _split_unit(raw, line)
    if unit == "dbm":
        return dbm_to_watt(v)
    if unit == "dbw":
        return dbm_to_watt(v + 30.0)
    if unit in ("",) or unit in _POWER_UNITS:
        return v * _POWER_UNITS.get(unit, 1.0)
    raise ConfigError(f"unknown power unit {unit!r}", line)


def _freq(raw, line):
    v, unit = _split_unit(raw, line)
    if unit == "" or unit in _FREQ_UNITS:
        return v * _FREQ_UNITS.get(unit, 1.0)
    raise ConfigError(f"unknown frequency unit {unit!r}", line)


def _float(raw, line, unit_ok=("",)):
    v, unit = _split_unit(raw, line)
    if unit not in unit_ok:
        raise ConfigError(f"unexpected unit {unit!r}", line)
    if not math.isfinite(v):
        raise ConfigError("value must be finite", line)
    return v


def _int(raw, line):
    s = raw.strip()
    if not re.fullmatch(r"[-+]?\d+", s):
        raise ConfigError(f"expected an integer, got {s!r}", line)
    return int(s)


def _bool(raw, line):
    s = raw.strip().lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw.strip()!r}", line)


def _ints(raw, line):
    return tuple(_int(p, line) for p in raw.split(","))


def _floats(raw, line):
    return tuple(_float(p, line) for p in raw.split(","))


def _str(raw, line):
    s = raw.strip()
    if not s:
        raise ConfigError("empty value", line)
    return s


_PARAM_KEYS = {
    "M": _int, "K": _int, "N": _ints, "W": _freq, "sigma2": _power, "xi": _float,
    "Pc": _power, "Ps": _power, "Pmax": _power, "beta": _float,
}
_CHANNEL_KEYS = {
    "pathloss_db": lambda r, ln: _float(r, ln, ("", "db")),
    "support_fraction": _float, "decay": _float, "jitter": _bool,
    "channel_seed": _int, "channel_file": _str,
}
_SOLVER_KEYS = {f.name: (_int if f.type in ("int", int) else _float)
                for f in fields(SolverConfig)}
_SOLVER_KEYS["seed"] = _int
_SOLVER_KEYS = {("solver_seed" if k == "seed" else k): v for k, v in _SOLVER_KEYS.items()}
_SWEEP_KEYS = {
    "sweep": _str, "sweep_start": _float, "sweep_stop": _float, "sweep_step": _float,
    "sweep_values": _floats, "multistart_count": _int, "seopt_beta_factor": _float,
}
_TOP_KEYS = {"output": _str, "seed": _int, "threads": _int}
_ALL_KEYS = {**_PARAM_KEYS, **_CHANNEL_KEYS, **_SOLVER_KEYS, **_SWEEP_KEYS, **_TOP_KEYS}

_PARAM_DEFAULTS = {
    "N": (4,), "W": 10e6, "sigma2": dbm_to_watt(-105.0), "xi": 5.0,
    "Pc": dbm_to_watt(30.0), "Ps": dbm_to_watt(40.0), "Pmax": dbm_to_watt(45.0), "beta": 0.5,
}
_REQUIRED = ("M", "K")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a flat ``key = value`` config.

    Raises
    ------
    ConfigError
        On unknown or duplicate keys, malformed values or missing required
        keys; the message carries the offending line number where one exists.
    """
    vals: dict = {}
    where: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in vals:
            raise ConfigError(f"duplicate key {key!r} (first on line {where[key]})", lineno)
        if not value:
            raise ConfigError(f"missing value for {key!r}", lineno)
        vals[key] = _ALL_KEYS[key](value, lineno)
        where[key] = lineno
    for key in _REQUIRED:
        if key not in vals:
            raise ConfigError(f"missing required key {key!r}")

    def fail(key, msg):
        raise ConfigError(msg, where.get(key))

    p = {**_PARAM_DEFAULTS, **{k: v for k, v in vals.items() if k in _PARAM_KEYS}}
    n = p["N"]
    if len(n) == 1:
        n = n * p["K"]
    elif len(n) != p["K"]:
        fail("N", f"N lists {len(n)} values but K = {p['K']}")
    try:
        params = SystemParams(M=p["M"], K=p["K"], N=n, W=p["W"], sigma2=p["sigma2"],
                              xi=p["xi"], Pc=p["Pc"], Ps=p["Ps"], Pmax=p["Pmax"],
                              beta=p["beta"])
    except ValueError as exc:
        bad = next((k for k in _PARAM_KEYS if k in str(exc) and k in where), None)
        raise ConfigError(str(exc), where.get(bad)) from None

    sf = vals.get("support_fraction", ChannelSpec.support_fraction)
    if not 0.0 < sf <= 1.0:
        fail("support_fraction", "support_fraction must lie in (0, 1]")
    if vals.get("decay", 0.0) < 0:
        fail("decay", "decay must be >= 0")
    channel = ChannelSpec(
        pathloss_db=vals.get("pathloss_db", ChannelSpec.pathloss_db),
        support_fraction=sf,
        decay=vals.get("decay", ChannelSpec.decay),
        jitter=vals.get("jitter", ChannelSpec.jitter),
        seed=vals.get("channel_seed"),
        file=vals.get("channel_file"),
    )

    skw = {}
    for key in _SOLVER_KEYS:
        if key in vals:
            skw["seed" if key == "solver_seed" else key] = vals[key]
    try:
        solver = SolverConfig(**skw)
    except ValueError as exc:
        bad = next((k for k in skw if str(exc).startswith(k)), None)
        raise ConfigError(str(exc), where.get(bad)) from None

    kind = vals.get("sweep")
    if kind is not None and kind not in SWEEP_KINDS:
        fail("sweep", f"unknown sweep kind {kind!r}; expected one of {', '.join(SWEEP_KINDS)}")
    values = vals.get("sweep_values", ())
    range_keys = [k for k in ("sweep_start", "sweep_stop", "sweep_step") if k in vals]
    if range_keys:
        if values:
            fail(range_keys[0], "give either sweep_values or sweep_start/stop/step, not both")
        missing = {"sweep_start", "sweep_stop", "sweep_step"} - set(range_keys)
        if missing:
            raise ConfigError(f"missing required key {sorted(missing)[0]!r} for the sweep range")
        start, stop, step = vals["sweep_start"], vals["sweep_stop"], vals["sweep_step"]
        if step <= 0:
            fail("sweep_step", "sweep_step must be > 0")
        if stop < start:
            fail("sweep_stop", "sweep range is empty (stop < start)")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = tuple(start + i * step for i in range(count))
    if kind is not None and not values:
        # single point at the configured operating value
        values = (params.beta,) if kind == "beta" else (watt_to_dbm(params.Pmax),)
    mcount = vals.get("multistart_count", SweepSpec.multistart_count)
    if mcount < 1:
        fail("multistart_count", "multistart_count must be >= 1")
    sbf = vals.get("seopt_beta_factor", SweepSpec.seopt_beta_factor)
    if sbf <= 0:
        fail("seopt_beta_factor", "seopt_beta_factor must be > 0")
    sweep = SweepSpec(kind=kind, values=tuple(values), multistart_count=mcount,
                      seopt_beta_factor=sbf)
    threads = vals.get("threads", 1)
    if threads < 1:
        fail("threads", "threads must be >= 1")
    return ExperimentConfig(params=params, channel=channel, solver=solver, sweep=sweep,
                            output=vals.get("output", "out"), seed=vals.get("seed", 0),
                            threads=threads)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def render_config(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` so that ``parse_config(render_config(cfg)) == cfg``."""
    p = cfg.params
    out = [
        f"M = {p.M}", f"K = {p.K}", f"N = {', '.join(str(n) for n in p.N)}",
        f"W = {p.W!r} Hz", f"sigma2 = {p.sigma2!r} W", f"xi = {p.xi!r}",
        f"Pc = {p.Pc!r} W", f"Ps = {p.Ps!r} W", f"Pmax = {p.Pmax!r} W", f"beta = {p.beta!r}",
        f"pathloss_db = {cfg.channel.pathloss_db!r}",
        f"support_fraction = {cfg.channel.support_fraction!r}",
        f"decay = {cfg.channel.decay!r}",
        f"jitter = {'true' if cfg.channel.jitter else 'false'}",
    ]
    if cfg.channel.seed is not None:
        out.append(f"channel_seed = {cfg.channel.seed}")
    if cfg.channel.file is not None:
        out.append(f"channel_file = {cfg.channel.file}")
    for f in fields(SolverConfig):
        key = "solver_seed" if f.name == "seed" else f.name
        out.append(f"{key} = {getattr(cfg.solver, f.name)!r}")
    if cfg.sweep.kind is not None:
        out.append(f"sweep = {cfg.sweep.kind}")
    if cfg.sweep.values:
        out.append("sweep_values = " + ", ".join(repr(v) for v in cfg.sweep.values))
    out.append(f"multistart_count = {cfg.sweep.multistart_count}")
    out.append(f"seopt_beta_factor = {cfg.sweep.seopt_beta_factor!r}")
    out += [f"output = {cfg.output}", f"seed = {cfg.seed}", f"threads = {cfg.threads}"]
    return "\n".join(out) + "\n"
