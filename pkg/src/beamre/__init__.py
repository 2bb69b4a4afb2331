"""Beam-domain power allocation for resource-efficient massive MIMO downlink.

The solver chain runs bottom-up: :mod:`~beamre.model` holds the system and
channel statistics, :mod:`~beamre.rates` and :mod:`~beamre.de` evaluate
ergodic rates (Monte-Carlo and deterministic equivalent),
:mod:`~beamre.powerctl` solves the water-filling inner layer and the
transmit-power outer layer, and :mod:`~beamre.mm` wraps both in the
minorization-maximization loop.
"""

from .config import ExperimentConfig, SolverConfig, load_config, parse_config
from .de import de_fixed_point, de_rate, de_re_value
from .mm import MMState, mm_solve
from .model import (
    ChannelStats,
    PowerAllocation,
    SystemParams,
    budget_power,
    dbm_to_watt,
    read_coupling,
    synth_coupling,
    total_power,
    watt_to_dbm,
    write_coupling,
)
from .powerctl import pt_search, waterfill
from .rates import metrics

__version__ = "0.1.0"

__all__ = [
    "ChannelStats",
    "ExperimentConfig",
    "MMState",
    "PowerAllocation",
    "SolverConfig",
    "SystemParams",
    "budget_power",
    "dbm_to_watt",
    "de_fixed_point",
    "de_rate",
    "de_re_value",
    "load_config",
    "metrics",
    "mm_solve",
    "parse_config",
    "pt_search",
    "read_coupling",
    "synth_coupling",
    "total_power",
    "waterfill",
    "watt_to_dbm",
    "write_coupling",
]
