"""Discrete-event simulator for pseudonymous safety beaconing.

Models a 100-vehicle platoon plus multi-lane background traffic exchanging
authenticated beacons over a shared broadcast channel, and measures how the
authentication scheme (certificate period, push period) shifts reception,
receiver processing load, and emergency-braking crash outcomes.
"""

__version__ = "0.1.0"

from .config import ConfigError, ExperimentConfig, parse_config
from .engine import RepResult, Simulation, run_replication
from .radio import RadioParams, calibrate_tx_power
from .security import (
    CostTable,
    Kind,
    Scheme,
    avg_packet_size,
    max_packets_per_slot,
    slot_feasibility,
)

__all__ = [
    "__version__",
    "ConfigError",
    "CostTable",
    "ExperimentConfig",
    "Kind",
    "RadioParams",
    "RepResult",
    "Scheme",
    "Simulation",
    "avg_packet_size",
    "calibrate_tx_power",
    "max_packets_per_slot",
    "parse_config",
    "run_replication",
    "slot_feasibility",
]
