"""Decentralized learning with dynamic model averaging.

Simulates ``m`` learners on local data streams whose models are synchronized
by a coordinator, and accounts for the loss and communication of each
synchronization protocol.
"""
from .config import ExperimentConfig, LearnerConfig, StreamConfig, load_config, load_preset
from .harness import run, sweep
from .metrics import CommCostModel, RunLedger
from .protocols import ProtocolSpec, make_protocol

__version__ = "0.1.0"

__all__ = [
    "CommCostModel", "ExperimentConfig", "LearnerConfig", "ProtocolSpec", "RunLedger",
    "StreamConfig", "load_config", "load_preset", "make_protocol", "run", "sweep",
]
