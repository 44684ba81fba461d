"""Entanglement-based QKD link post-processing and satellite pass extrapolation."""

__version__ = "0.1.0"

from .core import (
    Basis,
    Channel,
    Party,
    SecurityParams,
    SiftedBlock,
    TimeTagStream,
    binary_entropy,
)
from .keyrate import KeyRateResult, PenaltyForm, asymptotic_key_length, sharp_key_length
from .pipeline import PipelineResult, run_pipeline
from .sync import NoPeak, SyncResult, synchronize
from .timetag_sim import SimConfig, calibrated_config, generate_pair_streams

__all__ = [
    "Basis",
    "Channel",
    "KeyRateResult",
    "NoPeak",
    "Party",
    "PenaltyForm",
    "PipelineResult",
    "SecurityParams",
    "SiftedBlock",
    "SimConfig",
    "SyncResult",
    "TimeTagStream",
    "__version__",
    "asymptotic_key_length",
    "binary_entropy",
    "calibrated_config",
    "generate_pair_streams",
    "run_pipeline",
    "sharp_key_length",
    "synchronize",
]
