"""Desk-scale streaming transducer with joint endpointing.

Synthetic aligned corpora, a hand-differentiated transducer stack with
early/late end-of-speech penalties, gated beam-search endpointing,
sequence-risk fine-tuning, a second-pass attention rescorer, and a
WER/latency evaluation harness.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DecodeError,
    FormatError,
    InfeasibleAlignmentError,
    TrainingError,
    TransepError,
    UsageError,
)

__all__ = [
    "ConfigError",
    "DecodeError",
    "FormatError",
    "InfeasibleAlignmentError",
    "TrainingError",
    "TransepError",
    "UsageError",
    "__version__",
]
