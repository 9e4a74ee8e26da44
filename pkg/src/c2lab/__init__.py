"""Desk-scale lab for encrypted C2 detection and traffic-shaping evasion."""

__version__ = "0.1.0"

from .model import (
    Dataset,
    Direction,
    FeatureVector,
    FlowTrace,
    Label,
    LabeledSample,
    Provenance,
    RecordEvent,
    evasion_rate,
    features_from_trace,
)
from .sizing import TlsSizeModel

__all__ = [
    "Dataset",
    "Direction",
    "FeatureVector",
    "FlowTrace",
    "Label",
    "LabeledSample",
    "Provenance",
    "RecordEvent",
    "TlsSizeModel",
    "evasion_rate",
    "features_from_trace",
    "__version__",
]
