"""Simulation of telecom-converted spin-photon entanglement with NV centres."""

from .conversion import ConversionConfig, max_contrast_from_snr
from .interferometer import InterferometerConfig
from .protocol import ProtocolConfig
from .tomography import DetectionEvent, EventLog, TomographyResult, estimate, fidelity

__version__ = "0.1.0"

__all__ = [
    "ConversionConfig",
    "DetectionEvent",
    "EventLog",
    "InterferometerConfig",
    "ProtocolConfig",
    "TomographyResult",
    "estimate",
    "fidelity",
    "max_contrast_from_snr",
]
