"""Pupil-aware holography: phase retrieval for holographic near-eye displays
that stays sharp as the eye pupil moves across the eyebox."""

from .optics import (
    BLUE,
    GREEN,
    RED,
    ComplexField,
    OpticalSystem,
    PhysicalGrid,
    Plane,
    SlmSpec,
    WavelengthChannel,
)
from .pupil import PupilSampler, PupilState
from .retrieval import InitMode, OptimizeConfig, OptimizeResult, optimize, optimize_multiplane

__version__ = "0.1.0"

__all__ = [
    "BLUE",
    "GREEN",
    "RED",
    "ComplexField",
    "InitMode",
    "OpticalSystem",
    "OptimizeConfig",
    "OptimizeResult",
    "PhysicalGrid",
    "Plane",
    "PupilSampler",
    "PupilState",
    "SlmSpec",
    "WavelengthChannel",
    "optimize",
    "optimize_multiplane",
]
