"""Eyebox-plane apertures: the Fourier iris, eye-pupil masks and the pupil sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .optics import PhysicalGrid, parse_length


@dataclass(frozen=True)
class PupilState:
    """Circular eye pupil on the eyebox plane (meters).

    A zero diameter is accepted and models a closed pupil.
    """

    center_x: float = 0.0
    center_y: float = 0.0
    diameter: float = 4e-3

    def __post_init__(self):
        if not self.diameter >= 0:
            raise ValueError(f"pupil diameter must be non-negative, got {self.diameter}")

    @property
    def radius(self) -> float:
        return self.diameter / 2

    def as_mm(self) -> tuple[float, float, float]:
        return (self.center_x * 1e3, self.center_y * 1e3, self.diameter * 1e3)


@dataclass(frozen=True)
class EllipticalPupil(PupilState):
    """Extension point for oriented pupils; not used by the optimizer."""

    minor_diameter: float | None = None
    orientation: float = 0.0


@dataclass(frozen=True)
class PupilSampler:
    diameter_min: float = 2e-3
    diameter_max: float = 6e-3
    placement_radius: float = 3e-3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.diameter_min <= self.diameter_max:
            raise ValueError(
                f"need 0 < diameter_min <= diameter_max, got "
                f"{self.diameter_min}, {self.diameter_max}"
            )
        if self.placement_radius < 0:
            raise ValueError("placement_radius must be non-negative")


def disc_mask(
    grid: PhysicalGrid,
    diameter: float,
    center: tuple[float, float] = (0.0, 0.0),
    feather: bool = True,
) -> np.ndarray:
    """Rasterized disc, optionally with a one-sample linear edge ramp."""
    if diameter <= 0:
        return np.zeros(grid.shape)
    r = grid.radius(*center)
    radius = diameter / 2
    if not feather:
        return (r <= radius).astype(np.float64)
    step = min(grid.dx, grid.dy)
    return np.clip(0.5 + (radius - r) / step, 0.0, 1.0)


def iris_mask(grid: PhysicalGrid, diameter: float, feather: bool = True) -> np.ndarray:
    """Centered Fourier-plane iris that removes higher diffraction orders."""
    height, width = grid.extent
    if diameter > min(height, width) * (1 + 1e-12):
        raise ValueError(
            f"iris diameter {diameter} exceeds the grid extent {min(height, width)}"
        )
    return disc_mask(grid, diameter, feather=feather)


def pupil_mask(grid: PhysicalGrid, state: PupilState, feather: bool = True) -> np.ndarray:
    return disc_mask(grid, state.diameter, (state.center_x, state.center_y), feather)


def combine_apertures(*masks: np.ndarray) -> np.ndarray:
    """Transmission of several apertures stacked in the same plane.

    Uses the elementwise minimum, which equals the product for binary masks and
    keeps a feathered rim unchanged when an aperture is intersected with itself.
    """
    out = masks[0]
    for m in masks[1:]:
        out = np.minimum(out, m)
    return out


def sample_pupil(sampler: PupilSampler, draw_index: int) -> PupilState:
    """Deterministic pupil draw keyed by (seed, draw_index).

    Diameter is uniform on [min, max]; the center is area-uniform over the
    placement disc.
    """
    rng = np.random.default_rng([sampler.seed, draw_index])
    u_d, u_r, u_t = rng.random(3)
    diameter = sampler.diameter_min + (sampler.diameter_max - sampler.diameter_min) * u_d
    r = sampler.placement_radius * math.sqrt(u_r)
    t = 2 * math.pi * u_t
    return PupilState(r * math.cos(t), r * math.sin(t), diameter)


def parse_pupil_records(records) -> list[PupilState]:
    """Pupil list from ``[{"x_mm": .., "y_mm": .., "d_mm": ..}, ...]``."""
    out = []
    for rec in records:
        out.append(
            PupilState(
                parse_length(rec["x_mm"], "mm"),
                parse_length(rec["y_mm"], "mm"),
                parse_length(rec["d_mm"], "mm"),
            )
        )
    return out
