"""Physical grids, complex fields and optical-system descriptions.

Everything here is in SI units (meters). Grids are centered: sample index
``n // 2`` on each axis lies on the optical axis, which matches the
``numpy.fft.fftshift`` convention used throughout the package.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

import numpy as np


class Plane(str, enum.Enum):
    SLM = "slm"
    TARGET = "target"
    EYEBOX = "eyebox"
    FOURIER = "fourier"


@dataclass(frozen=True)
class PhysicalGrid:
    rows: int
    cols: int
    dx: float
    dy: float
    plane: Plane = Plane.SLM

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.rows}x{self.cols}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError(f"sample pitch must be positive, got dx={self.dx}, dy={self.dy}")
        object.__setattr__(self, "plane", Plane(self.plane))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def extent(self) -> tuple[float, float]:
        """Physical (height, width) covered by the samples."""
        return (self.rows * self.dy, self.cols * self.dx)

    def x(self) -> np.ndarray:
        return (np.arange(self.cols) - self.cols // 2) * self.dx

    def y(self) -> np.ndarray:
        return (np.arange(self.rows) - self.rows // 2) * self.dy

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Broadcastable (x, y) coordinate arrays of shapes (1, cols) and (rows, 1)."""
        return self.x()[None, :], self.y()[:, None]

    def radius(self, cx: float = 0.0, cy: float = 0.0) -> np.ndarray:
        x, y = self.coords()
        return np.hypot(x - cx, y - cy)

    def with_plane(self, plane: Plane) -> "PhysicalGrid":
        return PhysicalGrid(self.rows, self.cols, self.dx, self.dy, plane)


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Sampled complex wavefront. ``samples`` is a C-ordered (rows, cols) array."""

    grid: PhysicalGrid
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim == 1:
            if s.size != self.grid.rows * self.grid.cols:
                raise ValueError(
                    f"expected {self.grid.rows * self.grid.cols} samples, got {s.size}"
                )
            s = s.reshape(self.grid.shape)
        if s.shape != self.grid.shape:
            raise ValueError(f"samples shape {s.shape} does not match grid {self.grid.shape}")
        if s.dtype not in (np.complex64, np.complex128):
            s = s.astype(np.complex128)
        s = np.ascontiguousarray(s)
        if not np.isfinite(s).all():
            raise ValueError("field contains non-finite samples")
        object.__setattr__(self, "samples", s)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.samples)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.samples)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.samples) ** 2

    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))

    def replace(self, samples: np.ndarray, grid: PhysicalGrid | None = None) -> "ComplexField":
        return ComplexField(self.grid if grid is None else grid, samples)


@dataclass(frozen=True)
class WavelengthChannel:
    wavelength: float
    label: str = ""

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")


RED = WavelengthChannel(636e-9, "red")
GREEN = WavelengthChannel(520e-9, "green")
BLUE = WavelengthChannel(450e-9, "blue")
DEFAULT_CHANNELS = (RED, GREEN, BLUE)


@dataclass(frozen=True)
class SlmSpec:
    rows: int = 1080
    cols: int = 1920
    pitch: float = 8e-6
    phase_levels: int = 256

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("SLM must be at least 2x2 pixels")
        if not self.pitch > 0:
            raise ValueError(f"pixel pitch must be positive, got {self.pitch}")
        if self.phase_levels < 2:
            raise ValueError(f"phase_levels must be >= 2, got {self.phase_levels}")

    @property
    def grid(self) -> PhysicalGrid:
        return PhysicalGrid(self.rows, self.cols, self.pitch, self.pitch, Plane.SLM)


@dataclass(frozen=True)
class OpticalSystem:
    """SLM, ray-biasing lens and Fourier-plane iris.

    ``lens_support`` selects the footprint of each lens cut, either ``"disc"``
    or ``"square"``. ``lens_taper`` is the fraction of the support radius over
    which the lens-cut amplitude rolls off to zero (raised cosine); 0 gives a
    hard edge, whose edge diffraction doubles the DC response of the kernel.
    """

    slm: SlmSpec = field(default_factory=SlmSpec)
    focal_length: float = 100e-3
    iris_diameter: float = 6e-3
    channels: tuple[WavelengthChannel, ...] = (RED, GREEN)
    lens_support: str = "disc"
    lens_taper: float = 0.1

    def __post_init__(self):
        if not self.focal_length > 0:
            raise ValueError(f"focal_length must be positive, got {self.focal_length}")
        if not self.iris_diameter > 0:
            raise ValueError(f"iris_diameter must be positive, got {self.iris_diameter}")
        if self.lens_support not in ("disc", "square"):
            raise ValueError(f"lens_support must be 'disc' or 'square', got {self.lens_support!r}")
        if not 0 <= self.lens_taper <= 1:
            raise ValueError(f"lens_taper must lie in [0, 1], got {self.lens_taper}")
        object.__setattr__(self, "channels", tuple(self.channels))
        for ch in self.channels:
            extent = eyebox_extent(self, ch)
            if self.iris_diameter > extent * (1 + 1e-12):
                raise ValueError(
                    f"iris diameter {self.iris_diameter * 1e3:.3f}mm exceeds the "
                    f"{extent * 1e3:.3f}mm eyebox of channel {ch.label or ch.wavelength}"
                )

    def channel(self, name: str) -> WavelengthChannel:
        for ch in self.channels:
            if ch.label == name:
                return ch
        raise KeyError(f"no channel labelled {name!r}")


def max_diffraction_angle(wavelength: float, pitch: float) -> float:
    """Largest deflection angle an SLM of the given pitch supports."""
    if not 0 <= wavelength < 2 * pitch:
        raise ValueError(
            f"wavelength {wavelength} must lie in [0, 2*pitch) for pitch {pitch}"
        )
    return math.asin(wavelength / (2 * pitch))


def eyebox_extent(system: OpticalSystem, channel: WavelengthChannel) -> float:
    """Full width of the Fourier plane conjugate to the SLM grid."""
    return system.focal_length * channel.wavelength / system.slm.pitch


def eyebox_sample_pitch(
    system: OpticalSystem, channel: WavelengthChannel, grid: PhysicalGrid | None = None
) -> tuple[float, float]:
    """(dx, dy) on the eyebox plane for an FFT taken over ``grid``.

    ``grid`` defaults to the SLM grid; pass a padded grid to get the finer
    sampling of a zero-padded transform.
    """
    if grid is None:
        grid = system.slm.grid
    lf = channel.wavelength * system.focal_length
    return lf / (grid.cols * grid.dx), lf / (grid.rows * grid.dy)


def eyebox_grid(
    system: OpticalSystem, channel: WavelengthChannel, shape: tuple[int, int] | None = None
) -> PhysicalGrid:
    """Eyebox-plane grid for an FFT of the given (rows, cols) at SLM pitch."""
    rows, cols = shape if shape is not None else (system.slm.rows, system.slm.cols)
    p = system.slm.pitch
    dx, dy = eyebox_sample_pitch(system, channel, PhysicalGrid(rows, cols, p, p))
    return PhysicalGrid(rows, cols, dx, dy, Plane.EYEBOX)


_UNITS = {
    "m": 1.0,
    "cm": 1e-2,
    "mm": 1e-3,
    "um": 1e-6,
    "µm": 1e-6,
    "μm": 1e-6,
    "nm": 1e-9,
}
_LENGTH_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([a-zµμ]*)\s*$")


def parse_length(value, default_unit: str = "m") -> float:
    """Parse ``"8um"``, ``"100mm"``, ``"636nm"`` or a bare number into meters."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value) * _UNITS[default_unit]
    if not isinstance(value, str):
        raise ValueError(f"cannot parse length from {value!r}")
    m = _LENGTH_RE.match(value)
    if not m:
        raise ValueError(f"cannot parse length from {value!r}")
    number, unit = m.groups()
    unit = unit or default_unit
    if unit not in _UNITS:
        raise ValueError(f"unknown length unit {unit!r} in {value!r}")
    return float(number) * _UNITS[unit]


def format_length(meters: float) -> str:
    """Compact unit-suffixed string that ``parse_length`` reads back exactly."""
    return f"{meters!r}m"
