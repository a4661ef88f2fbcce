"""Phase-only encoding of complex SLM fields (double-phase coding, quantization)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .optics import ComplexField, PhysicalGrid

TWO_PI = 2 * np.pi
NORMALIZE_HEADROOM = 0.999


class AmplitudeOverflowError(ValueError):
    def __init__(self, max_amplitude: float):
        super().__init__(
            f"double-phase coding needs |u| <= 1, got max |u| = {max_amplitude:.6g}; "
            "normalize the field first"
        )
        self.max_amplitude = max_amplitude


@dataclass(frozen=True, eq=False)
class PhasePattern:
    grid: PhysicalGrid
    phase: np.ndarray
    levels: int | None = None

    def __post_init__(self):
        ph = np.asarray(self.phase, dtype=np.float64)
        if ph.shape != self.grid.shape:
            raise ValueError(f"phase shape {ph.shape} does not match grid {self.grid.shape}")
        if ph.size and (ph.min() < 0 or ph.max() >= TWO_PI):
            raise ValueError("phase values must lie in [0, 2*pi)")
        object.__setattr__(self, "phase", ph)

    def field(self) -> ComplexField:
        """Unit-modulus field displayed by the SLM."""
        return ComplexField(self.grid, np.exp(1j * self.phase))


def wrap_phase(phi: np.ndarray) -> np.ndarray:
    out = np.mod(phi, TWO_PI)
    # mod can round up to exactly 2*pi for tiny negative inputs
    out[out >= TWO_PI] = 0.0
    return out


def checkerboard_mask(grid_or_shape, parity: int = 0) -> np.ndarray:
    """``mask[i, j] = (i + j + parity) mod 2``."""
    shape = grid_or_shape.shape if hasattr(grid_or_shape, "shape") else tuple(grid_or_shape)
    if parity not in (0, 1):
        raise ValueError("parity must be 0 or 1")
    i, j = np.indices(shape)
    return (i + j + parity) % 2


def normalize_field(u: ComplexField, headroom: float = NORMALIZE_HEADROOM) -> ComplexField:
    peak = np.abs(u.samples).max()
    if peak == 0:
        return u
    return u.replace(u.samples * (headroom / peak))


def double_phase_pair(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The two unit phasor phases whose average is ``u`` (|u| <= 1)."""
    a = np.abs(u)
    phi = np.angle(u)
    offset = np.arccos(np.clip(a, 0.0, 1.0))
    return phi - offset, phi + offset


def double_phase(u: ComplexField) -> PhasePattern:
    """Double-phase amplitude coding with checkerboard interleaving.

    Sample (0, 0) and every sample with even ``i + j`` take ``phi - acos(A)``;
    the others take ``phi + acos(A)``.
    """
    peak = float(np.abs(u.samples).max())
    if peak > 1 + 1e-12:
        raise AmplitudeOverflowError(peak)
    p1, p2 = double_phase_pair(u.samples)
    even = checkerboard_mask(u.shape, 0) == 0
    return PhasePattern(u.grid, wrap_phase(np.where(even, p1, p2)))


def lowpass_decode(pattern: PhasePattern, fraction: float = 0.5) -> ComplexField:
    """Reference decoder: ideal square low-pass of ``exp(j*phase)``.

    ``fraction`` is the cutoff as a fraction of the Nyquist frequency per axis;
    0.5 keeps the band that contains a quarter-Nyquist-limited field and rejects
    the checkerboard carrier at the Nyquist corner.
    """
    rows, cols = pattern.grid.shape
    fy = np.abs(sfft.fftfreq(rows))[:, None]
    fx = np.abs(sfft.fftfreq(cols))[None, :]
    keep = (fx <= 0.5 * fraction) & (fy <= 0.5 * fraction)
    spectrum = sfft.fft2(np.exp(1j * pattern.phase))
    return ComplexField(pattern.grid, sfft.ifft2(spectrum * keep))


def quantize_phase(pattern: PhasePattern, levels: int) -> PhasePattern:
    """Snap each phase to the nearest of ``2*pi*k/levels`` (wrapping at 2*pi)."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    step = TWO_PI / levels
    k = np.round(pattern.phase / step).astype(np.int64) % levels
    return PhasePattern(pattern.grid, k * step, levels)


def phase_to_gray(pattern: PhasePattern, bits: int = 8) -> np.ndarray:
    """Integer gray levels ``round(phase / 2pi * (2**bits - 1))``."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    top = 2 ** bits - 1
    dtype = np.uint8 if bits == 8 else np.uint16
    return np.round(pattern.phase / TWO_PI * top).astype(dtype)
