"""Wave propagation between the SLM, target-image and eyebox planes.

FFTs are unitary (``norm="ortho"``) everywhere. Linear convolutions are
zero-padded to ``scipy.fft.next_fast_len(2 * n - 1)`` per axis so there is no
circular wraparound; ``padding="circular"`` skips the padding for memory-bound
runs at very large pixel counts.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .optics import (
    ComplexField,
    OpticalSystem,
    PhysicalGrid,
    Plane,
    WavelengthChannel,
    eyebox_grid,
    max_diffraction_angle,
)
from .pupil import PupilState, combine_apertures, iris_mask, pupil_mask

PADDINGS = ("linear", "circular")


def fft2c(u: np.ndarray) -> np.ndarray:
    """Centered unitary 2D FFT (DC at index n // 2)."""
    return sfft.fftshift(sfft.fft2(sfft.ifftshift(u, axes=(-2, -1)), norm="ortho"), axes=(-2, -1))


def ifft2c(u: np.ndarray) -> np.ndarray:
    return sfft.fftshift(sfft.ifft2(sfft.ifftshift(u, axes=(-2, -1)), norm="ortho"), axes=(-2, -1))


def padded_shape(shape: tuple[int, int], padding: str = "linear") -> tuple[int, int]:
    if padding not in PADDINGS:
        raise ValueError(f"padding must be one of {PADDINGS}, got {padding!r}")
    if padding == "circular":
        return tuple(shape)
    return tuple(sfft.next_fast_len(2 * n - 1) for n in shape)


def pad_center(u: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Embed ``u`` in zeros so that its center sample lands on the new center."""
    if tuple(u.shape) == tuple(shape):
        return u
    out = np.zeros(shape, dtype=u.dtype)
    r0 = shape[0] // 2 - u.shape[0] // 2
    c0 = shape[1] // 2 - u.shape[1] // 2
    out[r0:r0 + u.shape[0], c0:c0 + u.shape[1]] = u
    return out


def crop_center(u: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if tuple(u.shape) == tuple(shape):
        return u
    r0 = u.shape[0] // 2 - shape[0] // 2
    c0 = u.shape[1] // 2 - shape[1] // 2
    return u[r0:r0 + shape[0], c0:c0 + shape[1]]


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Fourier-domain multiplier in centered layout on a Fourier-plane grid."""

    grid: PhysicalGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError("transfer function shape does not match its grid")
        if np.abs(self.values).max(initial=0.0) > 1 + 1e-12:
            raise ValueError("transfer function must be passive (|H| <= 1)")

    def unshifted(self) -> np.ndarray:
        return sfft.ifftshift(self.values)


def lens_kernel(
    grid: PhysicalGrid,
    f: float,
    wavelength: float,
    conjugate: bool = False,
    support: str = "disc",
    taper: float = 0.0,
    dtype=np.complex128,
) -> ComplexField:
    """Concave lens phase confined to the SLM diffraction support.

    Samples farther than ``f * tan(theta)`` from the axis are zero, where theta
    is the maximum diffraction angle of the grid pitch. A nonzero ``taper``
    rolls the amplitude off with a raised cosine over that fraction of the
    support radius.
    """
    if not f > 0:
        raise ValueError(f"focal length must be positive, got {f}")
    if support not in ("disc", "square"):
        raise ValueError(f"support must be 'disc' or 'square', got {support!r}")
    rx = f * np.tan(max_diffraction_angle(wavelength, grid.dx))
    ry = f * np.tan(max_diffraction_angle(wavelength, grid.dy))
    if rx < grid.dx or ry < grid.dy:
        raise ValueError("lens-cut support is smaller than one sample; kernel degenerates")
    dtype = np.dtype(dtype)
    real = np.float32 if dtype == np.complex64 else np.float64
    x, y = grid.x(), grid.y()
    a = (1.0 if conjugate else -1.0) * np.pi / (wavelength * f)
    # the quadratic phase is separable; the 1D factors keep full precision
    g = np.exp(1j * a * y ** 2).astype(dtype)[:, None] * np.exp(1j * a * x ** 2).astype(dtype)[None, :]
    xs = (x / rx).astype(real)[None, :]
    ys = (y / ry).astype(real)[:, None]
    if support == "disc":
        rho = np.sqrt(xs ** 2 + ys ** 2)
    else:
        rho = np.maximum(np.abs(xs), np.abs(ys))
    if taper > 0:
        window = np.clip((1 - rho) / real(taper), 0, 1)
        window *= real(np.pi / 2)
        np.sin(window, out=window)
        window **= 2
    else:
        window = (rho <= 1.0).astype(real)
    del rho
    g *= window
    return ComplexField(grid, g)


def linear_convolve(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """'same'-size linear convolution with ``kernel`` centered at index n // 2."""
    if a.shape != kernel.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {kernel.shape}")
    work = padded_shape(a.shape, "linear")
    full = sfft.ifft2(sfft.fft2(a, s=work) * sfft.fft2(kernel, s=work))
    r0, c0 = a.shape[0] // 2, a.shape[1] // 2
    return full[r0:r0 + a.shape[0], c0:c0 + a.shape[1]]


def circular_convolve(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Circular convolution on the input grid; kernel centered at n // 2."""
    return sfft.ifft2(sfft.fft2(a) * sfft.fft2(sfft.ifftshift(kernel)))


def synthesize_hologram(
    target: ComplexField, kernel: ComplexField, padding: str = "linear"
) -> ComplexField:
    """Superpose one lens cut per target pixel: ``target * kernel``."""
    if target.grid.shape != kernel.grid.shape:
        raise ValueError("target and kernel must share a grid")
    if padding == "linear":
        h = linear_convolve(target.samples, kernel.samples)
    else:
        h = circular_convolve(target.samples, kernel.samples)
    h = h.astype(np.result_type(target.samples.dtype, kernel.samples.dtype), copy=False)
    return ComplexField(target.grid.with_plane(Plane.SLM), h)


class FourierModel:
    """Cached Fourier-domain operators for one (system, channel, grid size).

    Holds the iris mask and the conjugate-kernel transfer function on the
    (optionally padded) working grid. Arrays prefixed ``tf_`` are in unshifted
    FFT layout, ready to multiply ``scipy.fft.fft2`` output.
    """

    def __init__(
        self,
        system: OpticalSystem,
        channel: WavelengthChannel,
        shape: tuple[int, int] | None = None,
        padding: str = "linear",
        dtype=np.complex128,
        feather: bool = True,
    ):
        self.system = system
        self.channel = channel
        self.shape = tuple(shape) if shape is not None else (system.slm.rows, system.slm.cols)
        self.padding = padding
        self.dtype = np.dtype(dtype)
        self.feather = feather
        self.work_shape = padded_shape(self.shape, padding)
        self.eyebox = eyebox_grid(system, channel, self.work_shape)

        p = system.slm.pitch
        slm_grid = PhysicalGrid(self.shape[0], self.shape[1], p, p, Plane.SLM)
        g_conj = lens_kernel(
            slm_grid,
            system.focal_length,
            channel.wavelength,
            True,
            system.lens_support,
            system.lens_taper,
            self.dtype,
        ).samples
        shifted = sfft.ifftshift(pad_center(g_conj, self.work_shape))
        del g_conj
        spectrum = sfft.fft2(shifted, overwrite_x=True)
        del shifted
        spectrum /= np.abs(spectrum).max()
        self.tf_kernel = spectrum
        real = np.float32 if self.dtype == np.complex64 else np.float64
        self.iris = iris_mask(self.eyebox, system.iris_diameter, feather=feather).astype(real)

    @property
    def tf_full(self) -> np.ndarray:
        """Conjugate lens times iris, unshifted; built on demand to save memory."""
        return self.tf_kernel * self.aperture()

    @property
    def kernel_tf(self) -> TransferFunction:
        """Conjugate lens-cut transfer function in centered layout."""
        return TransferFunction(self.eyebox, sfft.fftshift(self.tf_kernel))

    def pupil_aperture(self, pupil: PupilState) -> np.ndarray:
        """Centered transmission of the pupil stacked with the iris."""
        m = pupil_mask(self.eyebox, pupil, self.feather).astype(self.iris.dtype)
        return combine_apertures(self.iris, m)

    def aperture(self, pupil: PupilState | None = None) -> np.ndarray:
        """Iris (or iris and pupil) transmission in unshifted FFT layout."""
        m = self.iris if pupil is None else self.pupil_aperture(pupil)
        return sfft.ifftshift(m)

    def tf_pupil(self, pupil: PupilState) -> np.ndarray:
        return self.tf_kernel * self.aperture(pupil)

    def spectrum(self, u: np.ndarray) -> np.ndarray:
        """Unitary FFT of the SLM field on the working grid."""
        return sfft.fft2(pad_center(u.astype(self.dtype, copy=False), self.work_shape), norm="ortho")

    def to_image(self, spectrum: np.ndarray) -> np.ndarray:
        return crop_center(sfft.ifft2(spectrum, norm="ortho"), self.shape)

    def propagate(self, u: np.ndarray, pupil: PupilState | None = None) -> np.ndarray:
        tf = self.tf_full if pupil is None else self.tf_pupil(pupil)
        return self.to_image(self.spectrum(u) * tf)


_model_lock = threading.Lock()


@lru_cache(maxsize=16)
def _cached_model(system, channel, shape, padding, dtype, feather):
    return FourierModel(system, channel, shape, padding, dtype, feather)


def fourier_model(
    system: OpticalSystem,
    channel: WavelengthChannel,
    shape: tuple[int, int] | None = None,
    padding: str = "linear",
    dtype=np.complex128,
    feather: bool = True,
) -> FourierModel:
    """Shared, lazily built :class:`FourierModel` (thread-safe)."""
    shape = tuple(shape) if shape is not None else (system.slm.rows, system.slm.cols)
    with _model_lock:
        return _cached_model(system, channel, shape, padding, np.dtype(dtype).str, feather)


def propagate_full(
    u_slm: ComplexField,
    system: OpticalSystem,
    channel: WavelengthChannel,
    padding: str = "linear",
    feather: bool = True,
) -> ComplexField:
    """Fully sampled reconstruction: iris filter and conjugate lens in one Fourier pass."""
    model = fourier_model(system, channel, u_slm.shape, padding, u_slm.samples.dtype, feather)
    return ComplexField(u_slm.grid.with_plane(Plane.TARGET), model.propagate(u_slm.samples))


def propagate_pupil(
    u_slm: ComplexField,
    system: OpticalSystem,
    channel: WavelengthChannel,
    pupil: PupilState,
    padding: str = "linear",
    feather: bool = True,
) -> ComplexField:
    """Reconstruction as seen through ``pupil`` placed on the eyebox plane."""
    model = fourier_model(system, channel, u_slm.shape, padding, u_slm.samples.dtype, feather)
    return ComplexField(
        u_slm.grid.with_plane(Plane.TARGET), model.propagate(u_slm.samples, pupil)
    )


def _fourier_grid(grid: PhysicalGrid, system, channel) -> PhysicalGrid:
    if system is not None and channel is not None:
        return eyebox_grid(system, channel, grid.shape)
    return PhysicalGrid(
        grid.rows, grid.cols, 1 / (grid.cols * grid.dx), 1 / (grid.rows * grid.dy), Plane.FOURIER
    )


def fraunhofer(
    u: ComplexField,
    system: OpticalSystem | None = None,
    channel: WavelengthChannel | None = None,
) -> ComplexField:
    """Far-field (Fourier-plane) field; eyebox-plane grid when a system is given."""
    return ComplexField(_fourier_grid(u.grid, system, channel), fft2c(u.samples))


def inverse_fraunhofer(U: ComplexField, slm_grid: PhysicalGrid) -> ComplexField:
    return ComplexField(slm_grid, ifft2c(U.samples))


def asm_transfer(
    shape: tuple[int, int], dx: float, dy: float, wavelength: float, z: float, dtype=np.complex128
) -> np.ndarray:
    """Band-limited angular-spectrum transfer function in unshifted FFT layout."""
    fx = sfft.fftfreq(shape[1], dx)[None, :]
    fy = sfft.fftfreq(shape[0], dy)[:, None]
    arg = 1.0 / wavelength ** 2 - fx ** 2 - fy ** 2
    propagating = arg > 0
    h = np.where(
        propagating, np.exp(2j * np.pi * z * np.sqrt(np.where(propagating, arg, 0.0))), 0.0
    )
    return h.astype(dtype)


def fresnel(
    u: ComplexField, z: float, channel: WavelengthChannel, pad: bool = True
) -> ComplexField:
    """Angular-spectrum propagation by ``z`` (negative z back-propagates).

    Evanescent components are dropped. ``pad=True`` zero-pads to suppress
    wraparound and crops back, which makes the operator non-invertible near
    the frame edges; ``pad=False`` is the exactly unitary circular variant.
    """
    if z == 0:
        return u
    work = padded_shape(u.shape, "linear" if pad else "circular")
    h = asm_transfer(work, u.grid.dx, u.grid.dy, channel.wavelength, z, u.samples.dtype)
    out = sfft.ifft2(sfft.fft2(pad_center(u.samples, work)) * h)
    return ComplexField(u.grid.with_plane(Plane.TARGET), crop_center(out, u.shape))


def _mask_array(mask) -> np.ndarray:
    return mask.samples if isinstance(mask, ComplexField) else np.asarray(mask)


def relay_far_field(h: ComplexField, pupil_mask) -> np.ndarray:
    """Retinal intensity of a far-field hologram relayed onto the pupil."""
    m = _mask_array(pupil_mask)
    if m.shape != h.shape:
        raise ValueError("hologram and pupil mask must share a grid")
    return np.abs(fft2c(h.samples * m)) ** 2


def relay_near_field(
    h: ComplexField, pupil_mask, z: float, channel: WavelengthChannel, pad: bool = True
) -> np.ndarray:
    """Retinal intensity of a near-field hologram relayed onto the pupil."""
    m = _mask_array(pupil_mask)
    if m.shape != h.shape:
        raise ValueError("hologram and pupil mask must share a grid")
    return fresnel(h.replace(h.samples * m), z, channel, pad).intensity
