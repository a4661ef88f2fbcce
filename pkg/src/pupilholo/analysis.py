"""Eyebox energy maps, pupil sweeps, speckle statistics and spectrum inspection.

Analysis uses hard (binary) pupil and iris masks. Image metrics compare
amplitude images after dividing by their 99.9th percentile and clipping to
[0, 1].
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .losses import ssim
from .optics import ComplexField, OpticalSystem, PhysicalGrid, WavelengthChannel
from .propagation import fft2c, fourier_model, fraunhofer
from .pupil import PupilState, disc_mask

PSNR_FLOOR_DB = 0.0
NORMALIZE_PERCENTILE = 99.9
MIN_REGION_SAMPLES = 16


@dataclass(frozen=True, eq=False)
class EyeboxEnergyMap:
    grid: PhysicalGrid
    energy: np.ndarray
    total: float
    iris_diameter: float | None = None

    def __post_init__(self):
        e = np.asarray(self.energy, dtype=np.float64)
        if e.shape != self.grid.shape:
            raise ValueError("energy shape does not match grid")
        if (e < 0).any():
            raise ValueError("energy must be non-negative")
        s = float(e.sum())
        if abs(s - self.total) > 1e-9 * max(abs(s), 1e-300):
            raise ValueError("total does not match the summed energy")
        object.__setattr__(self, "energy", e)

    def log_image(self) -> np.ndarray:
        """log10 energy rescaled to [0, 1] over a 6-decade range, for display."""
        peak = self.energy.max()
        if peak == 0:
            return np.zeros_like(self.energy)
        db = np.log10(np.maximum(self.energy / peak, 1e-6))
        return (db + 6) / 6


def eyebox_energy(u_slm: ComplexField, system: OpticalSystem, channel: WavelengthChannel):
    """``|fraunhofer(u)|^2`` on the eyebox grid."""
    if u_slm.shape != (system.slm.rows, system.slm.cols):
        raise ValueError("field is not on the SLM grid")
    U = fraunhofer(u_slm, system, channel)
    e = np.abs(U.samples.astype(np.complex128)) ** 2
    return EyeboxEnergyMap(U.grid, e, float(e.sum()), system.iris_diameter)


def _iris(emap: EyeboxEnergyMap, iris_diameter):
    d = iris_diameter if iris_diameter is not None else emap.iris_diameter
    if d is None:
        raise ValueError("iris diameter unknown")
    return d


def energy_within(emap: EyeboxEnergyMap, radius: float) -> float:
    """Fraction of the map's total energy inside a centered disc."""
    if emap.total == 0:
        return 0.0
    inside = emap.grid.radius() <= radius
    return float(emap.energy[inside].sum() / emap.total)


def central_energy_fraction(emap: EyeboxEnergyMap, rel_radius=0.1, iris_diameter=None) -> float:
    """Energy share inside a centered disc of ``rel_radius`` times the iris radius."""
    return energy_within(emap, rel_radius * _iris(emap, iris_diameter) / 2)


def tile_energy_cv(emap: EyeboxEnergyMap, tiles=8, iris_diameter=None, min_coverage=0.5) -> float:
    """Coefficient of variation of per-tile mean energy over the iris disc.

    The iris bounding square is split into ``tiles x tiles`` cells; a cell
    counts when at least ``min_coverage`` of its samples fall in the disc, and
    contributes the mean energy of its in-disc samples.
    """
    d = _iris(emap, iris_diameter)
    x, y = emap.grid.coords()
    r = d / 2
    inside = np.hypot(x, y) <= r
    ix = np.floor((x + r) / d * tiles).astype(int)
    iy = np.floor((y + r) / d * tiles).astype(int)
    means = []
    for ty in range(tiles):
        rows = iy[:, 0] == ty
        for tx in range(tiles):
            cols = ix[0] == tx
            cell = np.outer(rows, cols)
            n_cell = cell.sum()
            sel = cell & inside
            if n_cell == 0 or sel.sum() < min_coverage * n_cell:
                continue
            means.append(emap.energy[sel].mean())
    means = np.asarray(means)
    if means.size < 2 or means.mean() == 0:
        raise ValueError("not enough energy-bearing tiles inside the iris")
    return float(means.std() / means.mean())


def effective_eyebox(emap: EyeboxEnergyMap, fraction: float, iris_diameter=None) -> float:
    """Diameter of the smallest centered disc holding ``fraction`` of in-iris energy."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    d = _iris(emap, iris_diameter)
    r = emap.grid.radius()
    in_iris = r <= d / 2
    order = np.argsort(r[in_iris], kind="stable")
    radii = r[in_iris][order]
    cum = np.cumsum(emap.energy[in_iris][order])
    if cum[-1] == 0:
        raise ValueError("no energy inside the iris")
    goal = fraction * cum[-1]

    def enclosed(rad):
        k = np.searchsorted(radii, rad, side="right")
        return cum[k - 1] if k else 0.0

    lo, hi = 0.0, d / 2
    if enclosed(lo) >= goal:
        return 0.0
    tol = 0.5 * min(emap.grid.dx, emap.grid.dy)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if enclosed(mid) >= goal:
            hi = mid
        else:
            lo = mid
    return 2 * hi


# ---------------------------------------------------------------- metrics

def normalize_image(img: np.ndarray, percentile=NORMALIZE_PERCENTILE) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    top = np.percentile(img, percentile)
    if top <= 0:
        return np.zeros_like(img)
    return np.clip(img / top, 0.0, 1.0)


def psnr(img: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"dimension mismatch {img.shape} vs {ref.shape}")
    mse = float(np.mean((img - ref) ** 2))
    if mse == 0:
        return math.inf
    return max(10 * math.log10(peak ** 2 / mse), PSNR_FLOOR_DB)


def speckle_contrast(image: np.ndarray, region=None) -> float:
    """std / mean of ``image`` over ``region`` (boolean mask, index tuple or None)."""
    image = np.asarray(image, dtype=np.float64)
    vals = image.ravel() if region is None else np.asarray(image[region]).ravel()
    if vals.size < MIN_REGION_SAMPLES:
        raise ValueError(f"region has {vals.size} samples, need >= {MIN_REGION_SAMPLES}")
    mu = vals.mean()
    if not mu > 0:
        raise ValueError("speckle contrast needs a region with positive mean")
    return float(vals.std() / mu)


# ----------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepEntry:
    pupil: PupilState
    psnr: float
    ssim: float
    speckle_contrast: float
    energy_fraction: float


@dataclass(frozen=True)
class SweepReport:
    entries: tuple[SweepEntry, ...]

    HEADER = ("x_mm", "y_mm", "d_mm", "psnr_db", "ssim", "speckle", "energy_fraction")

    def rows(self):
        for e in self.entries:
            yield (*e.pupil.as_mm(), e.psnr, e.ssim, e.speckle_contrast, e.energy_fraction)

    @property
    def min_psnr(self) -> float:
        return min(e.psnr for e in self.entries)


def reconstruct_images(u_slm, system, channel, states, padding="linear"):
    """Hard-masked amplitude reconstructions, one per state (None: full iris)."""
    model = fourier_model(system, channel, u_slm.shape, padding, u_slm.samples.dtype, False)
    spec = model.spectrum(u_slm.samples)
    out = []
    for s in states:
        tf = model.tf_full if s is None else model.tf_pupil(s)
        out.append(np.abs(model.to_image(spec * tf)))
    return out


def pupil_sweep(
    u_slm: ComplexField,
    system: OpticalSystem,
    channel: WavelengthChannel,
    states,
    reference: np.ndarray,
    region=None,
    padding: str = "linear",
    workers: int = 1,
    return_images: bool = False,
):
    """Per-pupil PSNR / SSIM / speckle / captured-energy report.

    ``reference`` is the target amplitude in [0, 1]. Speckle contrast is taken
    over ``region`` of the reconstructed intensity and is NaN when that region
    is dark or no region is given.
    """
    states = list(states)
    if not states:
        raise ValueError("pupil_sweep needs at least one pupil state")
    reference = np.asarray(reference, dtype=np.float64)
    if reference.shape != u_slm.shape:
        raise ValueError("reference and field dimensions differ")
    model = fourier_model(system, channel, u_slm.shape, padding, u_slm.samples.dtype, False)
    spec = model.spectrum(u_slm.samples)
    power = np.abs(sfft.fftshift(spec)) ** 2
    iris_energy = float(np.sum(power * model.iris))

    def one(state):
        aperture = model.pupil_aperture(state)
        img = np.abs(model.to_image(spec * model.tf_kernel * sfft.ifftshift(aperture)))
        norm = normalize_image(img)
        captured = float(np.sum(power * aperture))
        frac = min(captured / iris_energy, 1.0) if iris_energy > 0 else 0.0
        speckle = math.nan
        if region is not None:
            try:
                speckle = speckle_contrast(img ** 2, region)
            except ValueError:
                pass
        s = float(np.clip(ssim(norm, reference), -1, 1))
        return SweepEntry(state, psnr(norm, reference), s, speckle, frac), norm

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, states))
    else:
        results = [one(s) for s in states]
    report = SweepReport(tuple(r[0] for r in results))
    if return_images:
        return report, [r[1] for r in results]
    return report


def full_iris_state(system: OpticalSystem) -> PupilState:
    return PupilState(0.0, 0.0, system.iris_diameter)


# --------------------------------------------------------------- spectra

def object_phase_spectrum(u_slm: ComplexField, system, channel, padding="linear") -> np.ndarray:
    """log(1 + |FFT(exp(j * phase))|) of the fully sampled reconstruction, centered."""
    model = fourier_model(system, channel, u_slm.shape, padding, u_slm.samples.dtype, False)
    phase = np.angle(model.propagate(u_slm.samples))
    return np.log1p(np.abs(fft2c(np.exp(1j * phase))))


def radial_profile(img: np.ndarray, bins: int | None = None) -> np.ndarray:
    """Mean of ``img`` over integer-radius rings about the center sample."""
    rows, cols = img.shape
    y, x = np.indices(img.shape)
    r = np.hypot(x - cols // 2, y - rows // 2).astype(int)
    n = bins or min(rows, cols) // 2
    keep = r < n
    sums = np.bincount(r[keep], img[keep], minlength=n)
    counts = np.bincount(r[keep], minlength=n)
    return sums / np.maximum(counts, 1)


def spectrum_band_energy(spectrum_log: np.ndarray, radius_px: float) -> tuple[float, float]:
    """(DC share, share inside a disc of ``radius_px`` excluding DC) of linear energy."""
    mag2 = np.expm1(spectrum_log) ** 2
    rows, cols = mag2.shape
    y, x = np.indices(mag2.shape)
    r = np.hypot(x - cols // 2, y - rows // 2)
    total = mag2.sum()
    dc = mag2[rows // 2, cols // 2] / total
    band = mag2[(r <= radius_px) & (r > 0)].sum() / total
    return float(dc), float(band)
