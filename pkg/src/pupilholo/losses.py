"""Image losses with analytic gradients: L2, SSIM, Watson-FFT and their blend.

Every loss has a ``*_value_and_grad(x, ref)`` form returning the scalar and its
gradient with respect to ``x``; the ``loss_*`` functions return the scalar only.

The default Watson sensitivity table is derived from Watson's 8x8 DCT luminance
detection thresholds: DFT bin k of an 8-sample block carries min(k, 8 - k)
cycles per block, i.e. DCT index 2 * min(k, 8 - k) (capped at 7), and the
sensitivity is the reciprocal threshold normalized to a peak of 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
STRIP_PIXELS = 1 << 21

PerceptualFn = Callable[[np.ndarray, np.ndarray], "tuple[float, np.ndarray]"]


class PerceptualPluginMissing(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    l2: float = 1.0
    ssim: float = 0.2
    wfft: float = 0.05
    perc: float = 0.0

    def __post_init__(self):
        ws = (self.l2, self.ssim, self.wfft, self.perc)
        if any(w < 0 for w in ws):
            raise ValueError(f"loss weights must be non-negative, got {ws}")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one loss weight must be positive")


@lru_cache(maxsize=1)
def default_sensitivity() -> np.ndarray:
    text = resources.files("pupilholo.data").joinpath("watson_sensitivity.txt").read_text()
    return load_sensitivity_text(text)


def load_sensitivity_text(text: str) -> np.ndarray:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    table = np.array(rows, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] != table.shape[1]:
        raise ValueError(f"sensitivity table must be square, got shape {table.shape}")
    return table


@dataclass(frozen=True, eq=False)
class WatsonConfig:
    block: int = 8
    sensitivity: np.ndarray = field(default_factory=default_sensitivity)
    pooling_exponent: float = 4.0

    def __post_init__(self):
        s = np.asarray(self.sensitivity, dtype=np.float64)
        if s.shape != (self.block, self.block):
            raise ValueError(f"sensitivity must be {self.block}x{self.block}, got {s.shape}")
        if not (s > 0).all():
            raise ValueError("sensitivities must be positive")
        if self.pooling_exponent < 1:
            raise ValueError("pooling_exponent must be >= 1")
        object.__setattr__(self, "sensitivity", s)


def _check_pair(x, ref):
    x = np.asarray(x)
    ref = np.asarray(ref)
    if x.shape != ref.shape:
        raise ValueError(f"dimension mismatch {x.shape} vs {ref.shape}")
    return x, ref


# ------------------------------------------------------------------- L2

def l2_value_and_grad(x, ref):
    x, ref = _check_pair(x, ref)
    d = x - ref
    value = float(np.mean(d * d, dtype=np.float64))
    d *= 2.0 / d.size
    return value, d


def loss_l2(x, ref) -> float:
    return l2_value_and_grad(x, ref)[0]


# ----------------------------------------------------------------- SSIM

@lru_cache(maxsize=4)
def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2
    w = np.exp(-(t ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _valid_filter(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separable correlation keeping only windows fully inside the image."""
    h = len(w) // 2
    out = ndimage.correlate1d(img, w, axis=0, mode="constant")[h:img.shape[0] - h]
    return ndimage.correlate1d(out, w, axis=1, mode="constant")[:, h:img.shape[1] - h]


def _valid_filter_adjoint(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    h = len(w) // 2
    return _valid_filter(np.pad(g, 2 * h), w[::-1])


def _ssim_terms(x, ref):
    w = gaussian_window().astype(x.dtype, copy=False)
    mu_x = _valid_filter(x, w)
    mu_y = _valid_filter(ref, w)
    var_x = _valid_filter(x * x, w) - mu_x * mu_x
    var_y = _valid_filter(ref * ref, w) - mu_y * mu_y
    cov = _valid_filter(x * ref, w) - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    s = a1 * a2 / (b1 * b2)
    return w, mu_x, mu_y, a1, a2, b1, b2, s


def _strips(x):
    """Row ranges of input strips whose valid SSIM windows tile the image."""
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    h = SSIM_WINDOW // 2
    out_rows = x.shape[0] - 2 * h
    n = out_rows * (x.shape[1] - 2 * h)
    # bound temporaries to roughly STRIP_PIXELS samples per strip
    step = max(1, STRIP_PIXELS // x.shape[1])
    return n, [(o0, min(o0 + step, out_rows) + 2 * h) for o0 in range(0, out_rows, step)]


def ssim(x, ref) -> float:
    """Mean SSIM over all fully contained 11x11 Gaussian windows (range 1)."""
    x, ref = _check_pair(x, ref)
    n, strips = _strips(x)
    total = sum(float(np.sum(_ssim_terms(x[r0:r1], ref[r0:r1])[-1], dtype=np.float64))
                for r0, r1 in strips)
    return total / n


def ssim_value_and_grad(x, ref):
    x, ref = _check_pair(x, ref)
    n, strips = _strips(x)
    g = -1.0 / n
    total = 0.0
    grad = np.zeros_like(x)
    for r0, r1 in strips:
        xs, ys = x[r0:r1], ref[r0:r1]
        w, mu_x, mu_y, a1, a2, b1, b2, s = _ssim_terms(xs, ys)
        total += float(np.sum(s, dtype=np.float64))
        b12 = b1 * b2
        d_var = g * (-s / b2)
        d_cov = g * (2 * a1 / b12)
        d_mu = g * (2 * mu_y * a2 / b12 - 2 * mu_x * s / b1) - 2 * mu_x * d_var - mu_y * d_cov
        del a1, a2, b1, b2, s, b12
        grad[r0:r1] += _valid_filter_adjoint(d_mu, w)
        grad[r0:r1] += 2 * xs * _valid_filter_adjoint(d_var, w)
        grad[r0:r1] += ys * _valid_filter_adjoint(d_cov, w)
    return 1.0 - total / n, grad


def loss_ssim(x, ref) -> float:
    return 1.0 - ssim(x, ref)


# ------------------------------------------------------------ Watson FFT

def _tiles(img: np.ndarray, b: int) -> np.ndarray:
    h, w = img.shape
    return img.reshape(h // b, b, w // b, b).transpose(0, 2, 1, 3)


def _untile(t: np.ndarray) -> np.ndarray:
    nh, nw, b, _ = t.shape
    return t.transpose(0, 2, 1, 3).reshape(nh * b, nw * b)


def _watson_strips(shape, b):
    tile_rows = shape[0] // b
    step = max(1, STRIP_PIXELS // (shape[1] * b))
    return [(t0 * b, min(t0 + step, tile_rows) * b) for t0 in range(0, tile_rows, step)]


def _watson_strip(xs, rs, cfg):
    b = cfg.block
    fx = sfft.fft2(_tiles(xs, b))
    mag_x = np.abs(fx)
    diff = mag_x - np.abs(sfft.fft2(_tiles(rs, b)))
    sens = cfg.sensitivity.astype(xs.dtype, copy=False)
    return fx, mag_x, diff, sens * np.abs(diff), sens


def watson_fft_value_and_grad(x, ref, cfg: WatsonConfig | None = None):
    """Sensitivity-weighted difference of blockwise Fourier magnitudes, p-norm pooled."""
    cfg = cfg or WatsonConfig()
    x, ref = _check_pair(x, ref)
    b = cfg.block
    if x.shape[0] % b or x.shape[1] % b:
        raise ValueError(f"image {x.shape} is not divisible into {b}x{b} blocks")
    p = cfg.pooling_exponent
    n_tiles = (x.shape[0] // b) * (x.shape[1] // b)
    strips = _watson_strips(x.shape, b)
    pooled = 0.0
    for r0, r1 in strips:
        d = _watson_strip(x[r0:r1], ref[r0:r1], cfg)[3]
        pooled += float(np.sum(d.astype(np.float64) ** p))
    if pooled == 0:
        return 0.0, np.zeros_like(x)
    value = pooled ** (1 / p) / n_tiles
    scale = pooled ** (1 / p - 1) / n_tiles
    grad = np.empty_like(x)
    for r0, r1 in strips:
        fx, mag_x, diff, d, sens = _watson_strip(x[r0:r1], ref[r0:r1], cfg)
        g_mag = (scale * d ** (p - 1)) * sens * np.sign(diff)
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(mag_x > 0, fx / mag_x, 0)
        g = np.real(b * b * sfft.ifft2(g_mag * unit))
        grad[r0:r1] = _untile(g)
    return value, grad


def loss_watson_fft(x, ref, cfg: WatsonConfig | None = None) -> float:
    return watson_fft_value_and_grad(x, ref, cfg)[0]


# ------------------------------------------------------------- composite

_perceptual_plugin: PerceptualFn | None = None


def register_perceptual(fn: PerceptualFn | None) -> None:
    """Install the (x, ref) -> (value, grad) function used when weights.perc > 0."""
    global _perceptual_plugin
    _perceptual_plugin = fn


def composite_value_and_grad(
    x,
    ref,
    weights: LossWeights | None = None,
    cfg: WatsonConfig | None = None,
    perceptual: PerceptualFn | None = None,
):
    weights = weights or LossWeights()
    x, ref = _check_pair(x, ref)
    perceptual = perceptual or _perceptual_plugin
    if weights.perc > 0 and perceptual is None:
        raise PerceptualPluginMissing("perceptual weight is positive but no plugin is registered")
    terms = (
        (weights.l2, l2_value_and_grad),
        (weights.ssim, ssim_value_and_grad),
        (weights.wfft, lambda a, b: watson_fft_value_and_grad(a, b, cfg)),
        (weights.perc, perceptual),
    )
    value = 0.0
    grad = np.zeros_like(x)
    for w, fn in terms:
        if w > 0:
            v, g = fn(x, ref)
            value += w * v
            g *= w
            grad += g
            del g
    return value, grad


def composite_loss(x, ref, weights=None, cfg=None, perceptual=None) -> float:
    return composite_value_and_grad(x, ref, weights, cfg, perceptual)[0]
