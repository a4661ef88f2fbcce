"""Pupil-aware phase retrieval.

The SLM field is parameterized by two real arrays: ``A = logistic(a)`` keeps
the amplitude inside (0, 1) as double-phase coding requires, and ``phi`` is the
phase. Each iteration records the fully sampled reconstruction plus one
reconstruction per sampled pupil on a fresh tape, back-propagates the summed
image losses and takes an Adam step.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .encoding import PhasePattern, double_phase, normalize_field, wrap_phase
from .losses import LossWeights, WatsonConfig, composite_value_and_grad
from .optics import ComplexField, OpticalSystem, PhysicalGrid, Plane, WavelengthChannel
from .propagation import (
    FourierModel,
    asm_transfer,
    fourier_model,
    fresnel,
    lens_kernel,
    synthesize_hologram,
)
from .pupil import PupilSampler, PupilState, sample_pupil

log = logging.getLogger(__name__)

AMPLITUDE_FLOOR = 1e-3


class InitMode(str, enum.Enum):
    LENS_CUT_UNIFORM_PHASE = "lens_cut_uniform_phase"
    LENS_CUT_RANDOM_PHASE = "lens_cut_random_phase"
    RANDOM_FIELD = "random_field"


class OptimizationDiverged(FloatingPointError):
    def __init__(self, iteration: int):
        super().__init__(f"loss became non-finite at iteration {iteration}")
        self.iteration = iteration


PRECISIONS = {"double": (np.float64, np.complex128), "single": (np.float32, np.complex64)}


@dataclass(frozen=True)
class OptimizeConfig:
    iterations: int = 500
    learning_rate: float = 0.01
    pupils_per_iter: int = 1
    init_mode: InitMode = InitMode.LENS_CUT_UNIFORM_PHASE
    seed: int = 0
    encode_in_loop: bool = False
    loss_weights: LossWeights = field(default_factory=LossWeights)
    watson: WatsonConfig | None = None
    padding: str = "linear"
    precision: str = "double"
    feather: bool = True
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.pupils_per_iter < 1:
            raise ValueError("pupils_per_iter must be >= 1")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {tuple(PRECISIONS)}")
        object.__setattr__(self, "init_mode", InitMode(self.init_mode))

    @property
    def dtypes(self):
        return PRECISIONS[self.precision]


@dataclass(eq=False)
class OptimizeResult:
    phase_pattern: PhasePattern
    final_complex_field: ComplexField
    loss_history: np.ndarray  # (iterations, 3): total, full term, mean pupil term
    sampled_pupils: list[PupilState]


class Adam:
    """Adam on a list of real arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def init_hologram(
    target_amplitude: np.ndarray,
    system: OpticalSystem,
    channel: WavelengthChannel,
    mode: InitMode = InitMode.LENS_CUT_UNIFORM_PHASE,
    seed: int = 0,
    padding: str = "linear",
    dtype=np.complex128,
) -> ComplexField:
    """Lens-cut hologram of the target with a zero or random object phase."""
    target_amplitude = np.asarray(target_amplitude, dtype=np.float64)
    grid = system.slm.grid
    if target_amplitude.shape != grid.shape:
        raise ValueError(f"target shape {target_amplitude.shape} != SLM shape {grid.shape}")
    mode = InitMode(mode)
    rng = np.random.default_rng(seed)
    if mode is InitMode.RANDOM_FIELD:
        u = rng.random(grid.shape) * np.exp(2j * np.pi * rng.random(grid.shape))
        return ComplexField(grid, u.astype(dtype))
    if mode is InitMode.LENS_CUT_RANDOM_PHASE:
        target = target_amplitude * np.exp(2j * np.pi * rng.random(grid.shape))
    else:
        target = target_amplitude.astype(np.complex128)
    kernel = lens_kernel(
        grid,
        system.focal_length,
        channel.wavelength,
        support=system.lens_support,
        taper=system.lens_taper,
    )
    target_field = ComplexField(grid.with_plane(Plane.TARGET), target.astype(dtype))
    kernel = kernel.replace(kernel.samples.astype(dtype))
    return synthesize_hologram(target_field, kernel, padding)


# ----------------------------------------------------------- objective

@dataclass
class Objective:
    total: ad.Variable
    full: list[ad.Variable]
    pupil: list[ad.Variable]  # mean pupil term per plane

    @property
    def full_value(self) -> float:
        return float(np.mean([f.value for f in self.full]))

    @property
    def pupil_value(self) -> float:
        return float(np.mean([p.value for p in self.pupil]))


def _image_term(lensed, aperture, model, ref, weights, watson, name):
    masked = ad.mul_const(lensed, aperture)
    amp = ad.magnitude(ad.crop(ad.ifft2(masked), model.shape))
    scaled = ad.fit_scale(amp, ref)
    fn = lambda x: composite_value_and_grad(x, ref, weights, watson)  # noqa: E731
    return ad.loss(scaled, fn, name)


def _mean(terms: list[ad.Variable]) -> ad.Variable:
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return ad.scale(out, 1.0 / len(terms)) if len(terms) > 1 else out


def record_objective(
    amplitude_raw: ad.Variable,
    phase: ad.Variable,
    model: FourierModel,
    planes: Sequence[tuple[np.ndarray, np.ndarray | None]],
    pupils: Sequence[PupilState],
    weights: LossWeights,
    watson: WatsonConfig | None = None,
    encode: bool = False,
) -> Objective:
    """Full-wavefront term plus the mean pupil term, averaged over image planes.

    ``planes`` holds (reference amplitude, extra transfer function or None);
    the transfer is multiplied into the same Fourier pass, e.g. an angular
    spectrum defocus for a 3D target plane.
    """
    compose = ad.double_phase if encode else ad.polar
    z = compose(ad.logistic(amplitude_raw), phase, model.dtype)
    lensed = ad.mul_const(ad.fft2(ad.pad(z, model.work_shape)), model.tf_kernel)
    del z
    apertures = [model.aperture()] + [model.aperture(p) for p in pupils]

    fulls, pupil_means, plane_totals = [], [], []
    for ref, extra in planes:
        terms = []
        for ap in apertures:
            mask = ap if extra is None else extra * ap
            terms.append(_image_term(lensed, mask, model, ref, weights, watson, "loss"))
        pupil_mean = _mean(terms[1:])
        fulls.append(terms[0])
        pupil_means.append(pupil_mean)
        plane_totals.append(ad.add(terms[0], pupil_mean))
    return Objective(_mean(plane_totals), fulls, pupil_means)


def _initial_field(planes_in, system, channel, cfg, dtype) -> ComplexField:
    """Superposed per-plane initial holograms, each refocused to its depth."""
    total = None
    for k, (ref, depth) in enumerate(planes_in):
        h = init_hologram(ref, system, channel, cfg.init_mode, cfg.seed + k, cfg.padding, dtype)
        if depth != 0:
            h = fresnel(h, -depth, channel)
        total = h.samples if total is None else total + h.samples
    return normalize_field(ComplexField(system.slm.grid, total.astype(dtype)))


def _logit(a: np.ndarray) -> np.ndarray:
    a = np.clip(a, AMPLITUDE_FLOOR, 1 - AMPLITUDE_FLOOR)
    return np.log(a) - np.log1p(-a)


def _run(
    planes_in: Sequence[tuple[np.ndarray, float]],
    system: OpticalSystem,
    channel: WavelengthChannel,
    sampler: PupilSampler,
    cfg: OptimizeConfig,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> OptimizeResult:
    real_t, cplx_t = cfg.dtypes
    shape = (system.slm.rows, system.slm.cols)
    for ref, _ in planes_in:
        if np.shape(ref) != shape:
            raise ValueError(f"target shape {np.shape(ref)} != SLM shape {shape}")
        if np.min(ref) < 0 or np.max(ref) > 1:
            raise ValueError("target amplitude must lie in [0, 1]")
    model = fourier_model(system, channel, shape, cfg.padding, cplx_t, cfg.feather)
    p = system.slm.pitch
    planes = []
    for ref, depth in planes_in:
        extra = None
        if depth != 0:
            extra = asm_transfer(model.work_shape, p, p, channel.wavelength, depth, cplx_t)
        planes.append((np.asarray(ref, dtype=real_t), extra))

    init = _initial_field(planes_in, system, channel, cfg, cplx_t)
    a_raw = _logit(np.abs(init.samples)).astype(real_t)
    phi = np.angle(init.samples).astype(real_t)
    del init
    adam = Adam([a_raw, phi], cfg.learning_rate, cfg.betas, cfg.eps)

    history = np.zeros((cfg.iterations, 3))
    pupils_used: list[PupilState] = []
    k = cfg.pupils_per_iter
    for it in range(cfg.iterations):
        pupils = [sample_pupil(sampler, it * k + j) for j in range(k)]
        pupils_used.extend(pupils)
        tape = ad.Tape()
        a_var, phi_var = tape.leaf(a_raw), tape.leaf(phi)
        obj = record_objective(
            a_var, phi_var, model, planes, pupils, cfg.loss_weights, cfg.watson, cfg.encode_in_loop
        )
        total = float(obj.total.value)
        if not np.isfinite(total):
            raise OptimizationDiverged(it)
        history[it] = (total, obj.full_value, obj.pupil_value)
        try:
            g_a, g_phi = ad.backward(tape, obj.total, [a_var, phi_var], release=True)
        except ad.GradientError as exc:
            raise OptimizationDiverged(it) from exc
        del tape, obj, a_var, phi_var
        adam.step([g_a, g_phi])
        del g_a, g_phi
        if callback is not None:
            callback(it, history[it])
        if log.isEnabledFor(logging.INFO) and (it % 50 == 0 or it == cfg.iterations - 1):
            log.info("iter %d/%d loss %.6f", it + 1, cfg.iterations, total)

    del adam
    amp = 1.0 / (1.0 + np.exp(-a_raw))
    final = ComplexField(system.slm.grid, (amp * np.exp(1j * phi)).astype(cplx_t, copy=False))
    if cfg.encode_in_loop:
        sign = ad.checker_sign(shape)
        pattern = PhasePattern(system.slm.grid, wrap_phase(phi + sign * np.arccos(amp)))
    else:
        pattern = double_phase(normalize_field(final))
    return OptimizeResult(pattern, final, history, pupils_used)


def optimize(
    target_amplitude: np.ndarray,
    system: OpticalSystem,
    channel: WavelengthChannel,
    sampler: PupilSampler,
    cfg: OptimizeConfig | None = None,
    callback=None,
) -> OptimizeResult:
    """Optimize one SLM field for a 2D target under stochastic pupil sampling."""
    return _run([(target_amplitude, 0.0)], system, channel, sampler, cfg or OptimizeConfig(), callback)


def optimize_multiplane(
    targets: Sequence[tuple[np.ndarray, float]],
    system: OpticalSystem,
    channel: WavelengthChannel,
    sampler: PupilSampler,
    cfg: OptimizeConfig | None = None,
    callback=None,
) -> OptimizeResult:
    """One SLM field for several (amplitude, depth) planes; depth in meters."""
    if not targets:
        raise ValueError("need at least one target plane")
    depths = [float(d) for _, d in targets]
    if len(set(depths)) != len(depths):
        raise ValueError(f"target depths must be distinct, got {depths}")
    return _run(list(targets), system, channel, sampler, cfg or OptimizeConfig(), callback)


def full_iris_sampler(system: OpticalSystem) -> PupilSampler:
    """Sampler that always returns the centered pupil matching the iris."""
    d = system.iris_diameter
    return PupilSampler(d, d, 0.0)


def reconstruct(
    u_slm: ComplexField,
    system: OpticalSystem,
    channel: WavelengthChannel,
    pupil: PupilState | None = None,
    depth: float = 0.0,
    padding: str = "linear",
    feather: bool = False,
) -> np.ndarray:
    """Amplitude image at ``depth`` seen through ``pupil`` (None: full iris)."""
    model = fourier_model(system, channel, u_slm.shape, padding, u_slm.samples.dtype, feather)
    tf = model.tf_full if pupil is None else model.tf_pupil(pupil)
    if depth != 0:
        p = system.slm.pitch
        tf = tf * asm_transfer(model.work_shape, p, p, channel.wavelength, depth, tf.dtype)
    return np.abs(model.to_image(model.spectrum(u_slm.samples) * tf))


def slm_grid_for(shape: tuple[int, int], pitch: float) -> PhysicalGrid:
    return PhysicalGrid(shape[0], shape[1], pitch, pitch, Plane.SLM)
