"""Acceptance criteria 1-10, one test each.

Every test prints (and records for the terminal summary) a single
``criterion N: PASS|FAIL`` line with the measured numbers, then asserts.

    python3 tests/test_acceptance.py        # just this file, output shown
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.fft as sfft
from PIL import Image

import oracles
from conftest import camera_amplitude, multiplane_system, record_criterion, tiny_system
from pupilholo import autodiff as ad
from pupilholo.analysis import (
    central_energy_fraction,
    eyebox_energy,
    full_iris_state,
    normalize_image,
    psnr,
    pupil_sweep,
    speckle_contrast,
    tile_energy_cv,
)
from pupilholo.encoding import double_phase, double_phase_pair, lowpass_decode
from pupilholo.losses import LossWeights, composite_value_and_grad
from pupilholo.optics import GREEN, ComplexField, PhysicalGrid
from pupilholo.propagation import fft2c, fourier_model, fresnel, ifft2c, relay_far_field, relay_near_field
from pupilholo.propagation import synthesize_hologram
from pupilholo.pupil import PupilSampler, PupilState, sample_pupil
from pupilholo.retrieval import (
    InitMode,
    OptimizeConfig,
    init_hologram,
    optimize_multiplane,
    record_objective,
    reconstruct,
)

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"


class Checks:
    """Collects named sub-checks and reports them as one criterion line."""

    def __init__(self, number):
        self.number = number
        self.items = []
        self.t0 = time.perf_counter()

    def add(self, ok, text):
        self.items.append((bool(ok), text))

    def elapsed(self):
        return time.perf_counter() - self.t0

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        if exc is not None:
            record_criterion(self.number, False, f"error: {exc!r}")
            return False
        ok = all(o for o, _ in self.items)
        record_criterion(self.number, ok, "; ".join(t for _, t in self.items))
        assert ok, [t for o, t in self.items if not o]


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# ---------------------------------------------------------------- 1

OPS_16 = {
    "polar": lambda A, P: ad.polar(A, P),
    "double_phase": lambda A, P: ad.double_phase(ad.logistic(A), P),
    "logistic": lambda A, P: ad.polar(ad.logistic(A), P),
    "fft2": lambda A, P: ad.fft2(ad.polar(A, P)),
    "ifft2": lambda A, P: ad.ifft2(ad.polar(A, P)),
    "mul_const": lambda A, P: ad.mul_const(ad.polar(A, P), np.exp(1j * np.linspace(0, 5, 256)).reshape(16, 16)),
    "add": lambda A, P: ad.add(ad.polar(A, P), ad.fft2(ad.polar(A, P))),
    "scale": lambda A, P: ad.scale(ad.polar(A, P), -0.7),
    "pad": lambda A, P: ad.pad(ad.polar(A, P), (31, 32)),
    "crop": lambda A, P: ad.crop(ad.polar(A, P), (9, 12)),
    "magnitude": lambda A, P: ad.magnitude(ad.fft2(ad.polar(A, P))),
    "square": lambda A, P: ad.square(ad.magnitude(ad.fft2(ad.polar(A, P)))),
    "total": lambda A, P: ad.total(ad.magnitude(ad.fft2(ad.polar(A, P)))),
    "fit_scale": lambda A, P: ad.fit_scale(ad.magnitude(ad.fft2(ad.polar(A, P))), np.linspace(0, 1, 256).reshape(16, 16)),
}


def test_criterion_01_gradient_oracle():
    rng = np.random.default_rng(1)
    a = rng.uniform(0.2, 0.9, (16, 16))
    phi = rng.uniform(-3, 3, (16, 16))
    ref = rng.uniform(0, 1, (16, 16))
    weights = LossWeights(1.0, 0.3, 0.2)
    ops = dict(OPS_16)
    ops["loss"] = lambda A, P: ad.loss(
        ad.magnitude(ad.fft2(ad.polar(A, P))), lambda x: composite_value_and_grad(x, ref, weights)
    )
    system = tiny_system()
    sampler = PupilSampler(0.1e-3, 0.4e-3, 0.2e-3, seed=3)
    model = fourier_model(system, GREEN, (16, 16), "linear", np.complex128, True)
    pupils = [sample_pupil(sampler, i) for i in range(2)]
    for encode in (False, True):
        ops[f"objective(encode={encode})"] = lambda A, P, e=encode: record_objective(
            A, P, model, [(ref, None)], pupils, weights, encode=e
        ).total
    with Checks(1) as c:
        worst, worst_name = 0.0, ""
        for name, build in ops.items():
            err = max(oracles.gradient_errors(build, a, phi))
            if err > worst:
                worst, worst_name = err, name
            if err >= 1e-4:
                c.add(False, f"{name} rel err {err:.2e}")
        c.add(worst < 1e-4, f"{len(ops)} ops + objective at 16x16, max rel err {worst:.2e} ({worst_name}) < 1e-4")
        c.add(c.elapsed() < 60, f"{c.elapsed():.1f}s < 60s")


# ---------------------------------------------------------------- 2

def test_criterion_02_propagation_properties():
    rng = np.random.default_rng(2)
    with Checks(2) as c:
        worst = 0.0
        for _ in range(200):
            rows, cols = rng.integers(2, 65, 2)
            u = crandn(rng, (rows, cols))
            e0 = np.sum(np.abs(u) ** 2)
            worst = max(worst, abs(np.sum(np.abs(fft2c(u)) ** 2) - e0) / e0)
        c.add(worst <= 1e-12, f"Parseval rel err {worst:.1e} <= 1e-12 (200 shapes)")

        worst = 0.0
        for _ in range(50):
            rows, cols = rng.integers(8, 65, 2)
            z = rng.choice([-1, 1]) * rng.uniform(1e-4, 0.05)
            u = ComplexField(PhysicalGrid(rows, cols, 8e-6, 8e-6), crandn(rng, (rows, cols)))
            back = fresnel(fresnel(u, z, GREEN, pad=False), -z, GREEN, pad=False)
            worst = max(worst, np.max(np.abs(back.samples - u.samples)))
        c.add(worst <= 1e-9, f"fresnel round trip err {worst:.1e} <= 1e-9")

        worst, count = 0.0, 0
        sizes = [(n, n) for n in range(8, 33)] + [tuple(rng.integers(8, 33, 2)) for _ in range(25)]
        for rows, cols in sizes:
            a, g = crandn(rng, (rows, cols)), crandn(rng, (rows, cols))
            grid = PhysicalGrid(rows, cols, 1.0, 1.0)
            out = synthesize_hologram(ComplexField(grid, a), ComplexField(grid, g)).samples
            ref = oracles.direct_convolve_same_fast(a, g)
            worst = max(worst, np.max(np.abs(out - ref)) / max(1.0, np.max(np.abs(ref))))
            count += 1
        c.add(worst <= 1e-9, f"synthesize_hologram vs direct sum err {worst:.1e} <= 1e-9 ({count} sizes 8..32)")
        c.add(c.elapsed() < 60, f"{c.elapsed():.1f}s < 60s")


# ---------------------------------------------------------------- 3

def _band_limited(rng, n, cutoff=0.125):
    f = np.abs(sfft.fftfreq(n))
    keep = (f[:, None] <= cutoff) & (f[None, :] <= cutoff)
    return sfft.ifft2(sfft.fft2(crandn(rng, (n, n))) * keep)


def _decode_error(u):
    grid = PhysicalGrid(*u.shape, 8e-6, 8e-6)
    d = lowpass_decode(double_phase(ComplexField(grid, u))).samples
    return float(np.sqrt(np.mean(np.abs(d - u) ** 2) / np.mean(np.abs(u) ** 2)))


def test_criterion_03_double_phase():
    rng = np.random.default_rng(3)
    with Checks(3) as c:
        u = 0.9 * rng.uniform(0, 1, (256, 256)) * np.exp(1j * rng.uniform(-np.pi, np.pi, (256, 256)))
        p1, p2 = double_phase_pair(u)
        ident = np.max(np.abs(0.5 * np.exp(1j * p1) + 0.5 * np.exp(1j * p2) - u))
        c.add(ident <= 1e-12, f"pair identity err {ident:.1e} <= 1e-12")
        # band-limited (quarter Nyquist) fluctuation about a carrier, |u| <= 0.9, no zeros
        errs = []
        for _ in range(20):
            v = _band_limited(rng, 64)
            field = 0.5 + 0.4 * v / np.abs(v).max()
            errs.append(_decode_error(field))
        c.add(max(errs) < 0.03, f"encode-lowpass-decode RMS err max {max(errs):.2%} < 3% (20 fields 64x64)")
        v = _band_limited(rng, 64)
        speckle = _decode_error(0.9 * v / np.abs(v).max())
        c.add(True, f"[info] zero-mean speckle field err {speckle:.1%}")
        c.add(c.elapsed() < 30, f"{c.elapsed():.1f}s < 30s")


# ---------------------------------------------------------------- 4

def test_criterion_04_pupil_reduction(desk):
    rng = np.random.default_rng(4)
    with Checks(4) as c:
        worst = 0.0
        cases = 0
        for system in (tiny_system(), tiny_system(24, rows=20), desk):
            shape = (system.slm.rows, system.slm.cols)
            for padding in ("linear", "circular"):
                for feather in (False, True):
                    model = fourier_model(system, GREEN, shape, padding, np.complex128, feather)
                    for _ in range(3):
                        u = crandn(rng, shape)
                        full = model.propagate(u)
                        same = model.propagate(u, full_iris_state(system))
                        worst = max(worst, np.max(np.abs(full - same)))
                        cases += 1
        c.add(worst <= 1e-10, f"max |pupil - full| {worst:.1e} <= 1e-10 over {cases} random fields")


# ---------------------------------------------------------------- 5

def test_criterion_05_eyebox_energy(desk, camera, desk_aware):
    with Checks(5) as c:
        uni = eyebox_energy(init_hologram(camera, desk, GREEN), desk, GREEN)
        rnd = eyebox_energy(init_hologram(camera, desk, GREEN, InitMode.LENS_CUT_RANDOM_PHASE), desk, GREEN)
        opt = eyebox_energy(desk_aware.final_complex_field, desk, GREEN)
        cf = [central_energy_fraction(m) for m in (uni, opt, rnd)]
        cv = [tile_energy_cv(m) for m in (uni, opt, rnd)]
        c.add(cf[0] >= 0.9, f"uniform central fraction {cf[0]:.4f} >= 0.9")
        c.add(cv[2] < 0.5, f"random tile CV {cv[2]:.3f} < 0.5")
        c.add(cf[2] < cf[1] < cf[0], f"optimized central fraction {cf[1]:.4f} in ({cf[2]:.4f}, {cf[0]:.4f})")
        c.add(cv[2] < cv[1] < cv[0], f"optimized tile CV {cv[1]:.3f} in ({cv[2]:.3f}, {cv[0]:.3f})")
        total = desk_aware.elapsed + c.elapsed()
        c.add(total < 600, f"{total:.0f}s < 600s")


# ---------------------------------------------------------------- 6

SWEEP_STATES = [
    None,  # full iris
    PupilState(0.0, 0.0, 2e-3),
    PupilState(2e-3, 0.0, 2e-3),
    PupilState(-2e-3, 0.0, 2e-3),
    PupilState(0.0, 2e-3, 2e-3),
    PupilState(0.0, -2e-3, 2e-3),
]


def _sweep(u, system, ref):
    states = [full_iris_state(system) if s is None else s for s in SWEEP_STATES]
    return pupil_sweep(u, system, GREEN, states, ref)


def test_criterion_06_pupil_aware_benefit(desk, camera, desk_aware, desk_conventional):
    with Checks(6) as c:
        base = _sweep(init_hologram(camera, desk, GREEN), desk, camera)
        aware = _sweep(desk_aware.final_complex_field, desk, camera)
        conv = _sweep(desk_conventional.final_complex_field, desk, camera)
        gain = aware.min_psnr - base.min_psnr
        c.add(gain >= 3, f"min PSNR {aware.min_psnr:.2f} vs baseline {base.min_psnr:.2f} dB, gain {gain:.2f} >= 3")
        full_a, full_b = aware.entries[0].psnr, base.entries[0].psnr
        c.add(full_a >= full_b - 3, f"full-iris PSNR {full_a:.2f} vs baseline {full_b:.2f} dB (>= -3 dB)")
        c.add(True, f"[info] conventional optimized: full {conv.entries[0].psnr:.2f} dB, min {conv.min_psnr:.2f} dB")
        total = desk_aware.elapsed + c.elapsed()
        c.add(total < 1200, f"{total:.0f}s < 1200s")


# ---------------------------------------------------------------- 7

def test_criterion_07_relay_baselines(desk):
    rng = np.random.default_rng(7)
    n = desk.slm.rows
    grid = desk.slm.grid
    with Checks(7) as c:
        obj = np.exp(2j * np.pi * rng.random((n, n)))  # flat target, random phase
        h = ComplexField(grid, ifft2c(obj))
        half = np.zeros((n, n))
        half[:, n // 2:] = 1
        full_img = relay_far_field(h, np.ones((n, n)))
        half_img = relay_far_field(h, half)
        k_full, k_half = speckle_contrast(full_img), speckle_contrast(half_img)
        c.add(k_half > k_full, f"far-field speckle contrast half {k_half:.3f} > full {k_full:.3f}")

        z = 20e-3
        target = np.sqrt(camera_amplitude(n) ** 2 * 0.9 + 0.1)
        near = fresnel(ComplexField(grid, target * np.exp(2j * np.pi * rng.random((n, n)))), -z, GREEN)
        img = relay_near_field(near, half, z, GREEN)
        dark, lit = img[:, : n // 2].mean(), img[:, n // 2:].mean()
        ratio = lit / dark
        c.add(ratio >= 10, f"near-field masked half attenuated {ratio:.1f}x >= 10x")
        c.add(c.elapsed() < 120, f"{c.elapsed():.1f}s < 120s")


# ---------------------------------------------------------------- 8

def _write_target(path, rows, cols):
    from skimage import data

    Image.fromarray(data.camera()).convert("RGB").resize((cols, rows), Image.BILINEAR).save(path)


@pytest.mark.slow
def test_criterion_08_large_etendue(tmp_path):
    import resource

    from pupilholo.io import load_config

    with Checks(8) as c:
        for name in ("hd1080", "etendue16"):
            cfg = load_config(CONFIGS / f"{name}.json")
            s = cfg.system
            target = tmp_path / f"{name}.png"
            _write_target(target, s.slm.rows, s.slm.cols)
            for ch in s.channels:
                out = tmp_path / f"{name}_{ch.label}"
                cmd = [sys.executable, "-m", "pupilholo", "optimize", "--config", str(CONFIGS / f"{name}.json"),
                       "--target", str(target), "--channel", ch.label, "--iterations", "5", "--out", str(out)]
                t = time.perf_counter()
                proc = subprocess.run(cmd, capture_output=True, text=True, env=dict(os.environ))
                dt = time.perf_counter() - t
                rows = (out / f"loss_{ch.label}.csv").read_text().splitlines()[1:] if proc.returncode == 0 else []
                finite = bool(rows) and all(np.isfinite(float(v)) for r in rows for v in r.split(",")[1:])
                ok = proc.returncode == 0 and len(rows) == 5 and finite
                msg = f"{name} {s.slm.rows}x{s.slm.cols} {ch.label}: exit {proc.returncode}, {len(rows)} iters, {dt:.0f}s"
                if proc.returncode:
                    msg += f" [{proc.stderr.strip().splitlines()[-1] if proc.stderr.strip() else ''}]"
                c.add(ok, msg)
        peak = resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss / 1024 ** 2
        c.add(True, f"[info] peak child RSS {peak:.2f} GB")
        c.add(c.elapsed() < 900, f"{c.elapsed():.0f}s < 900s")


# ---------------------------------------------------------------- 9

def _cli(*args):
    proc = subprocess.run([sys.executable, "-m", "pupilholo", *args], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


def _cli_session(root: Path, target: Path):
    cfg = str(CONFIGS / "desk.json")
    _cli("optimize", "--config", cfg, "--target", str(target), "--out", str(root / "opt"),
         "--seed", "11", "--iterations", "20")
    field = str(root / "opt" / "field_green.cfld")
    _cli("sweep", "--config", cfg, "--field", field, "--pupils", "line:y=0,x=-2mm..2mm,step=1mm,d=2mm",
         "--ref", str(target), "--region", "100:150,100:150", "--out", str(root / "sweep"))
    _cli("eyebox", "--config", cfg, "--field", field, "--out", str(root / "eyebox"))
    _cli("spectrum", "--config", cfg, "--field", field, "--out", str(root / "spectrum"))
    _cli("encode", "--field", field, "--normalize", "--out", str(root / "encode"))
    for mode in ("relay-far", "relay-near", "non-relay"):
        _cli("baseline", "--config", cfg, "--mode", mode, "--target", str(target), "--seed", "11",
             "--pupil", "2mm@(1.5mm,0)", "--out", str(root / "baseline"))


def test_criterion_09_cli_determinism(tmp_path):
    from pupilholo.io import write_png

    target = tmp_path / "target.png"
    write_png(target, camera_amplitude() ** 2)
    with Checks(9) as c:
        a, b = tmp_path / "a", tmp_path / "b"
        _cli_session(a, target)
        _cli_session(b, target)
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        c.add(files_a == files_b, f"{len(files_a)} output files from 6 commands")
        diff = [str(f) for f in files_a if (a / f).read_bytes() != (b / f).read_bytes()]
        c.add(not diff, "all byte-identical" if not diff else f"differ: {diff}")


# ---------------------------------------------------------------- 10

def test_criterion_10_multiplane():
    system = multiplane_system()
    n = system.slm.rows
    i, j = np.indices((n, n))
    near = (((i // 8) + (j // 8)) % 2).astype(float)
    far = 1 - near
    with Checks(10) as c:
        res = optimize_multiplane(
            [(near, -20e-3), (far, 20e-3)], system, GREEN, PupilSampler(1e-3, 3e-3, 1.5e-3), OptimizeConfig()
        )
        u = res.final_complex_field
        img_near = normalize_image(reconstruct(u, system, GREEN, depth=-20e-3))
        img_far = normalize_image(reconstruct(u, system, GREEN, depth=20e-3))
        for label, ref, focus, other in (("-20mm", near, img_near, img_far), ("+20mm", far, img_far, img_near)):
            p_in, p_out = psnr(focus, ref), psnr(other, ref)
            c.add(p_in - p_out >= 3, f"{label}: in-focus {p_in:.2f} vs out-of-focus {p_out:.2f} dB (>= 3)")
        c.add(c.elapsed() < 600, f"{c.elapsed():.0f}s < 600s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
