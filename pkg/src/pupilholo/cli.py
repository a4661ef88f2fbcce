"""Command-line interface.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
4 optimization aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, io
from .encoding import AmplitudeOverflowError, double_phase, normalize_field, phase_to_gray, quantize_phase
from .losses import PerceptualPluginMissing
from .optics import ComplexField, OpticalSystem, WavelengthChannel
from .propagation import fft2c, fourier_model, fresnel, ifft2c, relay_far_field, relay_near_field
from .pupil import pupil_mask
from .retrieval import OptimizationDiverged, init_hologram, optimize

log = logging.getLogger("pupilholo")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NAN = 0, 2, 3, 4


class CliError(ValueError):
    pass


def _load_config(args) -> io.RunConfig:
    cfg = io.load_config(args.config) if args.config else io.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "iterations", None) is not None:
        cfg = replace(cfg, optimize=replace(cfg.optimize, iterations=args.iterations))
    return cfg


def _channels(system: OpticalSystem, name: str | None) -> list[WavelengthChannel]:
    if name == "all":
        return list(system.channels)
    if name is None:
        labels = [c.label for c in system.channels]
        return [system.channel("green") if "green" in labels else system.channels[0]]
    try:
        return [system.channel(name)]
    except KeyError:
        raise CliError(
            f"channel {name!r} is not configured (have {[c.label for c in system.channels]})"
        ) from None


def _label(ch: WavelengthChannel) -> str:
    return ch.label or f"{ch.wavelength * 1e9:.0f}nm"


def _check_dims(img: np.ndarray, system: OpticalSystem, what: str) -> None:
    want = (system.slm.rows, system.slm.cols)
    if img.shape[:2] != want:
        raise CliError(f"{what} is {img.shape[0]}x{img.shape[1]}, SLM is {want[0]}x{want[1]}")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _target_amplitudes(path, system, channels, srgb):
    """Per-channel target amplitudes (square root of the linear intensity)."""
    if len(channels) > 1:
        rgb = io.read_image(path, srgb, color=True)
        _check_dims(rgb, system, "target")
        index = {"red": 0, "green": 1, "blue": 2}
        return [np.sqrt(rgb[..., index.get(c.label, 1)]) for c in channels]
    img = io.read_image(path, srgb)
    _check_dims(img, system, "target")
    return [np.sqrt(img)]


def _write_phase(path, pattern, levels: int) -> None:
    q = quantize_phase(pattern, levels)
    io.write_gray(path, phase_to_gray(q, 8 if levels <= 256 else 16))


# --------------------------------------------------------------- commands

def cmd_optimize(args) -> int:
    cfg = _load_config(args)
    target = args.target or cfg.target
    if not target:
        raise CliError("no target image given")
    if not Path(target).exists():
        raise FileNotFoundError(f"target image not found: {target}")
    out = _out_dir(args.out or cfg.output or ".")
    system = cfg.system
    channels = _channels(system, args.channel)
    amps = _target_amplitudes(target, system, channels, args.srgb)
    files = {}
    for ch, amp in zip(channels, amps):
        name = _label(ch)
        log.info("optimizing channel %s", name)
        res = optimize(amp, system, ch, cfg.sampler, cfg.optimize)
        _write_phase(out / f"phase_{name}.png", res.phase_pattern, system.slm.phase_levels)
        io.write_field(out / f"field_{name}.cfld", res.final_complex_field)
        io.write_loss_history(out / f"loss_{name}.csv", res.loss_history)
        files[name] = {
            "phase": f"phase_{name}.png",
            "field": f"field_{name}.cfld",
            "loss_history": f"loss_{name}.csv",
        }
    io.write_sidecar(out / "run.json", replace(cfg, target=str(target)), {"outputs": files})
    return EXIT_OK


def _read_field_for(args, system):
    u = io.read_field(args.field)
    if u.shape != (system.slm.rows, system.slm.cols):
        raise CliError(f"field shape {u.shape} does not match the configured SLM")
    return u


def _parse_region(text):
    if text is None:
        return None
    try:
        rs, cs = text.split(",")
        r0, r1 = (int(v) for v in rs.split(":"))
        c0, c1 = (int(v) for v in cs.split(":"))
    except ValueError:
        raise CliError(f"region must look like r0:r1,c0:c1, got {text!r}") from None
    return (slice(r0, r1), slice(c0, c1))


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    system = cfg.system
    ch = _channels(system, args.channel)[0]
    u = _read_field_for(args, system)
    states = io.load_pupils(args.pupils)
    if not states:
        raise CliError("pupil list is empty")
    ref = np.sqrt(io.read_image(args.ref, args.srgb))
    _check_dims(ref, system, "reference")
    out = _out_dir(args.out)
    report, images = analysis.pupil_sweep(
        u, system, ch, states, ref, _parse_region(args.region),
        workers=args.workers, return_images=True,
    )
    io.write_sweep(out / "sweep.csv", report)
    for s, img in zip(states, images):
        x, y, d = s.as_mm()
        io.write_png(out / f"recon_x{x:+.3f}mm_y{y:+.3f}mm_d{d:.3f}mm.png", img)
    return EXIT_OK


def cmd_eyebox(args) -> int:
    cfg = _load_config(args)
    system = cfg.system
    ch = _channels(system, args.channel)[0]
    u = _read_field_for(args, system)
    out = _out_dir(args.out)
    emap = analysis.eyebox_energy(u, system, ch)
    io.write_png(out / "eyebox_log.png", emap.log_image(), bits=16)
    io.write_field(out / "eyebox_energy.cfld", ComplexField(emap.grid, emap.energy))
    metrics = {"total": emap.total, "central_fraction": analysis.central_energy_fraction(emap)}
    try:
        metrics["tile_cv"] = analysis.tile_energy_cv(emap)
        metrics["effective_eyebox_50_mm"] = analysis.effective_eyebox(emap, 0.5) * 1e3
        metrics["effective_eyebox_90_mm"] = analysis.effective_eyebox(emap, 0.9) * 1e3
    except ValueError as exc:
        log.warning("eyebox metrics unavailable: %s", exc)
    io.dump_json(out / "eyebox_metrics.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cfg = _load_config(args)
    system = cfg.system
    ch = _channels(system, args.channel)[0]
    u = _read_field_for(args, system)
    out = _out_dir(args.out)
    spec = analysis.object_phase_spectrum(u, system, ch)
    peak = spec.max()
    io.write_png(out / "spectrum.png", spec / peak if peak > 0 else spec, bits=16)
    return EXIT_OK


def cmd_encode(args) -> int:
    u = io.read_field(args.field)
    if args.normalize:
        u = normalize_field(u)
    try:
        pattern = double_phase(u)
    except AmplitudeOverflowError as exc:
        raise CliError(f"{exc} (pass --normalize)") from None
    out = _out_dir(args.out)
    _write_phase(out / "phase.png", pattern, args.levels)
    return EXIT_OK


def baseline_image(mode, amp, system, ch, pupil, distance, seed=0):
    """Intensity seen through ``pupil`` for the relay and non-relay configurations.

    Relay modes image the SLM onto the pupil plane, so the pupil is applied on
    the SLM grid; their holograms carry a random object phase. The non-relay
    mode is the ray-biased display seen through a pupil on the eyebox plane.
    """
    grid = system.slm.grid
    if mode == "non-relay":
        u = init_hologram(amp, system, ch)
        model = fourier_model(system, ch, u.shape, "linear", u.samples.dtype, False)
        return np.abs(model.propagate(u.samples, pupil)) ** 2
    rng = np.random.default_rng(seed)
    obj = amp * np.exp(2j * np.pi * rng.random(amp.shape))
    mask = pupil_mask(grid, pupil, feather=False)
    if mode == "relay-far":
        h = ComplexField(grid, ifft2c(obj))
        return relay_far_field(h, mask)
    if mode == "relay-near":
        h = fresnel(ComplexField(grid, obj), -distance, ch)
        return relay_near_field(h, mask, distance, ch)
    raise CliError(f"unknown baseline mode {mode!r}")


def cmd_baseline(args) -> int:
    cfg = _load_config(args)
    system = cfg.system
    ch = _channels(system, args.channel)[0]
    if not Path(args.target).exists():
        raise FileNotFoundError(f"target image not found: {args.target}")
    amp = np.sqrt(io.read_image(args.target, args.srgb))
    _check_dims(amp, system, "target")
    pupil = io.parse_pupil_at(args.pupil) if args.pupil else analysis.full_iris_state(system)
    distance = io.parse_length(args.distance, "mm")
    img = baseline_image(args.mode, amp, system, ch, pupil, distance, cfg.optimize.seed)
    out = _out_dir(args.out)
    io.write_png(out / f"baseline_{args.mode}.png", analysis.normalize_image(np.sqrt(img)))
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pupilholo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, field=True, config=True):
        if config:
            sp.add_argument("--config", help="JSON run config (defaults when omitted)")
            sp.add_argument("--channel", help="channel label, or 'all' for optimize")
        if field:
            sp.add_argument("--field", required=True, help="CFLD complex field")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("optimize", help="pupil-aware phase retrieval")
    common(sp, field=False)
    sp.add_argument("--target", help="target image (PNG)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--srgb", action="store_true", help="decode sRGB gamma")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("sweep", help="image metrics over pupil states")
    common(sp)
    sp.add_argument("--pupils", required=True, help="CSV (x_mm,y_mm,d_mm) or line:/grid: spec")
    sp.add_argument("--ref", required=True, help="reference image")
    sp.add_argument("--region", help="speckle region r0:r1,c0:c1")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--srgb", action="store_true")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("eyebox", help="eyebox energy map")
    common(sp)
    sp.set_defaults(func=cmd_eyebox)

    sp = sub.add_parser("spectrum", help="object-phase log spectrum")
    common(sp)
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("encode", help="double-phase encode a complex field")
    common(sp, config=False)
    sp.add_argument("--normalize", action="store_true", help="scale max |u| to 0.999 first")
    sp.add_argument("--levels", type=int, default=256)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("baseline", help="relay / non-relay display baselines")
    common(sp, field=False)
    sp.add_argument("--mode", required=True, choices=("relay-far", "relay-near", "non-relay"))
    sp.add_argument("--target", required=True)
    sp.add_argument("--pupil", help="e.g. 2mm@(1.5mm,0); full iris when omitted")
    sp.add_argument("--distance", default="20mm", help="near-field relay distance")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--srgb", action="store_true")
    sp.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OptimizationDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, PerceptualPluginMissing) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
