"""Persistence: CFLD binary fields, PNG images, JSON run configs and CSV reports.

CFLD layout (little-endian)::

    b"CFLD"  u16 version  u32 rows  u32 cols  f64 dx  f64 dy  u8 plane
    rows * cols * (f64 re, f64 im)
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import re
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .losses import LossWeights
from .optics import (
    ComplexField,
    OpticalSystem,
    PhysicalGrid,
    Plane,
    SlmSpec,
    WavelengthChannel,
    format_length,
    parse_length,
)
from .pupil import PupilSampler, PupilState
from .retrieval import InitMode, OptimizeConfig

MAGIC = b"CFLD"
VERSION = 1
_HEADER = struct.Struct("<4sHIIddB")
PLANE_TAGS = {Plane.SLM: 0, Plane.TARGET: 1, Plane.EYEBOX: 2, Plane.FOURIER: 3}
_TAG_PLANES = {v: k for k, v in PLANE_TAGS.items()}


class ConfigError(ValueError):
    pass


class FieldFormatError(OSError):
    pass


# ------------------------------------------------------------------- CFLD

def write_field(path, u: ComplexField) -> None:
    g = u.grid
    header = _HEADER.pack(MAGIC, VERSION, g.rows, g.cols, g.dx, g.dy, PLANE_TAGS[g.plane])
    body = np.empty((g.rows, g.cols, 2), dtype="<f8")
    body[..., 0] = u.samples.real
    body[..., 1] = u.samples.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def read_field(path) -> ComplexField:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FieldFormatError(f"{path}: truncated header")
        magic, version, rows, cols, dx, dy, tag = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FieldFormatError(f"{path}: not a CFLD file (magic {magic!r})")
        if version != VERSION:
            raise FieldFormatError(f"{path}: unsupported CFLD version {version}")
        if tag not in _TAG_PLANES:
            raise FieldFormatError(f"{path}: unknown plane tag {tag}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols * 2:
        raise FieldFormatError(f"{path}: expected {rows * cols} samples, found {data.size // 2}")
    data = data.reshape(rows, cols, 2)
    grid = PhysicalGrid(rows, cols, dx, dy, _TAG_PLANES[tag])
    return ComplexField(grid, data[..., 0] + 1j * data[..., 1])


# ----------------------------------------------------------------- images

def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def read_image(path, srgb: bool = False, color: bool = False) -> np.ndarray:
    """Image values mapped linearly to [0, 1]; (H, W) or (H, W, 3) when ``color``."""
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
            if color:
                arr = np.repeat(arr[..., None], 3, axis=2)
        elif color:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    arr = np.clip(arr, 0.0, 1.0)
    return srgb_to_linear(arr) if srgb else arr


def write_png(path, img: np.ndarray, bits: int = 8) -> None:
    """Write values in [0, 1] as an 8- or 16-bit grayscale PNG."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    top = 2 ** bits - 1
    q = np.round(np.clip(np.asarray(img, dtype=np.float64), 0, 1) * top)
    write_gray(path, q.astype(np.uint8 if bits == 8 else np.uint16))


def write_gray(path, levels: np.ndarray) -> None:
    if levels.dtype != np.uint8:
        levels = levels.astype(np.uint16)
    # Pillow infers L / I;16 from the dtype
    Image.fromarray(np.ascontiguousarray(levels)).save(path, format="PNG")


# ----------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    system: OpticalSystem = field(default_factory=OpticalSystem)
    sampler: PupilSampler = field(default_factory=PupilSampler)
    optimize: OptimizeConfig = field(default_factory=OptimizeConfig)
    target: str | None = None
    output: str | None = None

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            sampler=replace(self.sampler, seed=seed),
            optimize=replace(self.optimize, seed=seed),
        )

    def to_dict(self) -> dict:
        s = self.system
        o = self.optimize
        w = o.loss_weights
        return {
            "slm": {
                "rows": s.slm.rows,
                "cols": s.slm.cols,
                "pitch": format_length(s.slm.pitch),
                "phase_levels": s.slm.phase_levels,
            },
            "optics": {
                "focal_length": format_length(s.focal_length),
                "iris_diameter": format_length(s.iris_diameter),
                "channels": [
                    {"label": c.label, "wavelength": format_length(c.wavelength)} for c in s.channels
                ],
                "lens_support": s.lens_support,
                "lens_taper": s.lens_taper,
            },
            "sampler": {
                "diameter_min": format_length(self.sampler.diameter_min),
                "diameter_max": format_length(self.sampler.diameter_max),
                "placement_radius": format_length(self.sampler.placement_radius),
                "seed": self.sampler.seed,
            },
            "optimize": {
                "iterations": o.iterations,
                "learning_rate": o.learning_rate,
                "pupils_per_iter": o.pupils_per_iter,
                "init_mode": o.init_mode.value,
                "seed": o.seed,
                "encode_in_loop": o.encode_in_loop,
                "padding": o.padding,
                "precision": o.precision,
                "feather": o.feather,
                "betas": list(o.betas),
                "eps": o.eps,
            },
            "loss_weights": {"l2": w.l2, "ssim": w.ssim, "wfft": w.wfft, "perc": w.perc},
            "paths": {"target": self.target, "output": self.output},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            return _run_config_from_dict(d)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def _section(d, name, allowed):
    sec = d.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return sec


def _run_config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be an object")
    unknown = set(d) - {"slm", "optics", "sampler", "optimize", "loss_weights", "paths"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    slm_d = _section(d, "slm", ("rows", "cols", "pitch", "phase_levels"))
    slm_default = SlmSpec()
    slm = SlmSpec(
        int(slm_d.get("rows", slm_default.rows)),
        int(slm_d.get("cols", slm_default.cols)),
        parse_length(slm_d.get("pitch", slm_default.pitch)),
        int(slm_d.get("phase_levels", slm_default.phase_levels)),
    )
    opt_d = _section(
        d, "optics", ("focal_length", "iris_diameter", "channels", "lens_support", "lens_taper")
    )
    sys_default = OpticalSystem.__dataclass_fields__
    kwargs = {}
    if "channels" in opt_d:
        chans = opt_d["channels"]
        if not isinstance(chans, list) or not chans:
            raise ConfigError("optics.channels must be a non-empty list")
        kwargs["channels"] = tuple(
            WavelengthChannel(parse_length(c["wavelength"]), c.get("label", "")) for c in chans
        )
    system = OpticalSystem(
        slm,
        parse_length(opt_d.get("focal_length", sys_default["focal_length"].default)),
        parse_length(opt_d.get("iris_diameter", sys_default["iris_diameter"].default)),
        lens_support=opt_d.get("lens_support", sys_default["lens_support"].default),
        lens_taper=float(opt_d.get("lens_taper", sys_default["lens_taper"].default)),
        **kwargs,
    )
    smp_d = _section(d, "sampler", ("diameter_min", "diameter_max", "placement_radius", "seed"))
    smp_default = PupilSampler()
    sampler = PupilSampler(
        parse_length(smp_d.get("diameter_min", smp_default.diameter_min)),
        parse_length(smp_d.get("diameter_max", smp_default.diameter_max)),
        parse_length(smp_d.get("placement_radius", smp_default.placement_radius)),
        int(smp_d.get("seed", smp_default.seed)),
    )
    w_d = _section(d, "loss_weights", ("l2", "ssim", "wfft", "perc"))
    weights = LossWeights(**{k: float(v) for k, v in w_d.items()})
    names = {f.name for f in fields(OptimizeConfig)} - {"loss_weights", "watson"}
    o_d = dict(_section(d, "optimize", names))
    if "init_mode" in o_d:
        o_d["init_mode"] = InitMode(o_d["init_mode"])
    if "betas" in o_d:
        o_d["betas"] = tuple(float(b) for b in o_d["betas"])
    optimize = OptimizeConfig(loss_weights=weights, **o_d)
    p_d = _section(d, "paths", ("target", "output"))
    return RunConfig(system, sampler, optimize, p_d.get("target"), p_d.get("output"))


def load_config(path) -> RunConfig:
    """Parse a JSON run config; missing keys take the package defaults."""
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig.from_dict(d)


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_sidecar(path, cfg: RunConfig, extra: dict | None = None) -> None:
    """Metadata next to a result: config echo, seed and related file names."""
    meta = {"config": cfg.to_dict(), "seed": cfg.optimize.seed}
    if extra:
        meta.update(extra)
    dump_json(path, meta)


def read_sidecar_config(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text())["config"])


# -------------------------------------------------------------------- CSV

def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path, header, rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def write_loss_history(path, history: np.ndarray) -> None:
    rows = ((i, float(t), float(f), float(p)) for i, (t, f, p) in enumerate(history))
    write_csv(path, ("iteration", "total", "full", "pupil"), rows)


def write_sweep(path, report) -> None:
    write_csv(path, report.HEADER, report.rows())


def read_pupil_csv(path) -> list[PupilState]:
    """Pupil states from a CSV with columns x_mm, y_mm, d_mm (extra columns ignored)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x_mm", "y_mm", "d_mm"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: pupil CSV needs x_mm, y_mm, d_mm columns")
        return [
            PupilState(float(r["x_mm"]) * 1e-3, float(r["y_mm"]) * 1e-3, float(r["d_mm"]) * 1e-3)
            for r in reader
        ]


# -------------------------------------------------------------- pupil specs

def _axis_values(spec: str) -> list[float]:
    if ".." in spec:
        raise ConfigError(f"range {spec!r} needs a step")
    return [parse_length(spec, "mm")]


def _range(spec: str, step: float) -> list[float]:
    lo_s, hi_s = spec.split("..")
    lo, hi = parse_length(lo_s, "mm"), parse_length(hi_s, "mm")
    if step <= 0:
        raise ConfigError("step must be positive")
    if hi < lo:
        raise ConfigError(f"empty range {spec!r}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + k * step for k in range(n)]


def parse_grid_spec(spec: str) -> list[PupilState]:
    """Pupil states from ``line:`` or ``grid:`` specs.

    ``line:y=0,x=-3mm..3mm,step=1mm,d=2mm`` sweeps one axis;
    ``grid:x=-2mm..2mm,y=-2mm..2mm,step=1mm,d=2mm`` sweeps both (row-major in y).
    Bare numbers are millimeters.
    """
    m = re.match(r"^\s*(line|grid)\s*:(.*)$", spec)
    if not m:
        raise ConfigError(f"unrecognized pupil spec {spec!r}")
    kind, body = m.groups()
    params = {}
    for part in body.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigError(f"bad term {part!r} in pupil spec")
        k, v = part.split("=", 1)
        params[k.strip()] = v.strip()
    if "d" not in params:
        raise ConfigError("pupil spec needs a diameter d=")
    try:
        d = parse_length(params["d"], "mm")
        step = parse_length(params["step"], "mm") if "step" in params else None
        axes = {}
        for ax in ("x", "y"):
            v = params.get(ax, "0")
            if ".." in v:
                if step is None:
                    raise ConfigError(f"range {v!r} needs a step")
                axes[ax] = _range(v, step)
            else:
                axes[ax] = _axis_values(v)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if kind == "line" and len(axes["x"]) > 1 and len(axes["y"]) > 1:
        raise ConfigError("line spec may range over one axis only")
    return [PupilState(x, y, d) for y in axes["y"] for x in axes["x"]]


_PUPIL_AT = re.compile(r"^\s*([^@]+)@\(\s*([^,]+)\s*,\s*([^)]+)\s*\)\s*$")


def parse_pupil_at(text: str) -> PupilState:
    """``2mm@(1.5mm,0)`` -> PupilState(1.5e-3, 0, 2e-3)."""
    m = _PUPIL_AT.match(text)
    if not m:
        raise ConfigError(f"pupil must look like 2mm@(x,y), got {text!r}")
    try:
        d, x, y = (parse_length(g, "mm") for g in m.groups())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return PupilState(x, y, d)


def load_pupils(arg: str) -> list[PupilState]:
    """A pupil CSV path or an inline ``line:``/``grid:`` spec."""
    if re.match(r"^\s*(line|grid)\s*:", arg):
        return parse_grid_spec(arg)
    return read_pupil_csv(arg)
