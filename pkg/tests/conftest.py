import time

import numpy as np
import pytest

from pupilholo.optics import GREEN, OpticalSystem, SlmSpec
from pupilholo.pupil import PupilSampler


def tiny_system(n=16, rows=None):
    """16x16 system: 32um pitch, 25mm lens, 0.4mm iris (eyebox 0.406mm at 520nm)."""
    return OpticalSystem(SlmSpec(rows or n, n, 32e-6), 25e-3, 0.4e-3, (GREEN,))


def desk_system(n=256):
    """Desk-scale system: 256 x 32um SLM, 400mm lens, 6mm iris in a 6.5mm eyebox."""
    return OpticalSystem(SlmSpec(n, n, 32e-6), 0.4, 6e-3, (GREEN,))


def multiplane_system():
    """128 x 32um SLM, 200mm lens, 3mm iris in a 3.25mm eyebox."""
    return OpticalSystem(SlmSpec(128, 128, 32e-6), 0.2, 3e-3, (GREEN,))


def camera_amplitude(n=256):
    from skimage import data, transform

    img = transform.resize(data.camera().astype(float) / 255, (n, n), anti_aliasing=True)
    return np.sqrt(np.clip(img, 0, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny():
    return tiny_system()


@pytest.fixture(scope="session")
def tiny_sampler():
    return PupilSampler(0.1e-3, 0.4e-3, 0.2e-3, seed=3)


@pytest.fixture(scope="session")
def desk():
    return desk_system()


@pytest.fixture(scope="session")
def camera():
    return camera_amplitude()


# ------------------------------------------------ shared desk-scale runs

@pytest.fixture(scope="session")
def desk_aware(desk, camera):
    """500-iteration pupil-aware optimization of the camera image, seed 0."""
    from pupilholo.optics import GREEN
    from pupilholo.retrieval import OptimizeConfig, optimize

    t = time.perf_counter()
    res = optimize(camera, desk, GREEN, PupilSampler(seed=0), OptimizeConfig())
    res.elapsed = time.perf_counter() - t
    return res


@pytest.fixture(scope="session")
def desk_conventional(desk, camera):
    """Same run with the sampler pinned to the full iris."""
    from pupilholo.optics import GREEN
    from pupilholo.retrieval import OptimizeConfig, full_iris_sampler, optimize

    t = time.perf_counter()
    res = optimize(camera, desk, GREEN, full_iris_sampler(desk), OptimizeConfig())
    res.elapsed = time.perf_counter() - t
    return res


@pytest.fixture(scope="session")
def derived():
    import json
    from pathlib import Path

    return json.loads((Path(__file__).parent / "fixtures" / "derived.json").read_text())


# ------------------------------------------------ acceptance reporting

ACCEPTANCE: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
