import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import desk_system
from pupilholo.analysis import (
    EyeboxEnergyMap,
    central_energy_fraction,
    effective_eyebox,
    energy_within,
    eyebox_energy,
    full_iris_state,
    normalize_image,
    object_phase_spectrum,
    psnr,
    pupil_sweep,
    radial_profile,
    reconstruct_images,
    speckle_contrast,
    spectrum_band_energy,
    tile_energy_cv,
)
from pupilholo.optics import GREEN, ComplexField, PhysicalGrid, Plane
from pupilholo.pupil import PupilState
from pupilholo.retrieval import InitMode, init_hologram, reconstruct

EYE = PhysicalGrid(101, 101, 0.1e-3, 0.1e-3, Plane.EYEBOX)
IRIS = 8e-3


def disc_map(radius=IRIS / 2):
    e = (EYE.radius() <= radius).astype(float)
    return EyeboxEnergyMap(EYE, e, float(e.sum()), IRIS)


def random_field(system, rng):
    shape = (system.slm.rows, system.slm.cols)
    return ComplexField(system.slm.grid, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def test_energy_map_parseval(tiny, rng):
    u = random_field(tiny, rng)
    emap = eyebox_energy(u, tiny, GREEN)
    assert emap.grid.plane is Plane.EYEBOX
    assert abs(emap.total - np.sum(np.abs(u.samples) ** 2)) < 1e-9 * emap.total
    with pytest.raises(ValueError):
        eyebox_energy(ComplexField(PhysicalGrid(8, 8, 1e-6, 1e-6), np.ones((8, 8))), tiny, GREEN)


def test_energy_map_validation():
    with pytest.raises(ValueError):
        EyeboxEnergyMap(EYE, np.ones((3, 3)), 9.0)
    with pytest.raises(ValueError):
        EyeboxEnergyMap(EYE, -np.ones(EYE.shape), -EYE.rows * EYE.cols)
    with pytest.raises(ValueError):
        EyeboxEnergyMap(EYE, np.ones(EYE.shape), 1.0)
    img = disc_map().log_image()
    assert img.min() >= 0 and img.max() == 1


def test_effective_eyebox_delta():
    e = np.zeros(EYE.shape)
    e[50, 50] = 1
    emap = EyeboxEnergyMap(EYE, e, 1.0, IRIS)
    assert effective_eyebox(emap, 0.9) <= 2 * EYE.dx


@pytest.mark.parametrize("fraction", [0.2, 0.5, 0.9])
def test_effective_eyebox_uniform(fraction):
    d = effective_eyebox(disc_map(), fraction)
    assert abs(d - IRIS * math.sqrt(fraction)) <= EYE.dx


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.98), st.floats(0.01, 0.98), st.integers(0, 2**32 - 1))
def test_effective_eyebox_monotone(f1, f2, seed):
    rng = np.random.default_rng(seed)
    e = rng.exponential(size=EYE.shape)
    emap = EyeboxEnergyMap(EYE, e, float(e.sum()), IRIS)
    lo, hi = sorted((f1, f2))
    assert effective_eyebox(emap, lo) <= effective_eyebox(emap, hi)


def test_effective_eyebox_errors():
    for f in (0, 1, 1.5):
        with pytest.raises(ValueError):
            effective_eyebox(disc_map(), f)
    no_iris = EyeboxEnergyMap(EYE, np.ones(EYE.shape), float(EYE.rows * EYE.cols))
    with pytest.raises(ValueError):
        effective_eyebox(no_iris, 0.5)


def test_central_fraction_and_tiles():
    emap = disc_map()
    assert central_energy_fraction(emap) == pytest.approx(0.01, abs=0.005)
    assert energy_within(emap, 1.0) == 1.0
    assert tile_energy_cv(emap) == pytest.approx(0.0, abs=1e-12)
    e = np.zeros(EYE.shape)
    e[50, 50] = 1
    spot = EyeboxEnergyMap(EYE, e, 1.0, IRIS)
    assert central_energy_fraction(spot) == 1.0
    assert tile_energy_cv(spot) > 5


def test_psnr():
    a = np.linspace(0, 1, 64).reshape(8, 8)
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert psnr(np.zeros((8, 8)), np.full((8, 8), 10.0)) == 0.0
    with pytest.raises(ValueError):
        psnr(a, a[:4])


def test_normalize_image():
    img = np.arange(1000.0).reshape(10, 100)
    n = normalize_image(img)
    assert n.max() == 1.0 and n.min() == 0.0
    assert not normalize_image(np.zeros((4, 4))).any()


def test_speckle_contrast(rng):
    assert speckle_contrast(np.full((8, 8), 3.0)) == 0.0
    z = rng.standard_normal((200, 200)) + 1j * rng.standard_normal((200, 200))
    assert speckle_contrast(np.abs(z) ** 2) == pytest.approx(1.0, abs=0.05)
    img = np.ones((10, 10))
    assert speckle_contrast(img, (slice(0, 4), slice(0, 4))) == 0.0
    with pytest.raises(ValueError):
        speckle_contrast(img, (slice(0, 3), slice(0, 3)))
    with pytest.raises(ValueError):
        speckle_contrast(np.zeros((10, 10)))


def test_sweep_full_iris_entry_equals_full_metrics(tiny, rng):
    u = random_field(tiny, rng)
    ref = rng.uniform(0, 1, (16, 16))
    rep = pupil_sweep(u, tiny, GREEN, [full_iris_state(tiny)], ref)
    img = normalize_image(reconstruct(u, tiny, GREEN))
    e = rep.entries[0]
    assert e.psnr == pytest.approx(psnr(img, ref), abs=1e-9)
    assert e.energy_fraction == pytest.approx(1.0)
    assert -1 <= e.ssim <= 1
    assert math.isnan(e.speckle_contrast)


def test_sweep_outside_pupil(tiny, rng):
    u = random_field(tiny, rng)
    ref = rng.uniform(0, 1, (16, 16))
    far = PupilState(5e-3, 0.0, 0.1e-3)
    e = pupil_sweep(u, tiny, GREEN, [far], ref).entries[0]
    assert e.energy_fraction == 0.0
    assert e.psnr == psnr(np.zeros_like(ref), ref)


def test_sweep_order_and_workers(tiny, rng):
    u = random_field(tiny, rng)
    ref = rng.uniform(0, 1, (16, 16))
    states = [PupilState(x, 0, 0.2e-3) for x in (-0.1e-3, 0.0, 0.1e-3)]
    region = (slice(4, 12), slice(4, 12))
    r1 = pupil_sweep(u, tiny, GREEN, states, ref, region)
    r2 = pupil_sweep(u, tiny, GREEN, states[::-1], ref, region, workers=3)
    assert r1.entries == r2.entries[::-1]
    assert len(list(r1.rows())) == 3 and len(r1.HEADER) == 7
    assert r1.min_psnr == min(e.psnr for e in r1.entries)
    rep, imgs = pupil_sweep(u, tiny, GREEN, states, ref, return_images=True)
    assert len(imgs) == 3 and imgs[0].shape == (16, 16)
    with pytest.raises(ValueError):
        pupil_sweep(u, tiny, GREEN, [], ref)
    with pytest.raises(ValueError):
        pupil_sweep(u, tiny, GREEN, states, ref[:8])


def test_reconstruct_images_full_iris_reduction(tiny, rng):
    u = random_field(tiny, rng)
    full, same = reconstruct_images(u, tiny, GREEN, [None, full_iris_state(tiny)])
    assert np.max(np.abs(full - same)) < 1e-10


@pytest.fixture(scope="module")
def desk64():
    return desk_system(256)


def test_object_phase_spectrum(desk64):
    t = np.ones((256, 256))
    uni = object_phase_spectrum(init_hologram(t, desk64, GREEN), desk64, GREEN)
    dc, band = spectrum_band_energy(uni, 32)
    assert uni.shape == (256, 256) and dc > 0.9
    assert np.unravel_index(np.argmax(uni), uni.shape) == (128, 128)
    u = init_hologram(t, desk64, GREEN, InitMode.LENS_CUT_RANDOM_PHASE, seed=1)
    prof = radial_profile(object_phase_spectrum(u, desk64, GREEN))
    assert prof.std() / prof.mean() < 0.3


def test_radial_profile():
    p = radial_profile(np.full((32, 32), 2.0))
    assert p.shape == (16,) and np.allclose(p, 2.0)
