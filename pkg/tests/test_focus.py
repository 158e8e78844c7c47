import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heartfocus.features import FeatureMaps
from heartfocus.focus import (
    DegenerateFocusError,
    FocusConfig,
    FusionWeights,
    blend,
    energy_center,
    fuse,
    grid_rmax,
    rbf_distance,
    rbf_field,
    rescale,
    run_focus,
    scale_estimate,
    threshold_mask,
)
from heartfocus.phantom import PhantomSpec, generate
from heartfocus.tensor import Coord, Volume4D
from oracles import brute_center


def _maps(rng, shape=(3, 5, 6)):
    return FeatureMaps(rng.random(shape), rng.random(shape), rng.random(shape))


def test_weights_validation():
    assert FusionWeights() == FusionWeights(0.1, 0.9)
    with pytest.raises(ValueError):
        FusionWeights(-0.1, 1.0)
    with pytest.raises(ValueError):
        FusionWeights(0.0, 0.0)


def test_fuse_motion_only_is_rescaled_motion():
    maps = _maps(np.random.default_rng(0))
    np.testing.assert_array_equal(fuse(maps, FusionWeights(0, 1)), rescale(maps.motion))


def test_blend_of_ones_is_one():
    ones = np.ones((2, 3, 4))
    for ws in (0.0, 0.1, 0.5, 1.0):
        np.testing.assert_allclose(blend(ones, ones, FusionWeights(ws, 1 - ws)), 1.0, atol=1e-7)


def test_fuse_default_combination():
    maps = _maps(np.random.default_rng(1))
    xs = 0.5 * (rescale(maps.mean).astype(np.float64) + rescale(maps.std))
    expected = 0.1 * xs + 0.9 * rescale(maps.motion)
    np.testing.assert_allclose(fuse(maps), expected, atol=1e-6)


def test_center_uniform_is_grid_center():
    c = energy_center(np.ones((5, 7, 10)))
    assert c == Coord(4.5, 3.0, 2.0)


def test_center_point_mass():
    v = np.zeros((8, 8, 8))
    v[5, 4, 3] = 2.5
    assert energy_center(v) == Coord(3.0, 4.0, 5.0)


def test_center_hand_example():
    v = np.array([1.0, 3.0, 1.0, 3.0]).reshape(2, 1, 2)
    assert energy_center(v).x == 0.75


def test_center_zero_energy():
    with pytest.raises(DegenerateFocusError):
        energy_center(np.zeros((2, 2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.integers(1, 10), st.integers(1, 10), st.integers(1, 10)), st.integers(0, 2**31))
def test_center_matches_brute_force(shape, seed):
    v = np.random.default_rng(seed).random(shape) + 1e-3
    c = energy_center(v)
    np.testing.assert_allclose(c, brute_center(v), atol=1e-9)
    for val, n in zip(c, (shape[2], shape[1], shape[0])):
        assert 0 <= val <= n - 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3)))
def test_center_translation_equivariance(seed, shift):
    rng = np.random.default_rng(seed)
    v = np.zeros((12, 12, 12))
    v[2:7, 2:7, 2:7] = rng.random((5, 5, 5))
    dz, dy, dx = shift
    shifted = np.roll(v, (dz, dy, dx), axis=(0, 1, 2))
    a, b = energy_center(v), energy_center(shifted)
    np.testing.assert_allclose(np.subtract(b, a), (dx, dy, dz), atol=1e-6)


def test_threshold_examples():
    m, q = threshold_mask(np.full((3, 3, 3), 0.4))
    assert not m.any() and q == np.float64(0.4)
    rng = np.random.default_rng(2)
    v = rng.permutation(27).reshape(3, 3, 3).astype(float)
    m, q = threshold_mask(v, 0.0)
    assert q == 0 and m.sum() == 26 and not m[v == 0].any()
    v = rng.random((10, 10, 10))
    m, q = threshold_mask(v, 0.9)
    assert m.sum() <= 100
    np.testing.assert_array_equal(m, v > q)


def test_scale_estimate_examples():
    r_max = grid_rmax((10, 10, 10))
    mask = np.zeros((10, 10, 10), bool)
    mask[:3, :3, :3] = True
    assert scale_estimate(mask, r_max) == pytest.approx(9 / math.sqrt(243), abs=1e-12)
    assert scale_estimate(mask, r_max) == pytest.approx(0.5774, abs=1e-4)
    one = np.zeros((10, 10, 10), bool)
    one[4, 4, 4] = True
    assert scale_estimate(one, r_max) == pytest.approx(3 / math.sqrt(243), abs=1e-12)
    big = np.zeros((20, 20, 20), bool)
    big[:3, :3, :3] = True
    ratio = scale_estimate(mask, r_max) / scale_estimate(big, grid_rmax(big.shape))
    assert ratio == pytest.approx(math.sqrt(3 * 19**2) / math.sqrt(243), abs=1e-12)
    assert 2.0 < ratio < 2.2
    with pytest.raises(DegenerateFocusError):
        scale_estimate(np.zeros((3, 3, 3), bool), grid_rmax((3, 3, 3)))


def test_rbf_examples():
    shape = (6, 9, 11)
    r_max = grid_rmax(shape)
    center = Coord(4.0, 3.0, 2.0)
    scale = 0.3
    y = rbf_field(shape, center, scale, r_max)
    assert y[2, 3, 4] == 1.0
    d = rbf_distance(shape, center, r_max)
    # pick the scale equal to one voxel's distance so that voxel sits at d == scale
    s = float(d[5, 8, 10])
    y2 = rbf_field(shape, center, s, r_max)
    assert abs(y2[5, 8, 10] - math.exp(-1)) < 1e-7
    assert abs(y[2, 3, 3] - y[2, 3, 5]) == 0
    assert np.all(y <= 1) and np.all(y > 0)
    assert np.unravel_index(np.argmax(y), shape) == (2, 3, 4)


@settings(max_examples=30, deadline=None)
@given(
    st.floats(0, 10), st.floats(0, 8), st.floats(0, 5), st.floats(0.05, 2.0)
)
def test_rbf_monotone_in_distance(cx, cy, cz, scale):
    shape = (6, 9, 11)
    r_max = grid_rmax(shape)
    c = Coord(cx, cy, cz)
    d = rbf_distance(shape, c, r_max).ravel()
    y = rbf_field(shape, c, scale, r_max).ravel()
    order = np.argsort(d, kind="stable")
    assert np.all(np.diff(y[order].astype(np.float64)) <= 0)


def _quantised_map(rng, shape=(4, 9, 10)):
    # 12-bit levels leave headroom so scaling by a <=10-bit constant is exact in float32
    return (rng.integers(0, 4096, size=shape) / 4096.0).astype(np.float32)


@pytest.mark.parametrize("seed", range(20))
def test_scaling_invariance_bit_exact(seed):
    rng = np.random.default_rng(seed)
    v = _quantised_map(rng)
    c = float(rng.integers(1, 1024)) * 2.0 ** int(rng.integers(-8, 9))
    scaled = (v * np.float32(c)).astype(np.float32)
    assert np.all(scaled.astype(np.float64) == v.astype(np.float64) * c)
    assert energy_center(scaled) == energy_center(v)
    m1, _ = threshold_mask(v, 0.9)
    m2, _ = threshold_mask(scaled, 0.9)
    np.testing.assert_array_equal(m1, m2)
    r = grid_rmax(v.shape)
    assert scale_estimate(m1, r) == scale_estimate(m2, r)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_scaling_invariance_general_constant(seed, c):
    v = np.random.default_rng(seed).random((4, 6, 7))
    np.testing.assert_allclose(energy_center(v * c), energy_center(v), rtol=0, atol=1e-9)


def test_run_focus_static_constant_falls_back():
    v = Volume4D(np.full((5, 3, 8, 8), 100.0, dtype=np.float32))
    f = run_focus(v)
    assert f.fallback and f.reason
    assert f.center == Coord(3.5, 3.5, 1.0)
    assert f.scale == pytest.approx(1 / 3)


def test_run_focus_phantom_center():
    ph = generate(PhantomSpec())
    f = run_focus(ph.volume)
    assert not f.fallback
    err = math.dist(f.center, ph.center)
    assert err <= 2.0, (f.center, ph.center)


def test_run_focus_mask_consistent_and_deterministic():
    ph = generate(PhantomSpec(seed=3))
    cfg = FocusConfig()
    a = run_focus(ph.volume, cfg)
    b = run_focus(ph.volume, cfg)
    m, q = threshold_mask(a.energy, cfg.percentile)
    np.testing.assert_array_equal(a.mask, m)
    assert a.threshold == q
    for name in ("fused", "energy", "mask", "rbf"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.center == b.center and a.scale == b.scale
    assert a.scale > 0 and a.mask.any()
    assert np.all(a.rbf <= 1)


def test_run_focus_motionless_ring_falls_back():
    ph = generate(PhantomSpec(inner_systole=9, outer_systole=14, noise=0))
    f = run_focus(ph.volume)
    assert f.fallback and "temporal" in f.reason
    assert f.center == Coord(31.5, 31.5, 3.5)
    m, _ = threshold_mask(f.energy, 0.9)
    np.testing.assert_array_equal(f.mask, m)
    # static-only weighting is a deliberate choice and does not fall back
    g = run_focus(ph.volume, FocusConfig(weights=FusionWeights(1.0, 0.0)))
    assert not g.fallback


def test_masked_center_resists_background_motion():
    ph = generate(PhantomSpec(center=Coord(22, 40, 3), noise=0.05))
    plain = run_focus(ph.volume)
    masked = run_focus(ph.volume, FocusConfig(masked_center=True))
    # noise gives every background voxel some motion energy, dragging the all-voxel centroid inward
    assert math.hypot(plain.center.x - 22, plain.center.y - 40) > 3
    assert math.hypot(masked.center.x - 22, masked.center.y - 40) < 1
    np.testing.assert_array_equal(plain.mask, masked.mask)
