import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heartfocus.features import (
    MEAN_KERNEL,
    TEMPORAL_TAPS,
    compute_features,
    gaussian_smooth,
    gaussian_weights,
    mean_image,
    motion_energy,
    std_image,
)
from heartfocus.tensor import DataError, Volume4D, convolve
from oracles import dense_gaussian_3d, naive_mean, naive_motion, naive_std, two_pass_std


def test_kernel_constants():
    assert np.all(MEAN_KERNEL == MEAN_KERNEL.flat[0])
    assert abs(MEAN_KERNEL.sum() - 1) < 1e-9
    assert TEMPORAL_TAPS[0] == -TEMPORAL_TAPS[2] and TEMPORAL_TAPS[1] == 0
    assert sum(TEMPORAL_TAPS) == 0


def test_mean_constant_and_checkerboard():
    np.testing.assert_allclose(mean_image(np.full((3, 4, 5), 0.3)), 0.3, atol=1e-7)
    z, y, x = np.indices((5, 5, 5))
    board = ((z + y + x) % 2).astype(np.float64)
    m = mean_image(board)
    assert 0 < m[2, 2, 2] < 1


def test_mean_tiny_frames_are_defined():
    # fewer slices than kernel taps: replicate padding still applies
    f = np.random.default_rng(0).random((1, 4, 4))
    np.testing.assert_allclose(mean_image(f), naive_mean(f), atol=1e-12)


def test_mean_random_matches_oracle():
    f = np.random.default_rng(1).random((6, 6, 6))
    np.testing.assert_allclose(mean_image(f), naive_mean(f), atol=1e-6)


def test_std_constant_is_zero():
    f = np.full((4, 4, 4), 2.0)
    assert np.all(std_image(f, mean_image(f)) == 0)
    g = np.full((3, 5, 4), 0.3)
    assert np.all(std_image(g, mean_image(g)) <= 1e-12)


def test_std_bounded_by_deviation_amplitude():
    a = 0.3
    z, y, x = np.indices((5, 6, 7))
    pattern = np.where((z + y + x) % 2 == 0, a, -a)
    mean = np.random.default_rng(2).random((5, 6, 7))
    s = std_image(mean + pattern, mean)
    assert np.all(s <= a + 1e-12)
    np.testing.assert_allclose(s, a, atol=1e-12)


def test_std_random_matches_oracle():
    f = np.random.default_rng(3).random((6, 6, 6))
    np.testing.assert_allclose(std_image(f, mean_image(f)), naive_std(f), atol=1e-5)


@settings(max_examples=15, deadline=None)
@given(st.tuples(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8)), st.integers(0, 2**31))
def test_mean_std_two_pass_oracle(shape, seed):
    f = np.random.default_rng(seed).normal(size=shape)
    m = mean_image(f)
    s = std_image(f, m)
    assert np.all(s >= 0)
    np.testing.assert_allclose(m, naive_mean(f), atol=1e-9)
    np.testing.assert_allclose(s, two_pass_std(f), atol=1e-9)


def test_motion_static_sequence_is_zero():
    frame = np.random.default_rng(4).random((2, 3, 3))
    seq = np.broadcast_to(frame, (6, 2, 3, 3))
    assert np.all(motion_energy(seq) == 0)


def test_motion_period_two_vanishes_under_periodic():
    seq = np.zeros((8, 1, 1, 1))
    seq[1::2] = 1
    assert motion_energy(seq, "periodic")[0, 0, 0] == 0
    assert naive_motion(seq, "periodic")[0, 0, 0] == 0


def test_motion_step_is_local():
    t_n = 8
    seq = np.zeros((t_n, 3, 4, 4))
    seq[t_n // 2 :, 1, 2, 3] = 1
    e = motion_energy(seq)
    assert e[1, 2, 3] > 0
    e[1, 2, 3] = 0
    assert np.all(e == 0)
    np.testing.assert_allclose(motion_energy(seq), naive_motion(seq), atol=1e-12)


def test_motion_needs_three_frames():
    with pytest.raises(DataError):
        motion_energy(np.zeros((2, 2, 2, 2)))


@pytest.mark.parametrize("boundary", ["periodic", "replicate"])
def test_motion_matches_oracle(boundary):
    seq = np.random.default_rng(5).random((7, 3, 4, 5))
    np.testing.assert_allclose(motion_energy(seq, boundary), naive_motion(seq, boundary), atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(-100, 100))
def test_motion_offset_invariant(seed, c):
    seq = np.random.default_rng(seed).random((5, 2, 3, 4))
    np.testing.assert_allclose(motion_energy(seq + c), motion_energy(seq), atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.permutations([1, 2, 3]))
def test_motion_commutes_with_spatial_axis_permutation(seed, perm):
    seq = np.random.default_rng(seed).random((4, 2, 3, 5))
    permuted = np.transpose(seq, [0] + list(perm))
    expected = np.transpose(motion_energy(seq), [p - 1 for p in perm])
    np.testing.assert_array_equal(motion_energy(permuted), expected)


def test_gaussian_identity_and_constant():
    m = np.random.default_rng(6).random((3, 8, 9))
    np.testing.assert_array_equal(gaussian_smooth(m, 0), m)
    np.testing.assert_allclose(gaussian_smooth(np.full((4, 9, 9), 0.7), 2.0), 0.7, atol=1e-7)


def test_gaussian_impulse_center_value():
    m = np.zeros((9, 9, 9))
    m[4, 4, 4] = 1
    out = gaussian_smooth(m, 1.0)
    w0 = gaussian_weights(1.0)[3]
    assert abs(out[4, 4, 4] - w0**3) < 1e-6
    k = dense_gaussian_3d(1.0)
    # impulse response of the dense kernel, evaluated directly
    np.testing.assert_allclose(out[1:8, 1:8, 1:8], k, atol=1e-6)


def test_gaussian_preserves_interior_mass():
    m = np.zeros((40, 40, 40))
    m[20, 20, 20] = 5.0
    m[18, 22, 21] = 2.0
    out = gaussian_smooth(m, 2.5, boundary="zero")
    assert abs(out.sum() - m.sum()) <= 1e-3 * m.sum()


def test_gaussian_per_axis_sigma():
    m = np.zeros((5, 11, 11))
    m[2, 5, 5] = 1
    out = gaussian_smooth(m, (0, 1.5, 1.5))
    assert np.all(out[[0, 1, 3, 4]] == 0)


def test_compute_features_shapes_and_signs():
    seq = Volume4D(np.random.default_rng(7).random((5, 3, 6, 6)).astype(np.float32))
    maps = compute_features(seq)
    assert maps.mean.shape == maps.std.shape == maps.motion.shape == (3, 6, 6)
    assert np.all(maps.std >= 0) and np.all(maps.motion >= 0)
    np.testing.assert_array_equal(maps.mean, mean_image(seq.data[0]))
    tm = compute_features(seq, frame="time-mean")
    np.testing.assert_allclose(tm.mean, mean_image(seq.data.mean(axis=0)), atol=1e-6)


def test_mean_image_equals_generic_convolve_for_large_frames():
    f = np.random.default_rng(8).random((4, 5, 6))
    np.testing.assert_allclose(mean_image(f), convolve(f, MEAN_KERNEL, "replicate"), atol=1e-15)
