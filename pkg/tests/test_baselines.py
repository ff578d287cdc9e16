import numpy as np
import pytest
from scipy import ndimage

from ethcast.baselines import (
    MotionField, advection_nowcast, bilinear_sample, estimate_motion, extrapolate, persistence,
)
from ethcast.errors import ArgumentError
from ethcast.gridio import GridFrame, Variable


def rain(values, ts=0):
    return GridFrame(Variable.RAIN_MMH, ts, np.asarray(values, np.float32))


def shifted_pair(rng, dv, du, shape=(64, 64), pad=12, smooth=1.0):
    """Two windows of one textured field, the second moved by (dv, du)."""
    big = rng.gamma(2.0, 1.0, (shape[0] + 2 * pad, shape[1] + 2 * pad))
    if smooth:
        big = ndimage.gaussian_filter(big, smooth)
    a = big[pad:pad + shape[0], pad:pad + shape[1]]
    b = big[pad - dv:pad - dv + shape[0], pad - du:pad - du + shape[1]]
    return a, b


def test_persistence(rng):
    f = rain(rng.uniform(0, 5, (6, 7)), ts=600)
    out = persistence(f)
    assert len(out) == 18
    assert all(o.values.tobytes() == f.values.tobytes() for o in out)
    assert [o.timestamp for o in out] == [600 + 300 * k for k in range(1, 19)]
    truth = rng.uniform(0, 5, (6, 7)).astype(np.float32)
    d = out[0].values.astype(np.float64) - truth
    assert np.mean(d * d) == np.mean((f.values.astype(np.float64) - truth) ** 2)
    assert not any(o.values.any() for o in persistence(rain(np.zeros((3, 3)))))


def test_motion_recovers_shift_2_3(rng):
    a, b = shifted_pair(rng, 2, 3)
    m = estimate_motion([a, b])
    assert np.array_equal(m.u, np.full(a.shape, 3.0))
    assert np.array_equal(m.v, np.full(a.shape, 2.0))


@pytest.mark.parametrize("dv,du", [(-5, 7), (8, -8), (0, 4), (-1, 0)])
def test_motion_translation_equivariant(rng, dv, du):
    a, b = shifted_pair(rng, dv, du)
    m = estimate_motion([a, b], block=16, search_radius=8)
    assert np.all(m.u == du) and np.all(m.v == dv)


def test_motion_three_frames(rng):
    big = ndimage.gaussian_filter(rng.gamma(2.0, 1.0, (100, 100)), 1.0)
    frames = [big[20 - 2 * k:84 - 2 * k, 20 - 3 * k:84 - 3 * k] for k in range(3)]
    m = estimate_motion(frames)
    assert np.all(m.u == 3) and np.all(m.v == 2)


def test_motion_degenerate_inputs(rng):
    a = rng.uniform(0, 3, (32, 32))
    for frames in ([a, a], [np.zeros((32, 32))] * 2):
        m = estimate_motion(frames, block=8, search_radius=4)
        assert not m.u.any() and not m.v.any()
    with pytest.raises(ArgumentError):
        estimate_motion([a, a[:16]])
    with pytest.raises(ArgumentError):
        estimate_motion([a])


def test_motion_invalid_blocks_take_neighbour_median(rng):
    a, b = shifted_pair(rng, 1, -2)
    a[:16, :16] = 0.0  # one flat block
    m = estimate_motion([a, b], block=16, search_radius=4)
    assert np.all(m.u == -2) and np.all(m.v == 1)


def test_zero_motion_is_persistence_bitwise(rng):
    f = rain(rng.uniform(0, 9, (13, 17)), ts=100)
    ext = extrapolate(f, MotionField.zeros(f.shape))
    per = persistence(f)
    assert all(e.equals(p) for e, p in zip(ext, per))


def test_integer_motion_exact_shift(rng):
    vals = rng.uniform(0, 4, (10, 12)).astype(np.float32)
    ext = extrapolate(rain(vals), MotionField.uniform(vals.shape, 1, 0))
    for k, e in enumerate(ext, 1):
        want = np.zeros_like(vals)
        want[:, k:] = vals[:, :-k] if k < 12 else 0
        np.testing.assert_array_equal(e.values, want)
    ext = extrapolate(rain(vals), MotionField.uniform(vals.shape, -2, 3), n=3)
    np.testing.assert_array_equal(ext[1].values[6:, :8], vals[:4, 4:])


def _blob(shape, r0, c0, s=2.5):
    r, c = np.indices(shape)
    return 10.0 * np.exp(-((r - r0) ** 2 + (c - c0) ** 2) / (2 * s * s))


def test_blob_tracks_path_and_conserves_mass():
    shape = (64, 64)
    f = rain(_blob(shape, 20.0, 18.0))
    u, v = 1.3, 0.7
    ext = extrapolate(f, MotionField.uniform(shape, u, v))
    r, c = np.indices(shape)
    m0 = f.values.astype(np.float64).sum()
    for k, e in enumerate(ext, 1):
        x = e.values.astype(np.float64)
        assert abs((x * r).sum() / x.sum() - (20.0 + k * v)) < 0.5
        assert abs((x * c).sum() / x.sum() - (18.0 + k * u)) < 0.5
        if k <= 10:  # blob still well inside the grid
            assert abs(x.sum() - m0) <= 1e-6 * m0


def test_bilinear_sample():
    f = np.arange(12.0).reshape(3, 4)
    assert bilinear_sample(f, np.array([0.5]), np.array([1.5]))[0] == pytest.approx(3.5)
    assert bilinear_sample(f, np.array([-1.0]), np.array([0.0]))[0] == 0.0
    assert bilinear_sample(f, np.array([2.5]), np.array([0.0]))[0] == pytest.approx(4.0)


def test_advection_nowcast_moves_texture(rng):
    a, b = shifted_pair(rng, 2, 3)
    out = advection_nowcast([rain(a), rain(b, ts=300)], n=2)
    np.testing.assert_allclose(out[0].values[10:, 10:], np.float32(b)[8:-2, 7:-3])
    assert out[1].timestamp == 900
