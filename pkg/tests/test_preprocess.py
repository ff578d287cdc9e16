import numpy as np
import pytest

from ethcast.errors import ArgumentError, DataError
from ethcast.gridio import GridFrame, Variable
from ethcast.preprocess import (
    ClutterParams, ZRParams, apply_mask, clutter_mask, dbz_to_rain, dbz_to_rain_values,
    rain_to_dbz, rain_to_dbz_values, remove_clutter,
)

# (10**(dBZ/10) / 200) ** (1/1.6) and 10*log10(200), evaluated with the math module
R_23DBZ = 0.9985188151251337
R_7DBZ = 0.0998518815125134
DBZ_1MMH = 23.010299956639813


def dbz_frame(values):
    return GridFrame(Variable.REFLECTIVITY_DBZ, 0, np.atleast_2d(np.asarray(values, np.float32)))


def rain_frame(values):
    return GridFrame(Variable.RAIN_MMH, 0, np.atleast_2d(np.asarray(values, np.float32)))


def test_dbz_to_rain_values():
    assert dbz_to_rain_values(23.0) == pytest.approx(R_23DBZ, rel=1e-14)
    assert dbz_to_rain_values(7.0) == pytest.approx(R_7DBZ, rel=1e-14)
    assert dbz_to_rain_values(7.0) < 0.1


def test_dbz_to_rain_frame_nodata():
    r = dbz_to_rain(dbz_frame([[23.0, -9999.0]]))
    assert r.variable == Variable.RAIN_MMH
    assert r.values[0, 0] == np.float32(R_23DBZ)
    assert r.values[0, 1] == 0.0


def test_rain_to_dbz():
    assert rain_to_dbz_values(1.0) == pytest.approx(DBZ_1MMH, rel=1e-14)
    d = rain_to_dbz(rain_frame([[1.0, 0.0]]))
    assert d.values[0, 0] == np.float32(DBZ_1MMH)
    assert d.values[0, 1] == d.nodata


def test_wrong_variable():
    with pytest.raises(ArgumentError):
        dbz_to_rain(rain_frame([[1.0]]))
    with pytest.raises(ArgumentError):
        rain_to_dbz(dbz_frame([[1.0]]))


def test_negative_rain():
    with pytest.raises(DataError):
        rain_to_dbz(rain_frame([[1.0, -0.5]]))


def test_round_trip_and_monotone(rng):
    r = np.exp(rng.uniform(np.log(0.01), np.log(100), 1000))
    back = dbz_to_rain_values(rain_to_dbz_values(r))
    np.testing.assert_allclose(back, r, rtol=1e-6)
    z = np.sort(rng.uniform(-30, 70, 1000))
    assert np.all(np.diff(dbz_to_rain_values(np.unique(z))) > 0)
    p = ZRParams(300, 1.4)
    np.testing.assert_allclose(rain_to_dbz_values(dbz_to_rain_values(z, p), p), z, rtol=1e-6)


def test_zr_params_validated():
    with pytest.raises(ArgumentError):
        ZRParams(a=0)


# brute-force morphology: explicit window scans with outside-grid = 0

def _erode(m, se):
    h, w = m.shape
    out = np.zeros_like(m)
    for i in range(h):
        for j in range(w):
            ok = True
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if not se[di + 1, dj + 1]:
                        continue
                    y, x = i + di, j + dj
                    if not (0 <= y < h and 0 <= x < w and m[y, x]):
                        ok = False
            out[i, j] = ok
    return out


def _dilate(m, se):
    h, w = m.shape
    out = np.zeros_like(m)
    for i in range(h):
        for j in range(w):
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    y, x = i + di, j + dj
                    if se[di + 1, dj + 1] and 0 <= y < h and 0 <= x < w and m[y, x]:
                        out[i, j] = True
    return out


def _opening_oracle(rain, params):
    m = rain > params.rain_threshold_mmh
    se = params.structure()
    for _ in range(params.erosion_iters):
        m = _erode(m, se)
    for _ in range(params.dilation_iters):
        m = _dilate(m, se)
    return m


def test_isolated_pixel_removed():
    z = np.zeros((15, 15), np.float32)
    z[7, 7] = 5.0
    assert not clutter_mask(rain_frame(z)).any()


def test_solid_block_kept():
    z = np.zeros((40, 40), np.float32)
    z[10:30, 10:30] = 2.0
    np.testing.assert_array_equal(clutter_mask(rain_frame(z)), z > 0.1)


@pytest.mark.parametrize("element", ["square", "cross"])
def test_mask_matches_brute_force(rng, element):
    params = ClutterParams(element=element)
    for _ in range(6):
        rain = (rng.random((18, 21)) < 0.75) * rng.uniform(0, 3, (18, 21))
        np.testing.assert_array_equal(clutter_mask(rain, params), _opening_oracle(rain, params))


def test_opening_idempotent_and_antiextensive(rng):
    for _ in range(100):
        rain = (rng.random((24, 24)) < rng.uniform(0.5, 0.95)) * rng.uniform(0, 4, (24, 24))
        f = rain_frame(rain)
        m = clutter_mask(f)
        assert not np.any(m & ~(rain > 0.1))
        g = apply_mask(f, m)
        np.testing.assert_array_equal(clutter_mask(g), m)


def test_apply_mask():
    f = rain_frame([[1.0, 2.0], [3.0, 4.0]])
    assert apply_mask(f, np.ones((2, 2))).equals(f)
    assert not apply_mask(f, np.zeros((2, 2))).values.any()
    m = np.array([[1, 0], [0, 1]], bool)
    np.testing.assert_array_equal(apply_mask(f, m).values, f.values * m)
    with pytest.raises(ArgumentError):
        apply_mask(f, np.ones((3, 2)))


def test_remove_clutter_never_increases(rng):
    rain = rng.uniform(0, 5, (20, 20)) * (rng.random((20, 20)) < 0.6)
    f = rain_frame(rain)
    assert np.all(remove_clutter(f).values <= f.values)
