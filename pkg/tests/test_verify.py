import math

import numpy as np
import pytest

from ethcast.errors import ArgumentError, DataError
from ethcast.verify import (
    N_LEADS, ContingencyTable, MetricCurve, Undefined, VerifyConfig, aggregate_models, as_float,
    contingency, ets, evaluate, fss, fss_batch, is_defined, joint_histogram, per_sample_ranking,
    pixel_metrics, precision, read_curves_csv, recall, write_curves_csv,
)

# naive sliding-window FSS for obs event at (3,3), pred event at (3,5) on 8x8
FSS_SHIFT2 = {0: 0.0, 1: 0.33333333333333337, 2: 0.46501614639397193, 4: 0.8934026256552807}
ETS_EXAMPLE = 0.47019867549668876  # 44.375 / 94.375


def naive_fss(p, o, thr, r):
    pb, ob = (p > thr).astype(float), (o > thr).astype(float)
    h, w = p.shape
    pf = np.zeros((h, w))
    of = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            sp = so = area = 0.0
            for a in range(i - r, i + r + 1):
                for b in range(j - r, j + r + 1):
                    if 0 <= a < h and 0 <= b < w:
                        sp += pb[a, b]
                        so += ob[a, b]
                        area += 1
            pf[i, j] = sp / area
            of[i, j] = so / area
    den = (pf ** 2).sum() + (of ** 2).sum()
    return math.nan if den == 0 else 1 - ((pf - of) ** 2).sum() / den


def naive_counts(p, o, thr):
    h = m = f = cn = 0
    for a, b in zip(p.ravel(), o.ravel()):
        pe, oe = a > thr, b > thr
        if pe and oe:
            h += 1
        elif oe:
            m += 1
        elif pe:
            f += 1
        else:
            cn += 1
    return h, m, f, cn


def test_pixel_metrics_cases(rng):
    o = rng.uniform(0, 5, (8, 8))
    assert pixel_metrics(o, o) == pixel_metrics(o, o).__class__(0.0, 0.0, 0.0)
    pm = pixel_metrics(o + 1, o)
    assert (pm.mae, pm.mse, pm.me) == pytest.approx((1, 1, 1), abs=1e-15)
    p = rng.uniform(0, 5, (8, 8))
    d = [a - b for a, b in zip(p.ravel(), o.ravel())]
    pm = pixel_metrics(p, o)
    assert pm.mae == pytest.approx(sum(abs(x) for x in d) / 64, abs=1e-12)
    assert pm.mse == pytest.approx(sum(x * x for x in d) / 64, abs=1e-12)
    assert pm.me == pytest.approx(sum(d) / 64, abs=1e-12)
    nan = np.full((2, 2), np.nan)
    assert not is_defined(pixel_metrics(nan, nan).mse)


def test_contingency_cases(rng):
    o = rng.uniform(0, 3, (16, 16))
    t = contingency(o, o, 1.0)
    assert t.misses == t.false_alarms == 0
    t = contingency(np.full((4, 4), 5.0), np.zeros((4, 4)), 1.0)
    assert t.false_alarms == 16
    p = (rng.random((16, 16)) < 0.4).astype(float)
    o = (rng.random((16, 16)) < 0.4).astype(float)
    t = contingency(p, o, 0.5)
    assert (t.hits, t.misses, t.false_alarms, t.correct_negatives) == naive_counts(p, o, 0.5)
    perm = rng.permutation(256)
    t2 = contingency(p.ravel()[perm].reshape(16, 16), o.ravel()[perm].reshape(16, 16), 0.5)
    assert t2 == t


def test_scores_worked_example():
    t = ContingencyTable(50, 25, 25, 900)
    assert precision(t) == pytest.approx(2 / 3, rel=1e-15)
    assert recall(t) == pytest.approx(2 / 3, rel=1e-15)
    assert ets(t) == pytest.approx(ETS_EXAMPLE, rel=1e-15)
    assert abs(ets(t) - 0.4702) < 1e-4


def test_scores_perfect_and_empty():
    t = ContingencyTable(7, 0, 0, 30)
    assert precision(t) == recall(t) == ets(t) == 1.0
    e = ContingencyTable(0, 0, 0, 30)
    for v in (precision(e), recall(e), ets(e)):
        assert isinstance(v, Undefined) and v.reason
        assert math.isnan(as_float(v))


def test_ets_bounds(rng):
    for _ in range(300):
        h, m, f, cn = (int(x) for x in rng.integers(0, 20, 4))
        v = ets(ContingencyTable(h, m, f, cn))
        if is_defined(v):
            assert v <= 1.0 + 1e-15
            assert (v == 1.0) == (m == f == 0 and h > 0 and cn > 0)


def test_fss_frozen_values():
    o = np.zeros((8, 8))
    p = np.zeros((8, 8))
    o[3, 3] = 1.0
    p[3, 5] = 1.0
    for r, want in FSS_SHIFT2.items():
        assert fss(p, o, 0.5, r) == pytest.approx(want, abs=1e-12)
        assert naive_fss(p, o, 0.5, r) == pytest.approx(want, abs=1e-12)
    assert 0 < fss(p, o, 0.5, 1) < fss(p, o, 0.5, 4) < 1


def test_fss_identical_and_missed(rng):
    o = rng.uniform(0, 3, (20, 20))
    for r in (0, 1, 4, 16):
        assert fss(o, o, 1.0, r) == pytest.approx(1.0, abs=1e-12)
    single = np.zeros((10, 10))
    single[4, 4] = 3.0
    assert fss(np.zeros((10, 10)), single, 1.0, 2) == 0.0
    assert not is_defined(fss(np.zeros((5, 5)), np.zeros((5, 5)), 1.0, 1))
    with pytest.raises(ArgumentError):
        fss(np.zeros((5, 5)), np.zeros((5, 4)), 1.0, 1)


def test_fss_matches_naive_on_random_fields(rng):
    cfg = VerifyConfig()
    for _ in range(3):
        p = rng.gamma(0.6, 2.0, (24, 24))
        o = rng.gamma(0.6, 2.0, (24, 24))
        for thr in cfg.fss_thresholds:
            for r in cfg.fss_radii:
                a, b = as_float(fss(p, o, thr, r)), naive_fss(p, o, thr, r)
                assert (math.isnan(a) and math.isnan(b)) or abs(a - b) < 1e-9


def test_fss_batch_matches_single(rng):
    p = rng.gamma(0.6, 2.0, (3, 5, 16, 16))
    o = rng.gamma(0.6, 2.0, (3, 5, 16, 16))
    b = fss_batch(p, o, 2.5, 4)
    for i in range(3):
        for k in range(5):
            assert b[i, k] == pytest.approx(fss(p[i, k], o[i, k], 2.5, 4), abs=1e-14)


def test_joint_histogram():
    h = joint_histogram([np.array([[10.0]])], [np.array([[5.0]])], [0, 10, 20], [0, 4, 8])
    assert h.counts.tolist() == [[0, 0], [0, 1]] and h.overflow == 0
    with pytest.raises(ArgumentError):
        joint_histogram([np.zeros((2, 2))], [], [0, 1], [0, 1])


def test_joint_histogram_oracle(rng):
    a = [rng.uniform(-5, 60, (9, 9)) for _ in range(3)]
    b = [rng.uniform(-1, 18, (9, 9)) for _ in range(3)]
    a[0][0, 0] = np.nan
    ea, eb = np.arange(0, 61, 10.0), np.arange(0, 17, 2.0)
    h = joint_histogram(a, b, ea, eb)
    counts = np.zeros((len(ea) - 1, len(eb) - 1), int)
    over = pairs = 0
    for fa, fb in zip(a, b):
        for x, y in zip(fa.ravel(), fb.ravel()):
            if math.isnan(x) or math.isnan(y):
                continue
            pairs += 1
            i = next((k for k in range(len(ea) - 1) if ea[k] <= x < ea[k + 1]), None)
            j = next((k for k in range(len(eb) - 1) if eb[k] <= y < eb[k + 1]), None)
            if i is None or j is None:
                over += 1
            else:
                counts[i, j] += 1
    np.testing.assert_array_equal(h.counts, counts)
    assert h.overflow == over and h.total == pairs


def test_ranking(rng):
    obs = np.zeros((3, 18, 10, 10))
    obs[1, 5, 2, 2] = 10.0
    rows = per_sample_ranking({}, obs)
    assert rows[0]["sample"] == 1 and rows[0]["max_rain"] == 10.0
    assert rows[0]["mean_rain"] == pytest.approx(0.1)
    assert rows[1]["max_rain"] == rows[1]["mean_rain"] == 0.0
    obs = rng.gamma(0.5, 3.0, (30, 18, 6, 6))
    pred = {"m": obs + 1.0}
    rows = per_sample_ranking(pred, obs, lead=6)
    maxes = obs[:, 5].max(axis=(1, 2))
    assert [r["sample"] for r in rows] == sorted(range(30), key=lambda s: (-maxes[s], s))
    assert all(r["m_me"] == pytest.approx(1.0) for r in rows)
    with pytest.raises(DataError):
        per_sample_ranking({}, obs[:, :3], lead=6)


def _curve(values, metric="mse"):
    return MetricCurve(metric, None, None, values, np.full(N_LEADS, 5), np.zeros(N_LEADS, int))


def test_aggregate_models(rng):
    c = _curve(rng.uniform(0, 1, N_LEADS))
    mean, std = aggregate_models([c, c, c])
    np.testing.assert_array_equal(std.values, 0.0)
    mean, std = aggregate_models([_curve(np.zeros(N_LEADS)), _curve(np.full(N_LEADS, 2.0))])
    assert mean.values[0] == 1.0 and std.values[0] == pytest.approx(math.sqrt(2), rel=1e-15)
    vals = rng.uniform(0, 3, (8, N_LEADS))
    vals[2, 4] = np.nan
    mean, std = aggregate_models([_curve(v) for v in vals])
    for k in range(N_LEADS):
        xs = [v[k] for v in vals if not math.isnan(v[k])]
        m = sum(xs) / len(xs)
        s = math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))
        assert mean.values[k] == pytest.approx(m, abs=1e-12)
        assert std.values[k] == pytest.approx(s, abs=1e-12)
    assert mean.n[4] == 7 and mean.n[0] == 8
    with pytest.raises(ArgumentError):
        aggregate_models([_curve(vals[0]), _curve(vals[1], "mae")])


def test_evaluate_and_csv_round_trip(tmp_path, rng):
    obs = rng.gamma(0.6, 2.0, (4, 18, 16, 16))
    pred = obs + rng.normal(0, 0.5, obs.shape)
    curves = evaluate(pred, obs)
    keys = {c.key for c in curves}
    assert ("mse", None, None) in keys and ("ets", 2.5, None) in keys and ("fss", 10.0, 16) in keys
    assert len(curves) == 3 + 4 * 4 + 5 * 3
    by = {c.key: c for c in curves}
    # pooled ETS equals ETS of the summed per-sample tables
    t = sum((contingency(pred[s, 2], obs[s, 2], 1.0) for s in range(1, 4)),
            contingency(pred[0, 2], obs[0, 2], 1.0))
    assert by[("ets", 1.0, None)].values[2] == pytest.approx(ets(t), abs=1e-15)
    assert by[("mse", None, None)].values[0] == pytest.approx(
        np.mean([pixel_metrics(pred[s, 0], obs[s, 0]).mse for s in range(4)]), abs=1e-12)
    p = tmp_path / "c.csv"
    write_curves_csv(curves, p)
    back = read_curves_csv(p)
    for a, b in zip(curves, back):
        assert a.key == b.key
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.n, b.n)


def test_pixel_metric_inequalities(rng):
    for _ in range(200):
        p, o = rng.gamma(0.5, 2.0, (2, 12, 12))
        pm = pixel_metrics(p, o)
        assert pm.me ** 2 <= pm.mse + 1e-12
        assert abs(pm.me) <= pm.mae + 1e-12
        assert pm.mae <= math.sqrt(pm.mse) + 1e-12


def test_verify_config_validation():
    with pytest.raises(ArgumentError):
        VerifyConfig(fss_radii=(4, 1))
    with pytest.raises(ArgumentError):
        VerifyConfig(fss_report_leads_min=(22,))
