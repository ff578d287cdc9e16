"""Forecast verification: pixel errors, categorical scores, FSS, histograms.

Scores that cannot be computed (empty denominators, no valid pixels) come
back as :class:`Undefined` carrying the reason; they are skipped, and counted,
by every aggregate. In curves and CSV files they appear as NaN next to an
explicit undefined count.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DataError
from .gridio import CADENCE_S, GridFrame

N_LEADS = 18


@dataclass(frozen=True)
class Undefined:
    reason: str

    def __bool__(self):
        return False

    def __float__(self):
        return math.nan


def is_defined(x):
    return not isinstance(x, Undefined)


def as_float(x):
    return math.nan if isinstance(x, Undefined) else float(x)


@dataclass(frozen=True)
class VerifyConfig:
    categorical_thresholds: tuple = (0.1, 1.0, 2.5, 5.0)
    fss_thresholds: tuple = (0.1, 1.0, 2.5, 5.0, 10.0)
    fss_radii: tuple = (1, 4, 16)
    fss_report_leads_min: tuple = (20, 40, 60, 80)
    ranking_lead: int = 6

    def __post_init__(self):
        for name in ("categorical_thresholds", "fss_thresholds", "fss_radii", "fss_report_leads_min"):
            vals = tuple(getattr(self, name))
            object.__setattr__(self, name, vals)
            if not vals:
                raise ArgumentError(f"{name} must not be empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ArgumentError(f"{name} must be strictly increasing, got {vals}")
        if any(r < 0 for r in self.fss_radii):
            raise ArgumentError("FSS radii must be >= 0")
        for m in self.fss_report_leads_min:
            if m % (CADENCE_S // 60) or not 0 < m <= N_LEADS * CADENCE_S // 60:
                raise ArgumentError(f"report lead {m} min is not a forecast lead")
        if not 1 <= self.ranking_lead <= N_LEADS:
            raise ArgumentError(f"ranking_lead must be in 1..{N_LEADS}")


def _pair(pred, obs):
    """Float64 arrays plus the pairwise validity mask."""
    def unpack(x):
        if isinstance(x, GridFrame):
            return x.values.astype(np.float64), x.valid
        a = np.asarray(x, dtype=np.float64)
        return a, np.isfinite(a)

    p, pv = unpack(pred)
    o, ov = unpack(obs)
    if p.shape != o.shape:
        raise ArgumentError(f"shape mismatch: prediction {p.shape}, observation {o.shape}")
    return p, o, pv & ov


# -- pixel metrics ---------------------------------------------------------------


@dataclass(frozen=True)
class PixelMetrics:
    mae: object
    mse: object
    me: object


def pixel_metrics(pred, obs):
    """(MAE, MSE, ME) over pixels valid in both fields."""
    p, o, valid = _pair(pred, obs)
    n = int(valid.sum())
    if n == 0:
        u = Undefined("no valid pixels")
        return PixelMetrics(u, u, u)
    d = p[valid] - o[valid]
    return PixelMetrics(float(np.mean(np.abs(d))), float(np.mean(d * d)), float(np.mean(d)))


# -- categorical -------------------------------------------------------------------


@dataclass(frozen=True)
class ContingencyTable:
    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int
    threshold: float = None

    @property
    def total(self):
        return self.hits + self.misses + self.false_alarms + self.correct_negatives

    def __add__(self, other):
        if self.threshold != other.threshold:
            raise ArgumentError(f"cannot pool tables at thresholds {self.threshold} and {other.threshold}")
        return ContingencyTable(
            self.hits + other.hits,
            self.misses + other.misses,
            self.false_alarms + other.false_alarms,
            self.correct_negatives + other.correct_negatives,
            self.threshold,
        )


def contingency(pred, obs, threshold):
    """Counts of events (value > threshold) over pixels valid in both fields."""
    p, o, valid = _pair(pred, obs)
    pe = (p > threshold) & valid
    oe = (o > threshold) & valid
    h = int(np.count_nonzero(pe & oe))
    m = int(np.count_nonzero(~pe & oe))
    f = int(np.count_nonzero(pe & ~oe))
    cn = int(np.count_nonzero(valid)) - h - m - f
    return ContingencyTable(h, m, f, cn, threshold)


def precision(t):
    if t.hits + t.false_alarms == 0:
        return Undefined("no forecast events")
    return t.hits / (t.hits + t.false_alarms)


def recall(t):
    if t.hits + t.misses == 0:
        return Undefined("no observed events")
    return t.hits / (t.hits + t.misses)


def ets(t):
    """Equitable threat score (H - Hr) / (H + M + F - Hr), Hr = (H+M)(H+F)/T."""
    if t.total == 0:
        return Undefined("empty table")
    h_r = (t.hits + t.misses) * (t.hits + t.false_alarms) / t.total
    den = t.hits + t.misses + t.false_alarms - h_r
    if den == 0:
        return Undefined("zero ETS denominator")
    return (t.hits - h_r) / den


# -- fractions skill score ------------------------------------------------------------


def _window_sums(a, radius):
    """Sums over (2r+1)^2 windows clipped to the grid, via a summed-area table.

    Works on the last two axes; leading axes are batch.
    """
    rows, cols = a.shape[-2:]
    sat = np.zeros(a.shape[:-2] + (rows + 1, cols + 1), dtype=np.float64)
    sat[..., 1:, 1:] = np.cumsum(np.cumsum(a, axis=-2, dtype=np.float64), axis=-1)
    lo_r = np.clip(np.arange(rows) - radius, 0, rows)
    hi_r = np.clip(np.arange(rows) + radius + 1, 0, rows)
    lo_c = np.clip(np.arange(cols) - radius, 0, cols)
    hi_c = np.clip(np.arange(cols) + radius + 1, 0, cols)
    return (sat[..., hi_r[:, None], hi_c[None, :]] - sat[..., lo_r[:, None], hi_c[None, :]]
            - sat[..., hi_r[:, None], lo_c[None, :]] + sat[..., lo_r[:, None], lo_c[None, :]])


def fraction_field(binary, radius):
    """Event fraction in each window, normalized by the in-grid window area."""
    binary = np.asarray(binary, dtype=np.float64)
    area = _window_sums(np.ones(binary.shape[-2:]), radius)
    return _window_sums(binary, radius) / area


def _fss_from_fractions(pf, po):
    num = np.sum((pf - po) ** 2, axis=(-2, -1))
    den = np.sum(pf * pf, axis=(-2, -1)) + np.sum(po * po, axis=(-2, -1))
    return num, den


def fss(pred, obs, threshold, radius):
    """Fractions skill score with a (2r+1)-square window; Undefined if no events."""
    p, o, valid = _pair(pred, obs)
    if radius < 0:
        raise ArgumentError("radius must be >= 0")
    pf = fraction_field((p > threshold) & valid, radius)
    po = fraction_field((o > threshold) & valid, radius)
    num, den = _fss_from_fractions(pf, po)
    if den == 0:
        return Undefined("no events in either field")
    return float(1.0 - num / den)


def fss_batch(pred, obs, threshold, radius):
    """FSS per leading index of stacked (..., H, W) arrays; NaN where undefined."""
    p = np.asarray(pred, dtype=np.float64)
    o = np.asarray(obs, dtype=np.float64)
    if p.shape != o.shape:
        raise ArgumentError(f"shape mismatch: prediction {p.shape}, observation {o.shape}")
    valid = np.isfinite(p) & np.isfinite(o)
    pf = fraction_field((p > threshold) & valid, radius)
    po = fraction_field((o > threshold) & valid, radius)
    num, den = _fss_from_fractions(pf, po)
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = 1.0 - num[ok] / den[ok]
    return out


# -- joint histogram ---------------------------------------------------------------


@dataclass
class JointHistogram:
    edges_a: np.ndarray
    edges_b: np.ndarray
    counts: np.ndarray
    overflow: int = 0

    @property
    def total(self):
        return int(self.counts.sum()) + self.overflow

    def to_csv(self, path, name_a="a", name_b="b"):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"{name_a}\\{name_b}"] + [repr(float(e)) for e in self.edges_b])
            w.writerow(["edges_a"] + [repr(float(e)) for e in self.edges_a])
            for i, row in enumerate(self.counts):
                w.writerow([repr(float(self.edges_a[i]))] + [int(c) for c in row])
            w.writerow(["overflow", self.overflow])


def _bin_index(values, edges):
    """Index i with edges[i] <= v < edges[i+1], or -1 when out of range."""
    idx = np.searchsorted(edges, values, side="right") - 1
    idx[(values < edges[0]) | (values >= edges[-1])] = -1
    return idx


def joint_histogram(frames_a, frames_b, bins_a, bins_b):
    """2D counts of valid pixel pairs; half-open bins, outside pairs -> overflow."""
    if len(frames_a) != len(frames_b):
        raise ArgumentError(f"unpaired frame lists: {len(frames_a)} vs {len(frames_b)}")
    ea = np.asarray(bins_a, dtype=np.float64)
    eb = np.asarray(bins_b, dtype=np.float64)
    for e in (ea, eb):
        if e.ndim != 1 or len(e) < 2 or np.any(np.diff(e) <= 0):
            raise ArgumentError("bin edges must be strictly increasing with at least 2 entries")
    counts = np.zeros((len(ea) - 1, len(eb) - 1), dtype=np.int64)
    overflow = 0
    for fa, fb in zip(frames_a, frames_b):
        a, b, valid = _pair(fa, fb)
        ia = _bin_index(a[valid], ea)
        ib = _bin_index(b[valid], eb)
        inside = (ia >= 0) & (ib >= 0)
        overflow += int(np.count_nonzero(~inside))
        np.add.at(counts, (ia[inside], ib[inside]), 1)
    return JointHistogram(ea, eb, counts, overflow)


# -- curves ------------------------------------------------------------------------


@dataclass
class MetricCurve:
    """One score as a function of lead time (index 0 is +5 min)."""

    metric: str
    threshold: float = None
    scale: int = None
    values: np.ndarray = field(default_factory=lambda: np.full(N_LEADS, np.nan))
    n: np.ndarray = field(default_factory=lambda: np.zeros(N_LEADS, dtype=np.int64))
    n_undefined: np.ndarray = field(default_factory=lambda: np.zeros(N_LEADS, dtype=np.int64))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.n = np.asarray(self.n, dtype=np.int64)
        self.n_undefined = np.asarray(self.n_undefined, dtype=np.int64)
        if not (self.values.shape == self.n.shape == self.n_undefined.shape == (N_LEADS,)):
            raise ArgumentError(f"a metric curve holds exactly {N_LEADS} lead times")

    @property
    def key(self):
        return (self.metric, self.threshold, self.scale)

    def at_lead_min(self, minutes):
        return self.values[minutes // (CADENCE_S // 60) - 1]


def lead_minutes():
    return [(k + 1) * CADENCE_S // 60 for k in range(N_LEADS)]


def _mean_curve(metric, per_sample, threshold=None, scale=None):
    """Mean over samples of a (S, 18) array with NaN marking undefined."""
    per_sample = np.asarray(per_sample, dtype=np.float64).reshape(-1, N_LEADS)
    defined = ~np.isnan(per_sample)
    n = defined.sum(axis=0)
    vals = np.full(N_LEADS, np.nan)
    for k in range(N_LEADS):
        if n[k]:
            vals[k] = float(np.mean(per_sample[defined[:, k], k]))
    return MetricCurve(metric, threshold, scale, vals, n, (~defined).sum(axis=0))


def _check_stack(pred, obs):
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise ArgumentError(f"shape mismatch: predictions {pred.shape}, observations {obs.shape}")
    if pred.ndim != 4 or pred.shape[1] != N_LEADS:
        raise DataError(f"expected (samples, {N_LEADS}, H, W) stacks, got {pred.shape}")
    return pred, obs


def evaluate(pred, obs, config=VerifyConfig()):
    """Every configured curve for stacked (samples, 18, H, W) nowcasts.

    Pixel errors and FSS are per-sample scores averaged over samples.
    Precision, recall and ETS pool contingency counts over samples;
    ``ets_sample_mean`` is the mean of per-sample ETS.
    """
    pred, obs = _check_stack(pred, obs)
    S = pred.shape[0]
    valid = np.isfinite(pred) & np.isfinite(obs)
    nvalid = valid.sum(axis=(-2, -1))
    d = np.where(valid, pred - obs, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mae = np.where(nvalid > 0, np.abs(d).sum(axis=(-2, -1)) / nvalid, np.nan)
        mse = np.where(nvalid > 0, (d * d).sum(axis=(-2, -1)) / nvalid, np.nan)
        me = np.where(nvalid > 0, d.sum(axis=(-2, -1)) / nvalid, np.nan)
    curves = [_mean_curve("mse", mse), _mean_curve("mae", mae), _mean_curve("me", me)]

    for thr in config.categorical_thresholds:
        pe = (pred > thr) & valid
        oe = (obs > thr) & valid
        h = (pe & oe).sum(axis=(-2, -1))
        m = (~pe & oe).sum(axis=(-2, -1))
        f = (pe & ~oe).sum(axis=(-2, -1))
        cn = nvalid - h - m - f
        for name, fn in (("precision", precision), ("recall", recall), ("ets", ets)):
            vals = np.full(N_LEADS, np.nan)
            und = np.zeros(N_LEADS, dtype=np.int64)
            for k in range(N_LEADS):
                t = ContingencyTable(int(h[:, k].sum()), int(m[:, k].sum()), int(f[:, k].sum()),
                                     int(cn[:, k].sum()), thr)
                v = fn(t)
                vals[k] = as_float(v)
                und[k] = 0 if is_defined(v) else 1
            curves.append(MetricCurve(name, thr, None, vals, np.full(N_LEADS, S), und))
        per = np.array([[as_float(ets(ContingencyTable(int(h[s, k]), int(m[s, k]), int(f[s, k]),
                                                       int(cn[s, k]), thr)))
                         for k in range(N_LEADS)] for s in range(S)])
        curves.append(_mean_curve("ets_sample_mean", per, thr))

    for thr in config.fss_thresholds:
        for r in config.fss_radii:
            curves.append(_mean_curve("fss", fss_batch(pred, obs, thr, r), thr, r))
    return curves


def sample_fss(pred, obs, threshold, radius, lead):
    """Per-sample FSS at one lead (1-based) for stacked nowcasts."""
    pred, obs = _check_stack(pred, obs)
    return fss_batch(pred[:, lead - 1], obs[:, lead - 1], threshold, radius)


# -- per-sample ranking ---------------------------------------------------------------


RANKING_METRICS = ("mse", "mae", "me")


def per_sample_ranking(predictions, observations, lead=6, samples=None):
    """Per-sample observed max/mean at ``lead`` and each model's pixel errors.

    ``predictions`` maps model name to a (S, >=lead, H, W) stack;
    ``observations`` is (S, >=lead, H, W). Rows are sorted by observed max,
    largest first, ties by sample id.
    """
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 4 or obs.shape[1] < lead:
        raise DataError(f"observations lack lead {lead}: shape {obs.shape}")
    S = obs.shape[0]
    samples = list(range(S)) if samples is None else list(samples)
    if len(samples) != S:
        raise ArgumentError("one sample id per observation is required")
    rows = []
    for s in range(S):
        o = obs[s, lead - 1]
        ok = np.isfinite(o)
        rows.append({
            "sample": samples[s],
            "max_rain": float(o[ok].max()) if ok.any() else math.nan,
            "mean_rain": float(o[ok].mean()) if ok.any() else math.nan,
        })
    for name in predictions:
        p = np.asarray(predictions[name], dtype=np.float64)
        if p.ndim != 4 or p.shape[0] != S or p.shape[1] < lead:
            raise DataError(f"predictions of {name!r} lack lead {lead} for {S} samples: shape {p.shape}")
        for s in range(S):
            pm = pixel_metrics(p[s, lead - 1], obs[s, lead - 1])
            for metric in RANKING_METRICS:
                rows[s][f"{name}_{metric}"] = as_float(getattr(pm, metric))
    rows.sort(key=lambda r: (-r["max_rain"], r["sample"]))
    return rows


# -- aggregation across models ----------------------------------------------------------


def aggregate_models(curves):
    """Per-lead mean and sample std (divisor k-1) across models.

    Undefined (NaN) entries are skipped; ``n`` of both returned curves holds
    the effective model count per lead. Std is NaN where fewer than 2 models
    are defined.
    """
    curves = list(curves)
    if len(curves) < 2:
        raise ArgumentError(f"aggregation needs at least 2 curves, got {len(curves)}")
    key = curves[0].key
    for c in curves[1:]:
        if c.key != key:
            raise ArgumentError(f"inconsistent curve keys: {key} vs {c.key}")
    vals = np.stack([c.values for c in curves])
    defined = ~np.isnan(vals)
    k = defined.sum(axis=0)
    mean = np.full(N_LEADS, np.nan)
    std = np.full(N_LEADS, np.nan)
    for j in range(N_LEADS):
        x = vals[defined[:, j], j]
        if len(x):
            # deviations from the first value keep identical curves exact
            d = x - x[0]
            mean[j] = float(x[0] + np.mean(d))
            if len(x) >= 2:
                std[j] = float(np.std(d, ddof=1))
    und = len(curves) - k
    return (MetricCurve(key[0], key[1], key[2], mean, k, und),
            MetricCurve(key[0], key[1], key[2], std, k, und))


# -- CSV ------------------------------------------------------------------------------


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _parse_opt(s, kind):
    return None if s == "" else kind(s)


CURVE_COLUMNS = ["metric", "threshold", "scale", "lead_min", "value", "n", "n_undefined"]


def write_curves_csv(curves, path):
    """Long-format per-model curves: one row per (metric, threshold, scale, lead)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for c in curves:
            for k, lm in enumerate(lead_minutes()):
                w.writerow([c.metric, _fmt(c.threshold), _fmt(c.scale), lm,
                            _fmt(c.values[k]), int(c.n[k]), int(c.n_undefined[k])])


def read_curves_csv(path):
    by_key = {}
    order = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CURVE_COLUMNS:
            raise DataError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            key = (row["metric"], _parse_opt(row["threshold"], float), _parse_opt(row["scale"], int))
            if key not in by_key:
                by_key[key] = MetricCurve(*key)
                order.append(key)
            lead = int(row["lead_min"]) // (CADENCE_S // 60) - 1
            if not 0 <= lead < N_LEADS:
                raise DataError(f"{path}: lead {row['lead_min']} min out of range")
            c = by_key[key]
            c.values[lead] = float(row["value"])
            c.n[lead] = int(row["n"])
            c.n_undefined[lead] = int(row["n_undefined"])
    return [by_key[k] for k in order]


AGG_COLUMNS = ["metric", "threshold", "scale", "lead_min", "mean", "std", "n"]


def write_aggregate_csv(pairs, path):
    """(mean, std) curve pairs in the metric,threshold,scale,lead,mean,std,n layout."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_COLUMNS)
        for mean, std in pairs:
            for k, lm in enumerate(lead_minutes()):
                w.writerow([mean.metric, _fmt(mean.threshold), _fmt(mean.scale), lm,
                            _fmt(mean.values[k]), _fmt(std.values[k]), int(mean.n[k])])


def write_ranking_csv(rows, path):
    if not rows:
        raise DataError("empty ranking table")
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if c == "sample" else _fmt(r[c]) for c in cols])


def read_table_csv(path):
    """Rows of a CSV as dicts of strings."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
