"""Seed-paired training of models with and without ETH, evaluation, reports.

Layout under the output directory::

    models/<group>/m<i>.ckpt, m<i>_train.csv, status.tsv
    eval/<model>/curves.csv, samples.csv      (model = <group>/m<i> or baseline/<name>)
    eval/observations.csv
    report/curves/*.csv, diffs/*.csv, fss/*.csv, cases/<timestamp>/*, summary.txt

The report is assembled from the CSV files under ``eval/`` only, so it can be
regenerated without the models and every summary number sits in a CSV cell.
"""

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, verify
from .errors import ArgumentError, ConfigError, DataError, StorageError
from .gridio import CADENCE_S, ETH_MAX_KM, TEST, read_manifest
from .unet3d import (
    Checkpoint,
    Hyper,
    ModelConfig,
    SequenceData,
    UNet3D,
    load_checkpoint,
    predict_arrays,
    save_checkpoint,
    train,
)

GROUPS = {"with_eth": 2, "without_eth": 1}
BASELINES = ("persistence", "advection")
RAIN_BREAKS = (0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0)
# below 0.1 mm/h, then one colour per interval starting at each break
RAIN_COLOURS = (
    (255, 255, 255),
    (190, 230, 255),
    (120, 180, 245),
    (40, 110, 220),
    (60, 180, 75),
    (250, 220, 40),
    (245, 130, 30),
    (200, 20, 40),
)
RENDER_LEADS = (6, 12, 18)
SAMPLE_COLUMNS = ["sample", "lead_min", "mse", "mae", "me", "fss_select"]


@dataclass(frozen=True)
class ExperimentPlan:
    data_dir: str
    out_dir: str
    manifest: str = "manifest.tsv"
    model: ModelConfig = ModelConfig()
    hyper: Hyper = Hyper()
    n_models_per_group: int = 8
    seeds: tuple = (1, 2, 3, 4, 5, 6, 7, 8)
    groups: tuple = ("with_eth", "without_eth")
    verify_config: verify.VerifyConfig = verify.VerifyConfig()
    select_threshold: float = 2.5
    select_radius: int = 16
    select_lead: int = 6
    motion_block: int = 16
    motion_radius: int = 8
    n_cases: int = 1
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "groups", tuple(self.groups))
        if self.n_models_per_group < 1:
            raise ConfigError("n_models_per_group must be >= 1")
        if len(self.seeds) < self.n_models_per_group:
            raise ConfigError(f"{self.n_models_per_group} models need as many seeds, got {len(self.seeds)}")
        used = self.seeds[:self.n_models_per_group]
        if len(set(used)) != len(used):
            raise ConfigError(f"seeds must be distinct, got {used}")
        for g in self.groups:
            if g not in GROUPS:
                raise ConfigError(f"unknown group {g!r}; expected one of {sorted(GROUPS)}")
        if not 1 <= self.select_lead <= verify.N_LEADS:
            raise ConfigError("select_lead out of range")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def model_config(self, group, i):
        return replace(self.model, in_channels=GROUPS[group], seed=self.seeds[i])

    def path(self, *parts):
        return os.path.join(self.out_dir, *parts)


def model_name(group, i):
    return f"{group}/m{i}"


def _makedirs(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise StorageError(path, str(e)) from e


def load_data(plan, which="all"):
    manifest = read_manifest(os.path.join(plan.data_dir, plan.manifest))
    if which == "test":
        recs = manifest.test()
        if not recs:
            raise DataError("manifest has no TEST sequences")
        return SequenceData.from_manifest(manifest, plan.data_dir, recs)
    recs = [r for r in manifest.records if r.fold is not None]
    if not recs:
        raise DataError("manifest has no sequences with assigned folds")
    return SequenceData.from_manifest(manifest, plan.data_dir, recs)


# -- training --------------------------------------------------------------------


@dataclass
class MemberResult:
    group: str
    index: int
    checkpoint_path: str
    failure: str = None
    epochs: int = 0


def _train_member(plan, group, i, data):
    cfg = plan.model_config(group, i)
    if cfg.rows != data.rain.shape[-2] or cfg.cols != data.rain.shape[-1]:
        raise ConfigError(
            f"model grid {cfg.rows}x{cfg.cols} does not match data {data.rain.shape[-2]}x{data.rain.shape[-1]}"
        )
    result = train(UNet3D(cfg), data, fold=i, hyper=plan.hyper)
    d = plan.path("models", group)
    ckpt_path = os.path.join(d, f"m{i}.ckpt")
    save_checkpoint(result.checkpoint, ckpt_path)
    with open(os.path.join(d, f"m{i}_train.csv"), "w") as fh:
        fh.write(result.log_csv())
    return MemberResult(group, i, ckpt_path, result.failure, len(result.log))


def _train_task(args):
    plan, group, i = args
    return _train_member(plan, group, i, load_data(plan))


def run_group(plan, group, data=None):
    """Train model i with seed i and validation fold i; returns MemberResults.

    A model that hits a numeric failure keeps its best checkpoint so far and
    is reported in ``status.tsv``; the rest of the group is unaffected.
    """
    _makedirs(plan.path("models", group))
    idx = list(range(plan.n_models_per_group))
    if plan.jobs > 1:
        with ProcessPoolExecutor(max_workers=plan.jobs) as ex:
            results = list(ex.map(_train_task, [(plan, group, i) for i in idx]))
    else:
        data = data if data is not None else load_data(plan)
        results = [_train_member(plan, group, i, data) for i in idx]
    with open(plan.path("models", group, "status.tsv"), "w") as fh:
        for r in results:
            fh.write(f"m{r.index}\t{r.epochs}\t{'ok' if r.failure is None else 'failed: ' + r.failure}\n")
    return results


def group_checkpoints(plan, group):
    """Checkpoint paths of a trained group, in model order."""
    paths = [plan.path("models", group, f"m{i}.ckpt") for i in range(plan.n_models_per_group)]
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise DataError(f"missing checkpoints: {missing}")
    return paths


# -- evaluation --------------------------------------------------------------------


def _write_samples(path, starts, pred, obs, plan):
    sel = [verify.sample_fss(pred, obs, plan.select_threshold, plan.select_radius, k + 1)
           for k in range(verify.N_LEADS)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for s, ts in enumerate(starts):
            for k, lm in enumerate(verify.lead_minutes()):
                pm = verify.pixel_metrics(pred[s, k], obs[s, k])
                w.writerow([ts, lm] + [verify._fmt(verify.as_float(getattr(pm, m))) for m in ("mse", "mae", "me")]
                           + [verify._fmt(sel[k][s])])


def _write_model_eval(plan, name, starts, pred, obs):
    d = plan.path("eval", name)
    _makedirs(d)
    verify.write_curves_csv(verify.evaluate(pred, obs, plan.verify_config), os.path.join(d, "curves.csv"))
    _write_samples(os.path.join(d, "samples.csv"), starts, pred, obs, plan)


def write_observations(plan, data):
    """Observed max and mean rain of every test sample at every lead."""
    n_in = plan.model.in_frames
    _makedirs(plan.path("eval"))
    with open(plan.path("eval", "observations.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "lead_min", "max_rain", "mean_rain"])
        for s, ts in enumerate(data.starts):
            for k, lm in enumerate(verify.lead_minutes()):
                o = data.rain[s, n_in + k].astype(np.float64)
                w.writerow([ts, lm, verify._fmt(float(o.max())), verify._fmt(float(o.mean()))])


def predict_test(checkpoint, data, batch=4):
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    cfg = ckpt.config
    if (cfg.rows, cfg.cols) != data.rain.shape[-2:]:
        raise ConfigError(f"checkpoint grid {cfg.rows}x{cfg.cols} != data grid {data.rain.shape[-2:]}")
    model = ckpt.model()
    out = []
    for s in range(0, len(data.starts), batch):
        rain = data.rain[s:s + batch, :cfg.in_frames]
        eth = data.eth[s:s + batch, :cfg.in_frames] if cfg.in_channels == 2 else None
        out.append(predict_arrays(model, rain, eth))
    return np.concatenate(out)


def evaluate_group(plan, group, data=None, checkpoints=None):
    """Predict every test sequence with each model of ``group`` and score it."""
    data = data if data is not None else load_data(plan, "test")
    checkpoints = checkpoints or group_checkpoints(plan, group)
    n_in = plan.model.in_frames
    obs = data.rain[:, n_in:n_in + verify.N_LEADS]
    geom = None
    for i, path in enumerate(checkpoints):
        ckpt = path if isinstance(path, Checkpoint) else load_checkpoint(path)
        g = (ckpt.config.rows, ckpt.config.cols, ckpt.config.in_frames, ckpt.config.out_frames)
        if geom is not None and g != geom:
            raise ConfigError(f"checkpoint {i} geometry {g} differs from {geom}")
        geom = g
        _write_model_eval(plan, model_name(group, i), data.starts, predict_test(ckpt, data), obs)


def baseline_predictions(plan, data, name):
    n_in = plan.model.in_frames
    out = np.empty((len(data.starts), verify.N_LEADS) + data.rain.shape[-2:], dtype=np.float32)
    for s in range(len(data.starts)):
        frames = list(data.rain[s, :n_in])
        if name == "persistence":
            out[s] = frames[-1][None]
        elif name == "advection":
            motion = baselines.estimate_motion(frames, plan.motion_block, plan.motion_radius)
            last = frames[-1].astype(np.float64)
            rows, cols = np.indices(last.shape, dtype=np.float64)
            for k in range(verify.N_LEADS):
                out[s, k] = baselines.bilinear_sample(last, rows - (k + 1) * motion.v,
                                                      cols - (k + 1) * motion.u)
        else:
            raise ArgumentError(f"unknown baseline {name!r}")
    return out


def evaluate_baselines(plan, data=None):
    data = data if data is not None else load_data(plan, "test")
    n_in = plan.model.in_frames
    obs = data.rain[:, n_in:n_in + verify.N_LEADS]
    for name in BASELINES:
        _write_model_eval(plan, f"baseline/{name}", data.starts, baseline_predictions(plan, data, name), obs)


# -- report --------------------------------------------------------------------------


def _read_samples(path):
    out = {}
    for row in verify.read_table_csv(path):
        out[(int(row["sample"]), int(row["lead_min"]))] = {k: float(row[k]) for k in SAMPLE_COLUMNS[2:]}
    return out


def _model_dirs(plan, group):
    return [model_name(group, i) for i in range(plan.n_models_per_group)]


def _curves_by_key(plan, name):
    return {c.key: c for c in verify.read_curves_csv(plan.path("eval", name, "curves.csv"))}


def _aggregate(curve_lists):
    """(mean, std) per curve key; a single model gets NaN std."""
    pairs = []
    for key in curve_lists[0]:
        cs = [cl[key] for cl in curve_lists]
        if any(c.key != key for c in cs):
            raise ArgumentError(f"mismatched metric keys for {key}")
        if len(cs) == 1:
            c = cs[0]
            nd = (~np.isnan(c.values)).astype(np.int64)
            pairs.append((verify.MetricCurve(*key, c.values, nd, 1 - nd),
                          verify.MetricCurve(*key, np.full(verify.N_LEADS, np.nan), nd, 1 - nd)))
        else:
            pairs.append(verify.aggregate_models(cs))
    return pairs


def _mean_window(curve, lo_min, hi_min):
    lm = np.asarray(verify.lead_minutes())
    sel = (lm >= lo_min) & (lm <= hi_min)
    return float(np.mean(curve.values[sel]))


def compare_groups(plan, report_dir=None):
    """Write the report bundle from the per-model CSVs under ``eval/``."""
    report_dir = report_dir or plan.path("report")
    for sub in ("curves", "diffs", "fss"):
        _makedirs(os.path.join(report_dir, sub))
    pixel = ("mse", "mae", "me")
    categorical = ("precision", "recall", "ets", "ets_sample_mean")

    group_curves = {g: [_curves_by_key(plan, m) for m in _model_dirs(plan, g)] for g in plan.groups}
    keysets = {g: [list(cl) for cl in lists] for g, lists in group_curves.items()}
    ref = None
    for g, ks in keysets.items():
        for k in ks:
            if ref is None:
                ref = k
            elif k != ref:
                raise ArgumentError(f"group {g} has mismatched metric keys")
    base_curves = {b: _curves_by_key(plan, f"baseline/{b}") for b in BASELINES}

    agg = {g: _aggregate(group_curves[g]) for g in plan.groups}
    agg.update({f"baseline_{b}": _aggregate([base_curves[b]]) for b in BASELINES})
    for name, pairs in agg.items():
        verify.write_aggregate_csv([p for p in pairs if p[0].metric in pixel],
                                   os.path.join(report_dir, "curves", f"pixel_{name}.csv"))
        verify.write_aggregate_csv([p for p in pairs if p[0].metric in categorical],
                                   os.path.join(report_dir, "curves", f"categorical_{name}.csv"))
        _write_fss_matrix([p for p in pairs if p[0].metric == "fss"],
                          os.path.join(report_dir, "fss", f"{name}.csv"), plan.verify_config)

    # mean MSE over lead windows, per model and per group mean
    windows = (("05-45", 5, 45), ("30-90", 30, 90), ("05-90", 5, 90))
    with open(os.path.join(report_dir, "curves", "mse_windows.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "window_min", "mean_mse"])
        for g in plan.groups:
            for i, cl in enumerate(group_curves[g]):
                for wn, lo, hi in windows:
                    w.writerow([model_name(g, i), wn, verify._fmt(_mean_window(cl[("mse", None, None)], lo, hi))])
            mean = dict((p[0].key, p[0]) for p in agg[g])[("mse", None, None)]
            for wn, lo, hi in windows:
                w.writerow([f"{g}/mean", wn, verify._fmt(_mean_window(mean, lo, hi))])
        for b in BASELINES:
            for wn, lo, hi in windows:
                w.writerow([f"baseline/{b}", wn, verify._fmt(_mean_window(base_curves[b][("mse", None, None)], lo, hi))])

    diff_rows = _write_diffs(plan, report_dir, group_curves, agg, pixel)
    _write_summary(plan, report_dir, diff_rows)
    return report_dir


def _write_fss_matrix(pairs, path, vcfg):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "radius", "lead_min", "mean", "std", "n"])
        for mean, std in pairs:
            for lm in vcfg.fss_report_leads_min:
                k = lm // (CADENCE_S // 60) - 1
                w.writerow([verify._fmt(mean.threshold), mean.scale, lm,
                            verify._fmt(mean.values[k]), verify._fmt(std.values[k]), int(mean.n[k])])


def _write_diffs(plan, report_dir, group_curves, agg, pixel):
    """Per-lead and per-sample differences between the first two groups."""
    if len(plan.groups) < 2:
        return []
    ga, gb = plan.groups[:2]
    ma = {p[0].key: p[0] for p in agg[ga]}
    mb = {p[0].key: p[0] for p in agg[gb]}
    with open(os.path.join(report_dir, "diffs", "lead_differences.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "lead_min", f"{ga}_mean", f"{gb}_mean", "difference"])
        for m in pixel:
            for k, lm in enumerate(verify.lead_minutes()):
                a, b = ma[(m, None, None)].values[k], mb[(m, None, None)].values[k]
                w.writerow([m, lm, verify._fmt(a), verify._fmt(b), verify._fmt(a - b)])

    # seed pairs: model i of each group shares seed and validation fold
    with open(os.path.join(report_dir, "diffs", "seed_pairs.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair", "seed", f"{ga}_mse_30_90", f"{gb}_mse_30_90", "difference"])
        for i in range(plan.n_models_per_group):
            a = _mean_window(group_curves[ga][i][("mse", None, None)], 30, 90)
            b = _mean_window(group_curves[gb][i][("mse", None, None)], 30, 90)
            w.writerow([i, plan.seeds[i], verify._fmt(a), verify._fmt(b), verify._fmt(a - b)])

    # per-sample differences at the ranking lead, keyed by the observation
    lead_min = plan.verify_config.ranking_lead * CADENCE_S // 60
    obs = {int(r["sample"]): r for r in verify.read_table_csv(plan.path("eval", "observations.csv"))
           if int(r["lead_min"]) == lead_min}
    per_group = {}
    for g in (ga, gb):
        sams = [_read_samples(plan.path("eval", m, "samples.csv")) for m in _model_dirs(plan, g)]
        per_group[g] = {
            s: {m: float(np.mean([sm[(s, lead_min)][m] for sm in sams])) for m in pixel}
            for s in obs
        }
    rows = []
    for s, o in obs.items():
        row = {"sample": s, "max_rain": float(o["max_rain"]), "mean_rain": float(o["mean_rain"])}
        for m in pixel:
            row[f"{ga}_{m}"] = per_group[ga][s][m]
            row[f"{gb}_{m}"] = per_group[gb][s][m]
            row[f"diff_{m}"] = per_group[ga][s][m] - per_group[gb][s][m]
        rows.append(row)
    rows.sort(key=lambda r: (-r["max_rain"], r["sample"]))
    verify.write_ranking_csv(rows, os.path.join(report_dir, "diffs", f"per_sample_lead{lead_min}.csv"))

    # re-read so the means come from the CSV cells themselves
    cells = verify.read_table_csv(os.path.join(report_dir, "diffs", f"per_sample_lead{lead_min}.csv"))
    with open(os.path.join(report_dir, "diffs", "mean_differences.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "lead_min", "mean_difference", "n"])
        for m in pixel:
            d = [float(r[f"diff_{m}"]) for r in cells]
            w.writerow([m, lead_min, verify._fmt(float(np.mean(d))), len(d)])
    return rows


def _write_summary(plan, report_dir, diff_rows):
    lines = [f"groups: {', '.join(plan.groups)}; models per group: {plan.n_models_per_group}"]
    mw = verify.read_table_csv(os.path.join(report_dir, "curves", "mse_windows.csv"))
    lines.append("mean MSE by lead window (mm/h)^2  [curves/mse_windows.csv]")
    for r in mw:
        if r["model"].endswith("/mean") or r["model"].startswith("baseline/"):
            lines.append(f"  {r['model']:<24} {r['window_min']:>6} min  {r['mean_mse']}")
    if len(plan.groups) >= 2:
        ga, gb = plan.groups[:2]
        sp = verify.read_table_csv(os.path.join(report_dir, "diffs", "seed_pairs.csv"))
        wins = sum(float(r["difference"]) < 0 for r in sp)
        lines.append(f"seed pairs where {ga} has lower MSE over 30-90 min: {wins} of {len(sp)}  [diffs/seed_pairs.csv]")
        for r in sp:
            lines.append(f"  pair {r['pair']} (seed {r['seed']}): {r[f'{ga}_mse_30_90']} vs {r[f'{gb}_mse_30_90']}")
        md = verify.read_table_csv(os.path.join(report_dir, "diffs", "mean_differences.csv"))
        lines.append(f"mean per-sample difference {ga} - {gb}  [diffs/mean_differences.csv]")
        for r in md:
            lines.append(f"  {r['metric']} at +{r['lead_min']} min: {r['mean_difference']} (n={r['n']})")
    with open(os.path.join(report_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


# -- rendering ---------------------------------------------------------------------


def rain_rgb(values):
    """Fixed colour scale; intervals start at 0.1, 0.5, 1, 2.5, 5, 10, 30 mm/h."""
    idx = np.searchsorted(np.asarray(RAIN_BREAKS), np.asarray(values, dtype=np.float64), side="right")
    return np.asarray(RAIN_COLOURS, dtype=np.uint8)[idx]


def eth_gray(values):
    """Grey level 0..255 for 0..16 km, clipped."""
    v = np.clip(np.asarray(values, dtype=np.float64) / ETH_MAX_KM, 0.0, 1.0)
    g = np.round(v * 255).astype(np.uint8)
    return np.stack([g, g, g], axis=-1)


def write_ppm(rgb, path):
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ArgumentError(f"expected (H, W, 3) pixels, got {rgb.shape}")
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise DataError(f"{path}: not a binary PPM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def select_best(scores):
    """Index of the highest score; NaN counts as worst, ties go to the lowest index."""
    best, best_i = -np.inf, 0
    for i, s in enumerate(scores):
        if not np.isnan(s) and s > best:
            best, best_i = s, i
    return best_i


def case_scores(plan, group, sample):
    lead_min = plan.select_lead * CADENCE_S // 60
    out = []
    for m in _model_dirs(plan, group):
        out.append(_read_samples(plan.path("eval", m, "samples.csv"))[(sample, lead_min)]["fss_select"])
    return out


def pick_cases(plan):
    """Test samples with the largest observed max at the ranking lead."""
    lead_min = plan.verify_config.ranking_lead * CADENCE_S // 60
    rows = [r for r in verify.read_table_csv(plan.path("eval", "observations.csv"))
            if int(r["lead_min"]) == lead_min]
    rows.sort(key=lambda r: (-float(r["max_rain"]), int(r["sample"])))
    return [int(r["sample"]) for r in rows[:plan.n_cases]]


def render_case(plan, sample, data=None, leads=RENDER_LEADS, report_dir=None):
    """PPM panels of observation and each group's best model, plus max-rain CSV."""
    data = data if data is not None else load_data(plan, "test")
    if sample not in data.starts:
        raise DataError(f"sample {sample} is not in the test set")
    s = data.starts.index(sample)
    n_in = plan.model.in_frames
    if max(leads) > verify.N_LEADS or min(leads) < 1:
        raise DataError(f"render leads {leads} outside 1..{verify.N_LEADS}")
    d = os.path.join(report_dir or plan.path("report"), "cases", str(sample))
    _makedirs(d)
    panels = []
    for k in leads:
        obs = data.rain[s, n_in + k - 1]
        panels.append(("observation", k, obs))
    sub = replace(data, rain=data.rain[s:s + 1], eth=data.eth[s:s + 1], folds=[TEST], starts=[sample])
    chosen = {}
    for g in plan.groups:
        best = select_best(case_scores(plan, g, sample))
        chosen[g] = best
        pred = predict_test(plan.path("models", g, f"m{best}.ckpt"), sub)[0]
        for k in leads:
            panels.append((f"{g}_m{best}", k, pred[k - 1]))
    with open(os.path.join(d, "panels.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["panel", "lead_min", "max_rain", "file"])
        for name, k, vals in panels:
            fname = f"{name}_t{k * CADENCE_S // 60}.ppm"
            write_ppm(rain_rgb(vals), os.path.join(d, fname))
            w.writerow([name, k * CADENCE_S // 60, verify._fmt(float(np.max(vals))), fname])
        eth_in = data.eth[s, n_in - 1]
        write_ppm(eth_gray(eth_in), os.path.join(d, "eth_input.ppm"))
        w.writerow(["eth_input", 0, "", "eth_input.ppm"])
    return chosen


# -- whole protocol --------------------------------------------------------------------


def run_experiment(plan, progress=print):
    """Train all groups, evaluate them and the baselines, write the report."""
    train_data = load_data(plan)
    test_data = load_data(plan, "test")
    for g in plan.groups:
        progress(f"experiment: training {g}")
        run_group(plan, g, train_data)
        progress(f"experiment: evaluating {g}")
        evaluate_group(plan, g, test_data)
    progress("experiment: evaluating baselines")
    evaluate_baselines(plan, test_data)
    write_observations(plan, test_data)
    report = compare_groups(plan)
    for sample in pick_cases(plan):
        render_case(plan, sample, test_data)
    return report
