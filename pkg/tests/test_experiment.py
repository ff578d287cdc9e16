import csv
import filecmp
import math
import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from ethcast import experiment, verify
from ethcast.experiment import ExperimentPlan
from ethcast.gridio import write_manifest
from ethcast.sampler import assign_folds
from ethcast.synthgen import SynthEventParams, gen_dataset
from ethcast.unet3d import Hyper, ModelConfig, load_checkpoint


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("exp")
    params = SynthEventParams(rows=16, cols=16, sigma_range=(2.0, 4.0), growth_onset=3)
    m = gen_dataset(8, 40, root / "data", params, n_test_events=3)
    write_manifest(assign_folds(m, 0), root / "data" / "manifest.tsv")
    plan = ExperimentPlan(
        str(root / "data"), str(root / "run"),
        model=ModelConfig(levels=2, base_channels=2, rows=16, cols=16),
        hyper=Hyper(max_epochs=2, batch=2), n_models_per_group=2, seeds=(3, 4),
        motion_block=8, motion_radius=3,
    )
    experiment.run_experiment(plan, progress=lambda s: None)
    return plan


def test_run_layout(small_run):
    p = Path(small_run.out_dir)
    for g in ("with_eth", "without_eth"):
        for i in range(2):
            assert (p / "models" / g / f"m{i}.ckpt").is_file()
            assert (p / "models" / g / f"m{i}_train.csv").is_file()
            assert (p / "eval" / g / f"m{i}" / "curves.csv").is_file()
    rep = p / "report"
    for f in ("curves/pixel_with_eth.csv", "curves/categorical_without_eth.csv", "fss/with_eth.csv",
              "diffs/lead_differences.csv", "diffs/per_sample_lead30.csv", "diffs/seed_pairs.csv",
              "curves/mse_windows.csv", "summary.txt"):
        assert (rep / f).is_file(), f
    assert list((rep / "cases").iterdir())


def test_fan_in_doubles(small_run):
    a = load_checkpoint(small_run.path("models", "with_eth", "m0.ckpt"))
    b = load_checkpoint(small_run.path("models", "without_eth", "m0.ckpt"))
    wa, wb = a.state["enc0.conv1.weight"], b.state["enc0.conv1.weight"]
    assert wa.shape[1] == 2 * wb.shape[1]


def test_rerun_group_bitwise(small_run, tmp_path):
    plan = replace(small_run, out_dir=str(tmp_path))
    experiment.run_group(plan, "without_eth")
    for i in range(2):
        assert filecmp.cmp(plan.path("models", "without_eth", f"m{i}.ckpt"),
                           small_run.path("models", "without_eth", f"m{i}.ckpt"), shallow=False)


def test_single_model_plan(small_run, tmp_path):
    plan = replace(small_run, out_dir=str(tmp_path), n_models_per_group=1)
    res = experiment.run_group(plan, "with_eth")
    assert len(res) == 1
    assert len(list((tmp_path / "models" / "with_eth").glob("*.ckpt"))) == 1


def test_curve_row_count(small_run):
    rows = _rows(small_run.path("eval", "with_eth", "m0", "curves.csv"))
    vc = small_run.verify_config
    n_curves = 3 + 4 * len(vc.categorical_thresholds) + len(vc.fss_thresholds) * len(vc.fss_radii)
    assert len(rows) == n_curves * verify.N_LEADS


def test_perfect_oracle(small_run, tmp_path):
    plan = replace(small_run, out_dir=str(tmp_path))
    data = experiment.load_data(plan, "test")
    obs = data.rain[:, 4:]
    experiment._write_model_eval(plan, "oracle", data.starts, obs, obs)
    for c in verify.read_curves_csv(tmp_path / "eval" / "oracle" / "curves.csv"):
        v = c.values[~np.isnan(c.values)]
        if c.metric in ("mae", "mse", "me"):
            assert np.all(v == 0)
        elif c.metric in ("ets", "fss", "precision", "recall", "ets_sample_mean"):
            assert np.allclose(v, 1.0, atol=1e-12), c.key


def test_persistence_static_event():
    from ethcast.synthgen import Cell, gen_event
    ev = gen_event(SynthEventParams(rows=16, cols=16, cells=(Cell((8.0, 8.0), (0.0, 0.0), 5.0, 3.0, 0.0),)))
    rain = np.stack([f.values for f in ev.rain])[None]
    from ethcast.unet3d import SequenceData
    data = SequenceData(rain, rain, ["TEST"], [0])
    plan = ExperimentPlan("x", "y", model=ModelConfig(rows=16, cols=16, levels=2))
    pred = experiment.baseline_predictions(plan, data, "persistence")
    c = {k.key: k for k in verify.evaluate(pred, rain[:, 4:])}
    assert np.all(c[("mae", None, None)].values == 0)


def test_identical_models_and_groups(small_run, tmp_path):
    plan = replace(small_run, out_dir=str(tmp_path))
    shutil.copytree(small_run.path("eval"), tmp_path / "eval")
    for g in ("with_eth", "without_eth"):
        for i in range(2):
            d = tmp_path / "eval" / g / f"m{i}"
            shutil.rmtree(d)
            shutil.copytree(Path(small_run.out_dir) / "eval" / "with_eth" / "m0", d)
    rep = Path(experiment.compare_groups(plan))
    for r in _rows(rep / "diffs" / "lead_differences.csv"):
        assert float(r["difference"]) == 0.0
    for r in _rows(rep / "diffs" / "per_sample_lead30.csv"):
        assert all(float(r[f"diff_{m}"]) == 0.0 for m in ("mse", "mae", "me"))
    for r in _rows(rep / "curves" / "pixel_with_eth.csv"):
        assert r["std"] == "nan" or float(r["std"]) == 0.0


def test_summary_mean_difference(small_run):
    rep = Path(small_run.out_dir) / "report"
    means = {r["metric"]: float(r["mean_difference"]) for r in _rows(rep / "diffs" / "mean_differences.csv")}
    # recompute from the per-model sample tables
    samples = {}
    for g in ("with_eth", "without_eth"):
        per_model = [_rows(small_run.path("eval", g, f"m{i}", "samples.csv")) for i in range(2)]
        samples[g] = {}
        for rows in per_model:
            for r in rows:
                if r["lead_min"] == "30":
                    samples[g].setdefault(int(r["sample"]), []).append(r)
    for m in ("mse", "mae", "me"):
        diffs = []
        for s in samples["with_eth"]:
            a = sum(float(r[m]) for r in samples["with_eth"][s]) / 2
            b = sum(float(r[m]) for r in samples["without_eth"][s]) / 2
            diffs.append(a - b)
        assert means[m] == pytest.approx(sum(diffs) / len(diffs), abs=1e-12)
    summary = (rep / "summary.txt").read_text()
    assert repr(means["mse"]) in summary


def test_report_regeneration_bitwise(small_run, tmp_path):
    a = experiment.compare_groups(small_run, str(tmp_path / "a"))
    b = experiment.compare_groups(small_run, str(tmp_path / "b"))
    for f in Path(a).rglob("*.csv"):
        assert f.read_bytes() == (Path(b) / f.relative_to(a)).read_bytes()
    assert (Path(a) / "summary.txt").read_bytes() == (Path(b) / "summary.txt").read_bytes()


def test_select_best_argmax_oracle(rng):
    for _ in range(200):
        s = rng.choice([0.1, 0.2, 0.5, np.nan, 0.9], size=8)
        valid = [i for i in range(8) if not math.isnan(s[i])]
        want = max(valid, key=lambda i: (s[i], -i)) if valid else 0
        assert experiment.select_best(s) == want
        assert experiment.select_best(np.exp(3 * s) - 7) == want


def test_render_case_panels(small_run):
    data = experiment.load_data(small_run, "test")
    sample = data.starts[1]
    experiment.render_case(small_run, sample, data)
    d = Path(small_run.out_dir) / "report" / "cases" / str(sample)
    rows = _rows(d / "panels.csv")
    obs = [r for r in rows if r["panel"] == "observation"]
    assert [r["lead_min"] for r in obs] == ["30", "60", "90"]
    s = data.starts.index(sample)
    for r in obs:
        k = int(r["lead_min"]) // 5
        assert float(r["max_rain"]) == float(np.max(data.rain[s, 4 + k - 1]))
        assert experiment.read_ppm(d / r["file"]).shape == (16, 16, 3)
    assert any(r["panel"].startswith("with_eth_m") for r in rows)


def test_colour_scales():
    g = experiment.eth_gray(np.array([[0.0, 8.0, 16.0, 20.0]]))
    assert g[0, :, 0].tolist() == [0, 128, 255, 255]
    c = experiment.rain_rgb(np.array([0.05, 0.1, 0.2, 40.0]))
    assert c[0].tolist() == [255, 255, 255]
    assert c[1].tolist() == c[2].tolist() == list(experiment.RAIN_COLOURS[1])
    assert c[3].tolist() == list(experiment.RAIN_COLOURS[-1])


def test_ppm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (5, 7, 3)).astype(np.uint8)
    experiment.write_ppm(img, tmp_path / "a.ppm")
    np.testing.assert_array_equal(experiment.read_ppm(tmp_path / "a.ppm"), img)
