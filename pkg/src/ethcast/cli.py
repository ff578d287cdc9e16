"""``ethcast``: every pipeline stage as a subcommand of one executable.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numeric failure.
"""

import argparse
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import baselines, experiment, gridio, preprocess, sampler, synthgen, verify
from .config import keys_help, load_config
from .errors import ArgumentError, ConfigError, DataError, EthcastError, NumericFailure
from .unet3d import Hyper, ModelConfig, gradcheck_unet, load_checkpoint, predict_frames

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- config -> objects ---------------------------------------------------------------


def synth_params(cfg):
    s = cfg.section("synthgen")
    return synthgen.SynthEventParams(
        rows=s["rows"], cols=s["cols"], n_cells=tuple(s["n_cells"]),
        amplitude_range=tuple(s["amplitude_range"]), sigma_range=tuple(s["sigma_range"]),
        speed_max=s["speed_max"], growth_max=s["growth_max"], eth_base=s["eth_base"],
        eth_gain=s["eth_gain"], eth_noise_sd=s["eth_noise_sd"], growth_onset=s["growth_onset"],
        artifact_rings=s["artifact_rings"],
    )


def sampler_config(cfg):
    s = cfg.section("sampler")
    return sampler.SamplerConfig(top_k_per_year=s["top_k_per_year"], n_folds=s["n_folds"],
                                 test_year=s["test_year"], cutoff_start=s["cutoff_start"])


def verify_config(cfg):
    s = cfg.section("verify")
    try:
        return verify.VerifyConfig(s["categorical_thresholds"], s["fss_thresholds"], s["fss_radii"],
                                   s["fss_report_leads_min"], s["ranking_lead"])
    except ArgumentError as e:
        raise ConfigError(f"verify: {e}") from None


def model_config(cfg, rows, cols, in_channels=1):
    s = cfg.section("unet3d")
    return ModelConfig(in_channels=in_channels, levels=s["levels"], base_channels=s["base_channels"],
                       kernel=tuple(s["kernel"]), rain_transform=s["rain_transform"],
                       eth_scale=s["eth_scale"], rows=rows, cols=cols)


def hyper(cfg):
    s = cfg.section("train")
    return Hyper(lr=s["lr"], batch=s["batch"], max_epochs=s["max_epochs"],
                 patience_early=s["patience_early"], plateau_patience=s["plateau_patience"],
                 plateau_factor=s["plateau_factor"])


def _grid_of_manifest(workdir):
    m = gridio.read_manifest(os.path.join(workdir, "manifest.tsv"))
    if not m.records:
        raise DataError("manifest.tsv is empty")
    h = gridio.read_header(gridio.resolve(m.records[0].rain_paths[0], workdir))
    return h.rows, h.cols


def plan_of(cfg, workdir, jobs):
    rows, cols = _grid_of_manifest(workdir)
    s = cfg.section("experiment")
    return experiment.ExperimentPlan(
        data_dir=workdir, out_dir=workdir, model=model_config(cfg, rows, cols), hyper=hyper(cfg),
        n_models_per_group=s["n_models_per_group"], seeds=s["seeds"], groups=s["groups"],
        verify_config=verify_config(cfg), select_threshold=s["select_threshold"],
        select_radius=s["select_radius"], select_lead=s["select_lead"],
        motion_block=cfg["baselines.block"], motion_radius=cfg["baselines.search_radius"],
        n_cases=s["n_cases"], jobs=jobs,
    )


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


# -- subcommands ---------------------------------------------------------------------


def cmd_synth_gen(args, cfg):
    s = cfg.section("synthgen")
    out = os.path.join(args.workdir, "raw")
    m = synthgen.gen_dataset(s["n_events"], s["seed"], out, synth_params(cfg),
                             n_test_events=s["n_test_events"], emit=s["emit"])
    _log(f"synth-gen: {len(m)} events written to {out}")


def _preprocess_one(task):
    ts, main_path, eth_path, workdir, opts = task
    zr, clutter, crop = opts
    raw_dir = os.path.join(workdir, "raw")
    frame = gridio.read_frame(gridio.resolve(main_path, raw_dir))
    eth = gridio.read_frame(gridio.resolve(eth_path, raw_dir))
    if frame.timestamp != ts or eth.timestamp != ts:
        raise DataError(f"frame timestamps of {main_path} / {eth_path} disagree with the index ({ts})")
    if frame.variable == gridio.Variable.REFLECTIVITY_DBZ:
        dbz = frame
        rain = preprocess.dbz_to_rain(frame, zr)
    elif frame.variable == gridio.Variable.RAIN_MMH:
        rain = frame
        dbz = preprocess.rain_to_dbz(frame, zr)
    else:
        raise DataError(f"{main_path}: expected reflectivity or rain, found {frame.variable.name}")
    if clutter is not None:
        rain = preprocess.remove_clutter(rain, clutter)
    if crop is not None:
        ro, co = gridio.central_offsets(rain.rows, rain.cols, *crop)
        rain = gridio.crop(rain, ro, co, *crop)
        eth = gridio.crop(eth, ro, co, *crop)
        dbz = gridio.crop(dbz, ro, co, *crop)
    rp = os.path.join("frames", f"{ts}_rain.rfgd")
    ep = os.path.join("frames", f"{ts}_eth.rfgd")
    gridio.write_frame(rain, os.path.join(workdir, rp))
    gridio.write_frame(eth, os.path.join(workdir, ep))
    return ts, rp, ep, sampler.event_weight(dbz)


def _map(fn, tasks, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks, chunksize=8))
    return [fn(t) for t in tasks]


def cmd_preprocess(args, cfg):
    s = cfg.section("preprocess")
    index = gridio.read_frame_index(os.path.join(args.workdir, "raw", "index.tsv"))
    try:
        zr = preprocess.ZRParams(s["zr_a"], s["zr_b"])
        clutter = preprocess.ClutterParams(s["rain_threshold_mmh"], s["erosion_iters"],
                                           s["dilation_iters"], s["element"]) if s["clutter"] else None
    except ArgumentError as e:
        raise ConfigError(f"preprocess: {e}") from None
    crop = None
    if s["crop_rows"] or s["crop_cols"]:
        if s["crop_rows"] < 1 or s["crop_cols"] < 1:
            raise ConfigError("preprocess.crop_rows and crop_cols must both be set")
        crop = (s["crop_rows"], s["crop_cols"])
    os.makedirs(os.path.join(args.workdir, "frames"), exist_ok=True)
    tasks = [(ts, p[0], p[1], args.workdir, (zr, clutter, crop)) for ts, p in sorted(index.items())]
    results = _map(_preprocess_one, tasks, args.jobs)
    gridio.write_frame_index({ts: (rp, ep) for ts, rp, ep, _ in results},
                             os.path.join(args.workdir, "frames", "index.tsv"))
    with open(os.path.join(args.workdir, "frames", "weights.tsv"), "w") as fh:
        for ts, _, _, w in results:
            fh.write(f"{ts}\t{w!r}\n")
    _log(f"preprocess: {len(results)} frame pairs written to frames/")


def _read_weights(path):
    out = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    ts, w = line.split("\t")
                    out[int(ts)] = float(w)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror or e}") from None
    except ValueError:
        raise DataError(f"{path}: line {lineno} is not 'unix<TAB>weight'") from None
    return out


def cmd_sample(args, cfg):
    scfg = sampler_config(cfg)
    fdir = os.path.join(args.workdir, "frames")
    index = gridio.read_frame_index(os.path.join(fdir, "index.tsv"))
    weights = _read_weights(os.path.join(fdir, "weights.tsv"))
    starts = sampler.rank_candidates(weights, scfg)
    report = sampler.build_sequences(starts, index, scfg, weights)
    manifest = sampler.assign_folds(report.manifest, cfg["sampler.seed"], scfg)
    gridio.write_manifest(manifest, os.path.join(args.workdir, "manifest.tsv"))
    sizes = sampler.fold_sizes(manifest, scfg.n_folds)
    _log(f"sample: {report.summary()}; fold sizes {sizes}; {len(manifest.test())} test sequences")


def cmd_train(args, cfg):
    plan = plan_of(cfg, args.workdir, args.jobs)
    groups = [args.group] if args.group else plan.groups
    data = experiment.load_data(plan) if plan.jobs == 1 else None
    for g in groups:
        if g not in experiment.GROUPS:
            raise ConfigError(f"unknown group {g!r}")
        t = time.perf_counter()
        results = experiment.run_group(plan, g, data)
        failed = [r for r in results if r.failure]
        _log(f"train: {g}: {len(results) - len(failed)} of {len(results)} models ok "
             f"({time.perf_counter() - t:.1f} s)")
        for r in failed:
            _log(f"train: {g}/m{r.index}: {r.failure}")


def cmd_predict(args, cfg):
    ckpt = load_checkpoint(args.checkpoint)
    manifest = gridio.read_manifest(os.path.join(args.workdir, "manifest.tsv"))
    recs = [r for r in manifest.records if r.start_timestamp == args.sample]
    if not recs:
        raise DataError(f"no sequence starts at {args.sample}")
    rec = recs[0]
    n = ckpt.config.in_frames
    rain = [gridio.read_frame(gridio.resolve(p, args.workdir)) for p in rec.rain_paths[:n]]
    eth = None
    if ckpt.config.in_channels == 2:
        eth = [gridio.read_frame(gridio.resolve(p, args.workdir)) for p in rec.eth_paths[:n]]
    out = args.out or os.path.join(args.workdir, "predictions", str(args.sample))
    os.makedirs(out, exist_ok=True)
    for f in predict_frames(ckpt.model(), rain, eth):
        gridio.write_frame(f, os.path.join(out, f"{f.timestamp}_rain.rfgd"))
    _log(f"predict: 18 frames written to {out}")


def cmd_baseline(args, cfg):
    plan = plan_of(cfg, args.workdir, args.jobs)
    data = experiment.load_data(plan, "test")
    experiment.evaluate_baselines(plan, data)
    experiment.write_observations(plan, data)
    _log("baseline: persistence and advection evaluated")


def cmd_verify(args, cfg):
    plan = plan_of(cfg, args.workdir, args.jobs)
    data = experiment.load_data(plan, "test")
    for g in plan.groups:
        experiment.evaluate_group(plan, g, data)
    experiment.evaluate_baselines(plan, data)
    experiment.write_observations(plan, data)
    _log(f"verify: {len(plan.groups)} groups and {len(experiment.BASELINES)} baselines on "
         f"{len(data.starts)} test sequences")


def cmd_compare(args, cfg):
    plan = plan_of(cfg, args.workdir, args.jobs)
    report = experiment.compare_groups(plan)
    cases = experiment.pick_cases(plan)
    data = experiment.load_data(plan, "test") if cases else None
    for s in cases:
        experiment.render_case(plan, s, data)
    _log(f"compare: report written to {report}")
    sys.stdout.write(open(os.path.join(report, "summary.txt")).read())


def cmd_render(args, cfg):
    plan = plan_of(cfg, args.workdir, args.jobs)
    samples = [args.sample] if args.sample is not None else experiment.pick_cases(plan)
    data = experiment.load_data(plan, "test")
    for s in samples:
        chosen = experiment.render_case(plan, s, data)
        _log(f"render: case {s}: best models {chosen}")


def cmd_gradcheck(args, cfg):
    s = cfg.section("gradcheck")
    mc = ModelConfig(in_channels=s["in_channels"], levels=s["levels"], base_channels=s["base_channels"],
                     rows=s["rows"], cols=s["cols"], out_frames=s["out_frames"])
    t = time.perf_counter()
    report = gradcheck_unet(mc, seed=s["seed"], eps=s["eps"], tolerance=s["tolerance"])
    print(report.format().splitlines()[0] + f" [{time.perf_counter() - t:.1f} s]")
    print(f"max relative error: {report.max_rel_error:.6e}")
    if not report.passed:
        print(report.format())
        raise NumericFailure(f"gradient check failed: {report.max_rel_error:.3e} >= {report.tolerance:.1e}")


COMMANDS = {
    "synth-gen": (cmd_synth_gen, "write synthetic raw frames, index and manifest to raw/"),
    "preprocess": (cmd_preprocess, "raw/ -> frames/: Z-R conversion, clutter removal, crop, weights"),
    "sample": (cmd_sample, "frames/ -> manifest.tsv: top-K starts, 22-frame sequences, folds"),
    "train": (cmd_train, "manifest.tsv -> models/<group>/m<i>.ckpt"),
    "predict": (cmd_predict, "nowcast one sequence with one checkpoint"),
    "baseline": (cmd_baseline, "score persistence and advection on the test set -> eval/baseline/"),
    "verify": (cmd_verify, "score every model and baseline on the test set -> eval/"),
    "compare": (cmd_compare, "eval/ -> report/ (curves, diffs, fss, cases, summary.txt)"),
    "render": (cmd_render, "render case panels for a test sequence -> report/cases/"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the U-Net gradients"),
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="config file (key = value lines)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--workdir", default=".", help="working directory (default: .)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for parallel stages")

    p = _Parser(
        prog="ethcast",
        description="Radar nowcasting with an echo-top-height channel: data, training, verification.",
        epilog="workdir layout: raw/, frames/, manifest.tsv, models/, eval/, report/\n\n" + keys_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "train":
            sp.add_argument("--group", choices=sorted(experiment.GROUPS), help="train one group only")
        if name == "predict":
            sp.add_argument("--checkpoint", required=True, help="checkpoint file")
            sp.add_argument("--sample", type=int, required=True, help="sequence start (unix seconds)")
            sp.add_argument("--out", help="output directory (default: predictions/<sample>)")
        if name == "render":
            sp.add_argument("--sample", type=int, help="test sequence start (default: pick_cases)")
    return p


def _origin(exc):
    """Module where the exception was raised, for message prefixes."""
    tb = exc.__traceback__
    name = "ethcast"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("ethcast"):
            name = mod
        tb = tb.tb_next
    return name


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        if args.jobs < 1:
            raise UsageError("ethcast: --jobs must be >= 1")
        cfg = load_config(args.config, args.set)
        COMMANDS[args.command][0](args, cfg)
        return EXIT_OK
    except UsageError as e:
        print(f"{e}", file=sys.stderr)
        return EXIT_USAGE
    except EthcastError as e:
        print(f"{_origin(e)}: error: {e}", file=sys.stderr)
        return e.exit_code
    except (FloatingPointError, ArithmeticError) as e:
        print(f"{_origin(e)}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"{_origin(e)}: I/O error: {e}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as e:  # --help
        return e.code if isinstance(e.code, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
