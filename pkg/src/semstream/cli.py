"""Command-line front end.

Subcommands: pretrain, run, sweep, compare, calibrate, features. Common
flags are `--scenario --seed --out --mode`. The output directory defaults
to ./out and can be overridden by the SEMSTREAM_OUT environment variable
when --out is not given. Any error exits nonzero after removing the
outputs this invocation had created.
"""

from __future__ import annotations

import argparse
import csv
import os
import shutil
import sys
from dataclasses import replace

from .baselines import (calibrate_threshold, run_dds_baseline, run_oracle,
                        run_reducto_baseline, run_uniform_baseline)
from .config import RUN_MODES, Scenario, load_scenario
from .errors import ConfigError, FormatError, ShapeError, StateError, \
    TrainingError
from .pipeline import run_ltc
from .scene import generate_batch
from .student import StudentNet
from .temporal import feature_compare
from .training import evaluate_student, labeled_regions_from_scene, pretrain
from . import report

_USER_ERRORS = (ConfigError, FormatError, ShapeError, StateError,
                TrainingError, OSError, ValueError)

_LTC_MODES = ("ltc", "ltc-spatial", "ltc-temporal")


class _Outputs:
    """Tracks artifacts created by this invocation for failure cleanup."""

    def __init__(self):
        self._entries = []

    def file(self, path):
        self._entries.append(("file", path))
        return path

    def tree(self, path):
        created = not os.path.isdir(path)
        os.makedirs(path, exist_ok=True)
        if created:
            self._entries.append(("tree", path))
        return path

    def cleanup(self):
        for kind, path in reversed(self._entries):
            try:
                if kind == "file" and os.path.isfile(path):
                    os.remove(path)
                elif kind == "tree" and os.path.isdir(path):
                    shutil.rmtree(path)
            except OSError:
                pass


def _out_dir(args):
    if args.out is not None:
        return args.out
    return os.environ.get("SEMSTREAM_OUT", "out")


def _load(args) -> Scenario:
    scenario = load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        seed = args.seed
        scene = replace(scenario.scene, seed=seed)
        pretrain_scenes = [
            (replace(cfg, seed=seed + 1000 + i), frames, stride)
            for i, (cfg, frames, stride) in enumerate(scenario.pretrain_scenes)]
        scenario = replace(scenario,
                           scene=scene,
                           pretrain_scenes=pretrain_scenes,
                           train=replace(scenario.train, seed=seed),
                           pipeline=replace(scenario.pipeline, seed=seed))
    if getattr(args, "mode", None):
        if args.mode not in RUN_MODES:
            raise ConfigError(f"unknown mode {args.mode!r}")
        scenario = replace(scenario, mode=args.mode)
    return scenario


def _load_student(path) -> StudentNet:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    return StudentNet.load_checkpoint(raw)


def _resolve_th(scenario: Scenario, student: StudentNet):
    """Numeric threshold for the run, calibrating when the file said auto."""
    if not scenario.th_auto:
        return scenario.pipeline.th, False
    th = calibrate_threshold(scenario.scene, student, scenario.pipeline,
                             batches=2, f1_target=scenario.f1_target)
    return th, True


def _run_mode(scenario: Scenario, mode, student, trace_dir):
    scene, net, pcfg = scenario.scene, scenario.network, scenario.pipeline
    batches = scenario.batches
    if mode in _LTC_MODES:
        if student is None:
            raise ConfigError(f"mode {mode!r} needs --checkpoint")
        th, calibrated = _resolve_th(scenario, student)
        pcfg = replace(pcfg, th=th)
        if calibrated:
            print(f"calibrated th = {th:.6g}")
        return run_ltc(scene, student, net, pcfg, batches,
                       use_temporal=(mode != "ltc-spatial"),
                       use_spatial=(mode != "ltc-temporal"),
                       trace_dir=trace_dir, mode_name=mode)
    if mode == "dds":
        return run_dds_baseline(scene, net, pcfg, batches,
                                low_r=scenario.low_r, trace_dir=trace_dir)
    if mode == "reducto":
        return run_reducto_baseline(scene, net, pcfg, batches,
                                    profile_period=scenario.profile_period,
                                    f1_target=scenario.f1_target,
                                    trace_dir=trace_dir)
    if mode == "uniform":
        return run_uniform_baseline(scene, net, pcfg, batches,
                                    r_uniform=scenario.r_uniform,
                                    trace_dir=trace_dir)
    if mode == "oracle":
        return run_oracle(scene, net, pcfg, batches, trace_dir=trace_dir)
    raise ConfigError(f"unknown mode {mode!r}")


def cmd_pretrain(args, outputs: _Outputs):
    scenario = _load(args)
    if not scenario.pretrain_scenes:
        raise ConfigError(f"{scenario.path}: no [pretrain:*] sections")
    out = outputs.tree(_out_dir(args))
    student = StudentNet(seed=scenario.train.seed,
                         conv_channels=scenario.conv_channels)
    student, trace = pretrain(student, scenario.pretrain_scenes,
                              scenario.train,
                              overlap_mode=scenario.pipeline.overlap_mode)
    ck_path = outputs.file(os.path.join(out, args.checkpoint))
    with open(ck_path, "wb") as fh:
        fh.write(student.save_checkpoint())
    report.write_loss_csv(
        trace, outputs.file(os.path.join(out, "pretrain_loss.csv")))
    report.loss_curve_figure(
        trace, outputs.file(os.path.join(out, "pretrain_loss.svg")))

    # Held-out check: same configuration, previously unseen seed.
    held_cfg = replace(scenario.scene, seed=scenario.scene.seed + 9999,
                       drift_schedule=())
    regions, labels = labeled_regions_from_scene(
        held_cfg, frame_count=4, stride=7,
        overlap_mode=scenario.pipeline.overlap_mode)
    accuracy, recall = evaluate_student(student, regions, labels)
    print(f"checkpoint {ck_path} ({student.param_counts()[2]} params)")
    print(f"held-out accuracy {accuracy:.4f} recall {recall:.4f}")
    return 0


def cmd_run(args, outputs: _Outputs):
    scenario = _load(args)
    mode = scenario.mode
    student = _load_student(args.checkpoint) \
        if mode in _LTC_MODES and args.checkpoint else None
    out = outputs.tree(_out_dir(args))
    trace_dir = outputs.tree(os.path.join(out, f"{mode}_trace"))
    metrics = _run_mode(scenario, mode, student, trace_dir)
    csv_path = outputs.file(os.path.join(out, f"{mode}_metrics.csv"))
    report.write_metrics_csv(metrics, csv_path)
    if "region_fraction" in metrics.extras:
        report.cdf_figure(
            metrics.extras["region_fraction"],
            outputs.file(os.path.join(out, f"{mode}_region_fraction.svg")))
    summary = metrics.summary()
    print(f"{mode}: micro_f1 {summary['micro_f1']:.4f} "
          f"nbw {summary['normalized_bandwidth']:.4f} "
          f"mean_delay {summary['mean_delay']:.3f}s "
          f"filtered {summary['filtered_fraction']:.3f}")
    print(f"metrics: {csv_path}")
    return 0


_SWEEP_PARAMS = ("th", "r", "L", "conv_layers")


def _parse_sweep_values(param, raw_values):
    values = []
    for token in raw_values:
        if param == "th":
            values.append(float(token))
        elif param in ("r", "L"):
            values.append(int(token))
        else:
            values.append(tuple(int(c) for c in token.split("x")))
    if len(values) < 2:
        raise ConfigError("sweep needs at least two values")
    return values


def _sweep_instance(scenario: Scenario, param, value):
    if param == "th":
        return replace(scenario, pipeline=replace(scenario.pipeline, th=value),
                       th_auto=False)
    if param == "r":
        return replace(scenario, pipeline=replace(scenario.pipeline, r=value))
    if param == "L":
        scene = replace(scenario.scene, L=value)
        scene.validate()
        pretrain_scenes = [(replace(cfg, L=value), f, s)
                           for cfg, f, s in scenario.pretrain_scenes]
        return replace(scenario, scene=scene, pretrain_scenes=pretrain_scenes)
    return replace(scenario, conv_channels=value)


def cmd_sweep(args, outputs: _Outputs):
    scenario = _load(args)
    param = args.param
    values = _parse_sweep_values(param, args.values)
    mode = scenario.mode if scenario.mode in _LTC_MODES else "ltc"
    base_student = None
    if param != "conv_layers":
        if not args.checkpoint:
            raise ConfigError("sweep over th/r/L needs --checkpoint")
        base_student = _load_student(args.checkpoint)
    out = outputs.tree(_out_dir(args))

    rows = []
    for value in values:
        inst = _sweep_instance(scenario, param, value)
        if param == "conv_layers":
            if not inst.pretrain_scenes:
                raise ConfigError("conv_layers sweep needs [pretrain:*] "
                                  "sections to fit each variant")
            student = StudentNet(seed=inst.train.seed, conv_channels=value)
            student, _ = pretrain(student, inst.pretrain_scenes, inst.train,
                                  overlap_mode=inst.pipeline.overlap_mode)
        else:
            student = base_student.clone()
        metrics = _run_mode(inst, mode, student, trace_dir=None)
        row = metrics.summary()
        row["value"] = "x".join(map(str, value)) \
            if isinstance(value, tuple) else value
        if param == "L":
            per_region = inst.network.source_s_per_region
            row["fps_estimate"] = 1.0 / (value * value * per_region)
            print(f"L={value}: student estimate "
                  f"{row['fps_estimate']:.1f} frames/s")
        rows.append(row)

    csv_path = outputs.file(os.path.join(out, f"sweep_{param}.csv"))
    fields = ["param", "value"] + list(report.SUMMARY_FIELDS)
    if param == "L":
        fields.append("fps_estimate")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            record = dict(row, param=param)
            writer.writerow([report.fmt_value(record.get(k, "")) for k in fields])
    report.sweep_figure(
        param, [r["value"] for r in rows], rows,
        outputs.file(os.path.join(out, f"sweep_{param}_bandwidth_f1.svg")))
    report.delay_bars_figure(
        [dict(r, mode=f"{param}={r['value']}") for r in rows],
        outputs.file(os.path.join(out, f"sweep_{param}_delay.svg")),
        title=f"Delay across {param}")
    print(f"sweep CSV: {csv_path}")
    return 0


def cmd_compare(args, outputs: _Outputs):
    scenario = _load(args)
    modes = args.modes
    for mode in modes:
        if mode not in RUN_MODES:
            raise ConfigError(f"unknown mode {mode!r}")
    if len(modes) != len(set(modes)):
        raise ConfigError("each mode may appear only once")
    student = _load_student(args.checkpoint) if args.checkpoint else None
    out = outputs.tree(_out_dir(args))
    rows = []
    for mode in modes:
        metrics = _run_mode(scenario, mode,
                            student.clone() if student else None,
                            trace_dir=None)
        rows.append(metrics.summary())
        print(f"{mode}: micro_f1 {rows[-1]['micro_f1']:.4f} "
              f"nbw {rows[-1]['normalized_bandwidth']:.4f} "
              f"mean_delay {rows[-1]['mean_delay']:.3f}s")
    csv_path = outputs.file(os.path.join(out, "compare.csv"))
    report.write_compare_csv(rows, csv_path)
    report.bandwidth_f1_figure(
        rows, outputs.file(os.path.join(out, "compare_bandwidth_f1.svg")))
    report.delay_bars_figure(
        rows, outputs.file(os.path.join(out, "compare_delay.svg")))
    print(f"compare CSV: {csv_path}")
    return 0


def cmd_calibrate(args, outputs: _Outputs):
    scenario = _load(args)
    if not args.checkpoint:
        raise ConfigError("calibrate needs --checkpoint")
    student = _load_student(args.checkpoint)
    th = calibrate_threshold(scenario.scene, student, scenario.pipeline,
                             batches=args.batches,
                             f1_target=scenario.f1_target)
    print(f"calibrated th = {th:.6g}")
    return 0


def cmd_features(args, outputs: _Outputs):
    """Consecutive-frame difference series for each comparison basis."""
    scenario = _load(args)
    if not args.checkpoint:
        raise ConfigError("features needs --checkpoint")
    student = _load_student(args.checkpoint)
    pairs = generate_batch(scenario.scene, 0, scenario.pipeline.n_frames)
    series = feature_compare([f for f, _ in pairs], student)
    out = outputs.tree(_out_dir(args))
    csv_path = outputs.file(os.path.join(out, "feature_compare.csv"))
    report.write_difference_csv(series, csv_path)
    report.difference_series_figure(
        series, outputs.file(os.path.join(out, "feature_compare.svg")))
    print(f"difference series: {csv_path}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="semstream",
        description="Desk-scale semantic video streaming simulator.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True,
                        help="scenario file path")
    common.add_argument("--seed", type=int, default=None,
                        help="override every seed in the scenario")
    common.add_argument("--out", default=None,
                        help="output directory (default $SEMSTREAM_OUT or ./out)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", parents=[common],
                       help="fit the student on historical scenes")
    p.add_argument("--checkpoint", default="student.ck",
                   help="checkpoint file name inside the output directory")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", parents=[common],
                       help="run one mode and write metrics + message trace")
    p.add_argument("--mode", default=None, choices=RUN_MODES,
                   help="override the scenario's mode")
    p.add_argument("--checkpoint", default=None,
                   help="student checkpoint (required for ltc modes)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common],
                       help="run once per parameter value")
    p.add_argument("--param", required=True, choices=_SWEEP_PARAMS)
    p.add_argument("--values", required=True, nargs="+",
                   help="values; conv_layers entries like 16x32")
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", parents=[common],
                       help="run several modes on the same scenario")
    p.add_argument("--modes", required=True, nargs="+")
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("calibrate", parents=[common],
                       help="fit the temporal threshold to the F1 target")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--batches", type=int, default=2)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("features", parents=[common],
                       help="export encoder / pixel / edge difference series")
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_features)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    outputs = _Outputs()
    try:
        return args.func(args, outputs)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        outputs.cleanup()
        return 1


if __name__ == "__main__":
    sys.exit(main())
