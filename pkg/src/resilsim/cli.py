"""Command-line entry points: run, characterize, sweep, report.

All outputs are CSV (plus a human-readable report text); identical configs
and seeds produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from . import workload as wl
from .config import ConfigError, RunConfig, parse_config, render
from .faults import FaultPlan, write_fault_trace
from .memsim import SimReport
from .recovery import RecoveryPolicy


def _load_config(args) -> RunConfig:
    text = Path(args.config).read_text() if args.config else ""
    cfg = parse_config(text)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, fault_seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    return cfg


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _execute_run(cfg: RunConfig):
    model = cfg.make_model()
    schedule = cfg.make_schedule(model.block_names)
    plan = FaultPlan.random(ber=0.0, seed=cfg.fault_seed)  # per-op BER from schedule
    traj, report = wl.run_denoise(
        model, plan, schedule, cfg.policy,
        interval=cfg.checkpoint.interval, theta=cfg.abft.theta,
        mem=cfg.make_mem(), arrays=cfg.array.count, array_size=cfg.array.size,
        layout_kind=cfg.memory.layout,
        abft_overhead_fraction=cfg.abft.overhead_fraction,
        checkpoint_embedding=cfg.checkpoint.include_embedding)
    clean = wl.clean_trajectory(model)
    deviation = wl.relative_deviation(traj.final_state, clean.final_state)
    return traj, report, deviation


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj, report, deviation = _execute_run(cfg)

    report.write_csv(out / "report.csv")
    (out / "report.txt").write_text(
        report.pretty() + f"\nfinal_relative_deviation  {deviation!r}\n")
    write_fault_trace(out / "fault_trace.csv", traj.fault_trace)
    _write_csv(out / "detection_trace.csv",
               ["step", "block", "tile_row", "tile_col", "flagged_rows", "flagged_cols"],
               traj.detection_trace)
    _write_csv(out / "recovery_trace.csv",
               ["step", "block", "policy", "masked_count", "rows_activated", "bytes_read"],
               traj.recovery_trace)
    print(f"run complete: deviation={deviation:.6e}, "
          f"energy={report.total_energy_j:.6e} J, latency={report.latency_s:.6e} s")
    print(f"outputs written to {out}")
    return 0


def _characterize_rows(mode: str, results: dict, trials: int):
    return [(mode, key, trials, repr(mean), repr(std))
            for key, (mean, std) in results.items()]


def cmd_characterize(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.make_model()
    trials = args.trials
    header = ["mode", "key", "trials", "mean_deviation", "stddev"]

    if args.mode == "bit":
        results = wl.characterize_bits(model, range(32), trials, seed=cfg.fault_seed)
        _write_csv(out / "characterize_bit.csv", header,
                   _characterize_rows("bit", results, trials))
    elif args.mode == "step":
        results = wl.characterize_steps(model, range(model.steps), trials,
                                        seed=cfg.fault_seed)
        _write_csv(out / "characterize_step.csv", header,
                   _characterize_rows("step", results, trials))
    elif args.mode == "block":
        results = wl.characterize_blocks(model, model.block_names, trials,
                                         seed=cfg.fault_seed)
        _write_csv(out / "characterize_block.csv", header,
                   _characterize_rows("block", results, trials))
    elif args.mode == "selfcorrect":
        trace = wl.self_correction_trace(model, inject_step=model.steps // 2,
                                         bit=args.bit)
        _write_csv(out / "selfcorrect_trace.csv", ["step", "deviation"],
                   [(t + 1, repr(float(d))) for t, d in enumerate(trace[1:])])
    else:  # argparse choices make this unreachable
        print(f"unknown mode {args.mode!r}", file=sys.stderr)
        return 2
    print(f"characterization ({args.mode}) written to {out}")
    return 0


def _apply_axis(cfg: RunConfig, axis: str, value: float) -> RunConfig:
    if axis == "ber":
        name = cfg.dvfs.aggressive
        points = dict(cfg.dvfs.points)
        points[name] = dataclasses.replace(points[name], ber=float(value))
        return dataclasses.replace(cfg, dvfs=dataclasses.replace(cfg.dvfs, points=points))
    if axis == "theta":
        return dataclasses.replace(cfg, abft=dataclasses.replace(
            cfg.abft, theta_bit=int(value)))
    if axis == "interval":
        return dataclasses.replace(cfg, checkpoint=dataclasses.replace(
            cfg.checkpoint, interval=int(value)))
    if axis == "array_size":
        return dataclasses.replace(cfg, array=dataclasses.replace(
            cfg.array, size=int(value)))
    raise ValueError(f"unknown sweep axis {axis!r}")


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    if not values:
        print("sweep requires a non-empty value list", file=sys.stderr)
        return 2
    rows = []
    for value in values:
        run_cfg = _apply_axis(cfg, args.axis, value)
        _, report, deviation = _execute_run(run_cfg)
        rows.append((args.axis, repr(value), repr(deviation),
                     repr(report.total_energy_j), repr(report.latency_s),
                     report.bytes_checkpoint, report.bytes_recovery,
                     report.rows_activated, report.masked_elements))
    _write_csv(out / f"sweep_{args.axis}.csv",
               ["axis", "value", "mean_deviation", "total_energy_j", "latency_s",
                "bytes_checkpoint", "bytes_recovery", "rows_activated",
                "masked_elements"],
               rows)
    print(f"sweep over {args.axis} written to {out}")
    return 0


def cmd_report(args) -> int:
    with open(args.file, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        pairs = list(reader)
    width = max(len(name) for name, _ in pairs)
    for name, value in pairs:
        print(f"{name:<{width}}  {value}")
    return 0


def cmd_show_config(args) -> int:
    cfg = _load_config(args)
    sys.stdout.write(render(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resilsim",
        description="Deterministic resilience/DVFS simulator for systolic GEMM workloads")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file (defaults apply if omitted)")
        p.add_argument("--seed", type=int, help="override the fault seed")
        p.add_argument("--out", help="override the output directory")

    p_run = sub.add_parser("run", help="one protected denoising run with traces")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_char = sub.add_parser("characterize", help="resilience characterization sweeps")
    common(p_char)
    p_char.add_argument("--mode", required=True,
                        choices=["bit", "step", "block", "selfcorrect"])
    p_char.add_argument("--trials", type=int, default=100)
    p_char.add_argument("--bit", type=int, default=4,
                        help="bit position for selfcorrect mode")
    p_char.set_defaults(func=cmd_characterize)

    p_sweep = sub.add_parser("sweep", help="one run per value of a config axis")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True,
                         choices=["ber", "theta", "interval", "array_size"])
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated value list")
    p_sweep.set_defaults(func=cmd_sweep)

    p_report = sub.add_parser("report", help="pretty-print a report CSV")
    p_report.add_argument("file")
    p_report.set_defaults(func=cmd_report)

    p_show = sub.add_parser("show-config", help="print the fully-defaulted config")
    common(p_show)
    p_show.set_defaults(func=cmd_show_config)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
