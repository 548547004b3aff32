"""Command line front end: run experiments, sweep settings, check gradients.

Subcommands
    run             one experiment from a config file, report to a directory
    sweep           repeat the experiment across one axis, collect sweep.csv
    gradcheck       finite-difference audit of the backprop kernel
    inspect-report  print the summary of a written report

Exit codes: 0 success, 1 runtime/stage failure, 2 config or usage errors.
Progress lines go to stderr; results land in files and on stdout.
"""
from __future__ import annotations

import argparse
import sys
from multiprocessing import get_context
from pathlib import Path

from .align import AlignConfig
from .config import ConfigError, load_config, parse_overrides
from .continuum import StageError, fit_pipeline, report_pipeline
from .dataio import read_report_summary, sig6, write_report
from .gradcheck import run_gradcheck

SWEEP_AXES = {
    "langevin_steps": "align.l_steps",
    "ebm_iterations": "ebm.iterations",
    "ebm_hidden_dims": "ebm.hidden_dims",
    "align_lr": "align.learning_rate",
}


def _progress(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def _stage_hook(name: str) -> None:
    _progress(f"[stage] {name}")


def _load(args):
    overrides = parse_overrides(args.set or [])
    cfg = load_config(args.config, overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _print_accuracies(accuracies: dict) -> None:
    triplet = ", ".join(
        f"{name}={sig6(accuracies[name])}"
        for name in ("pre_drift", "drifted", "aligned")
    )
    print(triplet)


def cmd_run(args) -> int:
    cfg = _load(args)
    state = fit_pipeline(cfg, stage_hook=_stage_hook)
    report = report_pipeline(state, stage_hook=_stage_hook)
    out_dir = Path(args.out)
    files = write_report(report, out_dir)
    _print_accuracies(report.accuracies)
    _progress(f"report written to {out_dir} ({len(files)} files)")
    return 0


def _sweep_point(cfg, axis_key: str, raw_value: str, out_dir: Path):
    """One sweep evaluation; returns (raw_value, drifted, aligned)."""
    point_cfg = cfg
    if axis_key.startswith("align."):
        state = fit_pipeline(point_cfg)
        align_kwargs = {
            "l_steps": point_cfg.align.l_steps,
            "learning_rate": point_cfg.align.learning_rate,
            "use_ema": point_cfg.align.use_ema,
            "space": point_cfg.align.space,
        }
        field = axis_key.split(".", 1)[1]
        align_kwargs[field] = (
            int(raw_value) if field == "l_steps" else float(raw_value)
        )
        report = report_pipeline(state, align_cfg=AlignConfig(**align_kwargs))
    else:
        from .config import build_config

        flat = {k: _flat_str(v) for k, v in point_cfg.flat().items()}
        flat[axis_key] = raw_value
        point_cfg = build_config(flat)
        state = fit_pipeline(point_cfg)
        report = report_pipeline(state)
    write_report(report, out_dir)
    acc = report.accuracies
    return raw_value, acc["drifted"], acc["aligned"]


def _flat_str(value) -> str:
    if isinstance(value, list):
        return "-".join(str(int(v)) for v in value)
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _sweep_star(packed):
    return _sweep_point(*packed)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    axis_key = SWEEP_AXES[args.axis]
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = [
        (cfg, axis_key, value, out_root / f"point-{value}")
        for value in values
    ]
    if args.parallel > 1:
        with get_context("spawn").Pool(processes=args.parallel) as pool:
            rows = pool.map(_sweep_star, jobs)
    else:
        rows = []
        for job in jobs:
            _progress(f"[sweep] {args.axis} = {job[2]}")
            rows.append(_sweep_point(*job))
    lines = ["value,drifted,aligned"]
    lines += [f"{value},{sig6(dr)},{sig6(al)}" for value, dr, al in rows]
    csv_path = out_root / "sweep.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    print(csv_path)
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(seed=args.seed)
    print(
        f"probes={report.probes} max_rel_error={report.max_rel_error:.3e} "
        f"tolerance={report.tolerance:.0e} kink_resamples={report.kink_resamples}"
    )
    return 0 if report.passed else 1


def cmd_inspect_report(args) -> int:
    summary = read_report_summary(args.report)
    acc = summary["accuracies"]
    print(f"seed={summary['seed']}")
    _print_accuracies(acc)
    for name, value in sorted(summary["energy"].items()):
        print(f"energy.{name}={sig6(value)}")
    for name, rel in sorted(summary["files"].items()):
        print(f"file.{name}={rel}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eli",
        description="Energy-based latent alignment experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("--config", required=True, help="path to a .cfg file")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any config key (repeatable)")
    run.add_argument("--out", default="report", help="report output directory")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run the experiment across one axis")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sweep.add_argument("--values", required=True,
                       help="comma-separated axis values, e.g. 5,10,30")
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--set", action="append", metavar="KEY=VALUE")
    sweep.add_argument("--out", default="sweep", help="output directory")
    sweep.add_argument("--parallel", type=int, default=1,
                       help="run up to N sweep points concurrently")
    sweep.set_defaults(func=cmd_sweep)

    grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    grad.add_argument("--seed", type=int, default=0)
    grad.set_defaults(func=cmd_gradcheck)

    inspect = sub.add_parser("inspect-report", help="summarize a report directory")
    inspect.add_argument("report", help="report directory or report.json path")
    inspect.set_defaults(func=cmd_inspect_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _progress(f"config error: {exc}")
        return 2
    except StageError as exc:
        _progress(f"error in stage {exc.stage}: {exc.cause}")
        return 1
    except (OSError, ValueError) as exc:
        _progress(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
