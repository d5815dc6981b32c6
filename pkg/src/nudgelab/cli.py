"""Command-line entry points: run, report, snapshot, restore."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .experiment import (
    Experiment,
    LiftReport,
    SnapshotError,
    load_experiment_config,
    restore_state,
    snapshot_state,
    write_artifacts,
)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, sim=replace(cfg.sim, seed=args.seed))
    if args.resume:
        exp = Experiment.resume(cfg, args.resume)
        print(f"resumed at cycle {exp.cycle}")
    else:
        exp = Experiment(cfg)
    exp.run(up_to=args.cycles)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if exp.cycle < cfg.n_cycles:
        state_path = out / "run_state.json"
        exp.save_run_state(state_path)
        print(f"paused after cycle {exp.cycle}; state written to {state_path}")
        return 0
    result = exp.result()
    write_artifacts(result, out)
    print(f"completed {cfg.n_cycles} cycles: {result.n_messages} messages, "
          f"{result.n_skipped} skipped sends")
    print(result.report.format_table())
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    audit = Path(args.audit)
    report_path = audit / "lift_report.json"
    if not report_path.exists():
        print(f"no lift_report.json in {audit}", file=sys.stderr)
        return 1
    report = LiftReport.from_dict(json.loads(report_path.read_text(encoding="utf-8")))
    for name in ("decisions.jsonl", "estimates.jsonl"):
        path = audit / name
        if path.exists():
            with path.open(encoding="utf-8") as fh:
                count = sum(1 for _ in fh)
            print(f"{name}: {count} entries")
    print(report.format_table())
    return 0


def _cmd_snapshot(args: argparse.Namespace) -> int:
    source = Path(args.audit) / "posteriors.json"
    store = restore_state(source)
    snapshot_state(store, args.state)
    print(f"snapshotted {len(store)} posterior entries to {args.state}")
    return 0


def _cmd_restore(args: argparse.Namespace) -> int:
    store = restore_state(args.state)
    print(f"restored posterior store: {len(store)} entries, "
          f"default prior Beta({store.default_prior.alpha:g}, {store.default_prior.beta:g})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nudgelab",
        description="Agentic message personalisation: simulation and experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True, help="experiment config JSON")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", required=True, help="output directory for audit artefacts")
    run.add_argument("--cycles", type=int, default=None,
                     help="pause after this many cycles (writes run_state.json)")
    run.add_argument("--resume", default=None, help="resume from a run_state.json")
    run.set_defaults(func=_cmd_run)

    report = sub.add_parser("report", help="re-render the lift report from an audit directory")
    report.add_argument("--audit", required=True, help="directory written by `run`")
    report.set_defaults(func=_cmd_report)

    snapshot = sub.add_parser("snapshot", help="extract the posterior store from a run")
    snapshot.add_argument("--audit", required=True, help="directory written by `run`")
    snapshot.add_argument("--state", required=True, help="destination snapshot path")
    snapshot.set_defaults(func=_cmd_snapshot)

    restore = sub.add_parser("restore", help="validate and summarise a posterior snapshot")
    restore.add_argument("--state", required=True, help="snapshot path")
    restore.set_defaults(func=_cmd_restore)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SnapshotError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
