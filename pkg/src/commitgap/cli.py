"""``commitgap`` command line: run, replay, recover, report, vacuum."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Sequence

from . import faultproc, formats, safewriter, stats
from .clock import VirtualClock
from .formats import TableFormat
from .harness import matrix, report
from .harness.datasets import SCALES, generate_dataset, get_spec
from .safewriter import SafeWriterConfig
from .store import ObjectStore

ENV_VARS = (
    "LAMBDA_TIMEOUT_MS",
    "SW_WARN_BEFORE_MS",
    "SW_CHECKPOINT_BUCKET",
    "SW_AUDIT_LOG",
    "KILL_AFTER_PHASE",
    "USE_SAFE_WRITER",
)
REPLAY_TABLE = "warehouse/replay"


class ConfigError(Exception):
    pass


def _env(args) -> Mapping[str, str]:
    return {} if args.ignore_env else {k: os.environ[k] for k in ENV_VARS if k in os.environ}


def _sw_config(args, env: Mapping[str, str]) -> SafeWriterConfig:
    try:
        return SafeWriterConfig.from_env(
            env,
            timeout_ms=args.timeout_ms,
            warn_before_ms=args.warn_before_ms,
            checkpoint_bucket=args.checkpoint_bucket,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=matrix.DEFAULT_SEED)
    p.add_argument("--ignore-env", action="store_true", help="let flags win over environment variables")
    p.add_argument("--timeout-ms", type=int, default=faultproc.DEFAULT_TIMEOUT_MS)
    p.add_argument("--warn-before-ms", type=int, default=safewriter.DEFAULT_WARN_BEFORE_MS)
    p.add_argument("--checkpoint-bucket", default="checkpoints")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="commitgap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the experiment matrix or a slice of it")
    _add_common(p)
    p.add_argument("--all", action="store_true", help="full design (the default when no filter is given)")
    p.add_argument("--part", choices=("A", "B"))
    p.add_argument("--format", dest="fmt", choices=[f.value for f in TableFormat])
    p.add_argument("--scenario", choices=matrix.SCENARIOS)
    p.add_argument("--scale", choices=tuple(SCALES))
    p.add_argument("--runs", type=int, help="override the run count of every selected row")
    p.add_argument("--noise-cv", type=float, default=matrix.DEFAULT_NOISE_CV)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out", default="results/runs.jsonl")
    p.add_argument("--summary", help="also write the JSON summary here")

    p = sub.add_parser("replay", help="run one job and print its trace")
    _add_common(p)
    p.add_argument("--format", dest="fmt", choices=[f.value for f in TableFormat], default="log_append")
    p.add_argument("--scale", choices=tuple(SCALES), default="22k")
    p.add_argument("--kill-phase", choices=("", *faultproc.PHASES), default="")
    p.add_argument("--safewriter", action="store_true")
    p.add_argument("--kill-at", type=int, help="kill at this offset (ms) instead of a phase hook")
    p.add_argument("--store-dir", help="dump the final store here")

    p = sub.add_parser("recover", help="close stale in_progress checkpoints")
    _add_common(p)
    p.add_argument("--store-dir", required=True)
    p.add_argument("--table", default=REPLAY_TABLE)

    p = sub.add_parser("report", help="tables and figure data from a JSONL file")
    p.add_argument("jsonl")
    p.add_argument("--json", help="write the machine-readable summary here")
    p.add_argument("--csv", help="write the outcome-distribution figure data here")
    p.add_argument("--exposure", action="store_true", help="add the exposure table")
    p.add_argument("--delta", type=int, default=10_000, help="kill window width (ms) for --exposure")

    p = sub.add_parser("vacuum", help="list or delete orphaned data files")
    p.add_argument("--store-dir", required=True)
    p.add_argument("--table", default=REPLAY_TABLE)
    p.add_argument("--dry-run", action="store_true")

    p = sub.add_parser("dataset", help="write a synthetic dataset as semicolon CSV")
    p.add_argument("--scale", choices=tuple(SCALES), default="22k")
    p.add_argument("--seed", type=int, default=matrix.DEFAULT_SEED)
    p.add_argument("--out", required=True)
    return parser


def cmd_run(args, out=None) -> int:
    out = out or sys.stdout
    env = _env(args)
    sw = _sw_config(args, env)
    filters = dict(part=args.part, fmt=args.fmt, scenario=args.scenario, scale=args.scale, runs=args.runs)
    design = matrix.select(matrix.default_design(), **filters)
    config = matrix.MatrixConfig(seed=args.seed, noise_cv=args.noise_cv, safewriter=sw, timeout_ms=sw.timeout_ms)
    result = matrix.run_matrix(design, args.seed, args.out, config=config, parallel=args.parallel)
    if args.summary:
        Path(args.summary).write_text(report.summary_json(result.records))
    print(f"{len(result.records)} records -> {args.out}", file=out)
    if result.mismatches:
        print(f"warning: {len(result.mismatches)} runs disagree with the state oracle", file=out)
    if result.records:
        print(report.render(result.records), file=out, end="")
    return 0


def cmd_replay(args, out=None) -> int:
    out = out or sys.stdout
    env = dict(_env(args))
    phase = env.get("KILL_AFTER_PHASE", args.kill_phase)
    use_sw = safewriter._truthy(env["USE_SAFE_WRITER"]) if "USE_SAFE_WRITER" in env else args.safewriter
    sw = _sw_config(args, env) if use_sw else None
    if args.kill_at is not None:
        kill = faultproc.KillSchedule.at_time(args.kill_at)
    elif phase:
        kill = faultproc.KillSchedule.after_phase(phase, stall=sw is not None)
    else:
        kill = faultproc.KillSchedule.none()

    store = ObjectStore(VirtualClock())
    formats.create_table(store, REPLAY_TABLE, args.fmt)
    v_before = formats.read_version(store, REPLAY_TABLE)
    run_id = f"replay-{args.seed}"
    plan = formats.make_plan(
        store, REPLAY_TABLE, run_id, get_spec(args.scale).partitions(args.seed),
        faultproc.default_timing_profile(args.fmt, args.scale),
    )
    timeout = sw.timeout_ms if sw else args.timeout_ms
    result = faultproc.run_job(store, plan, kill=kill, safewriter_config=sw, timeout_ms=timeout)
    trace = result.trace

    print(f"format={args.fmt} scale={args.scale} kill={phase or args.kill_at or 'none'} safewriter={bool(sw)}", file=out)
    for s in trace.steps:
        end = "-" if s.end is None else s.end
        print(f"  [{s.actor:8}] {s.start:>8} .. {end!s:>8}  {s.name:28} {s.status}", file=out)
    for t, actor, name in trace.events:
        print(f"  event {t:>8} {actor or '-':8} {name}", file=out)
    print(f"t_d={trace.t_d} t_c={trace.t_c} killed_at={trace.killed_at} cause={trace.kill_cause}", file=out)
    print(f"returncode={result.returncode} outcome={matrix.classify(result.returncode, sw is not None)}"
          + (f" error={result.error}" if result.error else ""), file=out)
    print(f"version before={v_before.value} after={formats.read_version(store, REPLAY_TABLE).value}"
          f" rows={formats.visible_row_count(store, REPLAY_TABLE)}", file=out)
    orphans = formats.find_orphans(store, REPLAY_TABLE)
    print(f"orphans ({len(orphans)}):" + "".join(f"\n  {k}" for k in orphans), file=out)
    if sw:
        doc = safewriter.load_checkpoint(store, sw.checkpoint_bucket, run_id)
        print(f"checkpoint status={doc.status if doc else 'missing'}", file=out)
    if args.store_dir:
        n = store.dump(args.store_dir)
        print(f"dumped {n} objects to {args.store_dir}", file=out)
    return 0


def cmd_recover(args, out=None) -> int:
    out = out or sys.stdout
    sw = _sw_config(args, _env(args))
    store = ObjectStore.load(args.store_dir)
    actions = safewriter.recover(store, sw.checkpoint_bucket, args.table, sw)
    if not actions:
        print("no action", file=out)
        return 0
    for a in actions:
        print(f"{a.run_id}: {a.action} (version_before={a.version_before}, found={a.version_found})", file=out)
    store.dump(args.store_dir)
    return 0


def cmd_report(args, out=None) -> int:
    out = out or sys.stdout
    records = matrix.read_records(args.jsonl)
    print(report.render(records, args.delta if args.exposure else None), file=out, end="")
    if args.json:
        Path(args.json).write_text(report.summary_json(records))
    if args.csv:
        Path(args.csv).write_text(report.figure_csv(records))
    return 0


def cmd_vacuum(args, out=None) -> int:
    out = out or sys.stdout
    store = ObjectStore.load(args.store_dir)
    orphans = formats.find_orphans(store, args.table)
    nbytes = formats.orphan_bytes(store, args.table)
    for k in orphans:
        print(k, file=out)
    if args.dry_run:
        print(f"{len(orphans)} orphaned files, {nbytes} bytes (dry run)", file=out)
        return 0
    formats.vacuum(store, args.table)
    for k in orphans:
        (Path(args.store_dir) / k).unlink(missing_ok=True)
    print(f"deleted {len(orphans)} orphaned files, {nbytes} bytes", file=out)
    return 0


def cmd_dataset(args, out=None) -> int:
    out = out or sys.stdout
    data = generate_dataset(args.scale, args.seed)
    Path(args.out).write_bytes(data.to_csv())
    print(f"{len(data)} rows -> {args.out}", file=out)
    return 0


COMMANDS = {
    "run": cmd_run,
    "replay": cmd_replay,
    "recover": cmd_recover,
    "report": cmd_report,
    "vacuum": cmd_vacuum,
    "dataset": cmd_dataset,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, formats.TableError, FileNotFoundError) as err:
        print(f"commitgap: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
