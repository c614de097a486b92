"""Command-line entry point.

Exit codes: 0 clean, 1 configuration error, 2 invariant violation or
defect, 3 exploration budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .explore import explore_exhaustive
from .report import report
from .runner import requests_csv, results_from_trace, run, trials_csv
from .sweep import parse_axis, sweep

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION, EXIT_BUDGET = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynlock", description="Simulate and check randomized local mutual exclusion.")
    p.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    p.add_argument("--nodes", type=int, dest="n")
    p.add_argument("--delta", type=int)
    p.add_argument("--c", type=float, help="priority range constant; K = round(c * delta^2)")
    p.add_argument("--stages", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--topology", help="empty | path | ring | complete | regular | random")
    p.add_argument("--adversary", help="static | churn:Q | targeted:RATE[:RECONNECT] | scripted:STAGE:U:V")
    p.add_argument("--activation", help="all | random:P | lazy")
    p.add_argument("--selection", help="uniform | fifo")
    p.add_argument("--b-act", type=int, dest="b_act")
    p.add_argument("--b-msg", type=int, dest="b_msg")
    p.add_argument("--hold", type=int)
    p.add_argument("--lock-rate", type=float, dest="lock_rate")
    p.add_argument("--max-requests", type=int, dest="max_requests")
    p.add_argument("--out", type=Path, help="output directory (trace, CSVs, summary)")
    p.add_argument("--sweep-axis", help="FIELD=V1,V2,... to sweep one config field")
    p.add_argument("--reps", type=int, default=1, help="repetitions per sweep cell (seeds seed..seed+reps-1)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--explore", type=int, metavar="DEPTH", help="exhaustively explore up to DEPTH stages")
    p.add_argument("--disconnect", help="U-V: optional scripted disconnect for --explore")
    p.add_argument("--max-states", type=int, default=2_000_000)
    p.add_argument("--from-trace", type=Path, help="regenerate CSVs and the report from a stored trace")
    return p


OVERRIDES = ("n", "delta", "c", "stages", "seed", "topology", "adversary", "activation", "selection",
             "b_act", "b_msg", "hold", "lock_rate", "max_requests")


def _config(args) -> RunConfig:
    base = load_config(args.config) if args.config else RunConfig()
    return base.with_overrides(**{k: getattr(args, k) for k in OVERRIDES})


def _write(out: Path | None, name: str, text: str) -> None:
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding="utf-8")


def _explore(args, cfg: RunConfig) -> int:
    disconnect = None
    if args.disconnect:
        try:
            u, v = (int(x) for x in args.disconnect.split("-"))
        except ValueError:
            raise ConfigError(f"bad --disconnect {args.disconnect!r}; expected U-V") from None
        disconnect = (u, v)
    topology = args.topology or "complete"
    try:
        res = explore_exhaustive(cfg.n, topology, cfg.delta, cfg.K, args.explore,
                                 disconnect=disconnect, max_states=args.max_states, stop_at_first=False)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    summary = res.summary()
    summary["topology"] = topology
    summary["findings"] = [f.as_dict() for f in res.violations[:10]]
    if res.first_deadlock is not None:
        summary["first_deadlock"] = res.first_deadlock.as_dict()
    _write(args.out, "explore.json", json.dumps(summary, indent=2) + "\n")
    print(json.dumps({k: v for k, v in summary.items() if k not in ("findings", "first_deadlock")}))
    if res.first_deadlock is not None:
        print(f"deadlock: {res.first_deadlock.detail} at depth {res.first_deadlock.depth}")
    for f in res.violations[:10]:
        print(f"violation: {f.kind} at depth {f.depth}: {f.detail}")
    if not res.complete:
        print(f"partial coverage: state budget {args.max_states} exceeded at depth {res.depth_reached}")
        return EXIT_BUDGET
    return EXIT_VIOLATION if res.violations or res.deadlocks else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.from_trace:
            result = results_from_trace(args.from_trace)
            _write(args.out, "requests.csv", requests_csv([result]))
            _write(args.out, "trials.csv", trials_csv([result]))
            text, _ = report([result], label=str(args.from_trace))
            print(text, end="")
            return EXIT_OK if result.clean else EXIT_VIOLATION
        cfg = _config(args)
        if args.explore is not None:
            return _explore(args, cfg)
        if args.sweep_axis:
            axis, values = parse_axis(args.sweep_axis)
            res = sweep(cfg, axis, values, args.reps, args.jobs)
            _write(args.out, "requests.csv", res.requests_csv())
            _write(args.out, "cells.csv", res.cells_csv())
            if args.out is None:
                print(res.cells_csv(), end="")
            for value in values:
                text, _ = report(res.cell(value), label=f"{axis}={value}")
                print(text, end="", file=sys.stderr if args.out is None else sys.stdout)
            return EXIT_OK if all(r.clean for r in res.results) else EXIT_VIOLATION
        trace_path = None
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
            trace_path = args.out / "trace.jsonl"
        result = run(cfg, trace_path=trace_path)
        _write(args.out, "requests.csv", requests_csv([result]))
        _write(args.out, "trials.csv", trials_csv([result]))
        text, machine = report([result], label=f"seed {cfg.seed}")
        _write(args.out, "summary.json", json.dumps({"summary": result.summary, **machine}, indent=2,
                                                    default=str) + "\n")
        print(text, end="")
        return EXIT_OK if result.clean else EXIT_VIOLATION
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
