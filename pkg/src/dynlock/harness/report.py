"""Bound comparisons over finished runs."""

from __future__ import annotations

import math

from .stats import (
    expected_trials_bound,
    mean_ci,
    proportion_ci,
    request_rounds_bound,
    trial_rounds_bound,
    win_probability_bound,
)

CELL_COLUMNS = (
    "runs", "requests", "resolved", "violations", "defects",
    "open_rounds_mean", "open_rounds_low", "open_rounds_high", "open_rounds_max", "open_rounds_bound",
    "open_trials", "win_freq", "win_freq_low", "win_bound",
    "trials_to_win_mean", "trials_to_win_high", "trials_bound",
    "trial_span_mean", "trial_span_bound_mean", "trial_span_over",
)


def _r(x: float) -> float:
    return x if isinstance(x, int) or math.isnan(x) else round(x, 6)


def cell_stats(results) -> dict:
    """Aggregate the runs of one cell (same configuration except the seed)."""
    if not results:
        return {k: 0 for k in CELL_COLUMNS}
    cfg = results[0].config
    n, delta, K, c = cfg["n"], cfg["delta"], cfg["K"], cfg["c"]
    requests = [q for r in results for q in r.requests]
    resolved = [q for q in requests if q["success"] is not None]
    trials = [t for r in results for t in r.trials]
    decided = [t for t in trials if t["open"] and t["outcome"] in ("won", "lost")]
    won = sum(1 for t in decided if t["outcome"] == "won")
    rounds = mean_ci([q["open_rounds"] for q in resolved])
    freq = proportion_ci(won, len(decided))
    to_win = mean_ci([q["open_trials_to_win"] for q in resolved if q["open_trials_to_win"]])
    spans = [t for t in trials if t["open"] and t["k"] is not None]
    span_bounds = [trial_rounds_bound(t["k"], delta) for t in spans]
    return {
        "runs": len(results),
        "requests": len(requests),
        "resolved": len(resolved),
        "violations": sum(len(r.violations) for r in results),
        "defects": sum(len(r.defects) for r in results),
        "open_rounds_mean": _r(rounds.estimate),
        "open_rounds_low": _r(rounds.low),
        "open_rounds_high": _r(rounds.high),
        "open_rounds_max": max((q["open_rounds"] for q in resolved), default=0),
        "open_rounds_bound": _r(request_rounds_bound(n, delta, c)),
        "open_trials": len(decided),
        "win_freq": _r(freq.estimate),
        "win_freq_low": _r(freq.low),
        "win_bound": _r(win_probability_bound(delta, K)),
        "trials_to_win_mean": _r(to_win.estimate),
        "trials_to_win_high": _r(to_win.high),
        "trials_bound": _r(expected_trials_bound(delta, K)),
        "trial_span_mean": _r(mean_ci([t["rounds"] for t in spans]).estimate),
        "trial_span_bound_mean": _r(sum(span_bounds) / len(span_bounds)) if spans else math.nan,
        "trial_span_over": sum(1 for t, b in zip(spans, span_bounds) if t["rounds"] > b),
    }


def bound_checks(stats: dict) -> dict[str, bool | None]:
    """Which bound columns a cell satisfies (``None`` when there is no data)."""

    def ok(value, bound, below=True):
        if value is None or bound is None or math.isnan(value):
            return None
        return value <= bound if below else value >= bound

    return {
        "safety": stats["violations"] == 0,
        "all_resolved": stats["requests"] == stats["resolved"],
        "request_rounds": ok(stats["open_rounds_high"], stats["open_rounds_bound"]),
        "win_probability": ok(stats["win_freq_low"], stats["win_bound"], below=False),
        "trials_to_win": ok(stats["trials_to_win_high"], stats["trials_bound"]),
        "trial_span": ok(stats["trial_span_mean"], stats["trial_span_bound_mean"]),
    }


def report(results, label: str = "run") -> tuple[str, dict]:
    """Human-readable table plus a machine-readable summary."""
    if not results:
        return "no results\n", {"cells": [], "clean": True}
    stats = cell_stats(results)
    checks = bound_checks(stats)
    lines = [f"{label}: {stats['runs']} run(s), {stats['requests']} requests, {stats['resolved']} resolved"]
    lines.append(f"  violations {stats['violations']}, defects {stats['defects']}")
    lines.append(f"  open rounds per request: mean {stats['open_rounds_mean']} "
                 f"[{stats['open_rounds_low']}, {stats['open_rounds_high']}], max {stats['open_rounds_max']}, "
                 f"bound {stats['open_rounds_bound']}")
    lines.append(f"  win frequency per open trial: {stats['win_freq']} (low {stats['win_freq_low']}) over "
                 f"{stats['open_trials']} trials, bound {stats['win_bound']}")
    lines.append(f"  open trials to win: mean {stats['trials_to_win_mean']} (high {stats['trials_to_win_high']}), "
                 f"bound {stats['trials_bound']}")
    lines.append(f"  open trial span: mean {stats['trial_span_mean']} rounds, "
                 f"mean bound at measured k {stats['trial_span_bound_mean']}, over bound {stats['trial_span_over']}")
    for name, value in checks.items():
        lines.append(f"  {name:16s} {'n/a' if value is None else ('ok' if value else 'FAIL')}")
    for r in results:
        for v in (r.violations + r.defects)[:5]:
            where = f" (trace line {v['line']})" if "line" in v else ""
            lines.append(f"  seed {r.seed}: {v['kind']} {v['check']} at stage {v['stage']}{where}: {v['detail']}")
    clean = all(r.clean for r in results)
    return "\n".join(lines) + "\n", {"stats": stats, "checks": checks, "clean": clean}
