from __future__ import annotations

import io
import json
import math

import pytest

from dynlock.harness import ConfigError, RunConfig, results_from_trace, run
from dynlock.harness.cli import main
from dynlock.harness.config import load_config
from dynlock.harness.report import bound_checks, cell_stats, report
from dynlock.harness.runner import requests_csv, trials_csv
from dynlock.harness.stats import (
    enabled_bound,
    expected_trials_bound,
    loglog_slope,
    mean_ci,
    proportion_ci,
    request_rounds_bound,
    trial_rounds_bound,
    win_probability_bound,
)
from dynlock.harness.sweep import parse_axis, sweep
from dynlock.harness.trace import TraceFormatError, read_trace

SMALL = RunConfig(n=5, delta=2, topology="ring", adversary="churn:0.02", stages=600, lock_rate=0.2, seed=3)


# -- configuration -----------------------------------------------------------------

def test_k_is_derived_and_rounded():
    assert RunConfig(delta=3, c=4.0).K == 36
    assert RunConfig(delta=2, c=0.5).K == 2
    assert RunConfig(delta=1, c=0.1).K == 1


@pytest.mark.parametrize("field, value", [
    ("n", 0), ("delta", -1), ("stages", 1.5), ("c", 0.0), ("b_msg", -1), ("lock_rate", 0.0),
    ("lock_rate", 1.5), ("drain", 1.0), ("topology", "torus"), ("adversary", "churn"),
    ("activation", "random:7"), ("selection", "lifo"), ("seed", "x"), ("max_requests", -1),
])
def test_invalid_values_are_rejected(field, value):
    with pytest.raises(ConfigError):
        RunConfig(**{field: value}).validate()


def test_from_dict_rejects_k_and_unknown_keys():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"K": 8})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"nodes": 8})
    assert RunConfig.from_dict({"n": 3}).n == 3


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "cfg.json"
    data = SMALL.to_dict()
    data.pop("K")
    path.write_text(json.dumps(data))
    assert load_config(path) == SMALL


# -- runs --------------------------------------------------------------------------------

def test_single_node_request_succeeds():
    result = run(RunConfig(n=1, delta=1, topology="empty", lock_rate=1.0, max_requests=1, stages=50))
    assert result.clean
    [req] = result.requests
    assert req["persistent"] == [] and req["success"] is not None


def test_pair_both_requests_succeed():
    result = run(RunConfig(n=2, delta=1, topology="complete", lock_rate=1.0, max_requests=1, stages=200, seed=1))
    assert result.clean
    assert sorted(q["node"] for q in result.requests) == [0, 1]
    assert all(q["success"] is not None for q in result.requests)


def test_runs_are_deterministic():
    a = run(SMALL, full_trace=True).trace_text
    b = run(SMALL, full_trace=True).trace_text
    assert a == b
    assert a != run(SMALL.with_overrides(seed=4), full_trace=True).trace_text


def test_trace_regenerates_csv_exactly(tmp_path):
    path = tmp_path / "trace.jsonl"
    live = run(SMALL, trace_path=path)
    stored = results_from_trace(path)
    assert requests_csv([stored]) == requests_csv([live])
    assert trials_csv([stored]) == trials_csv([live])
    assert stored.summary == live.summary


def test_trace_header_is_checked():
    with pytest.raises(TraceFormatError):
        read_trace(io.StringIO('{"kind": "stage", "stage": 0}\n'))
    text = run(SMALL, full_trace=True).trace_text
    records = read_trace(io.StringIO(text))
    assert records[0]["kind"] == "header" and records[-1]["kind"] == "summary"


def test_workload_unlocks_each_success_once():
    result = run(SMALL)
    s = result.summary
    resolved = sum(1 for q in result.requests if q["checkdone"] is not None)
    # Only locks still held (or not yet past their hold time) at the end lack an Unlock.
    assert resolved - SMALL.n <= s["unlock_calls"] <= resolved
    assert s["lock_calls"] == s["requests"]


def test_max_requests_limits_calls():
    result = run(SMALL.with_overrides(max_requests=2, lock_rate=1.0))
    assert result.summary["lock_calls"] <= 2 * SMALL.n


def test_static_deadlock_is_reported_as_stall():
    result = run(RunConfig(n=2, delta=1, topology="complete", lock_rate=1.0, stages=3000, seed=18))
    assert result.summary["stalled_at"] == 192
    assert [d["check"] for d in result.defects] == ["stalled"]
    assert result.violations == []


# -- statistics and report ------------------------------------------------------------------

def test_bound_formulas():
    K = 16
    p = (1 - 1 / K) ** 8 / 8
    assert win_probability_bound(2, K) == pytest.approx(p)
    assert expected_trials_bound(2, K) == pytest.approx(1 / p)
    assert trial_rounds_bound(3, 2) == 2 * 3 * 40
    assert enabled_bound(3) == 10
    assert request_rounds_bound(8, 2, 4.0) == pytest.approx(8 * (7 + 20 * math.e * 8 * 4))


def test_confidence_intervals():
    ci = mean_ci([1.0, 2.0, 3.0])
    assert ci.estimate == 2.0 and ci.low < 2.0 < ci.high
    pc = proportion_ci(50, 100)
    assert pc.low < 0.5 < pc.high
    assert math.isnan(proportion_ci(0, 0).estimate)
    assert loglog_slope([1, 2, 4], [3, 6, 12]) == pytest.approx(1.0)


def test_report_on_empty_results():
    text, machine = report([])
    assert machine == {"cells": [], "clean": True}
    assert "no results" in text


def test_report_lists_bound_checks():
    text, machine = report([run(SMALL)])
    assert "win frequency" in text
    assert machine["checks"]["safety"] is True


def test_bound_checks_without_data():
    checks = bound_checks(cell_stats([run(RunConfig(n=1, delta=1, topology="empty", stages=5))]))
    assert checks["win_probability"] is None


# -- sweeps ------------------------------------------------------------------------------------

def test_parse_axis():
    assert parse_axis("nodes=4,8") == ("n", [4, 8])
    assert parse_axis("c=2,4.5") == ("c", [2.0, 4.5])
    assert parse_axis("adversary=static,churn:0.1") == ("adversary", ["static", "churn:0.1"])
    for bad in ("n", "n=", "colour=1", "n=x"):
        with pytest.raises(ConfigError):
            parse_axis(bad)


def test_sweep_rows_per_cell_and_rep():
    res = sweep(SMALL.with_overrides(stages=300), "n", [3, 4], reps=2)
    assert len(res.results) == 4
    assert sorted({r.seed for r in res.results}) == [3, 4]
    header, *rows = res.requests_csv().splitlines()
    assert header.startswith("n,") and len(rows) == sum(len(r.requests) for r in res.results)
    assert len(res.cells_csv().splitlines()) == 3


def test_single_cell_sweep_matches_run():
    res = sweep(SMALL, "seed", [SMALL.seed])
    assert requests_csv(res.results) == requests_csv([run(SMALL)])


# -- command line ---------------------------------------------------------------------------------

def test_cli_run_writes_outputs(tmp_path, capsys):
    code = main(["--nodes", "4", "--delta", "2", "--topology", "ring", "--stages", "300",
                 "--lock-rate", "0.2", "--adversary", "churn:0.02", "--out", str(tmp_path)])
    assert code == 0
    assert {p.name for p in tmp_path.iterdir()} == {"trace.jsonl", "requests.csv", "trials.csv", "summary.json"}
    first = (tmp_path / "requests.csv").read_text()
    regen = tmp_path / "regen"
    assert main(["--from-trace", str(tmp_path / "trace.jsonl"), "--out", str(regen)]) == 0
    assert (regen / "requests.csv").read_text() == first
    assert "requests" in capsys.readouterr().out


def test_cli_config_error(capsys):
    assert main(["--nodes", "0"]) == 1
    assert "config error" in capsys.readouterr().err


def test_cli_stall_exit_code():
    assert main(["--nodes", "2", "--delta", "1", "--topology", "complete", "--lock-rate", "1",
                 "--stages", "3000", "--seed", "18", "--adversary", "static"]) == 2


def test_cli_explore(tmp_path, capsys):
    assert main(["--explore", "8", "--nodes", "1", "--delta", "1", "--topology", "empty",
                 "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "explore.json").read_text())
    assert data["violations"] == 0 and data["complete"]


def test_cli_explore_budget():
    assert main(["--explore", "12", "--nodes", "2", "--delta", "1", "--c", "2", "--max-states", "50"]) == 3


def test_cli_sweep(tmp_path):
    code = main(["--nodes", "3", "--delta", "2", "--topology", "path", "--stages", "200", "--lock-rate", "0.3",
                 "--sweep-axis", "seed=1,2", "--out", str(tmp_path)])
    assert code in (0, 2)
    assert (tmp_path / "cells.csv").exists() and (tmp_path / "requests.csv").exists()
