"""Drive one configured run end to end and turn its records into results."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from ..checker import Monitor
from ..core import State
from ..network import NetworkFault, RandomChurn, Static, build_network, parse_adversary
from ..protocol import ProtocolFault
from ..scheduler import Simulation, parse_activation, parse_selection
from .config import RunConfig
from .trace import TraceWriter, read_trace
from .workload import GeometricWorkload

REQUEST_COLUMNS = (
    "seed", "request", "node", "call", "issue", "success", "checkdone", "persistent",
    "open_rounds", "closed_rounds", "total_rounds", "trials", "open_trials", "win_trial", "open_trials_to_win",
)
TRIAL_COLUMNS = ("seed", "request", "node", "start", "end", "via", "outcome", "open", "k", "rounds")
CHECKER_KINDS = ("request", "trial", "violation", "defect", "summary")


class _Collector:
    """Trace sink that keeps checker records and optionally forwards everything."""

    def __init__(self, writer: TraceWriter | None):
        self.writer = writer
        self.records: list[dict] = []
        self.line = 1 if writer is not None else 0  # header already written

    def record(self, record: dict) -> None:
        self.line += 1
        if self.writer is not None:
            if record["kind"] in ("violation", "defect"):
                record = dict(record, line=self.line)
            self.writer.record(record)
        if record["kind"] in CHECKER_KINDS:
            self.records.append(record)


@dataclass
class ExperimentResult:
    config: dict
    requests: list[dict] = field(default_factory=list)
    trials: list[dict] = field(default_factory=list)
    violations: list[dict] = field(default_factory=list)
    defects: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    trace_text: str | None = None

    @classmethod
    def from_records(cls, config: dict, records: list[dict]) -> ExperimentResult:
        out = cls(dict(config))
        for rec in records:
            kind = rec["kind"]
            if kind == "request":
                out.requests.append(rec)
            elif kind == "trial":
                out.trials.append(rec)
            elif kind == "violation":
                out.violations.append(rec)
            elif kind == "defect":
                out.defects.append(rec)
            elif kind == "summary":
                out.summary = rec
        out.requests.sort(key=lambda r: r["request"])
        return out

    @property
    def clean(self) -> bool:
        return not self.violations and not self.defects

    @property
    def seed(self) -> int:
        return self.config["seed"]

    def request_rows(self) -> list[dict]:
        rows = []
        for r in self.requests:
            row = {k: r.get(k) for k in REQUEST_COLUMNS if k != "seed"}
            row["persistent"] = " ".join(map(str, r["persistent"]))
            rows.append({"seed": self.seed, **row})
        return rows

    def trial_rows(self) -> list[dict]:
        return [{"seed": self.seed, **{k: t.get(k) for k in TRIAL_COLUMNS if k != "seed"}} for t in self.trials]


def results_from_trace(source) -> ExperimentResult:
    records = read_trace(source)
    return ExperimentResult.from_records(records[0]["config"], records[1:])


def build_simulation(config: RunConfig, trace=None, monitor_trace=None) -> tuple[Simulation, Monitor, GeometricWorkload]:
    config.validate()
    net = build_network(config.topology, config.n, config.delta, config.seed, transit_limit=None)
    sim = Simulation(
        net,
        config.K,
        seed=config.seed,
        adversary=parse_adversary(config.adversary),
        activation=parse_activation(config.activation, config.b_act),
        selection=parse_selection(config.selection),
        b_msg=config.b_msg,
        trace=trace,
    )
    workload = GeometricWorkload(config.n, config.lock_rate, config.hold, sim.rng["workload"],
                                 max_requests=config.max_requests, cutoff=config.call_cutoff)
    sim.workload = workload
    monitor = Monitor(config.n, config.delta, check_dag=config.check_dag, trace=monitor_trace)
    sim.observers.append(monitor)
    return sim, monitor, workload


def run(config: RunConfig, trace_path: str | Path | None = None, full_trace: bool = False) -> ExperimentResult:
    """Run ``config`` to completion.

    With ``trace_path`` (or ``full_trace`` for an in-memory trace) every
    stage, edge change, call and execution is recorded; otherwise only the
    checker records are kept.
    """
    config.validate()
    writer = None
    if trace_path is not None or full_trace:
        writer = TraceWriter(trace_path)
        writer.header(config.to_dict())
    sink = _Collector(writer)
    sim, monitor, workload = build_simulation(config, trace=sink if writer is not None else None, monitor_trace=sink)
    if writer is not None:
        sink.record({"kind": "topology", **sim.net.snapshot()})
    fault = None
    stalled_at = None
    adv = sim.adversary
    static = isinstance(adv, Static) or (isinstance(adv, RandomChurn) and adv.q == 0.0)
    try:
        for _ in range(config.stages):
            sim.run_stage()
            if static and is_stalled(sim):
                stalled_at = sim.stage
                sink.record({"kind": "defect", "stage": sim.stage, "check": "stalled", "nodes": [],
                             "detail": "no enabled executions, no messages in transit and every node busy"})
                break
    except (ProtocolFault, NetworkFault) as exc:
        fault = exc
        sink.record({"kind": "defect", "stage": sim.stage, "check": "fault", "nodes": [],
                     "detail": f"{type(exc).__name__}: {exc}"})
    monitor.finalize(sim)
    sink.record(summary_record(sim, monitor, workload, aborted=fault is not None, stalled_at=stalled_at))
    result = ExperimentResult.from_records(config.to_dict(), sink.records)
    if writer is not None:
        result.trace_text = writer.text() if trace_path is None else None
        writer.close()
    return result


def is_stalled(sim: Simulation) -> bool:
    """True when nothing can ever happen again under a static topology.

    No node is enabled, nothing is in transit and no node can receive a
    Lock or Unlock call (every node is mid-operation).
    """
    if any(sim.enabled) or any(sim.net.inbox):
        return False
    busy = (State.PREPARE, State.COMPETE, State.WIN, State.UNLOCK)
    return all(v.state in busy for v in sim.vars)


def summary_record(sim: Simulation, monitor: Monitor, workload: GeometricWorkload, aborted: bool = False,
                   stalled_at: int | None = None) -> dict:
    resolved = [r for r in monitor.requests if r.success_stage is not None]
    return {
        "kind": "summary",
        "stages": sim.stage,
        "rounds": sim.ledger.index + 1,
        "empty_rounds": sim.ledger.empty_rounds,
        "aborted": aborted,
        "lock_calls": workload.lock_calls,
        "unlock_calls": workload.unlock_calls,
        "requests": len(monitor.requests),
        "resolved": len(resolved),
        "unresolved": len(monitor.requests) - len(resolved),
        "max_open_rounds": max((r.open_rounds for r in resolved), default=0),
        "trials": len(monitor.trials),
        "violations": len(monitor.violations),
        "defects": len(monitor.defects) + int(aborted) + int(stalled_at is not None),
        "max_enabled": monitor.max_enabled,
        "max_initiator_checks": monitor.max_initiator_checks,
        "max_in_transit": sim.net.max_pair_count,
        "progress_count": monitor.progress_count,
        "progress_mean": round(monitor.progress_mean, 6),
        "progress_max": monitor.progress_max,
        "dag_checks": monitor.dag_checks,
        "max_k": monitor.max_k,
        "messages_lost": sim.net.lost,
        "doubled_sends": sim.doubled_sends,
        "late_successes": monitor.late_successes,
        "stale_locks": monitor.stale_locks,
        "stalled_at": stalled_at,
    }


# -- CSV -------------------------------------------------------------------------

def _csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    return buf.getvalue()


def requests_csv(results: list[ExperimentResult], extra: tuple[str, ...] = ()) -> str:
    rows = []
    for res in results:
        for row in res.request_rows():
            rows.append({**{k: res.config.get(k) for k in extra}, **row})
    return _csv(rows, extra + REQUEST_COLUMNS)


def trials_csv(results: list[ExperimentResult], extra: tuple[str, ...] = ()) -> str:
    rows = []
    for res in results:
        for row in res.trial_rows():
            rows.append({**{k: res.config.get(k) for k in extra}, **row})
    return _csv(rows, extra + TRIAL_COLUMNS)
