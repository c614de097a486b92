"""Parameter sweeps over repeated seeded runs."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

from .config import ConfigError, RunConfig
from .report import CELL_COLUMNS, cell_stats
from .runner import ExperimentResult, _csv, requests_csv, run

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_axis(text: str) -> tuple[str, list]:
    """``name=v1,v2,...`` into a config field name and typed values."""
    name, sep, values = text.partition("=")
    name = name.strip().replace("-", "_")
    if name == "nodes":
        name = "n"
    if not sep or name not in _FIELD_TYPES:
        raise ConfigError(f"bad sweep axis {text!r}; expected FIELD=V1,V2,...")
    kind = _FIELD_TYPES[name]
    out = []
    for raw in values.split(","):
        raw = raw.strip()
        if not raw:
            continue
        try:
            if "int" in str(kind):
                out.append(int(raw))
            elif "float" in str(kind):
                out.append(float(raw))
            else:
                out.append(raw)
        except ValueError:
            raise ConfigError(f"bad value {raw!r} for sweep axis {name}") from None
    if not out:
        raise ConfigError(f"sweep axis {name} has no values")
    return name, out


@dataclass
class SweepResult:
    axis: str
    values: list
    results: list[ExperimentResult]

    def cell(self, value) -> list[ExperimentResult]:
        return [r for r in self.results if r.config[self.axis] == value]

    def cells(self) -> list[dict]:
        return [{self.axis: v, **cell_stats(self.cell(v))} for v in self.values]

    def requests_csv(self) -> str:
        return requests_csv(self.results, extra=(self.axis,))

    def cells_csv(self) -> str:
        return _csv(self.cells(), (self.axis,) + CELL_COLUMNS)


def sweep_configs(base: RunConfig, axis: str, values: list, reps: int) -> list[RunConfig]:
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    return [base.with_overrides(**{axis: v, "seed": base.seed + r}) for v in values for r in range(reps)]


def sweep(base: RunConfig, axis: str, values: list, reps: int = 1, jobs: int = 1) -> SweepResult:
    """Run every (value, repetition) cell; repetition ``r`` uses seed ``base.seed + r``."""
    configs = sweep_configs(base, axis, values, reps)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, configs))
    else:
        results = [run(c) for c in configs]
    return SweepResult(axis, list(values), results)
