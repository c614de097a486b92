"""Run configuration: a JSON file plus command-line overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..network import TOPOLOGIES, parse_adversary
from ..scheduler import parse_activation, parse_selection


class ConfigError(ValueError):
    """Raised for any invalid configuration value."""


@dataclass(frozen=True)
class RunConfig:
    n: int = 8
    delta: int = 2
    c: float = 4.0
    stages: int = 10_000
    seed: int = 0
    topology: str = "regular"
    adversary: str = "static"
    activation: str = "random:0.5"
    b_act: int = 4
    selection: str = "uniform"
    b_msg: int = 8
    lock_rate: float = 0.05
    hold: int = 3
    max_requests: int | None = None
    drain: float = 0.1
    check_dag: bool = True

    @property
    def K(self) -> int:
        """Priority range, rounded to the nearest integer and at least 1."""
        return max(1, round(self.c * self.delta * self.delta))

    @property
    def call_cutoff(self) -> int:
        """No new Lock calls are made at or after this stage."""
        return self.stages - int(self.stages * self.drain)

    def validate(self) -> RunConfig:
        def positive(name: str, value, allow_zero: bool = False) -> None:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name} must be a number, got {value!r}")
            if value < 0 or (value == 0 and not allow_zero):
                raise ConfigError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")

        for name in ("n", "delta", "stages"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            positive(name, value)
        positive("c", self.c)
        for name in ("b_act", "b_msg", "hold"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            positive(name, value, allow_zero=True)
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not 0.0 < self.lock_rate <= 1.0:
            raise ConfigError(f"lock_rate must lie in (0, 1], got {self.lock_rate!r}")
        if not 0.0 <= self.drain < 1.0:
            raise ConfigError(f"drain must lie in [0, 1), got {self.drain!r}")
        if self.max_requests is not None and self.max_requests < 0:
            raise ConfigError("max_requests must be non-negative")
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"unknown topology {self.topology!r}; expected one of {', '.join(TOPOLOGIES)}")
        try:
            parse_adversary(self.adversary)
            parse_activation(self.activation, self.b_act)
            parse_selection(self.selection)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["K"] = self.K
        return out

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known - {"K"})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "K" in data:
            raise ConfigError("K is derived from c and delta and cannot be set directly")
        return cls(**data).validate()

    def with_overrides(self, **changes) -> RunConfig:
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes).validate()


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return RunConfig.from_dict(data)
