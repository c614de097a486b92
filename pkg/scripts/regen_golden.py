"""Regenerate the golden trace corpus under tests/golden/.

Run only after an intentional change to the trace format or the simulator;
the determinism acceptance test compares fresh runs against these files
byte for byte.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from dynlock.harness import RunConfig, run

CASES = [
    ("solo", dict(n=1, delta=1, topology="empty", stages=200, lock_rate=0.2)),
    ("pair", dict(n=2, delta=1, topology="complete", stages=300, lock_rate=0.3)),
    ("path3", dict(n=3, delta=2, topology="path", stages=300, lock_rate=0.5)),
    ("ring5_all", dict(n=5, delta=2, topology="ring", activation="all", stages=300)),
    ("ring6_lazy", dict(n=6, delta=2, topology="ring", activation="lazy", b_act=2, stages=300, lock_rate=0.2)),
    ("regular6_fifo", dict(n=6, delta=3, topology="regular", selection="fifo", stages=300, lock_rate=0.2)),
    ("random8_churn", dict(n=8, delta=3, topology="random", adversary="churn:0.05", stages=400)),
    ("complete4_instant", dict(n=4, delta=3, topology="complete", b_msg=0, stages=300, lock_rate=0.3)),
    ("random6_targeted", dict(n=6, delta=2, topology="random", adversary="targeted:0.2", stages=300, lock_rate=0.3)),
    ("empty4_start", dict(n=4, delta=2, topology="empty", adversary="churn:0.1", stages=300, lock_rate=0.3)),
]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "tests" / "golden")
    args = parser.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    cases = []
    for i, (name, fields) in enumerate(CASES):
        config = RunConfig(seed=100 + i, **fields).validate()
        result = run(config, full_trace=True)
        path = args.out / f"{name}.jsonl"
        path.write_text(result.trace_text)
        data = config.to_dict()
        data.pop("K")
        cases.append({"file": path.name, "config": data})
        print(f"{path.name}: {result.summary['requests']} requests, {len(result.violations)} violations")
    (args.out / "cases.json").write_text(json.dumps(cases, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
