"""Line-delimited JSON traces."""

from __future__ import annotations

import io
import json
from pathlib import Path

TRACE_VERSION = 1


def encode(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"))


class TraceWriter:
    """Appends one JSON object per line. ``path=None`` keeps lines in memory."""

    def __init__(self, path: str | Path | None = None):
        self.path = None if path is None else Path(path)
        self._fh = io.StringIO() if path is None else open(path, "w", encoding="utf-8", newline="\n")
        self.count = 0

    def header(self, config: dict) -> None:
        self.record({"kind": "header", "version": TRACE_VERSION, "config": config})

    def record(self, record: dict) -> None:
        self._fh.write(encode(record))
        self._fh.write("\n")
        self.count += 1

    def text(self) -> str:
        if self.path is None:
            return self._fh.getvalue()
        self._fh.flush()
        return self.path.read_text(encoding="utf-8")

    def close(self) -> None:
        if self.path is not None and not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> TraceWriter:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class TraceFormatError(ValueError):
    pass


def read_trace(source: str | Path | io.TextIOBase) -> list[dict]:
    """Parse a trace and check its header version."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"line {lineno}: {exc}") from None
    if not records or records[0].get("kind") != "header":
        raise TraceFormatError("trace does not start with a header record")
    if records[0].get("version") != TRACE_VERSION:
        raise TraceFormatError(f"unsupported trace version {records[0].get('version')!r}")
    return records
