"""Event-stream data model, goal specification, and JSON-lines ingestion.

Timestamps are integer epoch milliseconds. All time windows in the package
are half-open ``[start, end)`` so adjacent windows partition time exactly.
"""

from __future__ import annotations

import io
import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping

MS_PER_SECOND = 1_000
MS_PER_HOUR = 3_600_000
MS_PER_DAY = 86_400_000


def days(n: float) -> int:
    """Duration of ``n`` days in milliseconds."""
    return int(round(n * MS_PER_DAY))


def hours(n: float) -> int:
    return int(round(n * MS_PER_HOUR))


class IngestError(Exception):
    """Raised when an event log is too corrupted to load."""

    def __init__(self, message: str, report: "IngestReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class Window:
    """Half-open time interval [start, end) in epoch milliseconds."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"window start {self.start} exceeds end {self.end}")

    def contains(self, t: int) -> bool:
        return self.start <= t < self.end

    @property
    def span(self) -> int:
        return self.end - self.start


@dataclass(frozen=True, slots=True)
class EventRecord:
    """One observed event: who, when, what, and optional magnitude.

    ``value`` carries event metadata such as order value or dwell time; when
    absent it is treated as 1.0 by outcome scoring (pure event counting).
    """

    user_id: str
    timestamp: int
    event_name: str
    value: float | None = None

    def __post_init__(self) -> None:
        if not self.user_id:
            raise ValueError("user_id must be non-empty")
        if not isinstance(self.timestamp, int) or isinstance(self.timestamp, bool):
            raise ValueError(f"timestamp must be an integer, got {self.timestamp!r}")
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be non-negative, got {self.timestamp}")
        if not self.event_name:
            raise ValueError("event_name must be non-empty")
        if self.value is not None:
            v = float(self.value)
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"value must be finite and non-negative, got {self.value!r}")

    @property
    def effective_value(self) -> float:
        return 1.0 if self.value is None else float(self.value)


@dataclass(frozen=True)
class EventStream:
    """A single user's events, sorted ascending by timestamp.

    Ties keep insertion order. Streams are immutable after construction and
    safe to share across workers.
    """

    user_id: str
    records: tuple[EventRecord, ...]

    def __post_init__(self) -> None:
        prev = -1
        for r in self.records:
            if r.user_id != self.user_id:
                raise ValueError(f"record user {r.user_id!r} does not match stream {self.user_id!r}")
            if r.timestamp < prev:
                raise ValueError("records must be sorted ascending by timestamp")
            prev = r.timestamp

    @classmethod
    def from_records(cls, user_id: str, records: Iterable[EventRecord]) -> "EventStream":
        """Build a stream, stable-sorting records by timestamp."""
        ordered = sorted(records, key=lambda r: r.timestamp)
        return cls(user_id=user_id, records=tuple(ordered))

    @cached_property
    def timestamps(self) -> tuple[int, ...]:
        return tuple(r.timestamp for r in self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[EventRecord]:
        return iter(self.records)


@dataclass(frozen=True)
class GoalSpec:
    """Which events count as goals, and how far ahead goal attribution looks.

    ``attribution_window`` is the look-ahead (ms) used when estimating the
    conditional probability that an event is followed by a goal.
    """

    goal_event_names: frozenset[str]
    attribution_window: int = MS_PER_DAY

    def __post_init__(self) -> None:
        object.__setattr__(self, "goal_event_names", frozenset(self.goal_event_names))
        if not self.goal_event_names:
            raise ValueError("goal_event_names must be non-empty")
        if any(not n for n in self.goal_event_names):
            raise ValueError("goal event names must be non-empty strings")
        if self.attribution_window <= 0:
            raise ValueError(f"attribution_window must be positive, got {self.attribution_window}")

    def to_dict(self) -> dict:
        return {
            "goal_events": sorted(self.goal_event_names),
            "attribution_window_ms": self.attribution_window,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GoalSpec":
        return cls(
            goal_event_names=frozenset(d["goal_events"]),
            attribution_window=int(d["attribution_window_ms"]),
        )


@dataclass(frozen=True)
class IngestReport:
    """Outcome of one ingestion pass: accepted record count plus failures."""

    n_records: int
    failures: tuple[tuple[int, str], ...] = field(default_factory=tuple)

    @property
    def n_failed(self) -> int:
        return len(self.failures)


def _parse_line(line: str) -> EventRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    for key in ("user_id", "ts", "event"):
        if key not in obj:
            raise ValueError(f"missing required field {key!r}")
    user_id = obj["user_id"]
    ts = obj["ts"]
    name = obj["event"]
    if not isinstance(user_id, str):
        raise ValueError("user_id must be a string")
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise ValueError("ts must be an integer (epoch milliseconds)")
    if not isinstance(name, str):
        raise ValueError("event must be a string")
    value = obj.get("value")
    if value is not None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError("value must be a number")
        value = float(value)
    return EventRecord(user_id=user_id, timestamp=ts, event_name=name, value=value)


def _iter_lines(source: IO[bytes] | IO[str] | str | Path) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from fh
        return
    for line in source:
        if isinstance(line, bytes):
            yield line.decode("utf-8")
        else:
            yield line


def ingest_events(source: IO[bytes] | IO[str] | str | Path) -> tuple[dict[str, EventStream], IngestReport]:
    """Load a JSON-lines event log into per-user sorted streams.

    Each line is an object with fields ``user_id``, ``ts``, ``event`` and
    optional ``value``. Malformed lines are collected into the report rather
    than silently dropped; if more than half of the non-blank lines fail,
    the whole ingestion raises :class:`IngestError` (corrupted input should
    not half-load). I/O problems propagate as OSError.
    """
    per_user: dict[str, list[EventRecord]] = {}
    failures: list[tuple[int, str]] = []
    n_lines = 0
    n_ok = 0
    for line_no, raw in enumerate(_iter_lines(source), start=1):
        if not raw.strip():
            continue
        n_lines += 1
        try:
            record = _parse_line(raw)
        except (ValueError, json.JSONDecodeError) as exc:
            failures.append((line_no, str(exc)))
            continue
        per_user.setdefault(record.user_id, []).append(record)
        n_ok += 1

    report = IngestReport(n_records=n_ok, failures=tuple(failures))
    if n_lines > 0 and report.n_failed * 2 > n_lines:
        raise IngestError(
            f"{report.n_failed} of {n_lines} lines failed to parse", report
        )
    streams = {
        uid: EventStream.from_records(uid, records) for uid, records in per_user.items()
    }
    return streams, report


def record_to_line(record: EventRecord) -> str:
    obj: dict = {"user_id": record.user_id, "ts": record.timestamp, "event": record.event_name}
    if record.value is not None:
        obj["value"] = record.value
    return json.dumps(obj, sort_keys=True)


def write_events(
    streams: Mapping[str, EventStream] | Iterable[EventStream],
    sink: IO[str] | str | Path,
) -> None:
    """Serialise streams back to the JSON-lines log format.

    Streams are written in sorted user order so output is canonical; a
    serialise/ingest cycle is the identity for valid records.
    """
    if isinstance(streams, Mapping):
        ordered = [streams[k] for k in sorted(streams)]
    else:
        ordered = sorted(streams, key=lambda s: s.user_id)
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as fh:
            _write_lines(ordered, fh)
    else:
        _write_lines(ordered, sink)


def _write_lines(ordered: list[EventStream], fh: IO[str]) -> None:
    for stream in ordered:
        for record in stream:
            fh.write(record_to_line(record))
            fh.write("\n")


def events_to_text(streams: Mapping[str, EventStream] | Iterable[EventStream]) -> str:
    buf = io.StringIO()
    write_events(streams, buf)
    return buf.getvalue()


def slice_window(stream: EventStream, window: Window) -> EventStream:
    """Records with ``window.start <= t < window.end``, order preserved."""
    ts = stream.timestamps
    lo = bisect_left(ts, window.start)
    hi = bisect_left(ts, window.end)
    return EventStream(user_id=stream.user_id, records=stream.records[lo:hi])
