"""Outcome measurement: event informativeness weights and decayed event sums.

An outcome over a window is the sum, across events in the window, of an
event-name weight times a temporal decay weight times the record's value.
Event weights are log-likelihood ratios of the smoothed conditional
probabilities of seeing the event among goal-followed versus not-goal-followed
occurrences, so positive weight means the event is evidence of an upcoming
goal.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping

from .events import EventStream, GoalSpec, Window


@dataclass(frozen=True)
class EventWeightTable:
    """Fitted per-event-name weights plus the settings that produced them.

    Names absent from the table score 0: unseen is not evidence either way,
    and 0 is exactly the log-likelihood ratio of equal conditionals.
    """

    weights: Mapping[str, float]
    smoothing: float
    goal_spec: GoalSpec

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", dict(self.weights))
        for name, w in self.weights.items():
            if not math.isfinite(w):
                raise ValueError(f"non-finite weight for event {name!r}")

    def weight(self, event_name: str) -> float:
        return self.weights.get(event_name, 0.0)

    def scaled(self, factor: float) -> "EventWeightTable":
        return EventWeightTable(
            weights={k: v * factor for k, v in self.weights.items()},
            smoothing=self.smoothing,
            goal_spec=self.goal_spec,
        )

    def to_dict(self) -> dict:
        return {
            "weights": {k: self.weights[k] for k in sorted(self.weights)},
            "smoothing": self.smoothing,
            "goal_spec": self.goal_spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EventWeightTable":
        return cls(
            weights={str(k): float(v) for k, v in d["weights"].items()},
            smoothing=float(d["smoothing"]),
            goal_spec=GoalSpec.from_dict(d["goal_spec"]),
        )

    def save(self, sink: IO[str] | str | Path) -> None:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if isinstance(sink, (str, Path)):
            Path(sink).write_text(text + "\n", encoding="utf-8")
        else:
            sink.write(text + "\n")

    @classmethod
    def load(cls, source: IO[str] | str | Path) -> "EventWeightTable":
        if isinstance(source, (str, Path)):
            return cls.from_dict(json.loads(Path(source).read_text(encoding="utf-8")))
        return cls.from_dict(json.load(source))


@dataclass(frozen=True)
class DecayConfig:
    """Exponential time decay anchored at ``reference`` (usually t_int)."""

    half_life: int
    reference: int

    def __post_init__(self) -> None:
        if self.half_life <= 0:
            raise ValueError(f"half_life must be positive, got {self.half_life}")


@dataclass(frozen=True)
class OutcomeScore:
    value: float
    window: Window
    user_id: str

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"outcome value must be finite, got {self.value}")


def temporal_weight(t: int, cfg: DecayConfig) -> float:
    """Decay weight ``0.5 ** (|t - reference| / half_life)``.

    Symmetric in time, so the same formula serves windows before and after
    the reference instant.
    """
    return 0.5 ** (abs(t - cfg.reference) / cfg.half_life)


def _count_follows(stream: EventStream, goal: GoalSpec) -> tuple[dict[str, int], dict[str, int]]:
    followed: dict[str, int] = {}
    unfollowed: dict[str, int] = {}
    goal_ts = [r.timestamp for r in stream if r.event_name in goal.goal_event_names]
    w = goal.attribution_window
    for record in stream:
        t = record.timestamp
        lo = bisect_left(goal_ts, t)
        hi = bisect_left(goal_ts, t + w)
        n_goals_ahead = hi - lo
        if record.event_name in goal.goal_event_names:
            n_goals_ahead -= 1  # a goal does not count toward itself
        bucket = followed if n_goals_ahead > 0 else unfollowed
        bucket[record.event_name] = bucket.get(record.event_name, 0) + 1
    return followed, unfollowed


def fit_event_weights(
    streams: Iterable[EventStream],
    goal: GoalSpec,
    smoothing: float = 1.0,
) -> EventWeightTable:
    """Fit log-likelihood-ratio weights from observed event streams.

    An occurrence at time t is "goal-followed" when a distinct goal record
    falls in the half-open look-ahead [t, t + attribution_window). Goal
    events are weighted like any other: they count toward subsequent goals,
    never toward themselves. Additive smoothing keeps every weight finite.
    """
    if smoothing <= 0:
        raise ValueError(f"smoothing must be positive, got {smoothing}")
    followed: dict[str, int] = {}
    unfollowed: dict[str, int] = {}
    n_streams = 0
    for stream in streams:
        n_streams += 1
        stream_followed, stream_unfollowed = _count_follows(stream, goal)
        for name, c in stream_followed.items():
            followed[name] = followed.get(name, 0) + c
        for name, c in stream_unfollowed.items():
            unfollowed[name] = unfollowed.get(name, 0) + c
    if n_streams == 0:
        raise ValueError("fit_event_weights requires at least one stream")

    total_followed = sum(followed.values())
    total_unfollowed = sum(unfollowed.values())
    weights = {}
    for name in sorted(set(followed) | set(unfollowed)):
        p_goal = (followed.get(name, 0) + smoothing) / (total_followed + 2 * smoothing)
        p_nogoal = (unfollowed.get(name, 0) + smoothing) / (total_unfollowed + 2 * smoothing)
        weights[name] = math.log(p_goal / p_nogoal)
    return EventWeightTable(weights=weights, smoothing=smoothing, goal_spec=goal)


def outcome_score(
    stream: EventStream,
    window: Window,
    table: EventWeightTable,
    decay: DecayConfig,
) -> OutcomeScore:
    """Weighted event sum over the window: sum of w_event * w_time * value."""
    ts = stream.timestamps
    lo = bisect_left(ts, window.start)
    hi = bisect_left(ts, window.end)
    weights = table.weights
    reference = decay.reference
    half_life = decay.half_life
    total = 0.0
    for record in stream.records[lo:hi]:
        w_e = weights.get(record.event_name, 0.0)
        if w_e == 0.0:
            continue
        decay_w = 0.5 ** (abs(record.timestamp - reference) / half_life)
        total += w_e * decay_w * record.effective_value
    return OutcomeScore(value=total, window=window, user_id=stream.user_id)
