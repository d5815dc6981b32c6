"""Individual treatment effects via difference-in-differences.

The effect of one intervention on one user is the change in that user's
outcome across the intervention instant, minus the same change averaged over
a nearest-neighbour control group. Subtracting the control change cancels
trends and seasonality shared by all users, which is what separates a causal
read from a correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .events import MS_PER_DAY, EventStream, Window, slice_window
from .outcome import DecayConfig, EventWeightTable, outcome_score

if TYPE_CHECKING:
    from .policy import ActionCombo


@dataclass(frozen=True)
class InterventionRecord:
    """One agent action applied to one user at ``t_int``."""

    user_id: str
    t_int: int
    action_combo: "ActionCombo"
    context_key: str

    def __post_init__(self) -> None:
        if not isinstance(self.t_int, int) or isinstance(self.t_int, bool):
            raise ValueError(f"t_int must be an integer timestamp, got {self.t_int!r}")


@dataclass(frozen=True)
class DidConfig:
    """Windowing and reward settings for effect estimation.

    ``half_life`` sets the outcome decay scale used on both sides of the
    intervention; it lives here because the estimator needs a decay anchored
    at each intervention's own instant.
    """

    t_delta: int
    k_controls: int = 10
    binarize_threshold: float = 0.0
    half_life: int = MS_PER_DAY

    def __post_init__(self) -> None:
        if self.t_delta <= 0:
            raise ValueError(f"t_delta must be positive, got {self.t_delta}")
        if self.k_controls < 1:
            raise ValueError(f"k_controls must be >= 1, got {self.k_controls}")
        if self.half_life <= 0:
            raise ValueError(f"half_life must be positive, got {self.half_life}")


@dataclass(frozen=True)
class IteEstimate:
    """Estimated effect of a single intervention, plus its binarised reward."""

    delta_y: float
    delta_y_treated: float
    delta_y_control: float
    control_ids: tuple[str, ...]
    reward_bit: int

    def to_dict(self) -> dict:
        return {
            "delta_y": self.delta_y,
            "delta_y_treated": self.delta_y_treated,
            "delta_y_control": self.delta_y_control,
            "control_ids": list(self.control_ids),
            "reward_bit": self.reward_bit,
        }


@dataclass(frozen=True)
class UserProfile:
    """L2-normalised event-frequency vector over a trailing window.

    The all-zero vector is allowed and represents an inactive user.
    """

    user_id: str
    feature_vector: tuple[float, ...]

    def __post_init__(self) -> None:
        vec = tuple(float(x) for x in self.feature_vector)
        object.__setattr__(self, "feature_vector", vec)
        if any(x < 0 or not math.isfinite(x) for x in vec):
            raise ValueError("profile features must be finite and non-negative")
        norm = math.sqrt(sum(x * x for x in vec))
        if norm != 0.0 and abs(norm - 1.0) > 1e-6:
            raise ValueError(f"profile vector must be L2-normalised or zero, norm={norm}")

    @classmethod
    def from_counts(cls, user_id: str, counts: Sequence[float]) -> "UserProfile":
        arr = np.asarray(counts, dtype=float)
        norm = float(np.linalg.norm(arr))
        if norm > 0:
            arr = arr / norm
        return cls(user_id=user_id, feature_vector=tuple(arr.tolist()))


def build_profile(
    stream: EventStream, window: Window, vocabulary: Sequence[str]
) -> UserProfile:
    """Profile a user by event-name counts inside ``window``, L2-normalised."""
    index = {name: i for i, name in enumerate(vocabulary)}
    counts = [0.0] * len(vocabulary)
    for record in slice_window(stream, window):
        i = index.get(record.event_name)
        if i is not None:
            counts[i] += 1.0
    return UserProfile.from_counts(stream.user_id, counts)


class ProfileIndex:
    """Stacked profile matrix for repeated nearest-neighbour queries."""

    def __init__(self, profiles: Sequence[UserProfile]):
        self.profiles = tuple(profiles)
        self.ids = np.array([p.user_id for p in self.profiles])
        if self.profiles:
            self.matrix = np.array([p.feature_vector for p in self.profiles], dtype=float)
        else:
            self.matrix = np.zeros((0, 0))

    def __len__(self) -> int:
        return len(self.profiles)

    def distances(self, vector: Sequence[float]) -> np.ndarray:
        diff = self.matrix - np.asarray(vector, dtype=float)
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))


@dataclass(frozen=True)
class ControlSelection:
    control_ids: tuple[str, ...]
    shortfall: bool


def pre_post_windows(t_int: int, t_delta: int) -> tuple[Window, Window]:
    """The half-open windows [t_int - t_delta, t_int) and [t_int, t_int + t_delta).

    They partition [t_int - t_delta, t_int + t_delta) exactly; the
    intervention instant itself belongs to the post window only.
    """
    if t_delta <= 0:
        raise ValueError(f"t_delta must be positive, got {t_delta}")
    return Window(t_int - t_delta, t_int), Window(t_int, t_int + t_delta)


def select_controls(
    treated: UserProfile,
    candidates: Sequence[UserProfile] | ProfileIndex,
    k: int,
    eligible: Callable[[UserProfile], bool] | None = None,
) -> ControlSelection:
    """The k candidates nearest to ``treated`` in Euclidean distance.

    Ties break lexicographically on user_id so the result is a pure function
    of its inputs. When fewer than k candidates exist, all are returned with
    ``shortfall`` set. ``eligible``, when given, is asserted against every
    candidate: passing an ineligible pool is a caller bug, not a soft skip.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    index = candidates if isinstance(candidates, ProfileIndex) else ProfileIndex(candidates)
    if len(index) == 0:
        raise ValueError("no control candidates available")
    if eligible is not None:
        for profile in index.profiles:
            if not eligible(profile):
                raise ValueError(f"candidate {profile.user_id!r} fails the eligibility predicate")
    if any(index.ids == treated.user_id):
        raise ValueError("candidates must exclude the treated user")

    dist = index.distances(treated.feature_vector)
    n = len(dist)
    if k >= n:
        chosen = np.lexsort((index.ids, dist))
    else:
        # Partition first, then order only the candidates at or below the kth
        # distance, so boundary ties still resolve lexicographically.
        kth = np.partition(dist, k - 1)[k - 1]
        candidates = np.flatnonzero(dist <= kth)
        order = np.lexsort((index.ids[candidates], dist[candidates]))
        chosen = candidates[order[:k]]
    return ControlSelection(
        control_ids=tuple(str(index.ids[i]) for i in chosen),
        shortfall=n < k,
    )


def binarize(delta_y: float, threshold: float = 0.0) -> int:
    """1 when the effect strictly exceeds the threshold, else 0.

    Strict: a tie (exactly zero incremental effect at the default threshold)
    counts as failure, keeping the Bernoulli reward conservative.
    """
    return 1 if delta_y > threshold else 0


def did_estimate(
    treated_stream: EventStream,
    intervention: InterventionRecord,
    control_streams: Sequence[EventStream],
    table: EventWeightTable,
    cfg: DidConfig,
) -> IteEstimate:
    """Difference-in-differences effect of one intervention.

    Outcomes for the treated user and every control are measured over the
    same pre/post windows with decay anchored at the treated user's t_int,
    so all four terms are commensurable. Control pre/post outcomes are
    averaged over the group before differencing.
    """
    if not control_streams:
        raise ValueError("did_estimate requires at least one control stream")
    pre, post = pre_post_windows(intervention.t_int, cfg.t_delta)
    decay = DecayConfig(half_life=cfg.half_life, reference=intervention.t_int)

    y_t_pre = outcome_score(treated_stream, pre, table, decay).value
    y_t_post = outcome_score(treated_stream, post, table, decay).value
    c_pre = [outcome_score(s, pre, table, decay).value for s in control_streams]
    c_post = [outcome_score(s, post, table, decay).value for s in control_streams]

    delta_treated = y_t_post - y_t_pre
    delta_control = (sum(c_post) - sum(c_pre)) / len(control_streams)
    delta_y = delta_treated - delta_control
    return IteEstimate(
        delta_y=delta_y,
        delta_y_treated=delta_treated,
        delta_y_control=delta_control,
        control_ids=tuple(s.user_id for s in control_streams),
        reward_bit=binarize(delta_y, cfg.binarize_threshold),
    )
