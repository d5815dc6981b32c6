"""Synthetic user population with known causal structure.

Users emit events from inhomogeneous Poisson processes with a shared
seasonal modulation; designated precursor events spawn goal events with a
configurable conversion probability, giving the weight fitter real signal to
find. Each user carries latent per-action lift multipliers that scale event
rates after an intervention, so every causal quantity the estimators should
recover is known exactly.

All randomness flows through split generators keyed on (seed, purpose, user),
so parallel and serial simulation produce identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .events import MS_PER_DAY, EventRecord, EventStream, GoalSpec, Window
from .policy import ActionCombo
from .rng import rng_for


@dataclass(frozen=True)
class PreferenceModel:
    """How latent lift multipliers are assigned across the population.

    kind "inert": no user responds to anything (every multiplier 1).
    kind "uniform": every label of ``action_set`` carries ``lift`` for every
        user, so any combo produces the same known effect.
    kind "one_hot": each user responds to exactly one label of
        ``action_set`` (chosen uniformly per user) with ``lift``.
    """

    kind: str = "inert"
    action_set: str | None = None
    labels: tuple[str, ...] = ()
    lift: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.kind not in ("inert", "uniform", "one_hot"):
            raise ValueError(f"unknown preference kind {self.kind!r}")
        if self.kind != "inert":
            if not self.action_set or not self.labels:
                raise ValueError(f"{self.kind!r} preferences need an action set and labels")
        if not (self.lift >= 0 and math.isfinite(self.lift)):
            raise ValueError(f"lift must be finite and non-negative, got {self.lift}")

    def draw(self, rng: np.random.Generator) -> dict[tuple[str, str], float]:
        if self.kind == "inert":
            return {}
        if self.kind == "uniform":
            return {(self.action_set, label): self.lift for label in self.labels}
        chosen = self.labels[int(rng.integers(len(self.labels)))]
        prefs = {(self.action_set, label): 1.0 for label in self.labels}
        prefs[(self.action_set, chosen)] = self.lift
        return prefs

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "action_set": self.action_set,
            "labels": list(self.labels),
            "lift": self.lift,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PreferenceModel":
        return cls(
            kind=str(d.get("kind", "inert")),
            action_set=d.get("action_set"),
            labels=tuple(d.get("labels", ())),
            lift=float(d.get("lift", 1.0)),
        )


@dataclass(frozen=True)
class SimConfig:
    """Population and behaviour parameters for the synthetic world.

    Rates are events per day. ``conversion_rates`` gives, per precursor
    event name, the probability that one occurrence spawns a goal event a
    short lag later; the goal event emitted is the lexicographically first
    goal name. ``lifted_events`` restricts which base rates an intervention
    multiplies (None lifts them all).
    """

    n_users: int
    horizon: int
    seed: int
    base_rates: Mapping[str, float]
    goal_spec: GoalSpec
    seasonal_amplitude: float = 0.0
    seasonal_period: int = 7 * MS_PER_DAY
    conversion_rates: Mapping[str, float] = field(default_factory=dict)
    conversion_lag: int | None = None
    lifted_events: frozenset[str] | None = None
    responsiveness: float = 1.0
    preferences: PreferenceModel = field(default_factory=PreferenceModel)
    event_values: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "base_rates", dict(self.base_rates))
        object.__setattr__(self, "conversion_rates", dict(self.conversion_rates))
        object.__setattr__(self, "event_values", dict(self.event_values))
        if self.lifted_events is not None:
            object.__setattr__(self, "lifted_events", frozenset(self.lifted_events))
        if self.n_users < 0:
            raise ValueError(f"n_users must be non-negative, got {self.n_users}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if not (0.0 <= self.seasonal_amplitude < 1.0):
            raise ValueError(
                f"seasonal_amplitude must lie in [0, 1), got {self.seasonal_amplitude}"
            )
        if self.seasonal_period <= 0:
            raise ValueError(f"seasonal_period must be positive, got {self.seasonal_period}")
        for name, rate in self.base_rates.items():
            if rate < 0 or not math.isfinite(rate):
                raise ValueError(f"base rate for {name!r} must be finite and >= 0")
        for name, p in self.conversion_rates.items():
            if name not in self.base_rates:
                raise ValueError(f"conversion precursor {name!r} has no base rate")
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"conversion probability for {name!r} must be in [0, 1]")
        if not (0.0 <= self.responsiveness <= 1.0):
            raise ValueError(f"responsiveness must be in [0, 1], got {self.responsiveness}")

    @property
    def goal_event(self) -> str:
        return min(self.goal_spec.goal_event_names)

    @property
    def max_conversion_lag(self) -> int:
        if self.conversion_lag is not None:
            return self.conversion_lag
        return max(1, self.goal_spec.attribution_window // 2)

    def event_names(self) -> tuple[str, ...]:
        """All names the simulator can emit, in stable order."""
        names = set(self.base_rates) | self.goal_spec.goal_event_names
        return tuple(sorted(names))

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "horizon_ms": self.horizon,
            "seed": self.seed,
            "base_rates_per_day": {k: self.base_rates[k] for k in sorted(self.base_rates)},
            "goal_spec": self.goal_spec.to_dict(),
            "seasonal_amplitude": self.seasonal_amplitude,
            "seasonal_period_ms": self.seasonal_period,
            "conversion_rates": {
                k: self.conversion_rates[k] for k in sorted(self.conversion_rates)
            },
            "conversion_lag_ms": self.conversion_lag,
            "lifted_events": sorted(self.lifted_events) if self.lifted_events is not None else None,
            "responsiveness": self.responsiveness,
            "preferences": self.preferences.to_dict(),
            "event_values": {k: self.event_values[k] for k in sorted(self.event_values)},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimConfig":
        lifted = d.get("lifted_events")
        return cls(
            n_users=int(d["n_users"]),
            horizon=int(d["horizon_ms"]),
            seed=int(d["seed"]),
            base_rates=dict(d["base_rates_per_day"]),
            goal_spec=GoalSpec.from_dict(d["goal_spec"]),
            seasonal_amplitude=float(d.get("seasonal_amplitude", 0.0)),
            seasonal_period=int(d.get("seasonal_period_ms", 7 * MS_PER_DAY)),
            conversion_rates=dict(d.get("conversion_rates", {})),
            conversion_lag=(
                int(d["conversion_lag_ms"]) if d.get("conversion_lag_ms") is not None else None
            ),
            lifted_events=frozenset(lifted) if lifted is not None else None,
            responsiveness=float(d.get("responsiveness", 1.0)),
            preferences=PreferenceModel.from_dict(d.get("preferences", {})),
            event_values=dict(d.get("event_values", {})),
        )


@dataclass(frozen=True)
class LatentUser:
    """Ground-truth causal profile: lift per (action set, label), plus a gate.

    A multiplier of 1 means that action has no causal effect on this user.
    ``responsiveness`` is the probability an intervention takes hold at all.
    """

    user_id: str
    preference: Mapping[tuple[str, str], float]
    responsiveness: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "preference", dict(self.preference))
        for key, m in self.preference.items():
            if m < 0 or not math.isfinite(m):
                raise ValueError(f"multiplier for {key!r} must be finite and >= 0")
        if not (0.0 <= self.responsiveness <= 1.0):
            raise ValueError(f"responsiveness must be in [0, 1], got {self.responsiveness}")

    def combo_multiplier(self, combo: ActionCombo) -> float:
        m = 1.0
        for set_name, label in combo.choices:
            m *= self.preference.get((set_name, label), 1.0)
        return m

    def preferred_label(self, set_name: str) -> str | None:
        """The single strictly-largest multiplier label in a set, if any."""
        best, best_m = None, 1.0
        for (s, label), m in self.preference.items():
            if s == set_name and m > best_m:
                best, best_m = label, m
        return best


def generate_population(cfg: SimConfig) -> list[LatentUser]:
    """Deterministic population for a config: same seed, same users."""
    users = []
    for i in range(cfg.n_users):
        rng = rng_for(cfg.seed, "population", i)
        users.append(
            LatentUser(
                user_id=f"u{i:05d}",
                preference=cfg.preferences.draw(rng),
                responsiveness=cfg.responsiveness,
            )
        )
    return users


def _rate_at(base: float, t: np.ndarray, cfg: SimConfig) -> np.ndarray:
    return base * (1.0 + cfg.seasonal_amplitude * np.sin(2.0 * np.pi * t / cfg.seasonal_period))


def _generate_events(
    cfg: SimConfig,
    user_id: str,
    window: Window,
    rng: np.random.Generator,
    rate_scale: float,
    scaled_events: frozenset[str] | None,
) -> list[EventRecord]:
    """Thinning sampler for the seasonal Poisson process plus conversions.

    Goal events spawned by a precursor land at the precursor's time plus a
    uniform lag of at most ``max_conversion_lag``. Children may trail past
    the window end: only parents are bounded by the window, so generating a
    span in segments is distributionally identical to generating it whole.
    """
    if window.span == 0:
        return []
    records: list[tuple[int, str]] = []
    for name in sorted(cfg.base_rates):
        base = cfg.base_rates[name] / MS_PER_DAY
        if scaled_events is None or name in scaled_events:
            base *= rate_scale
        if base <= 0.0:
            continue
        rate_max = base * (1.0 + cfg.seasonal_amplitude)
        n_candidates = int(rng.poisson(rate_max * window.span))
        if n_candidates == 0:
            continue
        times = window.start + rng.random(n_candidates) * window.span
        accept = rng.random(n_candidates) * rate_max <= _rate_at(base, times, cfg)
        kept = np.floor(times[accept]).astype(np.int64)

        conversion_p = cfg.conversion_rates.get(name, 0.0)
        if conversion_p > 0.0:
            converts = rng.random(len(kept)) < conversion_p
            lags = rng.integers(1, cfg.max_conversion_lag + 1, size=len(kept))
            goal_name = cfg.goal_event
            for t, hit, lag in zip(kept.tolist(), converts.tolist(), lags.tolist()):
                records.append((t, name))
                if hit:
                    records.append((t + int(lag), goal_name))
        else:
            records.extend((t, name) for t in kept.tolist())

    records.sort(key=lambda pair: pair[0])
    return [
        EventRecord(
            user_id=user_id,
            timestamp=t,
            event_name=name,
            value=cfg.event_values.get(name),
        )
        for t, name in records
    ]


def simulate_organic(
    user: LatentUser, cfg: SimConfig, window: Window, rng: np.random.Generator
) -> EventStream:
    """Untreated behaviour over the window."""
    records = _generate_events(cfg, user.user_id, window, rng, 1.0, None)
    return EventStream(user_id=user.user_id, records=tuple(records))


def apply_intervention(
    user: LatentUser,
    combo: ActionCombo,
    t_int: int,
    cfg: SimConfig,
    rng: np.random.Generator,
    window: Window | None = None,
) -> EventStream:
    """Post-intervention behaviour: lifted event rates scale by the user's
    multiplier for the combo, gated by responsiveness.

    The gate draw happens first, so an unresponsive user's segment is
    organic in law. Only the post window is generated; behaviour before
    t_int is untouched by construction.
    """
    if window is None:
        window = Window(t_int, t_int + MS_PER_DAY)
    if window.start < t_int:
        raise ValueError("intervention window must start at or after t_int")
    responds = bool(rng.random() < user.responsiveness)
    multiplier = user.combo_multiplier(combo) if responds else 1.0
    records = _generate_events(cfg, user.user_id, window, rng, multiplier, cfg.lifted_events)
    return EventStream(user_id=user.user_id, records=tuple(records))
