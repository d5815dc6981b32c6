"""Experiment harness: the decide / intervene / measure / update loop.

Runs the full feedback loop against the simulator at desk scale: a seeded
treatment/control split, one decision opportunity per treated user per
simulated day, difference-in-differences measurement against the held-out
control group, posterior updates, persistent agent state, and a matched
lift report with bootstrap confidence intervals.

Everything is keyed randomness: any (config, seed) pair fully determines the
audit logs and the lift report, and a run can be snapshotted mid-way and
resumed bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import catalog as catalog_mod
from .catalog import MessageCatalog, MessageTemplate, eligible_templates, match_message
from .did import (
    DidConfig,
    InterventionRecord,
    ProfileIndex,
    UserProfile,
    did_estimate,
    select_controls,
)
from .events import MS_PER_DAY, EventStream, Window
from .outcome import EventWeightTable, fit_event_weights
from .policy import (
    ActionCombo,
    ActionSpace,
    BetaPosterior,
    PosteriorStore,
    thompson_select,
    update_posterior,
)
from .rng import rng_for
from .simulate import LatentUser, SimConfig, apply_intervention, generate_population, simulate_organic

BASELINE_EVENT = "baseline_message"

RUN_STATE_FORMAT = "nudgelab-run-state"
STORE_FORMAT = "nudgelab-posterior-store"
FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Inconsistent experiment configuration, detected at startup."""


class SnapshotError(Exception):
    """A snapshot file is corrupt, truncated, or of an unsupported version."""


@dataclass(frozen=True)
class MetricSpec:
    """One reported metric: which events count, and whether we report the
    share of users with any such event ("binary") or the mean per-user total
    of event values ("value")."""

    name: str
    events: tuple[str, ...]
    kind: str = "binary"

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))
        if not self.name:
            raise ValueError("metric name must be non-empty")
        if not self.events:
            raise ValueError(f"metric {self.name!r} must name at least one event")
        if self.kind not in ("binary", "value"):
            raise ValueError(f"metric kind must be 'binary' or 'value', got {self.kind!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "events": list(self.events), "kind": self.kind}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricSpec":
        return cls(name=str(d["name"]), events=tuple(d["events"]), kind=str(d.get("kind", "binary")))


@dataclass(frozen=True)
class MetricLift:
    metric: str
    kind: str
    treated_rate: float
    control_rate: float
    absolute_lift: float
    relative_lift: float | None
    ci_low: float
    ci_high: float

    def __post_init__(self) -> None:
        if self.ci_low > self.ci_high:
            raise ValueError("confidence interval bounds must be ordered")

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "kind": self.kind,
            "treated_rate": self.treated_rate,
            "control_rate": self.control_rate,
            "absolute_lift": self.absolute_lift,
            "relative_lift": self.relative_lift,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


@dataclass(frozen=True)
class LiftReport:
    metrics: tuple[MetricLift, ...]
    ci_level: float
    n_pairs: int
    n_unmatched: int

    def metric(self, name: str) -> MetricLift:
        for m in self.metrics:
            if m.metric == name:
                return m
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "ci_level": self.ci_level,
            "n_pairs": self.n_pairs,
            "n_unmatched": self.n_unmatched,
            "metrics": [m.to_dict() for m in self.metrics],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LiftReport":
        return cls(
            metrics=tuple(
                MetricLift(
                    metric=m["metric"],
                    kind=m["kind"],
                    treated_rate=m["treated_rate"],
                    control_rate=m["control_rate"],
                    absolute_lift=m["absolute_lift"],
                    relative_lift=m["relative_lift"],
                    ci_low=m["ci_low"],
                    ci_high=m["ci_high"],
                )
                for m in d["metrics"]
            ),
            ci_level=float(d["ci_level"]),
            n_pairs=int(d["n_pairs"]),
            n_unmatched=int(d["n_unmatched"]),
        )

    def format_table(self) -> str:
        pct = int(round(self.ci_level * 100))
        header = (
            f"{'metric':<16}{'treated':>10}{'control':>10}{'abs lift':>12}"
            f"{'rel lift':>10}{'':>3}{pct}% CI"
        )
        lines = [header, "-" * len(header)]
        for m in self.metrics:
            rel = f"{m.relative_lift * 100:+.2f}%" if m.relative_lift is not None else "n/a"
            lines.append(
                f"{m.metric:<16}{m.treated_rate:>10.4f}{m.control_rate:>10.4f}"
                f"{m.absolute_lift:>+12.4f}{rel:>10}   "
                f"[{m.ci_low:+.4f}, {m.ci_high:+.4f}]"
            )
        lines.append(f"pairs: {self.n_pairs}   unmatched treated: {self.n_unmatched}")
        return "\n".join(lines)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; see README for the JSON schema."""

    sim: SimConfig
    space: ActionSpace
    catalog: MessageCatalog
    did: DidConfig
    n_cycles: int
    treatment_fraction: float
    metrics: tuple[MetricSpec, ...]
    profile_window_days: int = 14
    context_mode: str = "per_user"
    use_empirical_bayes: bool = True
    frequency_cap: int | None = None
    baseline_message_rate: float = 0.0
    user_tag_rates: Mapping[str, float] = field(default_factory=dict)
    smoothing_alpha: float = 1.0
    bootstrap_resamples: int = 10_000
    ci_level: float = 0.95
    treatment_offset: int = MS_PER_DAY // 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "metrics", tuple(self.metrics))
        object.__setattr__(self, "user_tag_rates", dict(self.user_tag_rates))
        if self.catalog.space != self.space:
            raise ConfigError("catalogue was built against a different action space")
        if not (0.0 < self.treatment_fraction < 1.0):
            raise ConfigError(
                f"treatment_fraction must lie in (0, 1), got {self.treatment_fraction}"
            )
        if self.n_cycles < 1:
            raise ConfigError(f"n_cycles must be >= 1, got {self.n_cycles}")
        if not self.metrics:
            raise ConfigError("at least one metric is required")
        if self.profile_window_days < 1:
            raise ConfigError("profile_window_days must be >= 1")
        if self.context_mode not in ("per_user", "global", "two_tier"):
            raise ConfigError(f"unknown context_mode {self.context_mode!r}")
        if not (0 < self.treatment_offset < MS_PER_DAY):
            raise ConfigError("treatment_offset must fall inside the day")
        if self.did.t_delta > min(self.treatment_offset, MS_PER_DAY - self.treatment_offset):
            raise ConfigError(
                "did.t_delta must fit within the decision day on both sides of the "
                "intervention instant"
            )
        needed = (self.profile_window_days + self.n_cycles) * MS_PER_DAY
        if self.sim.horizon < needed:
            raise ConfigError(
                f"sim horizon {self.sim.horizon} ms is shorter than warmup plus cycles "
                f"({needed} ms)"
            )
        if self.baseline_message_rate < 0:
            raise ConfigError("baseline_message_rate must be >= 0")
        if self.baseline_message_rate > 0 and BASELINE_EVENT in self.sim.base_rates:
            raise ConfigError(f"{BASELINE_EVENT!r} collides with a configured base rate")
        for tag, rate in self.user_tag_rates.items():
            if not (0.0 <= rate <= 1.0):
                raise ConfigError(f"tag rate for {tag!r} must be in [0, 1]")
        if self.smoothing_alpha <= 0:
            raise ConfigError("smoothing_alpha must be positive")
        if self.bootstrap_resamples < 1:
            raise ConfigError("bootstrap_resamples must be >= 1")
        if not (0.0 < self.ci_level < 1.0):
            raise ConfigError("ci_level must lie in (0, 1)")
        prefs = self.sim.preferences
        if prefs.kind != "inert":
            try:
                action_set = self.space.action_set(prefs.action_set)
            except KeyError:
                raise ConfigError(
                    f"preference model targets unknown action set {prefs.action_set!r}"
                ) from None
            unknown = set(prefs.labels) - set(action_set.labels)
            if unknown:
                raise ConfigError(f"preference model uses unknown labels {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "sim": self.sim.to_dict(),
            "action_space": self.space.to_dict(),
            "catalog": self.catalog.to_dict(),
            "did": {
                "t_delta_ms": self.did.t_delta,
                "k_controls": self.did.k_controls,
                "binarize_threshold": self.did.binarize_threshold,
                "half_life_ms": self.did.half_life,
            },
            "n_cycles": self.n_cycles,
            "treatment_fraction": self.treatment_fraction,
            "metrics": [m.to_dict() for m in self.metrics],
            "profile_window_days": self.profile_window_days,
            "context_mode": self.context_mode,
            "use_empirical_bayes": self.use_empirical_bayes,
            "frequency_cap": self.frequency_cap,
            "baseline_message_rate": self.baseline_message_rate,
            "user_tag_rates": dict(self.user_tag_rates),
            "smoothing_alpha": self.smoothing_alpha,
            "bootstrap_resamples": self.bootstrap_resamples,
            "ci_level": self.ci_level,
            "treatment_offset_ms": self.treatment_offset,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        space = ActionSpace.from_dict(d["action_space"])
        did_d = d["did"]
        return cls(
            sim=SimConfig.from_dict(d["sim"]),
            space=space,
            catalog=catalog_mod.load_catalog(d["catalog"], space),
            did=DidConfig(
                t_delta=int(did_d["t_delta_ms"]),
                k_controls=int(did_d.get("k_controls", 10)),
                binarize_threshold=float(did_d.get("binarize_threshold", 0.0)),
                half_life=int(did_d.get("half_life_ms", MS_PER_DAY)),
            ),
            n_cycles=int(d["n_cycles"]),
            treatment_fraction=float(d["treatment_fraction"]),
            metrics=tuple(MetricSpec.from_dict(m) for m in d["metrics"]),
            profile_window_days=int(d.get("profile_window_days", 14)),
            context_mode=str(d.get("context_mode", "per_user")),
            use_empirical_bayes=bool(d.get("use_empirical_bayes", True)),
            frequency_cap=(int(d["frequency_cap"]) if d.get("frequency_cap") is not None else None),
            baseline_message_rate=float(d.get("baseline_message_rate", 0.0)),
            user_tag_rates=dict(d.get("user_tag_rates", {})),
            smoothing_alpha=float(d.get("smoothing_alpha", 1.0)),
            bootstrap_resamples=int(d.get("bootstrap_resamples", 10_000)),
            ci_level=float(d.get("ci_level", 0.95)),
            treatment_offset=int(d.get("treatment_offset_ms", MS_PER_DAY // 2)),
        )


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ExperimentResult:
    report: LiftReport
    store: PosteriorStore
    weights: EventWeightTable
    decisions: tuple[dict, ...]
    estimates: tuple[dict, ...]
    n_messages: int
    n_skipped: int


class Experiment:
    """Mutable run state for one experiment; drive with :meth:`run`.

    All per-cycle randomness is keyed on (seed, purpose, user, day), never on
    call order, so cycles can be paused, resumed, or parallelised per user
    without changing any outcome.
    """

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.sim = self._effective_sim(cfg)
        self.seed = cfg.sim.seed
        self.users = generate_population(self.sim)
        self.n = len(self.users)
        if self.n < 2:
            raise ConfigError("need at least two users to form treatment and control groups")
        self.vocab = self.sim.event_names()
        self._vocab_index = {name: i for i, name in enumerate(self.vocab)}

        draws = rng_for(self.seed, "assignment").random(self.n)
        self.is_treated = draws < cfg.treatment_fraction
        if not self.is_treated.any() or self.is_treated.all():
            raise ConfigError("assignment produced an empty treatment or control group")
        self.control_indices = np.flatnonzero(~self.is_treated)
        self.treated_indices = np.flatnonzero(self.is_treated)

        self.user_tags: list[frozenset[str]] = [frozenset() for _ in range(self.n)]
        for tag in sorted(cfg.user_tag_rates):
            hits = rng_for(self.seed, "tags", tag).random(self.n) < cfg.user_tag_rates[tag]
            for i in np.flatnonzero(hits):
                self.user_tags[i] = self.user_tags[i] | {tag}

        # Mutable run state (everything else is regenerated deterministically).
        self.cycle = 0
        self.store = PosteriorStore()
        self.window_days = cfg.profile_window_days
        self.day_counts = np.zeros((self.window_days, self.n, len(self.vocab)))
        self.metric_totals = {m.name: np.zeros(self.n) for m in cfg.metrics}
        self.messages_sent = np.zeros(self.n, dtype=np.int64)
        self.decisions: list[dict] = []
        self.estimates: list[dict] = []

        self._warmup()
        self.weights = fit_event_weights(
            self._warmup_streams, self.sim.goal_spec, cfg.smoothing_alpha
        )
        self.pre_period_profiles = {
            u.user_id: p for u, p in zip(self.users, self._profiles_from_counts())
        }
        self.contexts = self._assign_contexts()
        self._warmup_streams = []  # streams are only needed for fitting

    @staticmethod
    def _effective_sim(cfg: ExperimentConfig) -> SimConfig:
        """Inject the baseline-message background shared by both groups."""
        sim = cfg.sim
        if cfg.baseline_message_rate <= 0:
            return sim
        lifted = sim.lifted_events if sim.lifted_events is not None else frozenset(sim.base_rates)
        return replace(
            sim,
            base_rates={**sim.base_rates, BASELINE_EVENT: cfg.baseline_message_rate},
            lifted_events=lifted,
        )

    # -- timeline helpers ---------------------------------------------------

    def _day_window(self, global_day: int) -> Window:
        start = global_day * MS_PER_DAY
        return Window(start, start + MS_PER_DAY)

    def _t_int(self, global_day: int) -> int:
        return global_day * MS_PER_DAY + self.cfg.treatment_offset

    def _global_day(self, cycle: int) -> int:
        return self.window_days + cycle

    # -- initialisation -----------------------------------------------------

    def _warmup(self) -> None:
        # One concatenated stream per user so goal attribution in the weight
        # fit is not cut at day boundaries.
        per_user: list[list] = [[] for _ in range(self.n)]
        for g in range(self.window_days):
            window = self._day_window(g)
            for i, user in enumerate(self.users):
                stream = simulate_organic(
                    user, self.sim, window, rng_for(self.seed, "cycle", i, g)
                )
                self._count_day(i, g, stream)
                per_user[i].extend(stream.records)
        self._warmup_streams = [
            EventStream.from_records(u.user_id, recs)
            for u, recs in zip(self.users, per_user)
        ]

    def _assign_contexts(self) -> list[str]:
        mode = self.cfg.context_mode
        if mode == "global":
            return ["global"] * self.n
        if mode == "per_user":
            return [u.user_id for u in self.users]
        totals = self.day_counts.sum(axis=(0, 2))
        median = float(np.median(totals))
        return ["tier_hi" if t > median else "tier_lo" for t in totals]

    # -- per-day bookkeeping --------------------------------------------------

    def _count_day(self, i: int, global_day: int, stream: EventStream, measure: bool = False) -> None:
        slot = self.day_counts[global_day % self.window_days, i]
        slot[:] = 0.0
        value_sums: dict[str, float] = {}
        for record in stream:
            idx = self._vocab_index.get(record.event_name)
            if idx is not None:
                slot[idx] += 1.0
            if measure:
                value_sums[record.event_name] = (
                    value_sums.get(record.event_name, 0.0) + record.effective_value
                )
        if measure:
            for spec in self.cfg.metrics:
                total = 0.0
                for name in spec.events:
                    if spec.kind == "binary":
                        idx = self._vocab_index.get(name)
                        if idx is not None:
                            total += slot[idx]
                    else:
                        total += value_sums.get(name, 0.0)
                if total:
                    self.metric_totals[spec.name][i] += total

    def _profile_matrix(self) -> np.ndarray:
        counts = self.day_counts.sum(axis=0)
        norms = np.linalg.norm(counts, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        return counts / safe[:, None]

    def _profiles_from_counts(self, matrix: np.ndarray | None = None) -> list[UserProfile]:
        if matrix is None:
            matrix = self._profile_matrix()
        return [
            UserProfile(user_id=u.user_id, feature_vector=tuple(row.tolist()))
            for u, row in zip(self.users, matrix)
        ]

    # -- empirical-Bayes prior over similar users -----------------------------

    def _make_prior_fn(
        self,
        i: int,
        profile_matrix: np.ndarray,
        eb_user_indices: np.ndarray,
    ):
        """Prior for user i's absent entries: mean posterior of the k most
        similar users that already hold data, mirroring
        :func:`nudgelab.policy.empirical_bayes_prior` with the control-
        selection neighbour definition."""
        if not self.cfg.use_empirical_bayes or len(eb_user_indices) == 0:
            return None
        store = self.store
        contexts = self.contexts
        k = self.cfg.did.k_controls
        target = profile_matrix[i]
        neighbours: np.ndarray | None = None

        def prior_fn(_context: str, set_name: str, label: str) -> BetaPosterior:
            nonlocal neighbours
            if neighbours is None:
                pool = eb_user_indices[eb_user_indices != i]
                if len(pool) == 0:
                    neighbours = pool
                else:
                    diff = profile_matrix[pool] - target
                    dist = np.einsum("ij,ij->i", diff, diff)
                    if k < len(pool):
                        kth = np.partition(dist, k - 1)[k - 1]
                        cand = np.flatnonzero(dist <= kth)
                        order = np.lexsort((pool[cand], dist[cand]))
                        neighbours = pool[cand[order[:k]]]
                    else:
                        neighbours = pool[np.lexsort((pool, dist))]
            posteriors = []
            for j in neighbours:
                entry = store.peek(contexts[j], set_name, label)
                if entry is not None:
                    posteriors.append(entry)
            if not posteriors:
                return store.default_prior
            alpha = sum(p.alpha for p in posteriors) / len(posteriors)
            beta = sum(p.beta for p in posteriors) / len(posteriors)
            return BetaPosterior(alpha, beta)

        return prior_fn

    @property
    def _index_of(self) -> dict[str, int]:
        cached = getattr(self, "_index_of_cache", None)
        if cached is None:
            cached = {u.user_id: i for i, u in enumerate(self.users)}
            self._index_of_cache = cached
        return cached

    # -- the decision cycle ---------------------------------------------------

    def run_cycle(self) -> None:
        cfg = self.cfg
        k = self.cycle
        g = self._global_day(k)
        day = self._day_window(g)
        t_int = self._t_int(g)

        profile_matrix = self._profile_matrix()
        profiles = self._profiles_from_counts(profile_matrix)
        control_index = ProfileIndex([profiles[i] for i in self.control_indices])
        eb_user_indices = self.treated_indices[self.messages_sent[self.treated_indices] > 0]

        day_streams: dict[int, EventStream] = {}
        pending = []

        for i in self.treated_indices:
            i = int(i)
            user = self.users[i]
            context = self.contexts[i]
            rng = rng_for(self.seed, "cycle", i, g)
            if cfg.frequency_cap is not None and self.messages_sent[i] >= cfg.frequency_cap:
                self._log_decision(k, t_int, user.user_id, context, None, None, "frequency_cap")
                day_streams[i] = simulate_organic(user, self.sim, day, rng)
                continue
            eligible = eligible_templates(cfg.catalog, self.user_tags[i])
            if not eligible:
                self._log_decision(k, t_int, user.user_id, context, None, None, "no_eligible_template")
                day_streams[i] = simulate_organic(user, self.sim, day, rng)
                continue
            prior_fn = self._make_prior_fn(i, profile_matrix, eb_user_indices)
            combo = thompson_select(self.store, context, cfg.space, rng, prior_fn)
            template = match_message(combo, eligible)
            self._log_decision(k, t_int, user.user_id, context, combo, template, None)
            self.messages_sent[i] += 1

            morning = simulate_organic(user, self.sim, Window(day.start, t_int), rng)
            post = apply_intervention(
                user, combo, t_int, self.sim, rng,
                window=Window(t_int, t_int + cfg.did.t_delta),
            )
            evening = simulate_organic(
                user, self.sim, Window(t_int + cfg.did.t_delta, day.end), rng
            )
            # Merge with a stable sort: conversion children may trail across
            # the segment boundaries.
            stream = EventStream.from_records(
                user.user_id, morning.records + post.records + evening.records
            )
            day_streams[i] = stream
            intervention = InterventionRecord(
                user_id=user.user_id, t_int=t_int, action_combo=combo, context_key=context
            )
            pending.append((i, combo, intervention, prior_fn))

        for i in self.control_indices:
            i = int(i)
            day_streams[i] = simulate_organic(
                self.users[i], self.sim, day, rng_for(self.seed, "cycle", i, g)
            )

        # Measurement lands after every selection: the cycle barrier is global.
        for i, combo, intervention, prior_fn in pending:
            selection = select_controls(profiles[i], control_index, cfg.did.k_controls)
            control_streams = [
                day_streams[self._index_of[cid]] for cid in selection.control_ids
            ]
            estimate = did_estimate(
                day_streams[i], intervention, control_streams, self.weights, cfg.did
            )
            update_posterior(
                self.store, intervention.context_key, combo, estimate.reward_bit, prior_fn
            )
            self.estimates.append(
                {
                    "cycle": k,
                    "user_id": intervention.user_id,
                    "t_int": intervention.t_int,
                    "context": intervention.context_key,
                    "combo": combo.as_dict(),
                    **estimate.to_dict(),
                }
            )

        for i in range(self.n):
            self._count_day(i, g, day_streams[i], measure=True)
        self.cycle += 1

    def _log_decision(
        self,
        cycle: int,
        t_int: int,
        user_id: str,
        context: str,
        combo: ActionCombo | None,
        template: MessageTemplate | None,
        skip_reason: str | None,
    ) -> None:
        self.decisions.append(
            {
                "cycle": cycle,
                "t_int": t_int,
                "user_id": user_id,
                "context": context,
                "combo": combo.as_dict() if combo is not None else None,
                "message_id": template.message_id if template is not None else None,
                "channel": template.channel if template is not None else None,
                "skipped": combo is None,
                "skip_reason": skip_reason,
            }
        )

    def run(self, up_to: int | None = None) -> None:
        target = self.cfg.n_cycles if up_to is None else min(up_to, self.cfg.n_cycles)
        while self.cycle < target:
            self.run_cycle()

    # -- results --------------------------------------------------------------

    def outcomes(self) -> dict[str, dict[str, float]]:
        """Per-user metric values over the measurement period."""
        out: dict[str, dict[str, float]] = {}
        for i, user in enumerate(self.users):
            row = {}
            for spec in self.cfg.metrics:
                total = self.metric_totals[spec.name][i]
                row[spec.name] = (1.0 if total > 0 else 0.0) if spec.kind == "binary" else float(total)
            out[user.user_id] = row
        return out

    def result(self) -> ExperimentResult:
        outcomes = self.outcomes()
        messaged = [
            self.users[int(i)].user_id
            for i in self.treated_indices
            if self.messages_sent[int(i)] > 0
        ]
        control_ids = [self.users[int(i)].user_id for i in self.control_indices]
        if not messaged:
            raise ConfigError("no treated user ever received a message; nothing to report")
        report = matched_lift(
            {uid: outcomes[uid] for uid in messaged},
            {uid: outcomes[uid] for uid in control_ids},
            self.pre_period_profiles,
            metrics=self.cfg.metrics,
            resamples=self.cfg.bootstrap_resamples,
            level=self.cfg.ci_level,
            seed=self.seed,
        )
        n_skipped = sum(1 for d in self.decisions if d["skipped"])
        return ExperimentResult(
            report=report,
            store=self.store,
            weights=self.weights,
            decisions=tuple(self.decisions),
            estimates=tuple(self.estimates),
            n_messages=int(self.messages_sent.sum()),
            n_skipped=n_skipped,
        )

    # -- pause / resume ---------------------------------------------------------

    def run_state(self) -> dict:
        return {
            "format": RUN_STATE_FORMAT,
            "version": FORMAT_VERSION,
            "seed": self.seed,
            "cycle": self.cycle,
            "store": self.store.to_dict(),
            "day_counts": self.day_counts.tolist(),
            "metric_totals": {k: v.tolist() for k, v in sorted(self.metric_totals.items())},
            "messages_sent": self.messages_sent.tolist(),
        }

    def save_run_state(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.run_state(), sort_keys=True), encoding="utf-8"
        )

    @classmethod
    def resume(cls, cfg: ExperimentConfig, path: str | Path) -> "Experiment":
        """Rebuild a run from a saved state and continue where it left off.

        Immutable inputs (population, assignment, warmup, weights) are
        regenerated from the seed; only mutable state is restored.
        """
        state = _load_versioned(path, RUN_STATE_FORMAT)
        exp = cls(cfg)
        try:
            if state["seed"] != exp.seed:
                raise SnapshotError(
                    f"run state was saved under seed {state['seed']}, config has {exp.seed}"
                )
            exp.cycle = int(state["cycle"])
            exp.store = PosteriorStore.from_dict(state["store"])
            day_counts = np.asarray(state["day_counts"], dtype=float)
            if day_counts.shape != exp.day_counts.shape:
                raise SnapshotError("run state day_counts shape does not match the config")
            exp.day_counts = day_counts
            exp.metric_totals = {
                k: np.asarray(v, dtype=float) for k, v in state["metric_totals"].items()
            }
            if set(exp.metric_totals) != {m.name for m in cfg.metrics}:
                raise SnapshotError("run state metrics do not match the config")
            exp.messages_sent = np.asarray(state["messages_sent"], dtype=np.int64)
        except (KeyError, TypeError, ValueError) as exc:
            raise SnapshotError(f"malformed run state: {exc}") from exc
        return exp


# -- matched lift -------------------------------------------------------------


def matched_lift(
    treated_outcomes: Mapping[str, Mapping[str, float]],
    control_outcomes: Mapping[str, Mapping[str, float]],
    profiles: Mapping[str, UserProfile],
    metrics: Sequence[MetricSpec],
    resamples: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
) -> LiftReport:
    """Nearest-neighbour paired lift with bootstrap percentile intervals.

    Each treated user is paired greedily (in user-id order) with its nearest
    unused control on pre-period profiles; the lift per metric is the mean
    paired difference, with a CI from resampling pairs with replacement. A
    control pool smaller than the treated group leaves the surplus treated
    users unmatched, which is reported rather than hidden.
    """
    if not treated_outcomes or not control_outcomes:
        raise ValueError("matched_lift needs non-empty treated and control groups")
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must lie in (0, 1), got {level}")
    treated_ids = sorted(treated_outcomes)
    remaining = sorted(control_outcomes)
    pairs: list[tuple[str, str]] = []
    n_unmatched = 0
    for uid in treated_ids:
        if not remaining:
            n_unmatched += 1
            continue
        index = ProfileIndex([profiles[c] for c in remaining])
        selection = select_controls(profiles[uid], index, k=1)
        chosen = selection.control_ids[0]
        pairs.append((uid, chosen))
        remaining.remove(chosen)

    if not pairs:
        raise ValueError("no pairs could be formed")

    rng = rng_for(seed, "bootstrap")
    n_pairs = len(pairs)
    lifts = []
    for spec in metrics:
        t_vals = np.array([treated_outcomes[t][spec.name] for t, _ in pairs])
        c_vals = np.array([control_outcomes[c][spec.name] for _, c in pairs])
        diffs = t_vals - c_vals
        point = float(diffs.mean())
        boot_means = _bootstrap_means(diffs, resamples, rng)
        lo, hi = _percentile_ci(boot_means, level)
        control_rate = float(c_vals.mean())
        lifts.append(
            MetricLift(
                metric=spec.name,
                kind=spec.kind,
                treated_rate=float(t_vals.mean()),
                control_rate=control_rate,
                absolute_lift=point,
                relative_lift=(point / control_rate) if control_rate != 0 else None,
                ci_low=lo,
                ci_high=hi,
            )
        )
    return LiftReport(
        metrics=tuple(lifts), ci_level=level, n_pairs=n_pairs, n_unmatched=n_unmatched
    )


def _bootstrap_means(diffs: np.ndarray, resamples: int, rng: np.random.Generator) -> np.ndarray:
    n = len(diffs)
    means = np.empty(resamples)
    chunk = max(1, min(resamples, 2_000))
    done = 0
    while done < resamples:
        m = min(chunk, resamples - done)
        idx = rng.integers(0, n, size=(m, n))
        means[done : done + m] = diffs[idx].mean(axis=1)
        done += m
    return means

def _percentile_ci(samples: np.ndarray, level: float) -> tuple[float, float]:
    tail = (1.0 - level) / 2.0
    return float(np.quantile(samples, tail)), float(np.quantile(samples, 1.0 - tail))


# -- agent-state snapshots ------------------------------------------------------


def snapshot_state(store: PosteriorStore, path: str | Path) -> None:
    """Persist a posterior store; ``restore_state(path)`` reloads it bit-exactly."""
    payload = {"format": STORE_FORMAT, "version": FORMAT_VERSION, **store.to_dict()}
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def restore_state(path: str | Path) -> PosteriorStore:
    payload = _load_versioned(path, STORE_FORMAT)
    try:
        return PosteriorStore.from_dict(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"malformed snapshot: {exc}") from exc


def _load_versioned(path: str | Path, expected_format: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise SnapshotError(f"{path}: expected a JSON object")
    if payload.get("format") != expected_format:
        raise SnapshotError(
            f"{path}: format tag {payload.get('format')!r}, expected {expected_format!r}"
        )
    if payload.get("version") != FORMAT_VERSION:
        raise SnapshotError(
            f"{path}: unsupported version {payload.get('version')!r}"
        )
    return payload


# -- top-level entry points -----------------------------------------------------


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """Run all cycles and, optionally, write the audit artefacts to a directory.

    Writes ``decisions.jsonl``, ``estimates.jsonl``, ``lift_report.json``,
    ``lift_report.txt``, ``posteriors.json`` and ``weights.json``. Identical
    (config, seed) pairs produce byte-identical outputs.
    """
    exp = Experiment(cfg)
    exp.run()
    result = exp.result()
    if out_dir is not None:
        write_artifacts(result, out_dir)
    return result


def write_artifacts(result: ExperimentResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "decisions.jsonl", result.decisions)
    _write_jsonl(out / "estimates.jsonl", result.estimates)
    (out / "lift_report.json").write_text(
        json.dumps(result.report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out / "lift_report.txt").write_text(result.report.format_table() + "\n", encoding="utf-8")
    snapshot_state(result.store, out / "posteriors.json")
    result.weights.save(out / "weights.json")


def _write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


# -- desk-scale causal calibration probe ----------------------------------------


def sample_did_estimates(
    sim_cfg: SimConfig,
    did_cfg: DidConfig,
    n_interventions: int,
    seed: int,
    combo: ActionCombo | None = None,
    table: EventWeightTable | None = None,
) -> np.ndarray:
    """Effect estimates for repeated one-off interventions on fresh users.

    Each intervention treats a fresh user from the configured population
    model at a phase-swept instant and measures against freshly simulated,
    never-treated controls, isolating the estimator from policy feedback.
    Used to verify null calibration, seasonal cancellation, and effect
    recovery against known ground truth.
    """
    if table is None:
        table = fit_probe_weights(sim_cfg, seed)
    if combo is None:
        combo = _default_combo(sim_cfg)
    t_delta = did_cfg.t_delta
    deltas = np.empty(n_interventions)
    phases = 101
    for j in range(n_interventions):
        t_int = t_delta + ((j % phases) * sim_cfg.seasonal_period) // phases
        pre = Window(t_int - t_delta, t_int)
        post = Window(t_int, t_int + t_delta)
        span = Window(pre.start, post.end)

        treated = LatentUser(
            user_id=f"t{j:06d}",
            preference=sim_cfg.preferences.draw(rng_for(seed, "probe-pref", j)),
            responsiveness=sim_cfg.responsiveness,
        )
        pre_stream = simulate_organic(treated, sim_cfg, pre, rng_for(seed, "probe-pre", j))
        post_stream = apply_intervention(
            treated, combo, t_int, sim_cfg, rng_for(seed, "probe-post", j), window=post
        )
        treated_stream = EventStream.from_records(
            treated.user_id, pre_stream.records + post_stream.records
        )
        controls = []
        for c in range(did_cfg.k_controls):
            control = LatentUser(user_id=f"c{j:06d}_{c}", preference={})
            controls.append(
                simulate_organic(control, sim_cfg, span, rng_for(seed, "probe-ctrl", j, c))
            )
        intervention = InterventionRecord(
            user_id=treated.user_id, t_int=t_int, action_combo=combo, context_key="probe"
        )
        deltas[j] = did_estimate(treated_stream, intervention, controls, table, did_cfg).delta_y
    return deltas


def fit_probe_weights(
    sim_cfg: SimConfig, seed: int, n_users: int = 200, n_days: int = 10
) -> EventWeightTable:
    """Fit an event-weight table from a fresh organic corpus of the same world."""
    streams = []
    for i in range(n_users):
        user = LatentUser(user_id=f"w{i:05d}", preference={})
        streams.append(
            simulate_organic(
                user,
                sim_cfg,
                Window(0, n_days * MS_PER_DAY),
                rng_for(seed, "probe-fit", i),
            )
        )
    return fit_event_weights(streams, sim_cfg.goal_spec)


def _default_combo(sim_cfg: SimConfig) -> ActionCombo:
    prefs = sim_cfg.preferences
    if prefs.kind != "inert" and prefs.labels:
        return ActionCombo(choices=((prefs.action_set, prefs.labels[0]),))
    return ActionCombo(choices=(("message", "default"),))
