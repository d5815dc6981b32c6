"""Thompson sampling over a modular action space with Beta-Bernoulli state.

One posterior is kept per (context, action set, label). A message decision
samples every label's posterior independently within each action set and
takes the per-set argmax, assembling one combination of actions; the
measured reward bit then updates every constituent label's posterior.
Keeping per-label rather than per-combination posteriors is what avoids the
combinatorial blow-up of the joint action space.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .did import UserProfile

PriorFn = Callable[[str, str, str], "BetaPosterior"]


@dataclass(frozen=True)
class ActionSet:
    """A named group of mutually exclusive action labels (tone, timing, ...)."""

    name: str
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.name:
            raise ValueError("action set name must be non-empty")
        if not self.labels:
            raise ValueError(f"action set {self.name!r} must have at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate labels in action set {self.name!r}")


@dataclass(frozen=True)
class ActionSpace:
    """Ordered collection of action sets; operator-curated, never generated."""

    action_sets: tuple[ActionSet, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "action_sets", tuple(self.action_sets))
        if not self.action_sets:
            raise ValueError("action space must contain at least one action set")
        names = [s.name for s in self.action_sets]
        if len(set(names)) != len(names):
            raise ValueError("action set names must be unique")

    @property
    def set_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.action_sets)

    def action_set(self, name: str) -> ActionSet:
        for s in self.action_sets:
            if s.name == name:
                return s
        raise KeyError(name)

    def make_combo(self, choices: Mapping[str, str]) -> "ActionCombo":
        """Validate and freeze one choice per action set, in declared order."""
        if set(choices) != set(self.set_names):
            raise ValueError(
                f"combo must choose exactly one label per set; got {sorted(choices)}, "
                f"expected {sorted(self.set_names)}"
            )
        pairs = []
        for s in self.action_sets:
            label = choices[s.name]
            if label not in s.labels:
                raise ValueError(f"label {label!r} not in action set {s.name!r}")
            pairs.append((s.name, label))
        return ActionCombo(choices=tuple(pairs))

    def validate_combo(self, combo: "ActionCombo") -> None:
        self.make_combo(combo.as_dict())

    def to_dict(self) -> list[dict]:
        return [{"name": s.name, "labels": list(s.labels)} for s in self.action_sets]

    @classmethod
    def from_dict(cls, data: Sequence[Mapping]) -> "ActionSpace":
        return cls(
            action_sets=tuple(
                ActionSet(name=str(d["name"]), labels=tuple(d["labels"])) for d in data
            )
        )


@dataclass(frozen=True)
class ActionCombo:
    """One sampled label per action set."""

    choices: tuple[tuple[str, str], ...]

    def get(self, set_name: str) -> str:
        for name, label in self.choices:
            if name == set_name:
                return label
        raise KeyError(set_name)

    def as_dict(self) -> dict[str, str]:
        return dict(self.choices)


@dataclass(frozen=True)
class BetaPosterior:
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def updated(self, reward_bit: int) -> "BetaPosterior":
        if reward_bit not in (0, 1):
            raise ValueError(f"reward_bit must be 0 or 1, got {reward_bit!r}")
        return BetaPosterior(self.alpha + reward_bit, self.beta + (1 - reward_bit))


UNIFORM_PRIOR = BetaPosterior(1.0, 1.0)

EntryKey = tuple[str, str, str]  # (context_key, action set name, label)


class PosteriorStore:
    """Per (context, action set, label) Beta posteriors.

    Reads are lock-free; updates take a lock so each read-modify-write is
    atomic. Cross-entry ordering is unspecified and nothing may depend on it.
    Absent entries resolve through the caller-supplied prior function
    (empirical-Bayes imputation), then the default prior.
    """

    def __init__(
        self,
        default_prior: BetaPosterior = UNIFORM_PRIOR,
        entries: Mapping[EntryKey, BetaPosterior] | None = None,
    ):
        self.default_prior = default_prior
        self._entries: dict[EntryKey, BetaPosterior] = dict(entries or {})
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def peek(self, context: str, set_name: str, label: str) -> BetaPosterior | None:
        """The concrete entry, or None when nothing has been recorded."""
        return self._entries.get((context, set_name, label))

    def resolve(
        self,
        context: str,
        set_name: str,
        label: str,
        prior_fn: PriorFn | None = None,
    ) -> BetaPosterior:
        entry = self._entries.get((context, set_name, label))
        if entry is not None:
            return entry
        if prior_fn is not None:
            return prior_fn(context, set_name, label)
        return self.default_prior

    def apply(
        self,
        context: str,
        set_name: str,
        label: str,
        reward_bit: int,
        prior_fn: PriorFn | None = None,
    ) -> BetaPosterior:
        """Atomically increment one entry, materialising it if absent."""
        with self._lock:
            base = self.resolve(context, set_name, label, prior_fn)
            updated = base.updated(reward_bit)
            self._entries[(context, set_name, label)] = updated
            return updated

    def entries(self) -> dict[EntryKey, BetaPosterior]:
        return dict(self._entries)

    def to_dict(self) -> dict:
        return {
            "default_prior": {"alpha": self.default_prior.alpha, "beta": self.default_prior.beta},
            "entries": [
                {
                    "context": key[0],
                    "action_set": key[1],
                    "label": key[2],
                    "alpha": posterior.alpha,
                    "beta": posterior.beta,
                }
                for key, posterior in sorted(self._entries.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PosteriorStore":
        prior = d["default_prior"]
        entries = {
            (e["context"], e["action_set"], e["label"]): BetaPosterior(e["alpha"], e["beta"])
            for e in d["entries"]
        }
        return cls(
            default_prior=BetaPosterior(float(prior["alpha"]), float(prior["beta"])),
            entries=entries,
        )

    def equals(self, other: "PosteriorStore") -> bool:
        return (
            self.default_prior == other.default_prior and self._entries == other._entries
        )


def sample_scores(
    store: PosteriorStore,
    context: str,
    space: ActionSpace,
    rng: np.random.Generator,
    prior_fn: PriorFn | None = None,
) -> dict[str, dict[str, float]]:
    """One posterior draw per label, per action set, in declared order.

    The fixed draw order (sets in declared order, labels in declared order)
    is what makes selection bit-reproducible under a fixed seed.
    """
    scores: dict[str, dict[str, float]] = {}
    for action_set in space.action_sets:
        per_label: dict[str, float] = {}
        for label in action_set.labels:
            posterior = store.resolve(context, action_set.name, label, prior_fn)
            per_label[label] = float(rng.beta(posterior.alpha, posterior.beta))
        scores[action_set.name] = per_label
    return scores


def thompson_select(
    store: PosteriorStore,
    context: str,
    space: ActionSpace,
    rng: np.random.Generator,
    prior_fn: PriorFn | None = None,
) -> ActionCombo:
    """Sample every label's posterior and take the argmax within each set.

    Ties break toward the earlier declared label; for continuous draws that
    is a probability-zero event, but it keeps degenerate test doubles
    deterministic.
    """
    scores = sample_scores(store, context, space, rng, prior_fn)
    choices = {}
    for action_set in space.action_sets:
        per_label = scores[action_set.name]
        best_label = action_set.labels[0]
        best_score = per_label[best_label]
        for label in action_set.labels[1:]:
            if per_label[label] > best_score:
                best_label = label
                best_score = per_label[label]
        choices[action_set.name] = best_label
    return space.make_combo(choices)


def update_posterior(
    store: PosteriorStore,
    context: str,
    combo: ActionCombo,
    reward_bit: int,
    prior_fn: PriorFn | None = None,
    space: ActionSpace | None = None,
) -> None:
    """Credit the combo's reward bit to every constituent action's posterior.

    The single scalar reward updates each (set, label) in the combo, the
    factored-credit counterpart of selecting labels independently per set.
    """
    if reward_bit not in (0, 1):
        raise ValueError(f"reward_bit must be 0 or 1, got {reward_bit!r}")
    if space is not None:
        space.validate_combo(combo)
    for set_name, label in combo.choices:
        store.apply(context, set_name, label, reward_bit, prior_fn)


def empirical_bayes_prior(
    target: UserProfile,
    neighbours: Sequence[tuple[UserProfile, BetaPosterior | None]],
    k: int,
    default: BetaPosterior = UNIFORM_PRIOR,
) -> BetaPosterior:
    """Impute a prior for ``target`` from its k most similar users.

    Takes the component-wise mean of the posteriors held by the k nearest
    neighbours (Euclidean distance on profiles, ties by user id) for the
    same action; neighbours without data contribute nothing, and if none of
    the k has data the default prior is returned.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    target_vec = np.asarray(target.feature_vector, dtype=float)

    def distance(profile: UserProfile) -> float:
        diff = np.asarray(profile.feature_vector, dtype=float) - target_vec
        return float(np.sqrt(diff @ diff))

    ranked = sorted(neighbours, key=lambda pair: (distance(pair[0]), pair[0].user_id))
    with_data = [posterior for _, posterior in ranked[:k] if posterior is not None]
    if not with_data:
        return default
    alpha = sum(p.alpha for p in with_data) / len(with_data)
    beta = sum(p.beta for p in with_data) / len(with_data)
    return BetaPosterior(alpha, beta)
