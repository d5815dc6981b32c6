"""Operator-curated message catalogue and combo-to-message matching.

The policy acts in the compact factored action space; the chosen combination
is then mapped to the nearest real message a user is eligible for. Message
copy itself is always human-authored: the catalogue is maintained by
marketing teams and only referenced here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from .policy import ActionCombo, ActionSpace


class NoEligibleMessageError(Exception):
    """No template is eligible for the user; the caller should skip the send."""


@dataclass(frozen=True)
class MessageTemplate:
    """One operator-authored message annotated with action attributes.

    ``attributes`` may cover any subset of the action sets; unannotated sets
    are neutral during matching. ``body_ref`` is an opaque pointer to the
    human-written copy.
    """

    message_id: str
    attributes: Mapping[str, str]
    required_tags: frozenset[str] = field(default_factory=frozenset)
    channel: str = ""
    body_ref: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", dict(self.attributes))
        object.__setattr__(self, "required_tags", frozenset(self.required_tags))
        if not self.message_id:
            raise ValueError("message_id must be non-empty")

    def eligible_for(self, user_tags: Iterable[str]) -> bool:
        return self.required_tags <= set(user_tags)

    def to_dict(self) -> dict:
        return {
            "id": self.message_id,
            "attributes": {k: self.attributes[k] for k in sorted(self.attributes)},
            "required_tags": sorted(self.required_tags),
            "channel": self.channel,
            "body_ref": self.body_ref,
        }


@dataclass(frozen=True)
class MessageCatalog:
    templates: tuple[MessageTemplate, ...]
    space: ActionSpace

    def __post_init__(self) -> None:
        object.__setattr__(self, "templates", tuple(self.templates))
        ids = [t.message_id for t in self.templates]
        if len(set(ids)) != len(ids):
            raise ValueError("message_ids must be unique")
        valid = {s.name: set(s.labels) for s in self.space.action_sets}
        for t in self.templates:
            for set_name, label in t.attributes.items():
                if set_name not in valid:
                    raise ValueError(
                        f"template {t.message_id!r} annotates unknown action set {set_name!r}"
                    )
                if label not in valid[set_name]:
                    raise ValueError(
                        f"template {t.message_id!r} uses unknown label {label!r} "
                        f"for action set {set_name!r}"
                    )

    def to_dict(self) -> list[dict]:
        return [t.to_dict() for t in self.templates]


def load_catalog(
    source: IO[str] | str | Path | Sequence[Mapping], space: ActionSpace
) -> MessageCatalog:
    """Build a catalogue from its config document (or already-parsed list)."""
    if isinstance(source, (str, Path)):
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    elif hasattr(source, "read"):
        data = json.load(source)
    else:
        data = source
    templates = tuple(
        MessageTemplate(
            message_id=str(d["id"]),
            attributes={str(k): str(v) for k, v in d.get("attributes", {}).items()},
            required_tags=frozenset(d.get("required_tags", ())),
            channel=str(d.get("channel", "")),
            body_ref=str(d.get("body_ref", "")),
        )
        for d in data
    )
    return MessageCatalog(templates=templates, space=space)


def eligible_templates(
    catalog: MessageCatalog, user_tags: Iterable[str]
) -> list[MessageTemplate]:
    """Templates whose required tags are all present, original order kept."""
    tags = set(user_tags)
    return [t for t in catalog.templates if t.required_tags <= tags]


def match_score(combo: ActionCombo, template: MessageTemplate) -> int:
    """Number of annotated attributes agreeing with the combo's choices."""
    chosen = combo.as_dict()
    return sum(1 for s, label in template.attributes.items() if chosen.get(s) == label)


def match_message(combo: ActionCombo, eligible: Sequence[MessageTemplate]) -> MessageTemplate:
    """The eligible template with the most attributes matching the combo.

    Ties break to the lowest message_id, making the result independent of
    list order. A template annotating every set with exactly the combo's
    choices always wins.
    """
    if not eligible:
        raise NoEligibleMessageError("no eligible templates to match against")
    return min(eligible, key=lambda t: (-match_score(combo, t), t.message_id))
