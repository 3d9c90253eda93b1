"""ADOS-2 Module 3 item identifiers and per-session score sheets."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .errors import MissingItem


class ItemId(str, Enum):
    """The eight language-related Module 3 items scored by this package."""

    A4 = "A4"
    A7 = "A7"
    A8 = "A8"
    B4 = "B4"
    B7 = "B7"
    B9 = "B9"
    B10 = "B10"
    B11 = "B11"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, value: str | "ItemId") -> "ItemId":
        if isinstance(value, ItemId):
            return value
        key = str(value).strip().upper()
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown item id {value!r}") from None


ITEMS: tuple[ItemId, ...] = tuple(ItemId)

# Remaining Module 3 algorithm items, scored by the clinician and copied in for
# diagnosis totals: gestures, eye contact, facial expressions, sensory interest,
# hand/finger mannerisms, unusual topic interest.
CLINICIAN_ITEMS: tuple[str, ...] = ("A9", "B1", "B2", "D1", "D2", "D4")

SOURCES = ("rule", "llm", "fused", "clinician", "random")


@dataclass(frozen=True)
class ItemScoreSheet:
    """Scores for the eight items from one source for one session.

    Values are ints for rule/LLM/clinician sheets and floats for fused
    sheets (kept unrounded for MAE).
    """

    scores: Mapping[ItemId, float]
    source: str = "clinician"
    session_id: str | None = None
    justifications: Mapping[ItemId, str] = field(default_factory=dict)

    def __post_init__(self):
        normalized = {ItemId.parse(k): v for k, v in self.scores.items()}
        object.__setattr__(self, "scores", normalized)
        object.__setattr__(
            self, "justifications", {ItemId.parse(k): v for k, v in self.justifications.items()}
        )

    def __getitem__(self, item: ItemId | str) -> float:
        item = ItemId.parse(item)
        try:
            return self.scores[item]
        except KeyError:
            raise MissingItem(item, f"{self.source} sheet for {self.session_id}") from None

    def require_total(self) -> "ItemScoreSheet":
        for item in ITEMS:
            if item not in self.scores:
                raise MissingItem(item, f"{self.source} sheet for {self.session_id}")
        return self

    def values(self) -> list[float]:
        return [self[item] for item in ITEMS]

    def to_json(self) -> dict:
        out = {item.value: self.scores[item] for item in ITEMS if item in self.scores}
        return out

    @classmethod
    def from_json(cls, data: Mapping[str, float], source: str, session_id: str | None = None):
        return cls({ItemId.parse(k): v for k, v in data.items()}, source=source, session_id=session_id)


def sheet_from_values(values: Iterable[float], source: str, session_id: str | None = None) -> ItemScoreSheet:
    values = list(values)
    if len(values) != len(ITEMS):
        raise ValueError(f"expected {len(ITEMS)} values, got {len(values)}")
    return ItemScoreSheet(dict(zip(ITEMS, values)), source=source, session_id=session_id)


@dataclass(frozen=True)
class ClinicianItemSheet:
    """Clinician scores for the six non-language Module 3 algorithm items."""

    scores: Mapping[str, int]

    def __post_init__(self):
        scores = {str(k).strip().upper(): v for k, v in self.scores.items()}
        if set(scores) != set(CLINICIAN_ITEMS):
            raise ValueError(
                f"clinician sheet needs exactly {', '.join(CLINICIAN_ITEMS)}; got {sorted(scores)}"
            )
        for label, value in scores.items():
            if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= 3:
                raise ValueError(f"clinician score for {label} must be an int in 0..3, got {value!r}")
        object.__setattr__(self, "scores", {k: scores[k] for k in CLINICIAN_ITEMS})

    def values(self) -> list[int]:
        return [self.scores[k] for k in CLINICIAN_ITEMS]

    def to_json(self) -> dict:
        return dict(self.scores)
