"""Threshold rules mapping feature vectors to item scores, and their fitting.

Each item's rule computes a weighted feature sum ``s`` and places it on a
three-step ladder:

- higher_is_worse (``t1 <= t2``): 0 if s < t1, 1 if t1 <= s < t2, 2 if s >= t2
- lower_is_worse (``t1 >= t2``): 0 if s > t1, 1 if t2 < s <= t1, 2 if s <= t2

Thresholds are fitted per item by grid search, minimizing the mean MAE over
the two validation folds of a stratified two-fold split.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from sklearn.model_selection import StratifiedKFold

from .errors import EmptyGrid, InsufficientStrata, MissingItem, UnknownFeatureName
from .features import FEATURE_NAMES, FeatureVector
from .items import ITEMS, ItemId, ItemScoreSheet


class Direction(str, Enum):
    HIGHER_IS_WORSE = "higher_is_worse"
    LOWER_IS_WORSE = "lower_is_worse"


@dataclass(frozen=True)
class ItemRule:
    item: ItemId
    terms: tuple[tuple[str, float], ...]
    direction: Direction
    t1: float
    t2: float

    def __post_init__(self):
        object.__setattr__(self, "item", ItemId.parse(self.item))
        object.__setattr__(self, "direction", Direction(self.direction))
        terms = tuple((str(name), float(w)) for name, w in self.terms)
        if not terms:
            raise ValueError(f"rule for {self.item} has no terms")
        for name, weight in terms:
            if name not in FEATURE_NAMES:
                raise UnknownFeatureName(name)
            if not math.isfinite(weight):
                raise ValueError(f"non-finite weight for {name}")
        object.__setattr__(self, "terms", terms)
        if not thresholds_ordered(self.direction, self.t1, self.t2):
            raise ValueError(f"thresholds ({self.t1}, {self.t2}) misordered for {self.direction.value}")

    @property
    def thresholds(self) -> tuple[float, float]:
        return self.t1, self.t2

    def value(self, f: FeatureVector) -> float:
        return math.fsum(w * f.get(name) for name, w in self.terms)

    def to_json(self) -> dict:
        return {
            "terms": [[n, w] for n, w in self.terms],
            "direction": self.direction.value,
            "t1": self.t1,
            "t2": self.t2,
        }


def thresholds_ordered(direction: Direction, t1: float, t2: float) -> bool:
    if direction is Direction.HIGHER_IS_WORSE:
        return t1 <= t2
    return t1 >= t2


def ladder(s: float, direction: Direction, t1: float, t2: float) -> int:
    if direction is Direction.HIGHER_IS_WORSE:
        return 0 if s < t1 else (1 if s < t2 else 2)
    return 0 if s > t1 else (1 if s > t2 else 2)


def score_item_rule(f: FeatureVector, rule: ItemRule) -> int:
    return ladder(rule.value(f), rule.direction, rule.t1, rule.t2)


@dataclass(frozen=True)
class RuleParams:
    rules: Mapping[ItemId, ItemRule]

    def __post_init__(self):
        rules = {ItemId.parse(k): v for k, v in self.rules.items()}
        for item in ITEMS:
            if item not in rules:
                raise MissingItem(item, "rule params")
            if rules[item].item is not item:
                raise ValueError(f"rule keyed {item} is for {rules[item].item}")
        object.__setattr__(self, "rules", {i: rules[i] for i in ITEMS})

    def to_json(self) -> dict:
        return {i.value: r.to_json() for i, r in self.rules.items()}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, data: Mapping) -> "RuleParams":
        rules = {}
        for key, spec in data.items():
            item = ItemId.parse(key)
            rules[item] = ItemRule(
                item=item,
                terms=tuple((n, w) for n, w in spec["terms"]),
                direction=Direction(spec["direction"]),
                t1=float(spec["t1"]),
                t2=float(spec["t2"]),
            )
        return cls(rules)

    def with_thresholds(self, thresholds: Mapping[ItemId, tuple[float, float]]) -> "RuleParams":
        rules = dict(self.rules)
        for item, (t1, t2) in thresholds.items():
            rules[item] = replace(rules[item], t1=t1, t2=t2)
        return RuleParams(rules)


def score_all_rule(f: FeatureVector, params: RuleParams, session_id: str | None = None) -> ItemScoreSheet:
    scores = {item: score_item_rule(f, rule) for item, rule in params.rules.items()}
    return ItemScoreSheet(scores, source="rule", session_id=session_id)


_H, _L = Direction.HIGHER_IS_WORSE, Direction.LOWER_IS_WORSE
_SEVEN = 1.0 / 7.0

# Feature construct nearest to each item; thresholds are placeholders until fitted.
DEFAULT_RULES: dict[ItemId, tuple[tuple[tuple[str, float], ...], Direction, float, float]] = {
    ItemId.A4: ((("echolalia_rate", 1.0),), _H, 0.2, 0.5),
    ItemId.A7: ((("response_rate", 1.0),), _L, 0.8, 0.5),
    ItemId.A8: ((("alternation_rate", 0.5), ("participation_rate", 0.5)), _L, 0.6, 0.4),
    ItemId.B4: ((("enjoyment_rate", 1.0), ("passive_rate", -1.0)), _L, 0.2, 0.0),
    ItemId.B7: ((("suggestion_rate", 1.0),), _L, 0.2, 0.05),
    ItemId.B9: ((("response_rate", 1.0),), _L, 0.75, 0.45),
    ItemId.B10: ((("alternation_rate", 0.5), ("participation_rate", 0.5)), _L, 0.65, 0.45),
    ItemId.B11: (
        (
            ("echolalia_rate", -_SEVEN), ("alternation_rate", _SEVEN),
            ("participation_rate", _SEVEN), ("enjoyment_rate", _SEVEN),
            ("passive_rate", -_SEVEN), ("suggestion_rate", _SEVEN),
            ("response_rate", _SEVEN),
        ),
        _L, 0.35, 0.25,
    ),
}


def default_params() -> RuleParams:
    return RuleParams({
        item: ItemRule(item, terms, direction, t1, t2)
        for item, (terms, direction, t1, t2) in DEFAULT_RULES.items()
    })


# -- fitting -----------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledExample:
    session_id: str
    features: FeatureVector
    labels: ItemScoreSheet
    stratum: str  # ternary diagnosis class of the ground truth


def build_grid(
    base: RuleParams, spec: Mapping[str, Mapping[str, Sequence[float]] | Sequence]
) -> dict[ItemId, list[tuple[float, float]]]:
    """Expand a grid spec into ordered candidate ``(t1, t2)`` lists.

    Each item maps either to ``{"t1": [...], "t2": [...]}`` (the product,
    keeping only pairs ordered for the rule's direction, t1-major order) or
    to an explicit list of ``[t1, t2]`` pairs. Items absent from ``spec``
    get an empty grid.
    """
    grid: dict[ItemId, list[tuple[float, float]]] = {item: [] for item in ITEMS}
    for key, entry in spec.items():
        item = ItemId.parse(key)
        direction = base.rules[item].direction
        if isinstance(entry, Mapping):
            pairs = itertools.product(entry.get("t1", ()), entry.get("t2", ()))
        else:
            pairs = (tuple(p) for p in entry)
        grid[item] = [
            (float(t1), float(t2)) for t1, t2 in pairs if thresholds_ordered(direction, t1, t2)
        ]
    return grid


def split_folds(strata: Mapping[str, str], seed: int) -> tuple[list[str], list[str]]:
    """Split session ids into two validation folds stratified by ``strata[id]``.

    Keyed on sorted session ids, so mapping order never matters.
    """
    ids = sorted(strata)
    labels = [strata[s] for s in ids]
    counts = Counter(labels)
    thin = sorted(s for s, c in counts.items() if c < 2)
    if thin:
        raise InsufficientStrata(f"strata with fewer than 2 sessions: {thin}")
    splitter = StratifiedKFold(n_splits=2, shuffle=True, random_state=seed)
    folds = [sorted(ids[i] for i in val_idx) for _, val_idx in splitter.split(ids, labels)]
    return folds[0], folds[1]


def stratified_folds(examples: Sequence[LabeledExample], seed: int) -> tuple[list[str], list[str]]:
    return split_folds({e.session_id: e.stratum for e in examples}, seed)


@dataclass(frozen=True)
class CandidateResult:
    t1: float
    t2: float
    fold_mae: tuple[float, float]
    mean_mae: float


@dataclass(frozen=True)
class ItemFit:
    item: ItemId
    candidates: tuple[CandidateResult, ...]
    selected: int

    @property
    def best(self) -> CandidateResult:
        return self.candidates[self.selected]


@dataclass(frozen=True)
class FitReport:
    seed: int
    folds: tuple[tuple[str, ...], tuple[str, ...]]
    items: Mapping[ItemId, ItemFit] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "folds": [list(f) for f in self.folds],
            "items": {
                i.value: {
                    "selected": fit.selected,
                    "candidates": [
                        {"t1": c.t1, "t2": c.t2, "fold_mae": list(c.fold_mae), "mean_mae": c.mean_mae}
                        for c in fit.candidates
                    ],
                }
                for i, fit in self.items.items()
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, data: Mapping) -> "FitReport":
        items = {}
        for key, entry in data["items"].items():
            item = ItemId.parse(key)
            cands = tuple(
                CandidateResult(c["t1"], c["t2"], tuple(c["fold_mae"]), c["mean_mae"])
                for c in entry["candidates"]
            )
            items[item] = ItemFit(item, cands, entry["selected"])
        folds = tuple(tuple(f) for f in data["folds"])
        return cls(data["seed"], folds, items)


def _fold_error(values: Sequence[float], truth: Sequence[int], rule: ItemRule, t1: float, t2: float) -> Fraction:
    total = sum(abs(ladder(s, rule.direction, t1, t2) - int(y)) for s, y in zip(values, truth))
    return Fraction(total, len(truth))


def fit_params(
    examples: Iterable[LabeledExample],
    grid: Mapping[ItemId, Sequence[tuple[float, float]]],
    seed: int,
    base: RuleParams | None = None,
) -> tuple[RuleParams, FitReport]:
    """Pick each item's thresholds by stratified two-fold validation MAE.

    Items are fitted independently (the objective separates by item). Fold
    MAEs are compared exactly as rationals, and ties go to the candidate
    listed first in the grid.
    """
    base = base or default_params()
    examples = list(examples)
    for item in ITEMS:
        if not grid.get(item):
            raise EmptyGrid(item)
    folds = stratified_folds(examples, seed)
    by_id = {e.session_id: e for e in examples}

    fits: dict[ItemId, ItemFit] = {}
    chosen: dict[ItemId, tuple[float, float]] = {}
    for item in ITEMS:
        rule = base.rules[item]
        fold_data = []
        for fold in folds:
            values = [rule.value(by_id[s].features) for s in fold]
            truth = [by_id[s].labels[item] for s in fold]
            fold_data.append((values, truth))

        results, best_idx, best_key = [], None, None
        for idx, (t1, t2) in enumerate(grid[item]):
            if not thresholds_ordered(rule.direction, t1, t2):
                raise ValueError(f"grid pair ({t1}, {t2}) misordered for {item}")
            errs = [_fold_error(v, y, rule, t1, t2) for v, y in fold_data]
            mean = sum(errs, Fraction(0)) / len(errs)
            results.append(CandidateResult(t1, t2, tuple(float(e) for e in errs), float(mean)))
            if best_key is None or mean < best_key:
                best_idx, best_key = idx, mean
        fits[item] = ItemFit(item, tuple(results), best_idx)
        chosen[item] = grid[item][best_idx]

    report = FitReport(seed, (tuple(folds[0]), tuple(folds[1])), fits)
    return base.with_thresholds(chosen), report


DEFAULT_GRID: dict[str, dict[str, list[float]]] = {
    "A4": {"t1": [0.1, 0.2, 0.3], "t2": [0.4, 0.5, 0.6]},
    "A7": {"t1": [0.7, 0.8, 0.9], "t2": [0.4, 0.5, 0.6]},
    "A8": {"t1": [0.55, 0.6, 0.65], "t2": [0.4, 0.45, 0.5]},
    "B4": {"t1": [0.1, 0.2, 0.3], "t2": [-0.1, 0.0, 0.05]},
    "B7": {"t1": [0.15, 0.2, 0.25], "t2": [0.02, 0.05, 0.1]},
    "B9": {"t1": [0.7, 0.75, 0.8], "t2": [0.4, 0.45, 0.5]},
    "B10": {"t1": [0.6, 0.65, 0.7], "t2": [0.45, 0.5, 0.55]},
    "B11": {"t1": [0.3, 0.35, 0.4], "t2": [0.2, 0.25, 0.3]},
}
