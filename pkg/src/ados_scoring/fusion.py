"""Per-item adaptive fusion of LLM and rule-based item scores.

For each item the fused score is ``a * llm + (1 - a) * rule`` where the LLM
weight ``a`` comes from the two sources' validation MAEs:

- v1 (hard select): 1 for the lower-MAE source, 0 for the other (0.5 on ties)
- v2 (inverse): proportional to 1 / MAE
- v3 (inverse square): proportional to 1 / MAE**2
- v4 (softmax): proportional to exp(-MAE)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Mapping

from .errors import MissingItem, ZeroMae
from .items import ITEMS, ItemId, ItemScoreSheet


class FusionStrategy(str, Enum):
    V1_HARD_SELECT = "v1"
    V2_INVERSE_MAE = "v2"
    V3_INVERSE_SQUARED_MAE = "v3"
    V4_SOFTMAX_NEG_MAE = "v4"

    @classmethod
    def parse(cls, value) -> "FusionStrategy":
        if isinstance(value, FusionStrategy):
            return value
        text = str(value).strip().lower()
        for member in cls:
            if text in (member.value, member.name.lower()):
                return member
        raise ValueError(f"unknown fusion strategy {value!r}")


@dataclass(frozen=True)
class MaeTable:
    """Per-item ``(mae_llm, mae_rule)`` pairs."""

    entries: Mapping[ItemId, tuple[float, float]]

    def __post_init__(self):
        clean = {}
        for item, (m_llm, m_rule) in self.entries.items():
            for value in (m_llm, m_rule):
                if not math.isfinite(value) or value < 0:
                    raise ValueError(f"MAE for {item} must be finite and >= 0, got {value}")
            clean[ItemId.parse(item)] = (float(m_llm), float(m_rule))
        object.__setattr__(self, "entries", clean)

    def to_json(self) -> dict:
        return {i.value: {"mae_llm": m[0], "mae_rule": m[1]} for i, m in self.entries.items()}

    @classmethod
    def from_json(cls, data: Mapping) -> "MaeTable":
        return cls({ItemId.parse(k): (v["mae_llm"], v["mae_rule"]) for k, v in data.items()})


@dataclass(frozen=True)
class FusionWeights:
    alpha_llm: Mapping[ItemId, float]
    strategy: FusionStrategy

    def alpha_rule(self, item: ItemId) -> float:
        return 1.0 - self.alpha_llm[item]

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "items": {
                i.value: {"alpha_llm": a, "alpha_rule": 1.0 - a} for i, a in self.alpha_llm.items()
            },
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "FusionWeights":
        return cls(
            {ItemId.parse(k): float(v["alpha_llm"]) for k, v in data["items"].items()},
            FusionStrategy.parse(data["strategy"]),
        )


def llm_weight(m_llm: float, m_rule: float, strategy: FusionStrategy, item=None) -> float:
    strategy = FusionStrategy.parse(strategy)
    if strategy is FusionStrategy.V1_HARD_SELECT:
        if m_llm < m_rule:
            return 1.0
        return 0.0 if m_llm > m_rule else 0.5
    if strategy is FusionStrategy.V4_SOFTMAX_NEG_MAE:
        # exp(-a) / (exp(-a) + exp(-b)) == 1 / (1 + exp(a - b)); depends only on a - b
        d = m_llm - m_rule
        if d >= 0:
            e = math.exp(-d)
            return e / (1.0 + e)
        return 1.0 / (1.0 + math.exp(d))
    if m_llm == 0 or m_rule == 0:
        raise ZeroMae(item, strategy.value)
    power = 1 if strategy is FusionStrategy.V2_INVERSE_MAE else 2
    w_llm, w_rule = m_llm ** -power, m_rule ** -power
    return w_llm / (w_llm + w_rule)


def compute_weights(mae: MaeTable, strategy: FusionStrategy | str) -> FusionWeights:
    strategy = FusionStrategy.parse(strategy)
    alphas = {}
    for item in ITEMS:
        if item not in mae.entries:
            raise MissingItem(item, "MAE table")
        m_llm, m_rule = mae.entries[item]
        alpha = llm_weight(m_llm, m_rule, strategy, item)
        alphas[item] = min(1.0, max(0.0, alpha))
    return FusionWeights(alphas, strategy)


@dataclass(frozen=True)
class FusedScoreSheet:
    """Unrounded fused scores with both source scores and the LLM weight."""

    session_id: str | None
    fused: Mapping[ItemId, float]
    llm: Mapping[ItemId, float]
    rule: Mapping[ItemId, float]
    alpha_llm: Mapping[ItemId, float]

    def sheet(self) -> ItemScoreSheet:
        return ItemScoreSheet(dict(self.fused), source="fused", session_id=self.session_id)

    def to_json(self) -> dict:
        return {
            i.value: {
                "fused": self.fused[i], "llm": self.llm[i], "rule": self.rule[i],
                "alpha_llm": self.alpha_llm[i],
            }
            for i in ITEMS
        }


def fuse(llm: ItemScoreSheet, rule: ItemScoreSheet, w: FusionWeights) -> FusedScoreSheet:
    fused, l_scores, r_scores = {}, {}, {}
    for item in ITEMS:
        l, r = llm[item], rule[item]
        a = w.alpha_llm[item]
        value = a * l + (1.0 - a) * r
        # guard the convex-hull invariant against last-bit rounding
        fused[item] = min(max(value, min(l, r)), max(l, r))
        l_scores[item], r_scores[item] = l, r
    return FusedScoreSheet(llm.session_id or rule.session_id, fused, l_scores, r_scores, dict(w.alpha_llm))


def _round_half_away(x: float) -> int:
    return int(Decimal(x).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def round_for_totals(sheet: ItemScoreSheet | FusedScoreSheet) -> ItemScoreSheet:
    """Round each score half away from zero and clamp into 0..3."""
    if isinstance(sheet, FusedScoreSheet):
        sheet = sheet.sheet()
    scores = {item: min(3, max(0, _round_half_away(v))) for item, v in sheet.scores.items()}
    return ItemScoreSheet(scores, source=sheet.source, session_id=sheet.session_id)
