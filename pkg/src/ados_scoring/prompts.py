"""Prompt assembly for item scoring and excerpt extraction, plus response parsing."""

from __future__ import annotations

import json
import math
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .errors import (
    DuplicateItem,
    MissingFewShot,
    MissingItem,
    PreconditionError,
    ScoreOutOfRange,
    Unparseable,
)
from .items import ITEMS, ClinicianItemSheet, ItemId, ItemScoreSheet
from .storage import sha256_hex
from .transcript import SessionTranscript


class CriteriaMode(str, Enum):
    CONCISE = "concise"
    STANDARD = "standard"


class PromptMode(str, Enum):
    ONLY_SCORING = "only_scoring"
    ZERO_SHOT = "score_explain_zero_shot"
    FEW_SHOT = "score_explain_few_shot"


# -- assets --------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptAssets:
    criteria: Mapping
    procedures: Mapping
    few_shot: Sequence[Mapping]
    language: str = "en"

    @classmethod
    def load(cls, assets_dir: str | Path | None = None, language: str = "en") -> "PromptAssets":
        """Load ``criteria.<lang>.json``, ``procedures.<lang>.json`` and ``fewshot.<lang>.json``.

        Files missing from ``assets_dir`` fall back to the bundled copies.
        """
        def read(name: str):
            fname = f"{name}.{language}.json"
            if assets_dir is not None and (Path(assets_dir) / fname).exists():
                return json.loads((Path(assets_dir) / fname).read_text(encoding="utf-8"))
            bundled = resources.files("ados_scoring.assets").joinpath(fname)
            return json.loads(bundled.read_text(encoding="utf-8"))

        criteria = read("criteria")
        missing = [i.value for i in ITEMS if i.value not in criteria.get("items", {})]
        if missing:
            raise ValueError(f"criteria asset lacks items {missing}")
        return cls(criteria, read("procedures"), tuple(read("fewshot")["examples"]), language)


_DEFAULT_ASSETS: PromptAssets | None = None


def default_assets() -> PromptAssets:
    global _DEFAULT_ASSETS
    if _DEFAULT_ASSETS is None:
        _DEFAULT_ASSETS = PromptAssets.load()
    return _DEFAULT_ASSETS


# -- context ------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorStats:
    """Prior score statistics from previously assessed children.

    The defaults are the summary of a 28-child clinical sample (mean total
    7.25, SD 4.56; 16 ASD, 12 TD) and carry no per-item means; build
    site-specific values with :meth:`from_labels`.
    """

    item_means: Mapping[ItemId, float] = field(default_factory=dict)
    asd_proportion: float = 16 / 28
    td_proportion: float = 12 / 28
    total_mean: float | None = 7.25
    total_sd: float | None = 4.56

    def __post_init__(self):
        means = {ItemId.parse(k): float(v) for k, v in self.item_means.items()}
        if any(v < 0 or not math.isfinite(v) for v in means.values()):
            raise ValueError("item means must be finite and non-negative")
        object.__setattr__(self, "item_means", means)
        for p in (self.asd_proportion, self.td_proportion):
            if not 0.0 <= p <= 1.0:
                raise ValueError("proportions must lie in [0, 1]")
        if abs(self.asd_proportion + self.td_proportion - 1.0) > 1e-9:
            raise ValueError("asd_proportion + td_proportion must equal 1")

    @classmethod
    def from_labels(
        cls, labels: Mapping[str, ItemScoreSheet], clinician: Mapping[str, ClinicianItemSheet]
    ) -> "PriorStats":
        from .assessment import Binary, classify, total_score

        ids = sorted(labels)
        if not ids:
            raise ValueError("no labeled sessions")
        means = {i: math.fsum(labels[s][i] for s in ids) / len(ids) for i in ITEMS}
        totals = [total_score(labels[s], clinician[s]) for s in ids]
        asd = sum(classify(t).binary is Binary.ASD for t in totals) / len(ids)
        mean = math.fsum(totals) / len(totals)
        sd = math.sqrt(math.fsum((t - mean) ** 2 for t in totals) / len(totals))
        return cls(means, asd, 1.0 - asd, round(mean, 4), round(sd, 4))

    def to_json(self) -> dict:
        return {
            "item_means": {i.value: v for i, v in self.item_means.items()},
            "asd_proportion": self.asd_proportion,
            "td_proportion": self.td_proportion,
            "total_mean": self.total_mean,
            "total_sd": self.total_sd,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "PriorStats":
        return cls(**{**data, "item_means": data.get("item_means", {})})


@dataclass(frozen=True)
class PromptContext:
    criteria_mode: CriteriaMode = CriteriaMode.STANDARD
    include_procedures: bool = True
    include_stats: bool = True
    stats: PriorStats = field(default_factory=PriorStats)
    mode: PromptMode = PromptMode.ZERO_SHOT
    few_shot_examples: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "criteria_mode", CriteriaMode(self.criteria_mode))
        object.__setattr__(self, "mode", PromptMode(self.mode))
        if self.few_shot_examples is not None:
            object.__setattr__(self, "few_shot_examples", tuple(self.few_shot_examples))
        if self.mode is PromptMode.FEW_SHOT and not self.few_shot_examples:
            raise MissingFewShot("few-shot mode needs at least one example")
        if self.mode is not PromptMode.FEW_SHOT and self.few_shot_examples:
            raise PreconditionError(f"few-shot examples given for {self.mode.value} mode")

    @classmethod
    def arm(cls, name: str, **kwargs) -> "PromptContext":
        """Context for an ablation arm: ``Concise``, ``C``, ``C+M``, ``C+S`` or ``C+M+S``."""
        parts = set(name.upper().split("+"))
        if name.lower() == "concise":
            return cls(CriteriaMode.CONCISE, False, False, **kwargs)
        if "C" not in parts or parts - {"C", "M", "S"}:
            raise ValueError(f"unknown prompt arm {name!r}")
        return cls(CriteriaMode.STANDARD, "M" in parts, "S" in parts, **kwargs)


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    token_estimate: int

    def __post_init__(self):
        if not self.system_text or not self.user_text:
            raise ValueError("prompt texts must be non-empty")

    @property
    def digest(self) -> str:
        return sha256_hex(self.system_text, self.user_text)


def estimate_tokens(*texts: str) -> int:
    """Rough token count: ~4 characters per token, one per CJK character."""
    total = 0
    for text in texts:
        wide = sum(1 for ch in text if unicodedata.east_asian_width(ch) in ("W", "F"))
        total += wide + math.ceil((len(text) - wide) / 4)
    return total


# -- rendering -----------------------------------------------------------------------


def concise_item_lines(item: ItemId, assets: PromptAssets) -> list[str]:
    spec = assets.criteria["items"][item.value]
    return [
        f"### {item.value} {spec['name']}",
        f"Score range: {assets.criteria.get('score_range', '0-3')} (0 = typical, higher = more atypical)",
    ]


def standard_item_lines(item: ItemId, assets: PromptAssets) -> list[str]:
    spec = assets.criteria["items"][item.value]
    lines = concise_item_lines(item, assets) + [spec["description"]]
    lines += [f"{score} = {text}" for score, text in sorted(spec["scores"].items())]
    return lines


def criteria_block(mode: CriteriaMode, assets: PromptAssets | None = None) -> str:
    assets = assets or default_assets()
    render = standard_item_lines if mode is CriteriaMode.STANDARD else concise_item_lines
    chunks = ["# ADOS-2 scoring criteria"]
    for item in ITEMS:
        chunks.append("\n".join(render(item, assets)))
    return "\n\n".join(chunks)


def procedures_block(assets: PromptAssets | None = None) -> str:
    assets = assets or default_assets()
    lines = [
        "# ADOS-2 Module 3 procedures",
        "The dialogue is one continuous recording of these activities, in this order; "
        "activity boundaries are not marked.",
    ]
    for n, act in enumerate(assets.procedures["activities"], start=1):
        lines.append(f"{n}. {act['activity']}: {act['summary']}")
    return "\n".join(lines)


def stats_block(stats: PriorStats) -> str:
    lines = [
        "# Prior statistics",
        "Statistics of previously assessed children at this clinic:",
        f"- Children with ASD: {stats.asd_proportion:.1%}; typically developing: {stats.td_proportion:.1%}",
    ]
    if stats.total_mean is not None:
        sd = f" (SD {stats.total_sd:.2f})" if stats.total_sd is not None else ""
        lines.append(f"- Mean ADOS-2 total score: {stats.total_mean:.2f}{sd}")
    if stats.item_means:
        means = ", ".join(f"{i.value} {stats.item_means[i]:.2f}" for i in ITEMS if i in stats.item_means)
        lines.append(f"- Mean item scores: {means}")
    return "\n".join(lines)


_SYSTEM_ROLE = (
    "You are an experienced clinician scoring ADOS-2 Module 3 assessments from transcribed "
    "doctor-child dialogue. Scores range from 0 (no abnormality) to 3 and must follow the "
    "criteria below."
)

_ITEM_LIST = "A4, A7, A8, B4, B7, B9, B10 and B11"

_INSTRUCTIONS = {
    PromptMode.ONLY_SCORING: (
        f"Score the child on items {_ITEM_LIST} using the criteria. Give scores only, without "
        "justification. Answer with exactly one line per item in the form `<item>: <score>`."
    ),
    PromptMode.ZERO_SHOT: (
        f"Score the child on items {_ITEM_LIST} using the criteria. Work through the dialogue "
        "step by step, compare the child's behaviour with each score description, and justify "
        "every score with evidence from the dialogue. Answer with exactly one line per item in "
        "the form `<item>: <score> — <justification>`."
    ),
}
_INSTRUCTIONS[PromptMode.FEW_SHOT] = (
    _INSTRUCTIONS[PromptMode.ZERO_SHOT]
    + " Follow the worked examples: each gives the score, the reasoning and the evidence."
)


def _render_example(n: int, example: Mapping) -> str:
    lines = [f"## Example {n}", "Dialogue:", example["dialogue"], "Answer:"]
    for item in ITEMS:
        out = example["output"][item.value]
        evidence = f" (evidence: {out['evidence']})" if out.get("evidence") else ""
        lines.append(f"{item.value}: {out['score']} — {out['justification']}{evidence}")
    return "\n".join(lines)


def build_scoring_prompt(
    t: SessionTranscript, ctx: PromptContext, assets: PromptAssets | None = None
) -> PromptBundle:
    """Assemble the first-stage scoring prompt.

    The system text holds, in order, the criteria block, the procedure
    block (optional) and the prior statistics block (optional). The user
    text holds the mode instruction, any worked examples, and the dialogue.
    """
    assets = assets or default_assets()
    if ctx.mode is PromptMode.FEW_SHOT and not ctx.few_shot_examples:
        raise MissingFewShot("few-shot mode needs at least one example")

    system = [_SYSTEM_ROLE, criteria_block(ctx.criteria_mode, assets)]
    if ctx.include_procedures:
        system.append(procedures_block(assets))
    if ctx.include_stats:
        system.append(stats_block(ctx.stats))

    user = ["# Task", _INSTRUCTIONS[ctx.mode]]
    if ctx.mode is PromptMode.FEW_SHOT:
        user.append("# Worked examples")
        user.extend(_render_example(n, ex) for n, ex in enumerate(ctx.few_shot_examples, start=1))
    user += ["# Dialogue", t.dialogue_text()]

    system_text = "\n\n".join(system) + "\n"
    user_text = "\n\n".join(user) + "\n"
    return PromptBundle(system_text, user_text, estimate_tokens(system_text, user_text))


@dataclass(frozen=True)
class LlmItemResult:
    item: ItemId
    score: int
    justification: str = ""

    def __post_init__(self):
        object.__setattr__(self, "item", ItemId.parse(self.item))
        if isinstance(self.score, bool) or not isinstance(self.score, int) or not 0 <= self.score <= 3:
            raise ScoreOutOfRange(self.item, self.score)


_EXPLAIN_SYSTEM = (
    "You are an experienced clinician reviewing one ADOS-2 Module 3 item score. Reason step by "
    "step: reread the item criteria, find the dialogue turns that bear on the item, copy the most "
    "relevant ones verbatim, then say whether the first-stage score holds."
)

_EXPLAIN_FORMAT = (
    "# Output format\n"
    "Score: <confirmed score, 0-3>\n"
    "Excerpts:\n"
    '- "<verbatim text copied from the dialogue>"\n'
    "Rationale: <how the excerpts meet the criteria for the score>"
)


def build_interpretability_prompt(
    item: ItemId | str,
    first_stage: LlmItemResult,
    t: SessionTranscript,
    assets: PromptAssets | None = None,
) -> PromptBundle:
    """Second-stage prompt: single-item criteria, first-stage output, full dialogue."""
    item = ItemId.parse(item)
    assets = assets or default_assets()
    if first_stage.item is not item:
        raise PreconditionError(f"first-stage result is for {first_stage.item}, not {item}")
    justification = first_stage.justification or "(none given)"
    user = [
        "# Item criteria",
        "\n".join(standard_item_lines(item, assets)),
        "# First-stage result",
        f"Item: {item.value}\nFirst-stage score: {first_stage.score}\nJustification: {justification}",
        "# Dialogue",
        t.dialogue_text(),
        "# Task\nExtract verbatim the dialogue excerpts that best support or contradict the "
        "first-stage score, then confirm or revise the score.",
        _EXPLAIN_FORMAT,
    ]
    user_text = "\n\n".join(user) + "\n"
    system_text = _EXPLAIN_SYSTEM + "\n"
    return PromptBundle(system_text, user_text, estimate_tokens(system_text, user_text))


# -- parsing ----------------------------------------------------------------------------

_ITEM_ALT = "|".join(sorted((i.value for i in ITEMS), key=len, reverse=True))
_LINE = re.compile(
    rf"""^\s*(?:[-*•>]\s*)?(?:\*\*|__)?\s*
    (?P<item>{_ITEM_ALT})\b
    [^:：\n]{{0,60}}?                 # optional item name, e.g. "(Conversation)"
    (?:\*\*|__)?\s*[:：]\s*(?:\*\*|__)?\s*
    (?:score\s*[:=]?\s*)?
    (?P<score>[-+]?\d+(?:\.\d+)?)
    (?:\s*/\s*3)?\s*(?:\*\*|__)?
    \s*(?:(?:[—–|;,.:]|-{{1,2}})\s*(?P<just>.*?))?\s*$""",
    re.IGNORECASE | re.VERBOSE,
)
_JSON_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL | re.IGNORECASE)


def _json_candidates(text: str):
    for m in _JSON_FENCE.finditer(text):
        yield m.group(1)
    start, end = text.find("{"), text.rfind("}")
    if 0 <= start < end:
        yield text[start:end + 1]


def _load_json_object(text: str):
    for candidate in _json_candidates(text):
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def _coerce_score(item: ItemId, value) -> int:
    if isinstance(value, bool):
        raise ScoreOutOfRange(item, value)
    if isinstance(value, str):
        try:
            value = float(value.strip())
        except ValueError:
            raise Unparseable(f"score for {item} is not a number: {value!r}") from None
    if not isinstance(value, (int, float)) or not math.isfinite(value):
        raise Unparseable(f"score for {item} is not a number: {value!r}")
    if value != int(value) or not 0 <= value <= 3:
        raise ScoreOutOfRange(item, int(value) if value == int(value) else value)
    return int(value)


def _scores_from_json(obj: Mapping) -> list[tuple[ItemId, object, str]] | None:
    if "items" in obj and isinstance(obj["items"], (dict, list)):
        obj = obj["items"]
    entries = []
    if isinstance(obj, list):
        for entry in obj:
            if isinstance(entry, Mapping) and "item" in entry:
                entries.append((entry["item"], entry))
    else:
        entries = list(obj.items())
    found = []
    for key, value in entries:
        try:
            item = ItemId.parse(key)
        except ValueError:
            continue
        if isinstance(value, Mapping):
            score = value.get("score")
            just = value.get("justification") or value.get("reason") or value.get("explanation") or ""
        else:
            score, just = value, ""
        found.append((item, score, str(just).strip()))
    return found or None


def parse_scoring_response(text: str, mode: PromptMode | str) -> list[LlmItemResult]:
    """Extract one score (and justification) per item from a model response.

    Accepts ``<item>: <score> — <justification>`` lines amid other prose, or
    a JSON object keyed by item. Raises instead of guessing: duplicate,
    missing or out-of-range items and missing justifications are errors.
    """
    mode = PromptMode(mode)
    found: list[tuple[ItemId, object, str]] | None = None
    obj = _load_json_object(text)
    if obj is not None:
        found = _scores_from_json(obj)
    if found is None:
        found = []
        for line in text.splitlines():
            m = _LINE.match(line)
            if m:
                found.append((ItemId.parse(m.group("item")), m.group("score"), (m.group("just") or "").strip()))
    if not found:
        raise Unparseable("no item scores found in response")

    results: dict[ItemId, LlmItemResult] = {}
    for item, raw_score, just in found:
        if item in results:
            raise DuplicateItem(item)
        score = _coerce_score(item, raw_score)
        if mode is PromptMode.ONLY_SCORING:
            just = ""
        elif not just:
            raise Unparseable(f"no justification given for {item}")
        results[item] = LlmItemResult(item, score, just)
    for item in ITEMS:
        if item not in results:
            raise MissingItem(item)
    return [results[item] for item in ITEMS]


def format_scoring_response(results: Sequence[LlmItemResult]) -> str:
    """Canonical response text; :func:`parse_scoring_response` inverts it."""
    lines = []
    for r in results:
        line = f"{r.item.value}: {r.score}"
        if r.justification:
            line += f" — {r.justification}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def results_to_sheet(results: Sequence[LlmItemResult], session_id: str | None = None) -> ItemScoreSheet:
    return ItemScoreSheet(
        {r.item: r.score for r in results},
        source="llm",
        session_id=session_id,
        justifications={r.item: r.justification for r in results},
    )


@dataclass(frozen=True)
class Excerpt:
    text: str
    start: int | None = None  # first utterance index (inclusive)
    end: int | None = None  # last utterance index (inclusive)

    @property
    def verified(self) -> bool:
        return self.start is not None

    def to_json(self) -> dict:
        return {"text": self.text, "start": self.start, "end": self.end, "verified": self.verified}


@dataclass(frozen=True)
class ExplanationRecord:
    item: ItemId
    confirmed_score: int
    excerpts: tuple[Excerpt, ...]
    rationale: str
    first_stage_score: int | None = None

    @property
    def consistent(self) -> bool | None:
        if self.first_stage_score is None:
            return None
        return self.first_stage_score == self.confirmed_score

    def to_json(self) -> dict:
        return {
            "item": self.item.value,
            "confirmed_score": self.confirmed_score,
            "first_stage_score": self.first_stage_score,
            "consistent": self.consistent,
            "excerpts": [e.to_json() for e in self.excerpts],
            "rationale": self.rationale,
        }


_LABEL = re.compile(r"(?:\[\s*\d+\s*\]\s*)?\b(?:doctor|child|other)\s*[:：]", re.IGNORECASE)
_BRACKET_INDEX = re.compile(r"\[\s*\d+\s*\]")
_EDGE = "\"'“”‘’「」『』«»`.,!?;:。，！？ "


def _match_key(text: str, strip_edges: bool = True) -> str:
    text = unicodedata.normalize("NFC", text)
    text = _BRACKET_INDEX.sub(" ", _LABEL.sub(" ", text))
    text = " ".join(text.casefold().split())
    return text.strip(_EDGE) if strip_edges else text


def locate_excerpt(quote: str, t: SessionTranscript, max_span: int = 4) -> Excerpt:
    """Find ``quote`` in the transcript (case/whitespace-insensitive).

    Tries single utterances first, then windows of up to ``max_span``
    consecutive utterances joined by spaces.
    """
    key = _match_key(quote)
    if not key:
        return Excerpt(quote)
    texts = [_match_key(u.text, strip_edges=False) for u in t.utterances]
    for span in range(1, max_span + 1):
        for start in range(len(texts) - span + 1):
            if key in " ".join(texts[start:start + span]):
                return Excerpt(quote, start, start + span - 1)
    return Excerpt(quote)


_SCORE_LINE = re.compile(r"^\s*[*_]*\s*(?:confirmed\s+|final\s+)?score[*_]*\s*[:：]\s*[*_]*\s*([-+]?\d+(?:\.\d+)?)", re.I | re.M)
_RATIONALE = re.compile(r"^\s*[*_]*\s*rationale[*_]*\s*[:：]\s*(.*)", re.I | re.M | re.S)
_EXCERPTS_HEAD = re.compile(r"^\s*[*_]*\s*excerpts?[*_]*\s*[:：]\s*(.*)$", re.I | re.M)
_QUOTED = re.compile(r"\"([^\"]+)\"|“([^”]+)”|「([^」]+)」")


def _excerpt_lines(text: str) -> list[str]:
    head = _EXCERPTS_HEAD.search(text)
    if not head:
        return [next(g for g in m.groups() if g) for m in _QUOTED.finditer(text)]
    rest = text[head.start(1):]
    stop = _RATIONALE.search(rest)
    section = rest[:stop.start()] if stop else rest
    quotes = []
    for line in section.splitlines():
        line = line.strip()
        if not line:
            continue
        inner = [next(g for g in m.groups() if g) for m in _QUOTED.finditer(line)]
        if inner:
            quotes.extend(inner)
        else:
            stripped = re.sub(r"^(?:[-*•>]|\d+[.)])\s*", "", line).strip()
            if stripped:
                quotes.append(stripped)
    return quotes


def parse_explanation_response(
    text: str,
    item: ItemId | str,
    t: SessionTranscript,
    first_stage_score: int | None = None,
) -> ExplanationRecord:
    """Parse a second-stage response and match its quotes to utterances.

    Quotes that cannot be found in the transcript are kept, unverified.
    """
    item = ItemId.parse(item)
    obj = _load_json_object(text)
    if obj is not None and "score" in obj:
        score = _coerce_score(item, obj["score"])
        quotes = [str(q) for q in obj.get("excerpts", []) if str(q).strip()]
        rationale = str(obj.get("rationale", "")).strip()
    else:
        m = _SCORE_LINE.search(text)
        if not m:
            raise Unparseable(f"no score line in {item} explanation")
        score = _coerce_score(item, m.group(1))
        quotes = _excerpt_lines(text[m.end():])
        r = _RATIONALE.search(text)
        rationale = " ".join(r.group(1).split()) if r else ""
    excerpts = tuple(locate_excerpt(q, t) for q in quotes)
    return ExplanationRecord(item, score, excerpts, rationale, first_stage_score)
