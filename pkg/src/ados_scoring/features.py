"""Conversational features computed from a normalized session transcript.

All seven features are dimensionless rates in [0, 1]:

- echolalia_rate: child turns that near-repeat the last doctor turn
- alternation_rate: adjacent utterance pairs with a speaker change
- participation_rate: share of the dialogue spoken by the child
- enjoyment_rate / passive_rate: positive / negative child turns
- suggestion_rate: child turns that propose a joint activity
- response_rate: doctor questions answered by the child in the next turn
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field

from .errors import NoChildSpeech, UnknownFeatureName
from .sentiment import (
    DEFAULT_NEGATORS,
    Lexicon,
    LexiconSentimentAnalyzer,
    SentimentAnalyzer,
    tokenize,
)
from .transcript import SessionTranscript, Speaker

FEATURE_NAMES: tuple[str, ...] = (
    "echolalia_rate",
    "alternation_rate",
    "participation_rate",
    "enjoyment_rate",
    "passive_rate",
    "suggestion_rate",
    "response_rate",
)

DEFAULT_QUESTION_MARKERS = ("?", "？", "吗", "呢")
DEFAULT_INTERROGATIVES = (
    "what", "where", "when", "who", "whom", "whose", "why", "how", "which",
    "do", "does", "did", "can", "could", "would", "will", "is", "are", "was",
    "were", "have", "has", "should", "shall", "tell me",
    "什么", "哪", "谁", "为什么", "怎么", "几",
)
DEFAULT_SUGGESTION_PATTERNS = (
    "let's", "let us", "lets", "how about", "shall we", "why don't we",
    "we could", "we can", "can we", "do you want to", "want to play",
    "you be the", "i'll be the", "我们", "一起", "要不要",
)


def levenshtein(a: str, b: str) -> int:
    """Character-level edit distance (unit insert/delete/substitute cost)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            ))
        previous = current
    return previous[-1]


def normalized_edit_similarity(a: str, b: str) -> float:
    """``1 - levenshtein(a, b) / max(len(a), len(b))`` over NFC code points.

    Two empty strings are identical (similarity 1.0).
    """
    a = unicodedata.normalize("NFC", a)
    b = unicodedata.normalize("NFC", b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


@dataclass(frozen=True)
class FeatureConfig:
    """Parameters for feature extraction.

    ``echolalia_threshold`` defaults to 0.8. ``participation_unit`` selects
    utterance or token counts. ``suggestion_match`` is ``"substring"`` or
    ``"prefix"``. A custom ``sentiment`` analyzer replaces the lexicon one.
    """

    echolalia_threshold: float = 0.8
    sentiment_lexicon: Lexicon | None = None
    negation_window: int = 3
    negation_terms: tuple[str, ...] = DEFAULT_NEGATORS
    question_markers: tuple[str, ...] = DEFAULT_QUESTION_MARKERS
    interrogatives: tuple[str, ...] = DEFAULT_INTERROGATIVES
    suggestion_patterns: tuple[str, ...] = DEFAULT_SUGGESTION_PATTERNS
    suggestion_match: str = "substring"
    participation_unit: str = "utterances"
    echo_case_sensitive: bool = False
    sentiment: SentimentAnalyzer | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0.0 < self.echolalia_threshold <= 1.0:
            raise ValueError("echolalia_threshold must lie in (0, 1]")
        if self.negation_window < 0:
            raise ValueError("negation_window must be non-negative")
        for name in ("question_markers", "suggestion_patterns"):
            value = tuple(getattr(self, name))
            if not value or not all(value):
                raise ValueError(f"{name} must be a non-empty list of non-empty strings")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "interrogatives", tuple(self.interrogatives))
        object.__setattr__(self, "negation_terms", tuple(self.negation_terms))
        if self.suggestion_match not in ("substring", "prefix"):
            raise ValueError("suggestion_match must be 'substring' or 'prefix'")
        if self.participation_unit not in ("utterances", "tokens"):
            raise ValueError("participation_unit must be 'utterances' or 'tokens'")
        if self.sentiment is None:
            lexicon = self.sentiment_lexicon or Lexicon.bundled()
            analyzer = LexiconSentimentAnalyzer(
                lexicon, self.negation_window, frozenset(self.negation_terms)
            )
            object.__setattr__(self, "sentiment_lexicon", lexicon)
            object.__setattr__(self, "sentiment", analyzer)


@dataclass(frozen=True)
class FeatureVector:
    echolalia_rate: float
    alternation_rate: float
    participation_rate: float
    enjoyment_rate: float
    passive_rate: float
    suggestion_rate: float
    response_rate: float
    # names of features that fell back to a degenerate default (e.g. no questions)
    degenerate: frozenset[str] = field(default=frozenset(), compare=False)

    def __post_init__(self):
        for name in FEATURE_NAMES:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.enjoyment_rate + self.passive_rate > 1.0 + 1e-12:
            raise ValueError("enjoyment_rate + passive_rate exceeds 1")

    def get(self, name: str) -> float:
        if name not in FEATURE_NAMES:
            raise UnknownFeatureName(name)
        return getattr(self, name)

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in FEATURE_NAMES)

    def to_json(self) -> dict:
        out = {n: getattr(self, n) for n in FEATURE_NAMES}
        if self.degenerate:
            out["degenerate"] = sorted(self.degenerate)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "FeatureVector":
        return cls(**{n: float(data[n]) for n in FEATURE_NAMES},
                   degenerate=frozenset(data.get("degenerate", ())))


def _require_child(t: SessionTranscript):
    child = t.child_utterances()
    if not child:
        raise NoChildSpeech(t.session_id)
    return child


def echolalia_rate(t: SessionTranscript, cfg: FeatureConfig) -> float:
    """Share of child turns similar (>= threshold) to the last doctor turn before them."""
    child = _require_child(t)
    last_doctor: str | None = None
    echoes = 0
    for u in t.utterances:
        if u.speaker is Speaker.DOCTOR:
            last_doctor = u.text
        elif u.speaker is Speaker.CHILD and last_doctor is not None:
            a, b = u.text, last_doctor
            if not cfg.echo_case_sensitive:
                a, b = a.casefold(), b.casefold()
            if normalized_edit_similarity(a, b) >= cfg.echolalia_threshold:
                echoes += 1
    return echoes / len(child)


def alternation_rate(t: SessionTranscript) -> float:
    n = len(t.utterances)
    if n < 2:
        return 0.0
    switches = sum(
        1 for prev, cur in zip(t.utterances, t.utterances[1:]) if prev.speaker is not cur.speaker
    )
    return switches / (n - 1)


def participation_rate(t: SessionTranscript, cfg: FeatureConfig | None = None) -> float:
    """Child share of all utterances (or of all tokens in token mode)."""
    if not t.utterances:
        return 0.0
    if cfg is not None and cfg.participation_unit == "tokens":
        sizes = [(u.speaker, len(tokenize(u.text))) for u in t.utterances]
        total = sum(n for _, n in sizes)
        if total == 0:
            return 0.0
        return sum(n for s, n in sizes if s is Speaker.CHILD) / total
    return len(t.child_utterances()) / len(t.utterances)


def sentiment_rates(t: SessionTranscript, cfg: FeatureConfig) -> tuple[float, float]:
    """Return ``(enjoyment_rate, passive_rate)`` over child utterances."""
    child = _require_child(t)
    polarities = [cfg.sentiment.polarity(u.text) for u in child]
    n = len(child)
    return polarities.count(1) / n, polarities.count(-1) / n


def _matches_suggestion(text: str, cfg: FeatureConfig) -> bool:
    folded = text.casefold()
    for pattern in cfg.suggestion_patterns:
        p = pattern.casefold()
        if cfg.suggestion_match == "prefix":
            if folded.startswith(p):
                return True
        elif p in folded:
            return True
    return False


def suggestion_rate(t: SessionTranscript, cfg: FeatureConfig) -> float:
    child = _require_child(t)
    return sum(_matches_suggestion(u.text, cfg) for u in child) / len(child)


def is_question(text: str, cfg: FeatureConfig) -> bool:
    stripped = text.rstrip()
    if any(stripped.endswith(m) for m in cfg.question_markers):
        return True
    folded = stripped.casefold()
    for word in cfg.interrogatives:
        w = word.casefold()
        if not folded.startswith(w):
            continue
        rest = folded[len(w):]
        # Latin interrogatives must end at a word boundary; CJK ones need not.
        if not rest or not re.match(r"\w", rest[0]) or not w[-1:].isascii():
            return True
    return False


def question_counts(t: SessionTranscript, cfg: FeatureConfig) -> tuple[int, int]:
    """Return ``(answered, asked)`` doctor-question counts."""
    asked = answered = 0
    utts = t.utterances
    for i, u in enumerate(utts):
        if u.speaker is not Speaker.DOCTOR or not is_question(u.text, cfg):
            continue
        asked += 1
        if i + 1 < len(utts) and utts[i + 1].speaker is Speaker.CHILD:
            answered += 1
    return answered, asked


def response_rate(t: SessionTranscript, cfg: FeatureConfig) -> float:
    """Answered doctor questions over asked; 0.0 when none were asked."""
    answered, asked = question_counts(t, cfg)
    return answered / asked if asked else 0.0


def extract_features(t: SessionTranscript, cfg: FeatureConfig) -> FeatureVector:
    """Compute all seven rates for one (normalized) transcript."""
    _require_child(t)
    enjoyment, passive = sentiment_rates(t, cfg)
    answered, asked = question_counts(t, cfg)
    return FeatureVector(
        echolalia_rate=echolalia_rate(t, cfg),
        alternation_rate=alternation_rate(t),
        participation_rate=participation_rate(t, cfg),
        enjoyment_rate=enjoyment,
        passive_rate=passive,
        suggestion_rate=suggestion_rate(t, cfg),
        response_rate=answered / asked if asked else 0.0,
        degenerate=frozenset() if asked else frozenset({"response_rate"}),
    )


def feature_config_from_json(data: dict | None) -> FeatureConfig:
    data = dict(data or {})
    lexicon_path = data.pop("lexicon", None)
    if lexicon_path:
        data["sentiment_lexicon"] = Lexicon.from_file(lexicon_path)
    for key in ("negation_terms", "question_markers", "interrogatives", "suggestion_patterns"):
        if key in data:
            data[key] = tuple(data[key])
    return FeatureConfig(**data)


__all__ = [
    "FEATURE_NAMES",
    "FeatureConfig",
    "FeatureVector",
    "alternation_rate",
    "echolalia_rate",
    "extract_features",
    "is_question",
    "levenshtein",
    "normalized_edit_similarity",
    "participation_rate",
    "question_counts",
    "response_rate",
    "sentiment_rates",
    "suggestion_rate",
]
