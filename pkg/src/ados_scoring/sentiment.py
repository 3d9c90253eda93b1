"""Lexicon-based utterance polarity with windowed negation."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol

from .errors import LexiconLoadError

DEFAULT_NEGATORS: tuple[str, ...] = (
    "not", "no", "never", "none", "nothing", "nobody", "neither", "nor",
    "don't", "dont", "doesn't", "doesnt", "didn't", "didnt", "isn't", "isnt",
    "aren't", "arent", "wasn't", "wasnt", "weren't", "werent", "can't", "cant",
    "cannot", "won't", "wont", "wouldn't", "wouldnt", "shouldn't", "couldn't",
    "haven't", "hasn't", "hadn't", "ain't", "without",
    "不", "没", "没有", "别", "不是",
)

_WORD = re.compile(r"\w+(?:['’]\w+)*", re.UNICODE)


def _is_cjk(ch: str) -> bool:
    return unicodedata.east_asian_width(ch) in ("W", "F") and ch.isalpha()


class SentimentAnalyzer(Protocol):
    def polarity(self, text: str) -> int:
        """Return +1 (positive), -1 (negative) or 0 (neutral)."""


@dataclass(frozen=True)
class Lexicon:
    """Term polarities; multi-word terms are matched as token sequences."""

    entries: Mapping[str, int]
    source: str = "<memory>"

    @classmethod
    def from_text(cls, text: str, source: str = "<memory>") -> "Lexicon":
        entries: dict[str, int] = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise LexiconLoadError(source, f"line {line_no}: expected 'term<TAB>+1|-1'")
            term, pol = parts[0].strip().lower(), parts[1].strip()
            if pol not in ("+1", "-1", "1"):
                raise LexiconLoadError(source, f"line {line_no}: polarity {pol!r} not +1/-1")
            if not term:
                raise LexiconLoadError(source, f"line {line_no}: empty term")
            entries[unicodedata.normalize("NFC", term)] = -1 if pol == "-1" else 1
        if not entries:
            raise LexiconLoadError(source, "no entries")
        return cls(entries, source)

    @classmethod
    def from_file(cls, path: str | Path) -> "Lexicon":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise LexiconLoadError(str(path), str(exc)) from None
        return cls.from_text(text, str(path))

    @classmethod
    def bundled(cls) -> "Lexicon":
        text = resources.files("ados_scoring.assets").joinpath("lexicon.tsv").read_text("utf-8")
        return cls.from_text(text, "bundled:lexicon.tsv")


def tokenize(text: str, vocabulary: Iterable[str] = ()) -> list[str]:
    """Lower-cased word tokens.

    Runs of CJK characters have no spaces, so they are segmented by greedy
    longest match against ``vocabulary``; leftover characters become
    single-character tokens.
    """
    vocab = {v for v in vocabulary if v and _is_cjk(v[0])}
    longest = max((len(v) for v in vocab), default=1)
    tokens: list[str] = []
    for word in _WORD.findall(unicodedata.normalize("NFC", text).lower()):
        if not any(_is_cjk(ch) for ch in word):
            tokens.append(word.replace("’", "'"))
            continue
        i = 0
        while i < len(word):
            for size in range(min(longest, len(word) - i), 0, -1):
                piece = word[i:i + size]
                if size == 1 or piece in vocab:
                    tokens.append(piece)
                    i += size
                    break
    return tokens


@dataclass(frozen=True)
class LexiconSentimentAnalyzer:
    """Sum token polarities, flipping a term when a negator precedes it.

    A term is negated when any of the ``negation_window`` tokens before it is
    a negator. The utterance is positive if the sum is > 0, negative if < 0.
    """

    lexicon: Lexicon
    negation_window: int = 3
    negators: frozenset[str] = field(default_factory=lambda: frozenset(DEFAULT_NEGATORS))

    def __post_init__(self):
        if self.negation_window < 0:
            raise ValueError("negation_window must be >= 0")
        object.__setattr__(self, "negators", frozenset(n.lower() for n in self.negators))
        phrases = {tuple(term.split()): pol for term, pol in self.lexicon.entries.items()}
        object.__setattr__(self, "_phrases", phrases)
        object.__setattr__(self, "_max_len", max(len(p) for p in phrases))
        object.__setattr__(self, "_vocab", tuple(self.lexicon.entries) + tuple(self.negators))

    def polarity(self, text: str) -> int:
        tokens = tokenize(text, self._vocab)
        total = 0
        i = 0
        while i < len(tokens):
            step = 1
            for size in range(min(self._max_len, len(tokens) - i), 0, -1):
                pol = self._phrases.get(tuple(tokens[i:i + size]))
                if pol is None:
                    continue
                window = tokens[max(0, i - self.negation_window):i]
                if any(t in self.negators for t in window):
                    pol = -pol
                total += pol
                step = size
                break
            i += step
        return (total > 0) - (total < 0)
