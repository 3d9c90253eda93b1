"""Session transcript model, JSONL parsing, serialization and normalization.

A session file is UTF-8 line-delimited JSON. The first line is a header::

    {"session_id": "s01", "age_months": 96, "gender": "m",
     "clinician_items": {"A9": 0, "B1": 1, "B2": 0, "D1": 0, "D2": 0, "D4": 1}}

and every following line is one utterance::

    {"speaker": "doctor", "text": "What did you do today?", "t0": 1.5, "t1": 3.0}
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import DuplicateHeader, EmptySession, MalformedLine, UnknownSpeaker
from .items import ClinicianItemSheet

_WS = re.compile(r"\s+")
_HEADER_KEYS = {"session_id", "age_months", "gender", "clinician_items", "synthetic"}
_UTTERANCE_KEYS = {"speaker", "text", "t0", "t1"}


class Speaker(str, Enum):
    DOCTOR = "doctor"
    CHILD = "child"
    OTHER = "other"

    @classmethod
    def parse(cls, label: str, line_no: int | None = None) -> "Speaker":
        if isinstance(label, Speaker):
            return label
        if not isinstance(label, str):
            raise UnknownSpeaker(repr(label), line_no)
        try:
            return cls(label.strip().lower())
        except ValueError:
            raise UnknownSpeaker(label, line_no) from None

    @property
    def title(self) -> str:
        return self.value.capitalize()


@dataclass(frozen=True)
class Utterance:
    speaker: Speaker
    text: str
    index: int
    t0: float | None = None
    t1: float | None = None

    def __post_init__(self):
        for name in ("t0", "t1"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")
        if self.t0 is not None and self.t1 is not None and self.t0 > self.t1:
            raise ValueError(f"t0 {self.t0} after t1 {self.t1}")


@dataclass(frozen=True)
class SessionTranscript:
    session_id: str
    utterances: tuple[Utterance, ...]
    age_months: int | None = None
    gender: str | None = None
    clinician_items: ClinicianItemSheet | None = None
    synthetic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        for i, utt in enumerate(self.utterances):
            if utt.index != i:
                raise ValueError(f"utterance index {utt.index} at position {i}")

    def __len__(self) -> int:
        return len(self.utterances)

    def by(self, speaker: Speaker) -> list[Utterance]:
        return [u for u in self.utterances if u.speaker is speaker]

    def child_utterances(self) -> list[Utterance]:
        return self.by(Speaker.CHILD)

    def with_utterances(self, utterances: Iterable[Utterance]) -> "SessionTranscript":
        reindexed = tuple(replace(u, index=i) for i, u in enumerate(utterances))
        return replace(self, utterances=reindexed)

    def dialogue_text(self) -> str:
        """Render the dialogue as ``[index] Speaker: text`` lines."""
        return "\n".join(f"[{u.index}] {u.speaker.title}: {u.text}" for u in self.utterances)


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def _number(value, name: str, line_no: int) -> float | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedLine(line_no, f"{name} must be a number")
    return value


def _parse_header(obj: dict, line_no: int) -> dict:
    unknown = set(obj) - _HEADER_KEYS
    if unknown:
        raise MalformedLine(line_no, f"unknown header keys {sorted(unknown)}")
    session_id = obj.get("session_id")
    if not isinstance(session_id, str) or not session_id.strip():
        raise MalformedLine(line_no, "header needs a non-empty string session_id")
    age = obj.get("age_months")
    if age is not None and (isinstance(age, bool) or not isinstance(age, int) or age <= 0):
        raise MalformedLine(line_no, "age_months must be a positive integer")
    gender = obj.get("gender")
    if gender is not None and gender not in ("m", "f"):
        raise MalformedLine(line_no, "gender must be 'm' or 'f'")
    clinician = obj.get("clinician_items")
    if clinician is not None:
        if not isinstance(clinician, dict):
            raise MalformedLine(line_no, "clinician_items must be an object")
        try:
            clinician = ClinicianItemSheet(clinician)
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from None
    synthetic = obj.get("synthetic", False)
    if not isinstance(synthetic, bool):
        raise MalformedLine(line_no, "synthetic must be a boolean")
    return dict(
        session_id=_nfc(session_id),
        age_months=age,
        gender=gender,
        clinician_items=clinician,
        synthetic=synthetic,
    )


def parse_transcript(data: bytes | str) -> SessionTranscript:
    """Parse one JSONL session document into a :class:`SessionTranscript`.

    Text is NFC-normalized; whitespace is otherwise kept as written (see
    :func:`normalize`). Errors name the first offending line (1-based).
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedLine(1, f"not UTF-8: {exc}") from None
    if data.startswith("\ufeff"):
        data = data[1:]

    header = None
    utterances: list[Utterance] = []
    for line_no, raw in enumerate(data.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise MalformedLine(line_no, "expected a JSON object")

        if header is None:
            if "speaker" in obj:
                raise MalformedLine(line_no, "first line must be the session header")
            header = _parse_header(obj, line_no)
            continue
        if "session_id" in obj:
            raise DuplicateHeader(line_no)

        unknown = set(obj) - _UTTERANCE_KEYS
        if unknown:
            raise MalformedLine(line_no, f"unknown utterance keys {sorted(unknown)}")
        if "speaker" not in obj:
            raise MalformedLine(line_no, "utterance needs a speaker")
        speaker = Speaker.parse(obj["speaker"], line_no)
        text = obj.get("text")
        if not isinstance(text, str):
            raise MalformedLine(line_no, "text must be a string")
        t0 = _number(obj.get("t0"), "t0", line_no)
        t1 = _number(obj.get("t1"), "t1", line_no)
        try:
            utterances.append(Utterance(speaker, _nfc(text), len(utterances), t0, t1))
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from None

    if header is None:
        raise MalformedLine(1, "empty document")
    if not utterances:
        raise EmptySession(header["session_id"])
    return SessionTranscript(utterances=tuple(utterances), **header)


def serialize_transcript(t: SessionTranscript) -> bytes:
    """Inverse of :func:`parse_transcript` (byte-stable for a given value)."""
    header: dict = {"session_id": t.session_id}
    if t.age_months is not None:
        header["age_months"] = t.age_months
    if t.gender is not None:
        header["gender"] = t.gender
    if t.clinician_items is not None:
        header["clinician_items"] = t.clinician_items.to_json()
    if t.synthetic:
        header["synthetic"] = True
    lines = [json.dumps(header, ensure_ascii=False)]
    for u in t.utterances:
        obj: dict = {"speaker": u.speaker.value, "text": u.text}
        if u.t0 is not None:
            obj["t0"] = u.t0
        if u.t1 is not None:
            obj["t1"] = u.t1
        lines.append(json.dumps(obj, ensure_ascii=False))
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_transcript(path: str | Path) -> SessionTranscript:
    return parse_transcript(Path(path).read_bytes())


def collapse_whitespace(text: str) -> str:
    return _WS.sub(" ", text).strip()


def normalize(t: SessionTranscript, merge_consecutive: bool = False) -> SessionTranscript:
    """Collapse whitespace, drop empty utterances and optionally merge turns.

    Merged utterances keep the first start time and the last end time.
    Idempotent for either setting of ``merge_consecutive``.
    """
    kept: list[Utterance] = []
    for u in t.utterances:
        text = collapse_whitespace(u.text)
        if not text:
            continue
        if merge_consecutive and kept and kept[-1].speaker is u.speaker:
            prev = kept[-1]
            t1 = prev.t1
            if u.t1 is not None and (prev.t0 is None or u.t1 >= prev.t0):
                t1 = u.t1
            kept[-1] = replace(prev, text=f"{prev.text} {text}", t1=t1)
            continue
        kept.append(replace(u, text=text))
    if not kept:
        raise EmptySession(t.session_id)
    return t.with_utterances(kept)
