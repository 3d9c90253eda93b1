"""Typed errors raised across the scoring pipeline."""

from __future__ import annotations


class AdosError(Exception):
    """Base class for every error the pipeline raises on purpose."""


# transcript parsing ---------------------------------------------------------


class TranscriptError(AdosError):
    pass


class MalformedLine(TranscriptError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class UnknownSpeaker(TranscriptError):
    def __init__(self, label: str, line_no: int | None = None):
        self.label = label
        self.line_no = line_no
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"unknown speaker label {label!r}{where}")


class EmptySession(TranscriptError):
    def __init__(self, session_id: str | None = None):
        self.session_id = session_id
        super().__init__(f"session {session_id or '<unnamed>'} has no utterances")


class DuplicateHeader(TranscriptError):
    def __init__(self, line_no: int):
        self.line_no = line_no
        super().__init__(f"line {line_no}: second header object in session file")


# features / rules -----------------------------------------------------------


class NoChildSpeech(AdosError):
    def __init__(self, session_id: str | None = None):
        self.session_id = session_id
        super().__init__(f"session {session_id or '<unnamed>'} contains no child utterances")


class LexiconLoadError(AdosError):
    def __init__(self, source: str, reason: str):
        self.source = source
        super().__init__(f"cannot load lexicon {source}: {reason}")


class UnknownFeatureName(AdosError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown feature name {name!r}")


class EmptyGrid(AdosError):
    def __init__(self, item):
        self.item = item
        super().__init__(f"threshold grid for {item} has no candidates")


class InsufficientStrata(AdosError):
    pass


# prompts / responses ----------------------------------------------------------


class MissingFewShot(AdosError):
    pass


class PreconditionError(AdosError):
    pass


class ResponseError(AdosError):
    """Raised when an LLM response cannot be turned into scores."""


class MissingItem(ResponseError):
    def __init__(self, item, context: str = ""):
        self.item = item
        super().__init__(f"missing item {item}{': ' + context if context else ''}")


class ScoreOutOfRange(ResponseError):
    def __init__(self, item, value):
        self.item = item
        self.value = value
        super().__init__(f"score {value!r} for {item} outside 0..3")


class DuplicateItem(ResponseError):
    def __init__(self, item):
        self.item = item
        super().__init__(f"item {item} scored more than once")


class Unparseable(ResponseError):
    pass


# gateway ----------------------------------------------------------------------


class GatewayError(AdosError):
    pass


class AuthError(GatewayError):
    pass


class RateLimitedExhausted(GatewayError):
    pass


class TimeoutExhausted(GatewayError):
    pass


class ProtocolError(GatewayError):
    def __init__(self, status: int | None, body_excerpt: str):
        self.status = status
        self.body_excerpt = body_excerpt
        super().__init__(f"HTTP {status}: {body_excerpt}")


class ReplayMiss(GatewayError):
    """No recorded exchange matches the requested prompt."""


# fusion / assessment ------------------------------------------------------------


class ZeroMae(AdosError):
    def __init__(self, item, strategy):
        self.item = item
        self.strategy = strategy
        super().__init__(f"{strategy} weights undefined for {item}: an MAE is zero")


class LengthMismatch(AdosError):
    pass


class EmptyInput(AdosError):
    pass


class OutOfRangeTotal(AdosError):
    def __init__(self, total):
        self.total = total
        super().__init__(f"total score {total!r} outside 0..28")


class MissingPrediction(AdosError):
    def __init__(self, session_id: str, source: str):
        self.session_id = session_id
        self.source = source
        super().__init__(f"no {source} prediction for session {session_id}")


class InvalidProfile(AdosError):
    pass


# orchestration --------------------------------------------------------------------


class ConfigError(AdosError):
    pass


class StageMissing(AdosError):
    def __init__(self, stage: str, path):
        self.stage = stage
        self.path = path
        super().__init__(f"stage '{stage}' has not produced {path}; run it first")
