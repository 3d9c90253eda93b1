"""Seeded synthetic labeled corpora for offline testing.

Synthetic sessions are NOT clinical data. Each session draws behaviour knobs
around its class centre, samples utterances from small template banks under
those knobs, and derives ground-truth item scores from the knobs with the
fixed cut-offs in :func:`labels_from_knobs`.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

from .assessment import DiagnosisClass, Ternary, classify, total_score
from .errors import InvalidProfile
from .items import CLINICIAN_ITEMS, ITEMS, ClinicianItemSheet, ItemId, ItemScoreSheet
from .storage import atomic_write, dumps
from .transcript import SessionTranscript, Speaker, Utterance, serialize_transcript

DOCTOR_QUESTIONS = (
    "What did you do at school today?",
    "Can you tell me about your friends?",
    "Where did you go on your last holiday?",
    "What is happening in this picture?",
    "Who do you play with at home?",
    "How do you get to school in the morning?",
    "What would you do if you lost your bag?",
    "Do you have any brothers or sisters?",
    "What happens next in the story?",
    "Why do you think the boy is running?",
    "What did you have for breakfast?",
    "Which toy do you want to use?",
)
DOCTOR_STATEMENTS = (
    "Here are some toys for you.",
    "Now I will show you a book.",
    "I brought some pictures with me.",
    "Now it is your turn to build something.",
    "This part of the story has a dragon.",
    "I will put the blocks on the table.",
)
CHILD_POSITIVE = (
    "I like the dinosaur",
    "that was fun",
    "haha that is funny",
    "I love playing with the car",
    "my favorite is the rocket",
    "yay I am happy",
    "wow the tower is cool",
)
CHILD_NEGATIVE = (
    "I am tired",
    "this is boring",
    "I hate the blocks",
    "I am sad today",
    "that is scary",
    "I do not like this one",
)
CHILD_SUGGESTION = (
    "let's play with the rocket",
    "how about we build a tower",
    "can we read the book together",
    "let's make a story about a train",
    "shall we draw a map",
)
CHILD_NEUTRAL = (
    "the car is red",
    "I went to school",
    "my dad drives a truck",
    "it has four wheels",
    "we ate noodles",
    "the train goes over there",
    "that one is a bus",
    "my sister is seven",
    "it was in the kitchen",
    "he is running to the park",
)
OTHER_LINES = ("Sit down please.", "He is a bit shy today.", "Go on, answer the lady.")

MODES = ("only_scoring", "score_explain_zero_shot", "score_explain_few_shot")
ERROR_MODES = ("missing_item", "out_of_range", "duplicate")


@dataclass(frozen=True)
class ClassKnobs:
    echo_prob: float
    answer_prob: float
    positive_prob: float
    negative_prob: float
    suggestion_prob: float

    def validate(self, name: str):
        for key, value in asdict(self).items():
            if not 0.0 <= value <= 1.0:
                raise InvalidProfile(f"{name}.{key}={value} outside [0, 1]")
        if self.positive_prob + self.negative_prob + self.suggestion_prob > 1.0 + 1e-12:
            raise InvalidProfile(f"{name}: positive + negative + suggestion probabilities exceed 1")


DEFAULT_KNOBS = {
    Ternary.NON_SPECTRUM: ClassKnobs(0.02, 0.92, 0.45, 0.04, 0.35),
    Ternary.SPECTRUM: ClassKnobs(0.10, 0.78, 0.30, 0.08, 0.18),
    Ternary.AUTISM: ClassKnobs(0.50, 0.45, 0.10, 0.25, 0.04),
}


@dataclass(frozen=True)
class GeneratorProfile:
    """Knobs for :func:`generate`.

    ``class_mix`` is ``(n_td, n_asd, n_autism)``. Knob values of exactly 0 or 1
    are never jittered, so an ``echo_prob`` of 1.0 gives pure echo sessions.
    """

    n_sessions: int = 28
    class_mix: tuple[int, int, int] = (12, 4, 12)
    knobs: Mapping[Ternary, ClassKnobs] = field(default_factory=lambda: dict(DEFAULT_KNOBS))
    knob_spread: float = 0.08
    turns_per_session: tuple[int, int] = (30, 50)
    other_prob: float = 0.02
    llm_noise: float = 0.25
    prose_wrap_rate: float = 0.3
    fixture_error_rate: float = 0.0
    seed: int = 0

    def validate(self):
        if self.n_sessions <= 0:
            raise InvalidProfile("n_sessions must be positive")
        if len(self.class_mix) != 3 or any(n < 0 for n in self.class_mix):
            raise InvalidProfile("class_mix must be three non-negative counts")
        if sum(self.class_mix) != self.n_sessions:
            raise InvalidProfile(f"class_mix {self.class_mix} does not sum to {self.n_sessions}")
        lo, hi = self.turns_per_session
        if not 1 <= lo <= hi:
            raise InvalidProfile("turns_per_session must satisfy 1 <= min <= max")
        for name in ("knob_spread", "other_prob", "llm_noise", "prose_wrap_rate", "fixture_error_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidProfile(f"{name} outside [0, 1]")
        for cls in Ternary:
            if cls not in self.knobs:
                raise InvalidProfile(f"no knobs for class {cls.value}")
            self.knobs[cls].validate(cls.value)


def profile_from_json(data: Mapping) -> GeneratorProfile:
    """Build a profile from JSON; ``knobs`` maps class names to knob objects
    and overrides only the classes it names."""
    data = dict(data)
    knobs = dict(DEFAULT_KNOBS)
    try:
        for name, values in data.pop("knobs", {}).items():
            knobs[Ternary(name)] = ClassKnobs(**values)
        for key in ("class_mix", "turns_per_session"):
            if key in data:
                data[key] = tuple(data[key])
        profile = GeneratorProfile(knobs=knobs, **data)
    except (TypeError, ValueError) as exc:
        raise InvalidProfile(str(exc)) from exc
    profile.validate()
    return profile


def _band(value: float, cuts: tuple[float, ...], higher_is_better: bool) -> int:
    """Score by counting cut-offs the value fails to clear."""
    if higher_is_better:
        return sum(value < c for c in cuts)
    return sum(value >= c for c in cuts)


def labels_from_knobs(k: ClassKnobs) -> dict[ItemId, int]:
    """Ground-truth item scores as a fixed function of the session knobs.

    A4 from echo_prob (>=0.15 -> 1, >=0.4 -> 2, >=0.75 -> 3); A7, A8, B9, B10
    from answer_prob with item-specific cut-offs; B4 from positive minus
    negative; B7 from suggestion_prob; B11 is the rounded mean of the others.
    """
    labels = {
        ItemId.A4: _band(k.echo_prob, (0.15, 0.4, 0.75), higher_is_better=False),
        ItemId.A7: _band(k.answer_prob, (0.8, 0.55, 0.25), higher_is_better=True),
        ItemId.A8: _band(k.answer_prob, (0.85, 0.6), higher_is_better=True),
        ItemId.B4: _band(k.positive_prob - k.negative_prob, (0.25, 0.05), higher_is_better=True),
        ItemId.B7: _band(k.suggestion_prob, (0.25, 0.08), higher_is_better=True),
        ItemId.B9: _band(k.answer_prob, (0.75, 0.5), higher_is_better=True),
        ItemId.B10: _band(k.answer_prob, (0.9, 0.65), higher_is_better=True),
    }
    # half-up rounding of the mean, done in integers
    labels[ItemId.B11] = (2 * sum(labels.values()) + 7) // 14
    return labels


TOTAL_RANGE = {Ternary.NON_SPECTRUM: (0, 6), Ternary.SPECTRUM: (7, 8), Ternary.AUTISM: (9, 28)}


@dataclass
class SyntheticCorpus:
    sessions: list[SessionTranscript]
    labels: dict[str, ItemScoreSheet]
    diagnoses: dict[str, DiagnosisClass]
    knobs: dict[str, ClassKnobs]
    fixtures: dict[str, dict[str, str]]
    fixture_scores: dict[str, dict[ItemId, int]]
    fixture_errors: dict[str, str]

    @property
    def clinician(self) -> dict[str, ClinicianItemSheet]:
        return {s.session_id: s.clinician_items for s in self.sessions}


def _jitter(rng: random.Random, centre: float, spread: float) -> float:
    if centre in (0.0, 1.0) or spread == 0:
        return centre
    return min(1.0, max(0.0, centre + rng.uniform(-spread, spread)))


def _session_knobs(rng: random.Random, centre: ClassKnobs, spread: float) -> ClassKnobs:
    k = ClassKnobs(**{name: _jitter(rng, v, spread) for name, v in asdict(centre).items()})
    excess = k.positive_prob + k.negative_prob + k.suggestion_prob - 1.0
    if excess > 0:
        scale = 1.0 / (1.0 + excess)
        k = ClassKnobs(k.echo_prob, k.answer_prob, k.positive_prob * scale,
                       k.negative_prob * scale, k.suggestion_prob * scale)
    return k


def _child_line(rng: random.Random, k: ClassKnobs) -> str:
    u = rng.random()
    if u < k.positive_prob:
        return rng.choice(CHILD_POSITIVE)
    if u < k.positive_prob + k.negative_prob:
        return rng.choice(CHILD_NEGATIVE)
    if u < k.positive_prob + k.negative_prob + k.suggestion_prob:
        return rng.choice(CHILD_SUGGESTION)
    return rng.choice(CHILD_NEUTRAL)


def _dialogue(rng: random.Random, k: ClassKnobs, profile: GeneratorProfile) -> list[tuple[Speaker, str]]:
    lo, hi = profile.turns_per_session
    n_doctor = rng.randint(lo, hi)
    turns: list[tuple[Speaker, str]] = []
    child_spoke = False
    for i in range(n_doctor):
        pool = DOCTOR_QUESTIONS if rng.random() < 0.8 else DOCTOR_STATEMENTS
        doctor = rng.choice(pool)
        turns.append((Speaker.DOCTOR, doctor))
        answered = rng.random() < k.answer_prob
        # every session needs at least one child turn
        if not answered and not (i == n_doctor - 1 and not child_spoke):
            continue
        child_spoke = True
        text = doctor if rng.random() < k.echo_prob else _child_line(rng, k)
        turns.append((Speaker.CHILD, text))
        if rng.random() < profile.other_prob:
            turns.append((Speaker.OTHER, rng.choice(OTHER_LINES)))
    return turns


def _clinician_items(rng: random.Random, units: int) -> dict[str, int]:
    scores = dict.fromkeys(CLINICIAN_ITEMS, 0)
    for _ in range(units):
        open_slots = [k for k in CLINICIAN_ITEMS if scores[k] < 2]
        scores[rng.choice(open_slots)] += 1
    # clinicians sometimes record a 3; totals cap it at 2 anyway
    for key in CLINICIAN_ITEMS:
        if scores[key] == 2 and rng.random() < 0.1:
            scores[key] = 3
    return scores


def _justification(item: ItemId, score: int) -> str:
    tone = ("no concerns", "mild concerns", "clear concerns", "marked concerns")[score]
    return f"The child's turns for {item.value} show {tone} in this synthetic dialogue."


def format_fixture(
    scores: Mapping[ItemId, int], mode: str, prose: bool = False, error: str | None = None
) -> str:
    """Canonical response text for canned LLM fixtures (optionally corrupted)."""
    lines = []
    for item in ITEMS:
        score = scores[item]
        if error == "out_of_range" and item is ItemId.A7:
            score = 5
        if error == "missing_item" and item is ItemId.B11:
            continue
        line = f"{item.value}: {score}"
        if mode != "only_scoring":
            line += f" — {_justification(item, scores[item])}"
        lines.append(line)
        if error == "duplicate" and item is ItemId.B4:
            lines.append(line)
    body = "\n".join(lines)
    if prose:
        body = (
            "Here is my assessment of the dialogue.\n\n" + body
            + "\n\nThese scores reflect the whole conversation."
        )
    return body + "\n"


def _explain_fixture(session: SessionTranscript, item: ItemId, score: int) -> str:
    child = session.child_utterances()[:2]
    quotes = "\n".join(f'- "{u.text}"' for u in child)
    return (
        f"Score: {score}\n"
        f"Excerpts:\n{quotes}\n"
        f"Rationale: These child turns illustrate the behaviour rated for {item.value}.\n"
    )


def generate(profile: GeneratorProfile | None = None) -> SyntheticCorpus:
    """Deterministically generate a labeled synthetic corpus from ``profile``."""
    profile = profile or GeneratorProfile()
    profile.validate()
    rng = random.Random(profile.seed)

    classes = (
        [Ternary.NON_SPECTRUM] * profile.class_mix[0]
        + [Ternary.SPECTRUM] * profile.class_mix[1]
        + [Ternary.AUTISM] * profile.class_mix[2]
    )
    rng.shuffle(classes)

    corpus = SyntheticCorpus([], {}, {}, {}, {}, {}, {})
    width = max(3, len(str(profile.n_sessions - 1)))
    for idx, cls in enumerate(classes):
        sid = f"syn-{idx:0{width}d}"
        lo, hi = TOTAL_RANGE[cls]
        for _ in range(1000):
            knobs = _session_knobs(rng, profile.knobs[cls], profile.knob_spread)
            items8 = labels_from_knobs(knobs)
            base = sum(min(v, 2) for v in items8.values())
            if base <= hi and base + 12 >= lo:
                break
        else:
            raise InvalidProfile(f"knobs for {cls.value} cannot produce totals in {lo}..{hi}")

        target = rng.randint(max(lo, base), min(hi, base + 12))
        clinician = ClinicianItemSheet(_clinician_items(rng, target - base))

        dialogue = _dialogue(rng, knobs, profile)
        session = SessionTranscript(
            session_id=sid,
            utterances=tuple(Utterance(spk, text, i) for i, (spk, text) in enumerate(dialogue)),
            age_months=rng.randint(57, 173),
            gender=rng.choice(("m", "m", "f")),
            clinician_items=clinician,
            synthetic=True,
        )
        labels = ItemScoreSheet(items8, source="clinician", session_id=sid)
        diagnosis = classify(total_score(labels, clinician))
        if diagnosis.ternary is not cls:
            raise RuntimeError(f"{sid}: generated class {diagnosis.ternary.value} != {cls.value}")

        noisy = {}
        for item in ITEMS:
            score = items8[item]
            if rng.random() < profile.llm_noise:
                score = min(3, max(0, score + rng.choice((-1, 1))))
            noisy[item] = score
        prose = rng.random() < profile.prose_wrap_rate
        error = rng.choice(ERROR_MODES) if rng.random() < profile.fixture_error_rate else None
        fixtures = {mode: format_fixture(noisy, mode, prose, error) for mode in MODES}
        for item in ITEMS:
            fixtures[f"explain_{item.value}"] = _explain_fixture(session, item, noisy[item])

        corpus.sessions.append(session)
        corpus.labels[sid] = labels
        corpus.diagnoses[sid] = diagnosis
        corpus.knobs[sid] = knobs
        corpus.fixtures[sid] = fixtures
        corpus.fixture_scores[sid] = noisy
        if error:
            corpus.fixture_errors[sid] = error
    return corpus


def write_corpus(corpus: SyntheticCorpus, out_dir: str | Path) -> Path:
    """Write sessions, labels.json, diagnoses.json and fixtures/ under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for session in corpus.sessions:
        atomic_write(out / f"{session.session_id}.jsonl", serialize_transcript(session))
        fdir = out / "fixtures" / session.session_id
        fdir.mkdir(parents=True, exist_ok=True)
        for name, text in corpus.fixtures[session.session_id].items():
            atomic_write(fdir / f"{name}.txt", text)
        scores = {i.value: v for i, v in corpus.fixture_scores[session.session_id].items()}
        atomic_write(fdir / "scores.json", dumps(scores))
    atomic_write(out / "labels.json", dumps({sid: s.to_json() for sid, s in corpus.labels.items()}))
    atomic_write(
        out / "diagnoses.json",
        dumps({sid: d.ternary.value for sid, d in corpus.diagnoses.items()}),
    )
    if corpus.fixture_errors:
        atomic_write(out / "fixture_errors.json", dumps(corpus.fixture_errors))
    return out
