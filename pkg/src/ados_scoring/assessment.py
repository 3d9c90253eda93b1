"""Module 3 totals, diagnosis cutoffs and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyInput, LengthMismatch, MissingItem, MissingPrediction, OutOfRangeTotal
from .fusion import round_for_totals
from .items import ITEMS, ClinicianItemSheet, ItemId, ItemScoreSheet

MAX_TOTAL = 28


class Ternary(str, Enum):
    NON_SPECTRUM = "non_spectrum"
    SPECTRUM = "spectrum_disorder"
    AUTISM = "autism"


class Binary(str, Enum):
    NON_SPECTRUM = "non_spectrum"
    ASD = "asd"


@dataclass(frozen=True)
class DiagnosisClass:
    ternary: Ternary

    @property
    def binary(self) -> Binary:
        return Binary.NON_SPECTRUM if self.ternary is Ternary.NON_SPECTRUM else Binary.ASD


def total_score(items8: ItemScoreSheet, clinician: ClinicianItemSheet) -> int:
    """Sum of all 14 algorithm items, each capped at 2 (a 3 counts as 2)."""
    scores = []
    for item in ITEMS:
        if item not in items8.scores:
            raise MissingItem(item, f"{items8.source} sheet for {items8.session_id}")
        value = items8.scores[item]
        if value != int(value):
            raise ValueError(f"{item} score {value} is not an integer; round fused sheets first")
        scores.append(int(value))
    scores.extend(clinician.values())
    for value in scores:
        if not 0 <= value <= 3:
            raise ValueError(f"item score {value} outside 0..3")
    return sum(min(v, 2) for v in scores)


def classify(total: int) -> DiagnosisClass:
    """0-6 non-spectrum, 7-8 spectrum disorder, 9+ autism."""
    if isinstance(total, bool) or int(total) != total or not 0 <= total <= MAX_TOTAL:
        raise OutOfRangeTotal(total)
    if total <= 6:
        return DiagnosisClass(Ternary.NON_SPECTRUM)
    if total <= 8:
        return DiagnosisClass(Ternary.SPECTRUM)
    return DiagnosisClass(Ternary.AUTISM)


def item_mae(pred: Sequence[float], truth: Sequence[float]) -> float:
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(truth)} labels")
    if not len(pred):
        raise EmptyInput("item_mae needs at least one session")
    return math.fsum(abs(p - t) for p, t in zip(pred, truth)) / len(pred)


@dataclass(frozen=True)
class ClassificationResult:
    accuracy: float
    precision: float
    f1: float
    labels: tuple[str, ...]
    confusion: tuple[tuple[int, ...], ...]  # rows: truth, columns: prediction

    def __iter__(self):
        return iter((self.accuracy, self.precision, self.f1, self.confusion))


def _task_label(value, task: str) -> str:
    if isinstance(value, DiagnosisClass):
        value = value.binary if task == "binary" else value.ternary
    return value.value if isinstance(value, Enum) else str(value)


def classification_metrics(pred: Sequence, truth: Sequence, task: str) -> ClassificationResult:
    """Accuracy plus macro precision and F1.

    Classes seen in neither ``truth`` nor ``pred`` are left out of the macro
    average. A class that is never predicted has precision 0; a class never
    present in truth has recall 0.
    """
    if task not in ("binary", "ternary"):
        raise ValueError(f"task must be 'binary' or 'ternary', got {task!r}")
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(truth)} labels")
    if not len(pred):
        raise EmptyInput("classification_metrics needs at least one session")

    labels = tuple(c.value for c in (Binary if task == "binary" else Ternary))
    p = [_task_label(v, task) for v in pred]
    t = [_task_label(v, task) for v in truth]
    index = {c: i for i, c in enumerate(labels)}
    for v in p + t:
        if v not in index:
            raise ValueError(f"label {v!r} not a {task} class")

    k = len(labels)
    cm = np.zeros((k, k), dtype=np.int64)
    for tv, pv in zip(t, p):
        cm[index[tv], index[pv]] += 1

    tp = np.diag(cm).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    actual = cm.sum(axis=1).astype(float)
    present = (predicted + actual) > 0
    precision = np.divide(tp, predicted, out=np.zeros(k), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros(k), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(k), where=denom > 0)

    return ClassificationResult(
        accuracy=float(tp.sum() / len(t)),
        precision=float(precision[present].mean()),
        f1=float(f1[present].mean()),
        labels=labels,
        confusion=tuple(tuple(int(x) for x in row) for row in cm),
    )


TABLE_COLUMNS = (
    *(i.value for i in ITEMS), "avg",
    "2-acc", "2-precision", "2-f1", "3-acc", "3-precision", "3-f1",
)


@dataclass(frozen=True)
class MetricsReport:
    source: str
    item_mae: Mapping[ItemId, float]
    mean_mae: float
    acc2: float
    prec2: float
    f1_2: float
    acc3: float
    prec3: float
    f1_3: float
    confusion2: tuple = field(default=())
    confusion3: tuple = field(default=())
    n_sessions: int = 0

    def row(self) -> list[float]:
        return [
            *(self.item_mae[i] for i in ITEMS), self.mean_mae,
            self.acc2, self.prec2, self.f1_2, self.acc3, self.prec3, self.f1_3,
        ]

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "n_sessions": self.n_sessions,
            "item_mae": {i.value: self.item_mae[i] for i in ITEMS},
            "mean_mae": self.mean_mae,
            "acc2": self.acc2, "prec2": self.prec2, "f1_2": self.f1_2,
            "acc3": self.acc3, "prec3": self.prec3, "f1_3": self.f1_3,
            "confusion2": {"labels": [b.value for b in Binary], "matrix": [list(r) for r in self.confusion2]},
            "confusion3": {"labels": [c.value for c in Ternary], "matrix": [list(r) for r in self.confusion3]},
        }


def metrics_report(
    source: str,
    predictions: Mapping[str, ItemScoreSheet],
    labels: Mapping[str, ItemScoreSheet],
    clinician: Mapping[str, ClinicianItemSheet],
) -> MetricsReport:
    """Metrics for one source over every labeled session (sorted by id)."""
    sessions = sorted(labels)
    if not sessions:
        raise EmptyInput("no labeled sessions")
    for sid in sessions:
        if sid not in predictions:
            raise MissingPrediction(sid, source)

    maes = {
        item: item_mae([predictions[s][item] for s in sessions], [labels[s][item] for s in sessions])
        for item in ITEMS
    }
    pred_cls = [classify(total_score(round_for_totals(predictions[s]), clinician[s])) for s in sessions]
    true_cls = [classify(total_score(labels[s], clinician[s])) for s in sessions]
    two = classification_metrics(pred_cls, true_cls, "binary")
    three = classification_metrics(pred_cls, true_cls, "ternary")
    return MetricsReport(
        source=source,
        item_mae=maes,
        mean_mae=math.fsum(maes.values()) / len(ITEMS),
        acc2=two.accuracy, prec2=two.precision, f1_2=two.f1,
        acc3=three.accuracy, prec3=three.precision, f1_3=three.f1,
        confusion2=two.confusion, confusion3=three.confusion,
        n_sessions=len(sessions),
    )


def random_baseline(session_ids, seed: int) -> dict[str, ItemScoreSheet]:
    """Uniform random integer scores in 0..3, reproducible per seed."""
    rng = np.random.default_rng(seed)
    out = {}
    for sid in sorted(session_ids):
        draws = rng.integers(0, 4, size=len(ITEMS))
        out[sid] = ItemScoreSheet({i: int(v) for i, v in zip(ITEMS, draws)}, source="random", session_id=sid)
    return out


def evaluate_corpus(
    predictions: Mapping[str, Mapping[str, ItemScoreSheet]],
    labels: Mapping[str, ItemScoreSheet],
    clinician: Mapping[str, ClinicianItemSheet],
    seed: int | None = 0,
) -> dict[str, MetricsReport]:
    """One report per prediction source, plus a seeded random baseline.

    Pass ``seed=None`` to skip the random row.
    """
    reports = {
        source: metrics_report(source, sheets, labels, clinician)
        for source, sheets in predictions.items()
    }
    if seed is not None and "random" not in reports:
        reports["random"] = metrics_report("random", random_baseline(labels, seed), labels, clinician)
    return reports


def format_table(reports: Mapping[str, MetricsReport] | Sequence[MetricsReport]) -> str:
    """Aligned plain-text table: one row per source, 15 metric columns."""
    rows = list(reports.values()) if isinstance(reports, Mapping) else list(reports)
    name_width = max([len("model")] + [len(r.source) for r in rows])
    widths = [max(len(c), 6) for c in TABLE_COLUMNS]
    head = "model".ljust(name_width) + "  " + "  ".join(c.rjust(w) for c, w in zip(TABLE_COLUMNS, widths))
    lines = [head, "-" * len(head)]
    for r in rows:
        cells = "  ".join(f"{v:.4f}".rjust(w) for v, w in zip(r.row(), widths))
        lines.append(r.source.ljust(name_width) + "  " + cells)
    return "\n".join(lines) + "\n"
