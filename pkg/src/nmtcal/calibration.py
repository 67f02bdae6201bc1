"""Confidence binning, expected calibration error and reliability diagrams."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .corpus import Token

DEFAULT_BINS = 10


@dataclass
class Prediction:
    """One emitted (or teacher-forced) token with its confidence."""

    token: Token
    confidence: float
    correct: bool
    position_index: int = 0
    sentence_length: int = 1
    label: str | None = None
    under_translation_adjacent: bool = False
    attributes: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if not (0 <= self.position_index < self.sentence_length):
            raise ValueError(
                f"position {self.position_index} outside sentence of length {self.sentence_length}"
            )


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    avg_confidence: float
    avg_accuracy: float

    @property
    def gap(self) -> float:
        """Signed confidence minus accuracy; positive means over-estimation."""
        return self.avg_confidence - self.avg_accuracy

    @property
    def center(self) -> float:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class EceReport:
    bins: list[CalibrationBin]
    ece: float
    n: int

    def to_dict(self) -> dict:
        return {
            "ece": self.ece,
            "n": self.n,
            "bins": [
                {
                    "lower": b.lower,
                    "upper": b.upper,
                    "count": b.count,
                    "avg_confidence": b.avg_confidence,
                    "avg_accuracy": b.avg_accuracy,
                }
                for b in self.bins
            ],
        }


class CalibrationClass(str, enum.Enum):
    WELL = "Well"
    OVER = "Over"
    UNDER = "Under"


def _as_arrays(preds) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(preds, tuple) and len(preds) == 2:
        conf, correct = preds
    else:
        conf = [p.confidence for p in preds]
        correct = [p.correct for p in preds]
    return np.asarray(conf, dtype=float), np.asarray(correct, dtype=float)


def bin_indices(confidences, m: int) -> np.ndarray:
    """0-based bin index of each confidence.

    Bins are ``((b-1)/m, b/m]``; a confidence of exactly 0 joins the first bin.
    """
    if m < 1:
        raise ValueError("number of bins must be >= 1")
    conf = np.asarray(confidences, dtype=float)
    if conf.size and (np.any(conf < 0) or np.any(conf > 1) or np.any(np.isnan(conf))):
        raise ValueError("confidences must lie in [0, 1]")
    upper = np.ceil(conf * m)
    # conf * m rounds up past an edge for values like 0.3; compare against the edge itself.
    upper = np.where(conf <= (upper - 1) / m, upper - 1, upper)
    return np.clip(upper.astype(int) - 1, 0, m - 1)


def bin_predictions(preds, m: int = DEFAULT_BINS) -> list[CalibrationBin]:
    """Partition predictions into ``m`` equal-width confidence bins.

    ``preds`` is either a sequence of :class:`Prediction` or a
    ``(confidences, correct)`` pair of array-likes.
    """
    conf, correct = _as_arrays(preds)
    if conf.size == 0:
        raise ValueError("cannot bin an empty set of predictions")
    idx = bin_indices(conf, m)
    counts = np.bincount(idx, minlength=m)
    conf_sum = np.bincount(idx, weights=conf, minlength=m)
    acc_sum = np.bincount(idx, weights=correct, minlength=m)
    bins = []
    for b in range(m):
        c = int(counts[b])
        bins.append(CalibrationBin(
            lower=b / m,
            upper=(b + 1) / m,
            count=c,
            avg_confidence=float(conf_sum[b] / c) if c else 0.0,
            avg_accuracy=float(acc_sum[b] / c) if c else 0.0,
        ))
    return bins


def merge_bins(*shards: Sequence[CalibrationBin]) -> list[CalibrationBin]:
    """Combine bins computed on disjoint shards with the same edges."""
    first = shards[0]
    out = []
    for b, group in enumerate(zip(*shards)):
        if any((g.lower, g.upper) != (first[b].lower, first[b].upper) for g in group):
            raise ValueError("bin edges differ between shards")
        n = sum(g.count for g in group)
        out.append(CalibrationBin(
            first[b].lower, first[b].upper, n,
            sum(g.count * g.avg_confidence for g in group) / n if n else 0.0,
            sum(g.count * g.avg_accuracy for g in group) / n if n else 0.0,
        ))
    return out


def ece(bins: Sequence[CalibrationBin], n: int | None = None) -> float:
    total = sum(b.count for b in bins)
    if n is None:
        n = total
    if n != total:
        raise ValueError(f"n={n} does not match the {total} binned predictions")
    if n <= 0:
        raise ValueError("ECE is undefined for zero predictions")
    return float(sum(b.count / n * abs(b.avg_accuracy - b.avg_confidence) for b in bins if b.count))


def ece_report(preds, m: int = DEFAULT_BINS) -> EceReport:
    bins = bin_predictions(preds, m)
    n = sum(b.count for b in bins)
    return EceReport(bins=bins, ece=ece(bins, n), n=n)


def classify_bins(bins: Sequence[CalibrationBin], threshold: float) -> list[CalibrationClass]:
    if threshold < 0 or math.isnan(threshold):
        raise ValueError("threshold must be >= 0")
    out = []
    for b in bins:
        gap = abs(b.avg_accuracy - b.avg_confidence)
        if gap < threshold or b.avg_confidence == b.avg_accuracy:
            out.append(CalibrationClass.WELL)
        elif b.avg_confidence > b.avg_accuracy:
            out.append(CalibrationClass.OVER)
        else:
            out.append(CalibrationClass.UNDER)
    return out


def classify_predictions(preds, bins: Sequence[CalibrationBin], threshold: float) -> list[CalibrationClass]:
    """Label every prediction with the calibration class of its bin.

    A bin whose |accuracy - confidence| is below ``threshold`` is Well;
    otherwise Over or Under by the sign of the gap. A zero-gap bin is
    always Well.
    """
    conf, _ = _as_arrays(preds)
    classes = classify_bins(bins, threshold)
    idx = bin_indices(conf, len(bins))
    return [classes[i] for i in idx]


def class_fractions(classes: Iterable[CalibrationClass]) -> dict[str, float]:
    classes = list(classes)
    n = len(classes)
    return {c.value: (sum(x is c for x in classes) / n if n else 0.0) for c in CalibrationClass}


@dataclass(frozen=True)
class DiagramRow:
    bin_center: float
    avg_confidence: float
    avg_accuracy: float
    gap: float
    count: int


def reliability_diagram(report: EceReport) -> list[DiagramRow]:
    """Plot-ready rows; ``gap`` is confidence minus accuracy.

    Empty bins are kept (count 0, zero averages) so every diagram has
    exactly M rows.
    """
    return [
        DiagramRow(b.center, b.avg_confidence, b.avg_accuracy, b.gap if b.count else 0.0, b.count)
        for b in report.bins
    ]


DIAGRAM_HEADER = ("bin_center", "avg_conf", "avg_acc", "gap", "count")


def diagram_rows_as_tuples(rows: Sequence[DiagramRow]) -> list[tuple]:
    return [(r.bin_center, r.avg_confidence, r.avg_accuracy, r.gap, r.count) for r in rows]
