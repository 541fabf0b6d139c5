"""Confusion counting and derived metrics.

The positive class is "incorrectly installed" throughout: a true positive
is a defective installation that was flagged as defective.  The false
discovery rate is computed literally as 1 - precision and the false
negative rate as 1 - recall, so those identities hold exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import ContractError

POSITIVE_CLASS = "incorrect"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ContractError(f"confusion count {name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    counts: ConfusionCounts
    accuracy: float
    precision: float
    recall: float
    fdr: float
    fnr: float

    def to_dict(self) -> dict:
        return {
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp,
                       "tn": self.counts.tn, "fn": self.counts.fn},
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "fdr": self.fdr,
            "fnr": self.fnr,
        }


def confusion_from_predictions(actual_positive: Sequence[bool],
                               predicted_positive: Sequence[bool]) -> ConfusionCounts:
    if len(actual_positive) != len(predicted_positive):
        raise ContractError("actual and predicted label sequences differ in length")
    tp = fp = tn = fn = 0
    for a, p in zip(actual_positive, predicted_positive):
        if a and p:
            tp += 1
        elif not a and p:
            fp += 1
        elif not a and not p:
            tn += 1
        else:
            fn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def metrics_from_counts(counts: ConfusionCounts) -> MetricsReport:
    """Accuracy, precision (PPV), recall (TPR), FDR and FNR from raw counts.

    Zero-denominator conventions: precision is 0 when nothing was flagged,
    recall is 0 when no positives exist.
    """
    if counts.total == 0:
        raise ContractError("cannot compute metrics over zero samples")
    flagged = counts.tp + counts.fp
    positives = counts.tp + counts.fn
    precision = counts.tp / flagged if flagged else 0.0
    recall = counts.tp / positives if positives else 0.0
    return MetricsReport(
        counts=counts,
        accuracy=(counts.tp + counts.tn) / counts.total,
        precision=precision,
        recall=recall,
        fdr=1.0 - precision,
        fnr=1.0 - recall,
    )


def save_metrics_report(report: MetricsReport, path, extra: dict | None = None) -> None:
    """Write the report as deterministic human-readable JSON."""
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_metrics_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
