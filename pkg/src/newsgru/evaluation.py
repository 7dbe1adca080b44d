"""Accuracy, Matthews correlation, and attention-based explanation reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ForwardTrace, ModelConfig, ModelParams, forward_window

__all__ = [
    "ConfusionMatrix",
    "EvalResult",
    "ExplanationReport",
    "accuracy",
    "confusion",
    "evaluate_windows",
    "explain",
    "mcc",
    "render_report",
]


@dataclass
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    """Count outcomes with class 1 (rise) as positive."""
    if len(predictions) != len(labels):
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions, {len(labels)} labels"
        )
    cm = ConfusionMatrix()
    for pred, lab in zip(predictions, labels):
        if pred not in (0, 1) or lab not in (0, 1):
            raise ValueError(f"entries must be 0 or 1, got pred={pred}, label={lab}")
        if pred == 1 and lab == 1:
            cm.tp += 1
        elif pred == 0 and lab == 0:
            cm.tn += 1
        elif pred == 1 and lab == 0:
            cm.fp += 1
        else:
            cm.fn += 1
    return cm


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    return (cm.tp + cm.tn) / cm.total


def mcc(cm: ConfusionMatrix) -> float:
    """Matthews correlation coefficient; 0 when any denominator factor is 0."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    denom = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    if denom == 0:
        return 0.0
    return (cm.tp * cm.tn - cm.fn * cm.fp) / math.sqrt(denom)


@dataclass
class EvalResult:
    accuracy: float
    mcc: float
    cm: ConfusionMatrix
    predictions: list[int]


def evaluate_windows(windows, params: ModelParams, config: ModelConfig) -> EvalResult:
    """Evaluation-mode predictions and metrics over a list of windows."""
    preds = []
    labels = []
    for window in windows:
        probs, _ = forward_window(window, params, config, training=False)
        preds.append(int(np.argmax(probs)))
        labels.append(window.label)
    cm = confusion(preds, labels)
    return EvalResult(accuracy=accuracy(cm), mcc=mcc(cm), cm=cm, predictions=preds)


@dataclass
class HeadlineEntry:
    date: str
    text: str
    entities: list[str]
    weight: float          # headline weight within its day
    combined: float        # day weight times headline weight
    day_index: int
    item_index: int


@dataclass
class DayEntry:
    date: str
    day_weight: float
    headlines: list[HeadlineEntry] = field(default_factory=list)


@dataclass
class ExplanationReport:
    prediction_date: str
    predicted: int
    prob: float
    days: list[DayEntry]
    top: list[HeadlineEntry]


def explain(window, trace: ForwardTrace, top_k: int = 3) -> ExplanationReport:
    """Attention-weight report for one evaluation-mode forward pass.

    A headline's combined influence is its day weight times its within-day
    weight. The top list is sorted by combined weight, with ties broken by
    earlier date and then lower index within the day.
    """
    if trace.dropout_mask is not None:
        raise ValueError("explain needs an evaluation-mode trace, not a "
                         "training-mode one with a dropout mask")
    days = []
    candidates = []
    for t, bucket in enumerate(window.days):
        entry = DayEntry(
            date=bucket.trading_date.isoformat(),
            day_weight=float(trace.day_weights[t]),
        )
        for i, item in enumerate(bucket.items):
            weight = float(trace.news_weights[t][i])
            headline = HeadlineEntry(
                date=entry.date,
                text=item.headline,
                entities=list(item.matched_entities),
                weight=weight,
                combined=entry.day_weight * weight,
                day_index=t,
                item_index=i,
            )
            entry.headlines.append(headline)
            candidates.append(headline)
        days.append(entry)
    candidates.sort(key=lambda h: (-h.combined, h.day_index, h.item_index))
    predicted = int(np.argmax(trace.probs))
    return ExplanationReport(
        prediction_date=window.prediction_date.isoformat(),
        predicted=predicted,
        prob=float(trace.probs[predicted]),
        days=days,
        top=candidates[:top_k],
    )


def _headline_doc(h: HeadlineEntry) -> dict:
    return {
        "date": h.date,
        "text": h.text,
        "weight": h.weight,
        "combined": h.combined,
        "entities": h.entities,
    }


def render_report(report: ExplanationReport, fmt: str = "table") -> str:
    """Render as machine-readable JSON or an aligned human-readable table."""
    if fmt == "json":
        doc = {
            "prediction_date": report.prediction_date,
            "predicted": report.predicted,
            "prob": report.prob,
            "days": [
                {
                    "date": day.date,
                    "day_weight": day.day_weight,
                    "headlines": [_headline_doc(h) for h in day.headlines],
                }
                for day in report.days
            ],
            "top_k": [_headline_doc(h) for h in report.top],
        }
        return json.dumps(doc, indent=2)
    if fmt == "table":
        direction = "RISE" if report.predicted == 1 else "FALL"
        lines = [
            f"prediction {report.prediction_date}: {direction} (p={report.prob:.3f})",
            f"{'date':<12} {'combined':>9} {'day_w':>7} {'head_w':>7}  headline",
        ]
        ordered = sorted(
            (h for day in report.days for h in day.headlines),
            key=lambda h: (-h.combined, h.day_index, h.item_index),
        )
        for h in ordered:
            lines.append(
                f"{h.date:<12} {h.combined:>9.4f} "
                f"{next(d.day_weight for d in report.days if d.date == h.date):>7.4f} "
                f"{h.weight:>7.4f}  {h.text}"
            )
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}, expected json or table")
