"""Confusion matrices, per-stage / macro F1, accuracy, and the paired comparison table."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .stages import N_STAGES, STAGES, SleepStage

STAGE_COLUMNS = tuple(s.name for s in STAGES)
TABLE_COLUMNS = ("F1", "Acc") + STAGE_COLUMNS
_TAG_W, _FLAG_W, _VAL_W, _SEP = 12, 6, 5, "  "


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true stage, columns = predicted stage

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (N_STAGES, N_STAGES) or np.any(self.counts < 0):
            raise ValueError("confusion matrix must be a 5x5 array of non-negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    overall_f1: float
    accuracy: float
    per_stage_f1: dict[SleepStage, float]
    n_epochs: int
    # stages absent from the truth and never predicted; their F1 is 0 by convention
    undefined_stages: list[SleepStage] = field(default_factory=list)


def confusion(true: Sequence[int], pred: Sequence[int]) -> ConfusionMatrix:
    if len(true) != len(pred):
        raise ValueError(f"length mismatch: {len(true)} true labels vs {len(pred)} predictions")
    if len(true) == 0:
        raise ValueError("cannot score an empty prediction list")
    t = np.asarray([int(v) for v in true])
    p = np.asarray([int(v) for v in pred])
    if np.any((t < 0) | (t >= N_STAGES) | (p < 0) | (p >= N_STAGES)):
        raise ValueError("stage codes must lie in 0..4")
    counts = np.zeros((N_STAGES, N_STAGES), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    M = cm.counts
    total = cm.total
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    per_stage, undefined = {}, []
    for s in STAGES:
        tp = M[s, s]
        predicted, actual = M[:, s].sum(), M[s, :].sum()
        precision = tp / predicted if predicted else 0.0
        recall = tp / actual if actual else 0.0
        if precision + recall > 0:
            per_stage[s] = float(2 * precision * recall / (precision + recall))
        else:
            per_stage[s] = 0.0
        if predicted == 0 and actual == 0:
            undefined.append(s)
    return MetricsReport(
        overall_f1=float(np.mean(list(per_stage.values()))),
        accuracy=float(np.trace(M) / total),
        per_stage_f1=per_stage,
        n_epochs=total,
        undefined_stages=undefined,
    )


def evaluate(true: Sequence[int], pred: Sequence[int]) -> MetricsReport:
    return metrics_from_confusion(confusion(true, pred))


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Element-wise mean of several reports (e.g. one per seed)."""
    if not reports:
        raise ValueError("no reports to average")
    undefined = sorted(set().union(*(r.undefined_stages for r in reports)))
    return MetricsReport(
        overall_f1=float(np.mean([r.overall_f1 for r in reports])),
        accuracy=float(np.mean([r.accuracy for r in reports])),
        per_stage_f1={s: float(np.mean([r.per_stage_f1[s] for r in reports])) for s in STAGES},
        n_epochs=sum(r.n_epochs for r in reports),
        undefined_stages=undefined,
    )


# ---------------------------------------------------------------- rendering


def _row_values(r: MetricsReport) -> list[float]:
    return [r.overall_f1, r.accuracy] + [r.per_stage_f1[s] for s in STAGES]


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def render_report(rows: Sequence[tuple[str, bool, MetricsReport]]) -> str:
    """Fixed-width table with one ``Yes``/``No`` row per (model, HASS flag).

    Columns: overall F1, accuracy, then per-stage F1 for W, N1, N2, N3, REM,
    all at three decimals. Stages with undefined F1 get a footnote.
    """
    header = f"{'Network':<{_TAG_W}}{'HASS':<{_FLAG_W}}" + _SEP.join(f"{c:<{_VAL_W}}" for c in TABLE_COLUMNS)
    lines = [header.rstrip(), "-" * len(header.rstrip())]
    notes = []
    last_tag = None
    for tag, flag, report in rows:
        shown = tag if tag != last_tag else ""
        last_tag = tag
        values = _SEP.join(_fmt(v) for v in _row_values(report))
        lines.append(f"{shown:<{_TAG_W}}{'Yes' if flag else 'No':<{_FLAG_W}}{values}")
        if report.undefined_stages:
            names = ", ".join(s.name for s in report.undefined_stages)
            notes.append(f"* {tag} ({'Yes' if flag else 'No'}): F1 undefined for {names} "
                         f"(absent and never predicted), reported as 0.000")
    return "\n".join(lines + notes) + "\n"


def parse_report(text: str) -> list[tuple[str, bool, list[float]]]:
    """Inverse of :func:`render_report` at three-decimal precision."""
    rows = []
    tag = ""
    for line in text.splitlines()[2:]:
        if not line.strip() or line.startswith("* "):
            continue
        name = line[:_TAG_W].strip()
        tag = name or tag
        flag = line[_TAG_W:_TAG_W + _FLAG_W].strip()
        if flag not in ("Yes", "No"):
            raise ValueError(f"unparseable report row: {line!r}")
        values = [float(v) for v in line[_TAG_W + _FLAG_W:].split()]
        if len(values) != len(TABLE_COLUMNS):
            raise ValueError(f"expected {len(TABLE_COLUMNS)} values in row: {line!r}")
        rows.append((tag, flag == "Yes", values))
    return rows


def to_key_values(report: MetricsReport, prefix: str = "") -> str:
    """Flat ``metric.path = value`` lines."""
    p = f"{prefix}." if prefix else ""
    lines = [
        f"{p}overall.f1 = {report.overall_f1:.6f}",
        f"{p}overall.accuracy = {report.accuracy:.6f}",
    ]
    for s in STAGES:
        lines.append(f"{p}stage.{s.name}.f1 = {report.per_stage_f1[s]:.6f}")
    lines.append(f"{p}n_epochs = {report.n_epochs}")
    for s in report.undefined_stages:
        lines.append(f"{p}stage.{s.name}.undefined = 1")
    return "\n".join(lines) + "\n"


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out
