"""Accuracy, confusion matrices and report export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import EmptyInput, IdOutOfRange, LengthMismatch

if TYPE_CHECKING:
    from .trainer import TrainHistory


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def overall_accuracy(self) -> float:
        return self.trace * 100 / self.total


def _ids(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise LengthMismatch(f"{name} must be one-dimensional")
    return arr.astype(np.int64)


def accuracy(predictions, labels) -> float:
    """Exact-match rate in percent (the multi-class reading of (TP + TN) / all)."""
    preds, labels = _ids(predictions, "predictions"), _ids(labels, "labels")
    if preds.shape != labels.shape:
        raise LengthMismatch(f"{preds.shape[0]} predictions vs {labels.shape[0]} labels")
    if preds.size == 0:
        raise EmptyInput("accuracy of an empty set is undefined")
    correct = int(np.count_nonzero(preds == labels))
    return correct * 100 / preds.size


def confusion(predictions, labels, K: int, class_names: Sequence[str] | None = None) -> ConfusionMatrix:
    preds, labels = _ids(predictions, "predictions"), _ids(labels, "labels")
    if preds.shape != labels.shape:
        raise LengthMismatch(f"{preds.shape[0]} predictions vs {labels.shape[0]} labels")
    for arr in (preds, labels):
        if arr.size and (arr.min() < 0 or arr.max() >= K):
            raise IdOutOfRange(f"class ids must lie in 0..{K - 1}")
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    names = tuple(class_names) if class_names is not None else tuple(str(i) for i in range(K))
    return ConfusionMatrix(counts, names)


def per_class_accuracy(cm: ConfusionMatrix) -> list[float | None]:
    """Diagonal over row sums in percent; ``None`` marks classes with no samples."""
    rows = cm.counts.sum(axis=1)
    return [
        None if rows[i] == 0 else int(cm.counts[i, i]) * 100 / int(rows[i])
        for i in range(cm.counts.shape[0])
    ]


def confusion_csv(cm: ConfusionMatrix) -> str:
    lines = ["true\\pred," + ",".join(cm.class_names)]
    for name, row in zip(cm.class_names, cm.counts):
        lines.append(name + "," + ",".join(str(int(c)) for c in row))
    return "\n".join(lines) + "\n"


def parse_confusion_csv(text: str) -> ConfusionMatrix:
    lines = text.strip().splitlines()
    names = tuple(lines[0].split(",")[1:])
    counts = np.array([[int(c) for c in line.split(",")[1:]] for line in lines[1:]], dtype=np.int64)
    return ConfusionMatrix(counts.reshape(len(names), len(names)), names)


def summary_text(cm: ConfusionMatrix, overall: float, config_hash: str | None = None) -> str:
    lines = [f"overall_accuracy_pct = {overall!r}", f"samples = {cm.total}"]
    for name, acc in zip(cm.class_names, per_class_accuracy(cm)):
        lines.append(f"class.{name}.accuracy_pct = {'absent' if acc is None else repr(acc)}")
    if config_hash is not None:
        lines.append(f"config_hash = {config_hash}")
    return "\n".join(lines) + "\n"


def export_report(
    cm: ConfusionMatrix,
    history: "TrainHistory | None",
    overall: float,
    path: str | Path,
    *,
    config_hash: str | None = None,
    heatmap: bool = True,
) -> list[Path]:
    """Write confusion.csv, summary.txt, history.csv (if given) and confusion.pgm under ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def write(name: str, data: str | bytes) -> None:
        target = out / name
        if isinstance(data, str):
            target.write_bytes(data.encode("utf-8"))
        else:
            target.write_bytes(data)
        written.append(target)

    write("confusion.csv", confusion_csv(cm))
    write("summary.txt", summary_text(cm, overall, config_hash))
    if history is not None:
        write("history.csv", history.to_csv())
    if heatmap:
        rows = cm.counts.sum(axis=1, keepdims=True)
        norm = np.divide(cm.counts, rows, out=np.zeros(cm.counts.shape), where=rows > 0)
        # fixed 0..1 scale so an all-correct matrix still renders its diagonal
        scaled = np.rint(norm * 255).astype(np.uint8)
        header = f"P5\n{scaled.shape[1]} {scaled.shape[0]}\n255\n".encode("ascii")
        write("confusion.pgm", header + scaled.tobytes())
    return written


__all__ = [
    "ConfusionMatrix",
    "accuracy",
    "confusion",
    "confusion_csv",
    "export_report",
    "parse_confusion_csv",
    "per_class_accuracy",
    "summary_text",
]
