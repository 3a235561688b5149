"""Cumulative error curves and gradient sparsity traces."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np


@dataclass
class ErrorCurves:
    """``per_task[k, e-1]`` is task k's cumulative error rate after its e-th sample."""

    per_task: list[np.ndarray]

    @property
    def k(self) -> int:
        return len(self.per_task)

    @property
    def epochs(self) -> int:
        """Largest epoch every task has reached."""
        return min((len(c) for c in self.per_task), default=0)

    def macro(self) -> np.ndarray:
        e = self.epochs
        if e == 0:
            return np.zeros(0)
        return np.mean([c[:e] for c in self.per_task], axis=0)

    def final(self) -> float:
        return float(self.macro()[-1]) if self.epochs else float("nan")


@dataclass
class MetricsRecord:
    epoch: int
    mistakes: np.ndarray
    seen: np.ndarray
    macro_error: float
    bitmap: np.ndarray | None = None


def cumulative_error(tasks: Sequence[int], mistakes: Sequence[int], k: int) -> ErrorCurves:
    """Per-task cumulative error rates from a stream of (task, mistake) pairs in arrival order."""
    tasks = np.asarray(tasks, dtype=np.int64)
    mistakes = np.asarray(mistakes, dtype=np.float64)
    if tasks.shape != mistakes.shape:
        raise ValueError("tasks and mistakes must have equal length")
    if len(tasks) == 0:
        raise ValueError("no observations")
    curves = []
    for t in range(k):
        m = mistakes[tasks == t]
        curves.append(np.cumsum(m) / np.arange(1, len(m) + 1))
    return ErrorCurves(curves)


def records_from_stream(tasks: Sequence[int], mistakes: Sequence[int], k: int, interval: int) -> list[MetricsRecord]:
    """Snapshot per-task counters every ``interval`` per-task epochs (and at the last one)."""
    if interval < 1:
        raise ValueError("interval must be >= 1")
    tasks = np.asarray(tasks, dtype=np.int64)
    mistakes = np.asarray(mistakes, dtype=np.int64)
    cum = []
    for t in range(k):
        cum.append(np.cumsum(mistakes[tasks == t]))
    epochs = min(len(c) for c in cum)
    marks = list(range(interval, epochs + 1, interval))
    if epochs and (not marks or marks[-1] != epochs):
        marks.append(epochs)
    out = []
    for e in marks:
        mis = np.array([c[e - 1] for c in cum])
        seen = np.full(k, e)
        out.append(MetricsRecord(e, mis, seen, float(np.mean(mis / seen))))
    return out


def write_metrics_csv(records: Iterable[MetricsRecord], fh: TextIO, k: int) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["epoch", "macro_error"] + [f"task_{t + 1}" for t in range(k)])
    for r in records:
        rates = r.mistakes / np.maximum(r.seen, 1)
        w.writerow([r.epoch, repr(r.macro_error)] + [repr(float(v)) for v in rates])


def sparsity_trace(update_log: Sequence[dict], first_n: int | None = None, worker: int | None = None) -> list[dict]:
    """Rows of (round, worker, nonzero task blocks) from the master's update log."""
    rows = [r for r in update_log if worker is None or r["worker"] == worker]
    if first_n is not None:
        rows = rows[:first_n]
    return [{"round": r["round"], "worker": r["worker"], "blocks": list(r["blocks"])} for r in rows]


def bitmap(rows: Sequence[dict], k: int) -> np.ndarray:
    out = np.zeros((len(rows), k), dtype=bool)
    for i, r in enumerate(rows):
        out[i, r["blocks"]] = True
    return out


def render_bitmap(bits: np.ndarray, on: str = "#", off: str = ".") -> str:
    return "\n".join("".join(on if b else off for b in row) for row in bits)


def write_trace_csv(rows: Sequence[dict], fh: TextIO) -> None:
    """Task indices are written 1-based."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["epoch", "round", "worker", "nonzero_blocks", "tasks"])
    for i, r in enumerate(rows, 1):
        w.writerow([i, r["round"], r["worker"], len(r["blocks"]), ";".join(str(t + 1) for t in r["blocks"])])


def mean_sparsity(update_log: Sequence[dict], k: int) -> float:
    """Mean fraction of task blocks that were nonzero in the applied gradients."""
    if not update_log:
        return 0.0
    return float(np.mean([len(r["blocks"]) for r in update_log])) / k
