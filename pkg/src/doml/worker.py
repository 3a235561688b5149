"""Worker state machine.

A worker predicts every incoming instance with the model it currently holds
(predict, then learn), buffers ``m`` instances, pulls the newest model from
the master, and turns the buffer into one sparse raw gradient. Workers never
update a model themselves and have no way to address each other.
"""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from .core import CompoundInstance, CompoundWeight, HyperParams, SparseGradient, predict, raw_buffer_gradient

log = logging.getLogger(__name__)


class TransportError(Exception):
    """A message could not be delivered; the operation may be retried."""


class NodeError(Exception):
    """Retryable failure inside a node; state was left consistent."""

    retryable = True


class WorkerNode:
    def __init__(self, worker_id: int, k: int, d: int, hp: HyperParams):
        self.id = worker_id
        self.k = k
        self.d = d
        self.hp = hp
        self.reset()

    def reset(self) -> "WorkerNode":
        self.model = CompoundWeight.zeros(self.k, self.d)
        self.buffer: list[CompoundInstance] = []
        # instances that arrive while a flush is waiting for its model
        self.backlog: list[CompoundInstance] = []
        self.pending_flush = False
        self.mistakes = np.zeros(self.k, dtype=np.int64)
        self.seen = np.zeros(self.k, dtype=np.int64)
        # (spout seq, task, mistake, model version) per observed instance
        self.observations: list[tuple[int, int, int, int]] = []
        self.flushes = 0
        return self

    @property
    def needs_flush(self) -> bool:
        return len(self.buffer) >= self.hp.buffer and not self.pending_flush

    def observe(self, inst: CompoundInstance, seq: int = -1) -> bool:
        """Predict, count, buffer. True when the buffer just became full."""
        if inst.task >= self.k:
            raise ValueError(f"task {inst.task} out of range for K={self.k}")
        wrong = int(predict(self.model, inst) != inst.y)
        self.mistakes[inst.task] += wrong
        self.seen[inst.task] += 1
        self.observations.append((seq, inst.task, wrong, self.model.version))
        if self.pending_flush or len(self.buffer) >= self.hp.buffer:
            self.backlog.append(inst)
            return False
        self.buffer.append(inst)
        if len(self.buffer) == self.hp.buffer:
            self.pending_flush = True
            return True
        return False

    def complete_flush(self, model: CompoundWeight) -> SparseGradient:
        """Adopt the pulled model and emit the gradient of the full buffer."""
        if len(self.buffer) != self.hp.buffer:
            raise RuntimeError(f"worker {self.id}: flush with {len(self.buffer)}/{self.hp.buffer} buffered")
        if model.version < self.model.version:
            raise ValueError(
                f"worker {self.id}: pulled model version {model.version} older than held {self.model.version}"
            )
        self.model = model
        g = raw_buffer_gradient(model, self.buffer, worker=self.id)
        self.flushes += 1
        self.buffer = self.backlog[: self.hp.buffer]
        self.backlog = self.backlog[self.hp.buffer :]
        self.pending_flush = len(self.buffer) == self.hp.buffer
        return g

    def abort_flush(self) -> None:
        """Give up on an in-flight pull; the buffer is kept for a retry."""
        self.pending_flush = False

    def on_instance(
        self, inst: CompoundInstance, pull: Callable[[], CompoundWeight], seq: int = -1
    ) -> SparseGradient | None:
        """Synchronous composition of :meth:`observe` and :meth:`complete_flush`.

        ``pull`` fetches the newest model; if it raises :class:`TransportError`
        the buffer is retained and :class:`NodeError` is raised.
        """
        if not self.observe(inst, seq):
            return None
        try:
            model = pull()
        except TransportError as exc:
            self.abort_flush()
            raise NodeError(f"worker {self.id}: pull failed, {len(self.buffer)} instances kept") from exc
        return self.complete_flush(model)

    def retry_flush(self, pull: Callable[[], CompoundWeight]) -> SparseGradient | None:
        if len(self.buffer) < self.hp.buffer:
            return None
        self.pending_flush = True
        try:
            model = pull()
        except TransportError as exc:
            self.abort_flush()
            raise NodeError(f"worker {self.id}: pull failed again") from exc
        return self.complete_flush(model)
