"""Single-machine comparison learners.

``OmlLearner`` runs the same multitask update as the distributed system
without any network delay: by default one sample per update, or the average
over a buffer of ``buffer`` samples, exactly like a single worker that is
co-located with the master. ``OlLearner`` ignores task identity and fits one
shared logistic-regression vector.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

from .core import (
    CompoundInstance,
    CompoundWeight,
    HyperParams,
    assemble_direction,
    build_interaction,
    compound_gradient,
    logistic_factor,
    predict,
    project,
    raw_buffer_gradient,
)


class OmlLearner:
    def __init__(
        self,
        k: int,
        d: int,
        hp: HyperParams,
        buffer: int = 1,
        on_update: Callable[[CompoundWeight], None] | None = None,
    ):
        if buffer < 1:
            raise ValueError("buffer must be >= 1")
        self.k, self.d, self.hp = k, d, hp
        self.buffer_size = buffer
        self.ainv = build_interaction(k, hp.b, "inverse")
        self.weight = CompoundWeight.zeros(k, d)
        self.mistakes = np.zeros(k, dtype=np.int64)
        self.seen = np.zeros(k, dtype=np.int64)
        self.on_update = on_update
        self._buffer: list[CompoundInstance] = []

    def step(self, inst: CompoundInstance) -> int:
        """Predict, count, update. Returns 1 on a mistake."""
        wrong = int(predict(self.weight, inst) != inst.y)
        self.mistakes[inst.task] += wrong
        self.seen[inst.task] += 1
        if self.buffer_size == 1:
            direction = compound_gradient(self.weight, inst, self.ainv, self.hp.lam)
        else:
            self._buffer.append(inst)
            if len(self._buffer) < self.buffer_size:
                return wrong
            g = raw_buffer_gradient(self.weight, self._buffer)
            self._buffer = []
            direction = assemble_direction(self.ainv, g, self.hp.lam, self.weight)
        self._update(direction)
        return wrong

    def _update(self, direction: np.ndarray) -> None:
        t = self.weight.version + 1
        self.weight = project(CompoundWeight(self.weight.blocks - self.hp.eta * direction, t), self.hp.radius)
        if self.on_update is not None:
            self.on_update(self.weight)

    def run(self, stream: Iterable[CompoundInstance]) -> list[int]:
        return [self.step(inst) for inst in stream]


class OlLearner:
    """Task-blind online logistic regression; no projection unless ``radius`` is finite."""

    def __init__(self, k: int, d: int, hp: HyperParams, radius: float = math.inf):
        self.k, self.d = k, d
        self.eta, self.lam = hp.eta, hp.lam
        self.radius = radius
        self.v = np.zeros(d)
        self.mistakes = np.zeros(k, dtype=np.int64)
        self.seen = np.zeros(k, dtype=np.int64)

    def step(self, inst: CompoundInstance) -> int:
        m = float(self.v @ inst.x)
        wrong = int((1 if m >= 0.0 else -1) != inst.y)
        self.mistakes[inst.task] += wrong
        self.seen[inst.task] += 1
        self.v = self.v - self.eta * (logistic_factor(inst.y, m) * inst.x + self.lam * self.v)
        if math.isfinite(self.radius):
            n = float(np.linalg.norm(self.v))
            if n > self.radius:
                self.v = self.v * (self.radius / n)
        return wrong

    def run(self, stream: Iterable[CompoundInstance]) -> list[int]:
        return [self.step(inst) for inst in stream]
