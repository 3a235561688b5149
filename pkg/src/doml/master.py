"""Master state machine: outage bookkeeping and delayed-gradient updates.

Every round the master applies exactly one worker gradient::

    w_t = project(w_{t-1} - eta * (A^-1 g_j + lam * w_{t-1-tau_j}), R)

then resets ``tau_j`` and increments every other outage counter. When a
worker's outage becomes urgent the master waits for that worker's gradient
instead of taking whichever arrived first.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import (
    CompoundWeight,
    HyperParams,
    SparseGradient,
    assemble_direction,
    build_interaction,
    project,
)

log = logging.getLogger(__name__)


class Selection(NamedTuple):
    kind: str  # "wait-for" | "first-responder"
    worker: int | None = None

    def __str__(self):
        return f"wait-for({self.worker})" if self.kind == "wait-for" else "first-responder"


FIRST_RESPONDER = Selection("first-responder")


class OutageTable:
    """Per-worker counters of rounds since the worker's gradient was last used."""

    def __init__(self, n_workers: int, tau_max: int):
        if n_workers < 1:
            raise ValueError("need at least one worker")
        if n_workers > tau_max + 1:
            raise ValueError(
                f"tau_max={tau_max} cannot bound the outage of {n_workers} workers; need tau_max >= {n_workers - 1}"
            )
        self.tau = np.zeros(n_workers, dtype=np.int64)
        self.tau_max = tau_max
        # workers that will send no more gradients drop out of the wait rule
        self.active = np.ones(n_workers, dtype=bool)

    def select(self, queued: np.ndarray | None = None) -> Selection:
        """Wait for the most outaged worker once the threshold is in reach.

        With distinct counters this fires exactly when ``max tau == tau_max``.
        Counters can tie (all workers start at 0); then the j-th largest
        counter needs ``j - 1`` more rounds to be served, so the wait fires
        when ``tau_(j) + j - 1 >= tau_max`` for any j. Ties go to the lowest
        worker index. Retired workers are only waited for while one of their
        gradients is still queued (``queued[j] > 0``).
        """
        tau = self.tau.tolist()
        active = self.active.tolist()
        if queued is not None:
            active = [a or q > 0 for a, q in zip(active, queued.tolist())]
        # small N: plain lists beat numpy here
        order = sorted((i for i in range(len(tau)) if active[i]), key=lambda i: (-tau[i], i))
        if any(tau[i] + rank >= self.tau_max for rank, i in enumerate(order)):
            return Selection("wait-for", order[0])
        return FIRST_RESPONDER

    def record(self, worker: int) -> int:
        """Mark ``worker`` as used this round; returns its outage before reset."""
        used = int(self.tau[worker])
        self.tau += 1
        self.tau[worker] = 0
        return used


class WeightHistory:
    """Ring of recent snapshots keyed by version; versions that fell off the
    front resolve to the oldest kept snapshot, negative versions to ``w_0``."""

    def __init__(self, initial: CompoundWeight, size: int):
        self.size = max(size, 2)
        self._ring: deque[CompoundWeight] = deque([initial], maxlen=self.size)
        self.initial = initial

    def push(self, w: CompoundWeight) -> None:
        self._ring.append(w)

    def get(self, version: int) -> CompoundWeight:
        if version <= 0:
            return self.initial
        oldest = self._ring[0].version
        newest = self._ring[-1].version
        if version > newest:
            raise KeyError(f"version {version} is newer than the current model ({newest})")
        if version < oldest:
            log.debug("version %d evicted, using %d", version, oldest)
            return self._ring[0]
        return self._ring[version - oldest]


@dataclass(frozen=True)
class UpdateRecord:
    round: int
    worker: int
    tau: int
    stale_version: int
    basis_version: int
    blocks: tuple[int, ...]
    norm: float
    selection: str

    def as_dict(self) -> dict:
        return {
            "round": self.round,
            "worker": self.worker,
            "tau": self.tau,
            "stale_version": self.stale_version,
            "basis_version": self.basis_version,
            "nonzero_blocks": len(self.blocks),
            "blocks": list(self.blocks),
            "norm": self.norm,
            "selection": self.selection,
        }


class MasterNode:
    def __init__(
        self,
        k: int,
        d: int,
        n_workers: int,
        hp: HyperParams,
        *,
        strict_staleness: bool = False,
        schedule: Callable[[int], float] | None = None,
        on_update: Callable[[UpdateRecord, CompoundWeight], None] | None = None,
    ):
        self.k, self.d, self.n_workers, self.hp = k, d, n_workers, hp
        self.ainv = build_interaction(k, hp.b, "inverse")
        self.strict_staleness = strict_staleness
        self.schedule = schedule
        self.on_update = on_update
        self.weight = CompoundWeight.zeros(k, d)
        self.outage = OutageTable(n_workers, hp.tau_max)
        self.history = WeightHistory(self.weight, hp.tau_max + 2)
        self.inbox: deque[SparseGradient] = deque()
        self.log: list[UpdateRecord] = []
        self.received = np.zeros(n_workers, dtype=np.int64)
        self._queued = np.zeros(n_workers, dtype=np.int64)
        self._announced: dict[int, int] = {}

    @property
    def round(self) -> int:
        return self.weight.version

    def step_size(self, t: int) -> float:
        return self.hp.eta if self.schedule is None else self.schedule(t)

    def serve_model(self) -> CompoundWeight:
        return self.weight

    def select_source(self) -> Selection:
        return self.outage.select(self._queued)

    def receive(self, g: SparseGradient) -> None:
        if not 0 <= g.worker < self.n_workers:
            raise ValueError(f"gradient from unknown worker {g.worker}")
        self.inbox.append(g)
        self.received[g.worker] += 1
        self._queued[g.worker] += 1
        self._check_retired(g.worker)

    def retire(self, worker: int, sent: int) -> None:
        """``worker`` has finished after sending ``sent`` gradients in total.

        It leaves the wait rule once all of them have arrived, so the master
        never blocks on a worker that has nothing more to send.
        """
        if not 0 <= worker < self.n_workers:
            raise ValueError(f"unknown worker {worker}")
        self._announced[worker] = sent
        self._check_retired(worker)

    def _check_retired(self, worker: int) -> None:
        sent = self._announced.get(worker)
        if sent is not None and self.received[worker] >= sent:
            self.outage.active[worker] = False

    @property
    def retired(self) -> list[int]:
        return np.flatnonzero(~self.outage.active).tolist()

    def apply_gradient(self, g: SparseGradient, worker: int, selection: Selection = FIRST_RESPONDER) -> UpdateRecord:
        if not 0 <= worker < self.n_workers:
            raise ValueError(f"gradient from unknown worker {worker}")
        if g.d != self.d or (g.tasks and g.tasks[-1] >= self.k):
            raise ValueError(f"gradient shape does not match model (K={self.k}, d={self.d})")
        t = self.round + 1
        tau = int(self.outage.tau[worker])
        stale_version = g.basis_version if self.strict_staleness else t - 1 - tau
        w_stale = self.history.get(stale_version)
        direction = assemble_direction(self.ainv, g, self.hp.lam, w_stale)
        w = project(CompoundWeight(self.weight.blocks - self.step_size(t) * direction, t), self.hp.radius)
        self.outage.record(worker)
        self.weight = w
        self.history.push(w)
        rec = UpdateRecord(
            round=t,
            worker=worker,
            tau=tau,
            stale_version=max(stale_version, 0),
            basis_version=g.basis_version,
            blocks=g.nonzero_tasks(),
            norm=w.norm(),
            selection=str(selection),
        )
        self.log.append(rec)
        if self.on_update is not None:
            self.on_update(rec, w)
        return rec

    def next_gradient(self) -> tuple[SparseGradient, Selection] | None:
        """Pop the gradient this round should use, or None if it must wait."""
        sel = self.select_source()
        if sel.kind == "first-responder":
            if not self.inbox:
                return None
            g = self.inbox.popleft()
        else:
            if not self._queued[sel.worker]:
                return None
            idx = next(i for i, g in enumerate(self.inbox) if g.worker == sel.worker)
            g = self.inbox[idx]
            del self.inbox[idx]
        self._queued[g.worker] -= 1
        return g, sel

    def step(self) -> UpdateRecord | None:
        picked = self.next_gradient()
        if picked is None:
            return None
        g, sel = picked
        return self.apply_gradient(g, g.worker, sel)

    def drain(self) -> list[UpdateRecord]:
        """Run rounds until the inbox is empty or the master must wait."""
        done = []
        while (rec := self.step()) is not None:
            done.append(rec)
        return done

    def waiting_on(self) -> int | None:
        sel = self.select_source()
        if sel.kind == "wait-for" and not any(g.worker == sel.worker for g in self.inbox):
            return sel.worker
        return None

    def queue_state(self) -> dict:
        return {
            "round": self.round,
            "tau": self.outage.tau.tolist(),
            "tau_max": self.outage.tau_max,
            "selection": str(self.select_source()),
            "inbox": [(g.worker, g.basis_version) for g in self.inbox],
            "retired": self.retired,
        }
