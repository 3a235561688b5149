"""Deterministic single-threaded execution of the spout/worker/master protocol.

Envelopes are delivered in order of (virtual time, sender rank, sequence
number); the master ranks first, then workers by index, then the spout. The
spout emits one data envelope per tick. With zero latency every message a
data envelope triggers (pull, model, gradient) is delivered within the same
tick, so the protocol runs as if the network were instantaneous; latency
models push deliveries into later ticks.
"""

from __future__ import annotations

import heapq
import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from ..master import MasterNode, UpdateRecord
from ..worker import WorkerNode
from .latency import LatencyModel
from .wire import MASTER, SPOUT, Envelope, worker_index, worker_name

log = logging.getLogger(__name__)


def apply_event(now: float, rec: UpdateRecord, sender: str, seq: int, master: MasterNode) -> dict:
    """Transcript entry for one master round."""
    return {
        "ev": "apply",
        "t": now,
        "round": rec.round,
        "sender": sender,
        "seq": seq,
        "tau": rec.tau,
        "stale_version": rec.stale_version,
        "basis_version": rec.basis_version,
        "blocks": list(rec.blocks),
        "selection": rec.selection,
        "outage": master.outage.tau.tolist(),
    }


class DeadlockError(RuntimeError):
    def __init__(self, message: str, state: dict):
        super().__init__(f"{message}: {json.dumps(state)}")
        self.state = state


@dataclass
class RunResult:
    master: MasterNode
    workers: list[WorkerNode]
    transcript: list[dict] | None
    sent: Counter = field(default_factory=Counter)
    # gradients still in the master inbox when the run ended: (sender, seq)
    leftover: list[tuple[str, int]] = field(default_factory=list)
    stalled: dict | None = None
    wall_time: float = 0.0

    def transcript_lines(self) -> Iterator[str]:
        for rec in self.transcript or ():
            yield json.dumps(rec, separators=(",", ":"))

    def transcript_bytes(self) -> bytes:
        return "".join(line + "\n" for line in self.transcript_lines()).encode()


class LockstepRunner:
    def __init__(
        self,
        master: MasterNode,
        workers: list[WorkerNode],
        data: Iterable[Envelope],
        latency: LatencyModel | None = None,
        *,
        record: bool = True,
        strict: bool = False,
    ):
        if not workers:
            raise ValueError("no workers registered")
        if master.n_workers != len(workers):
            raise ValueError(f"master expects {master.n_workers} workers, got {len(workers)}")
        self.master = master
        self.workers = workers
        self.data = iter(data)
        self.latency = latency or LatencyModel.zero()
        self.strict = strict
        self.transcript: list[dict] | None = [] if record else None
        self.sent: Counter = Counter()
        self._heap: list = []
        self._seq: Counter = Counter()
        self._rank = {MASTER: 0, SPOUT: len(workers) + 1}
        self._rank.update({worker_name(i): i + 1 for i in range(len(workers))})
        self._origin: dict[int, tuple[str, int]] = {}
        self._shutdown_pending: set[int] = set()
        self._shutdown_seen: set[str] = set()
        self._next_data: Envelope | None = None
        self._spout_done = False
        self._last_tick = -1.0
        self._spout_seq = 0

    # plumbing -----------------------------------------------------------------

    def _push(self, env: Envelope, emitted_at: float) -> None:
        deliver = emitted_at + self.latency.for_kind(env.kind)
        heapq.heappush(self._heap, (deliver, self._rank[env.sender], env.seq, env))
        self.sent[env.kind] += 1

    def send(self, kind: str, sender: str, receiver: str, payload, now: float) -> None:
        seq = self._seq[sender]
        self._seq[sender] += 1
        self._push(Envelope(kind, sender, receiver, seq, now, payload), now)

    def _pull_spout(self) -> None:
        if self._next_data is None and not self._spout_done:
            self._next_data = next(self.data, None)
            if self._next_data is None:
                self._spout_done = True
                tick = self._last_tick + 1
                for i in range(len(self.workers)):
                    env = Envelope("shutdown", SPOUT, worker_name(i), self._spout_seq, tick)
                    self._spout_seq += 1
                    self._push(env, tick)

    def _emit_due(self) -> None:
        while True:
            self._pull_spout()
            env = self._next_data
            if env is None:
                return
            if self._heap and self._heap[0][0] < env.ts:
                return
            self._next_data = None
            self._last_tick = env.ts
            self._spout_seq = env.seq + 1
            self._push(env, env.ts)

    def _log(self, rec: dict) -> None:
        if self.transcript is not None:
            self.transcript.append(rec)

    # node handlers ------------------------------------------------------------

    def _on_worker(self, w: WorkerNode, env: Envelope, now: float) -> None:
        me = worker_name(w.id)
        if env.kind == "data":
            if w.observe(env.payload, env.seq):
                self.send("pull-request", me, MASTER, None, now)
        elif env.kind == "model":
            g = w.complete_flush(env.payload)
            self.send("gradient", me, MASTER, g, now)
            if w.pending_flush:
                self.send("pull-request", me, MASTER, None, now)
            elif w.id in self._shutdown_pending:
                self._shutdown_pending.discard(w.id)
                self.send("shutdown", me, MASTER, {"gradients": w.flushes}, now)
        elif env.kind == "shutdown":
            if w.pending_flush:
                self._shutdown_pending.add(w.id)
            else:
                self.send("shutdown", me, MASTER, {"gradients": w.flushes}, now)
        else:
            raise ValueError(f"worker cannot handle {env.kind}")

    def _on_master(self, env: Envelope, now: float) -> None:
        m = self.master
        if env.kind == "pull-request":
            self.send("model", MASTER, env.sender, m.serve_model(), now)
        elif env.kind == "gradient":
            self._origin[id(env.payload)] = (env.sender, env.seq)
            m.receive(env.payload)
            self._run_rounds(now)
        elif env.kind == "shutdown":
            self._shutdown_seen.add(env.sender)
            m.retire(worker_index(env.sender), int(env.payload["gradients"]))
            self._run_rounds(now)
        else:
            raise ValueError(f"master cannot handle {env.kind}")

    def _run_rounds(self, now: float) -> None:
        m = self.master
        while (picked := m.next_gradient()) is not None:
            g, sel = picked
            rec = m.apply_gradient(g, g.worker, sel)
            sender, seq = self._origin.pop(id(g))
            self._log(apply_event(now, rec, sender, seq, m))

    # main loop ----------------------------------------------------------------

    def run(self) -> RunResult:
        start = time.perf_counter()
        while True:
            self._emit_due()
            if not self._heap:
                break
            now, _, _, env = heapq.heappop(self._heap)
            self._log({"ev": "deliver", "t": now, "kind": env.kind, "sender": env.sender, "receiver": env.receiver, "seq": env.seq})
            if env.receiver == MASTER:
                self._on_master(env, now)
            else:
                self._on_worker(self.workers[worker_index(env.receiver)], env, now)

        leftover = [self._origin[id(g)] for g in self.master.inbox]
        stalled = None
        if leftover:
            stalled = self.master.queue_state()
            stalled["waiting_on"] = self.master.waiting_on()
            stalled["pending_flush"] = [w.id for w in self.workers if w.pending_flush]
            log.info("run ended with %d queued gradients: %s", len(leftover), stalled)
            if self.strict:
                raise DeadlockError("master is waiting on a worker with no pending flush", stalled)
        return RunResult(
            master=self.master,
            workers=self.workers,
            transcript=self.transcript,
            sent=self.sent,
            leftover=leftover,
            stalled=stalled,
            wall_time=time.perf_counter() - start,
        )


def lockstep_run(
    master: MasterNode,
    workers: list[WorkerNode],
    data: Iterable[Envelope],
    latency: LatencyModel | None = None,
    **kw,
) -> RunResult:
    return LockstepRunner(master, workers, data, latency, **kw).run()
