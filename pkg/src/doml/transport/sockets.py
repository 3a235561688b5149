"""The same protocol over TCP with newline-delimited envelopes.

Each node runs as its own asyncio task and owns its sockets: the master
listens for worker connections, every worker listens for the spout and dials
the master. Injected latency is realised by the sender sleeping before it
writes, so a worker with a slow gradient link also produces gradients more
slowly. The transcript records wall-clock arrival order.
"""

from __future__ import annotations

import asyncio
import logging
import os
import time
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from ..master import MasterNode
from ..worker import NodeError, WorkerNode
from .latency import LatencyModel
from .lockstep import RunResult, apply_event
from .wire import MASTER, SPOUT, Envelope, decode, encode, worker_index, worker_name

log = logging.getLogger(__name__)

# a model line carries K*d floats; the asyncio default of 64 KiB is too small for large K
LINE_LIMIT = 1 << 26


class MasterAbort(RuntimeError):
    def __init__(self, message: str, state: dict):
        super().__init__(f"{message}: {state}")
        self.state = state


@dataclass
class BindConfig:
    host: str = "127.0.0.1"
    master_port: int = 0
    # worker i listens on worker_port_base + i; 0 picks free ports
    worker_port_base: int = 0
    timeout: float = 30.0
    retries: int = 6
    backoff: float = 0.05
    max_backoff: float = 2.0

    @classmethod
    def from_env(cls, **overrides) -> "BindConfig":
        cfg = cls(**overrides)
        if "DOML_HOST" in os.environ:
            cfg.host = os.environ["DOML_HOST"]
        if "DOML_MASTER_PORT" in os.environ:
            cfg.master_port = int(os.environ["DOML_MASTER_PORT"])
        if "DOML_WORKER_PORT_BASE" in os.environ:
            cfg.worker_port_base = int(os.environ["DOML_WORKER_PORT_BASE"])
        return cfg


class _Link:
    """One outgoing stream with its own sequence counter and injected delay."""

    def __init__(self, owner: str, writer: asyncio.StreamWriter, latency: LatencyModel, sent: Counter):
        self.owner = owner
        self.writer = writer
        self.latency = latency
        self.sent = sent
        self.seq = 0

    async def send(self, kind: str, receiver: str, payload=None, seq: int | None = None, ts: float = 0.0) -> None:
        delay = self.latency.for_kind(kind)
        if delay > 0:
            await asyncio.sleep(delay)
        if seq is None:
            seq = self.seq
            self.seq += 1
        self.writer.write(encode(Envelope(kind, self.owner, receiver, seq, ts, payload)))
        self.sent[kind] += 1
        await self.writer.drain()


async def _connect(host: str, port: int, bind: BindConfig, who: str):
    delay = bind.backoff
    for attempt in range(bind.retries + 1):
        try:
            return await asyncio.open_connection(host, port, limit=LINE_LIMIT)
        except OSError as exc:
            if attempt == bind.retries:
                raise NodeError(f"{who}: cannot reach {host}:{port} after {attempt + 1} attempts") from exc
            log.debug("%s: connect to %s:%d failed (%s), retrying in %.2fs", who, host, port, exc, delay)
            await asyncio.sleep(delay)
            delay = min(delay * 2, bind.max_backoff)


class SocketRunner:
    def __init__(
        self,
        master: MasterNode,
        workers: list[WorkerNode],
        data: Iterable[Envelope],
        latency: LatencyModel | None = None,
        bind: BindConfig | None = None,
        *,
        record: bool = True,
        kill_after: dict[int, int] | None = None,
    ):
        if not workers:
            raise ValueError("no workers registered")
        self.master = master
        self.workers = workers
        self.data = data
        self.latency = latency or LatencyModel.zero()
        self.bind = bind or BindConfig()
        self.record = record
        # fault injection: worker id -> number of instances after which it dies
        self.kill_after = kill_after or {}
        self.transcript: list[dict] | None = [] if record else None
        self.sent: Counter = Counter()
        self._origin: dict[int, tuple[str, int]] = {}

    def _now(self) -> float:
        return time.perf_counter() - self._t0

    def _log(self, rec: dict) -> None:
        if self.transcript is not None:
            self.transcript.append(rec)

    def _arrived(self, env: Envelope) -> None:
        if self.transcript is not None:
            self.transcript.append(
                {"ev": "deliver", "t": self._now(), "kind": env.kind, "sender": env.sender, "receiver": env.receiver, "seq": env.seq}
            )

    # master -------------------------------------------------------------------

    async def _master_conn(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        link = _Link(MASTER, writer, self.latency, self.sent)
        peer = None
        try:
            while line := await reader.readline():
                env = decode(line)
                self._arrived(env)
                peer = env.sender
                if env.kind == "pull-request":
                    await link.send("model", env.sender, self.master.serve_model(), ts=self._now())
                elif env.kind == "gradient":
                    self._origin[id(env.payload)] = (env.sender, env.seq)
                    self.master.receive(env.payload)
                    self._progress.set()
                elif env.kind == "shutdown":
                    self._finished.add(env.sender)
                    self.master.retire(worker_index(env.sender), int(env.payload["gradients"]))
                    self._progress.set()
                    break
        except (ConnectionError, asyncio.IncompleteReadError) as exc:
            log.warning("master: connection to %s lost: %s", peer, exc)
        finally:
            if peer is not None and peer not in self._finished:
                self._lost.add(peer)
            writer.close()

    async def _master_loop(self) -> None:
        m = self.master
        n = len(self.workers)
        while True:
            while (picked := m.next_gradient()) is not None:
                g, sel = picked
                rec = m.apply_gradient(g, g.worker, sel)
                sender, seq = self._origin.pop(id(g))
                self._log(apply_event(self._now(), rec, sender, seq, m))
            if len(self._finished) == n:
                return
            self._progress.clear()
            try:
                await asyncio.wait_for(self._progress.wait(), self.bind.timeout)
            except asyncio.TimeoutError:
                state = m.queue_state()
                state["finished"] = sorted(self._finished)
                state["lost"] = sorted(self._lost)
                state["waiting_on"] = m.waiting_on()
                raise MasterAbort(f"no progress for {self.bind.timeout}s", state) from None

    # worker -------------------------------------------------------------------

    async def _worker_main(self, w: WorkerNode, inbox: asyncio.Queue) -> None:
        me = worker_name(w.id)
        bind = self.bind
        reader, writer = await _connect(bind.host, self._master_port, bind, me)
        link = _Link(me, writer, self.latency, self.sent)
        limit = self.kill_after.get(w.id)
        observed = 0
        try:
            while True:
                env: Envelope = await inbox.get()
                if env.kind == "shutdown":
                    await link.send("shutdown", MASTER, {"gradients": w.flushes}, ts=self._now())
                    return
                observed += 1
                if limit is not None and observed > limit:
                    log.warning("%s: injected failure after %d instances", me, limit)
                    writer.transport.abort()
                    return
                if not w.observe(env.payload, env.seq):
                    continue
                attempt, delay = 0, bind.backoff
                while True:
                    try:
                        await link.send("pull-request", MASTER, ts=self._now())
                        line = await reader.readline()
                        if not line:
                            raise ConnectionResetError("master closed the connection")
                        reply = decode(line)
                        self._arrived(reply)
                        break
                    except ConnectionError as exc:
                        w.abort_flush()
                        attempt += 1
                        if attempt > bind.retries:
                            raise NodeError(f"{me}: pull failed {attempt} times, {len(w.buffer)} instances kept") from exc
                        log.warning("%s: pull failed (%s), retry %d in %.2fs", me, exc, attempt, delay)
                        await asyncio.sleep(delay)
                        delay = min(delay * 2, bind.max_backoff)
                        reader, writer = await _connect(bind.host, self._master_port, bind, me)
                        link.writer = writer
                        w.pending_flush = True
                g = w.complete_flush(reply.payload)
                await link.send("gradient", MASTER, g, ts=self._now())
        finally:
            if not writer.is_closing():
                writer.close()

    async def _worker_conn(self, inbox: asyncio.Queue, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        try:
            while line := await reader.readline():
                env = decode(line)
                self._arrived(env)
                await inbox.put(env)
        except ConnectionError:
            pass
        finally:
            writer.close()

    # spout --------------------------------------------------------------------

    async def _spout(self, ports: list[int]) -> None:
        links = []
        for i, port in enumerate(ports):
            _, writer = await _connect(self.bind.host, port, self.bind, SPOUT)
            links.append(_Link(SPOUT, writer, self.latency, self.sent))
        seq = 0
        for env in self.data:
            link = links[worker_index(env.receiver)]
            await link.send("data", env.receiver, env.payload, seq=env.seq, ts=self._now())
            seq = env.seq + 1
        for i, link in enumerate(links):
            try:
                await link.send("shutdown", worker_name(i), seq=seq, ts=self._now())
            except ConnectionError:
                log.warning("spout: worker %d is gone", i)
            seq += 1
        for link in links:
            link.writer.close()

    # driver -------------------------------------------------------------------

    async def _main(self) -> None:
        self._t0 = time.perf_counter()
        self._progress = asyncio.Event()
        self._finished: set[str] = set()
        self._lost: set[str] = set()
        bind = self.bind
        master_server = await asyncio.start_server(self._master_conn, bind.host, bind.master_port, limit=LINE_LIMIT)
        self._master_port = master_server.sockets[0].getsockname()[1]
        servers = [master_server]
        ports, inboxes = [], []
        for w in self.workers:
            inbox: asyncio.Queue = asyncio.Queue()
            port = bind.worker_port_base + w.id if bind.worker_port_base else 0

            async def handler(r, wr, q=inbox):
                await self._worker_conn(q, r, wr)

            srv = await asyncio.start_server(handler, bind.host, port, limit=LINE_LIMIT)
            servers.append(srv)
            ports.append(srv.sockets[0].getsockname()[1])
            inboxes.append(inbox)

        master_task = asyncio.create_task(self._master_loop())
        others = [asyncio.create_task(self._worker_main(w, q)) for w, q in zip(self.workers, inboxes)]
        others.append(asyncio.create_task(self._spout(ports)))
        try:
            await master_task
            await asyncio.gather(*others)
        finally:
            for t in others:
                t.cancel()
            await asyncio.gather(*others, return_exceptions=True)
            for srv in servers:
                srv.close()

    def run(self) -> RunResult:
        start = time.perf_counter()
        asyncio.run(self._main())
        leftover = [self._origin[id(g)] for g in self.master.inbox]
        return RunResult(
            master=self.master,
            workers=self.workers,
            transcript=self.transcript,
            sent=self.sent,
            leftover=leftover,
            stalled=self.master.queue_state() if leftover else None,
            wall_time=time.perf_counter() - start,
        )


def socket_run(
    master: MasterNode,
    workers: list[WorkerNode],
    data: Iterable[Envelope],
    latency: LatencyModel | None = None,
    bind: BindConfig | None = None,
    **kw,
) -> RunResult:
    return SocketRunner(master, workers, data, latency, bind, **kw).run()
