"""Newline-delimited JSON envelopes.

One envelope per line::

    {"kind": "gradient", "sender": "worker-3", "receiver": "master", "seq": 17,
     "ts": 4.0, "payload": {...}}

Floats go through ``json`` which writes the shortest repr that round-trips,
so 64-bit values survive encode/decode unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..core import CompoundInstance, CompoundWeight, SparseGradient

KINDS = ("data", "pull-request", "model", "gradient", "shutdown")
MASTER = "master"
SPOUT = "spout"


def worker_name(i: int) -> str:
    return f"worker-{i}"


def worker_index(name: str) -> int:
    if not name.startswith("worker-"):
        raise ValueError(f"{name!r} is not a worker id")
    return int(name[len("worker-") :])


def is_worker(name: str) -> bool:
    return name.startswith("worker-")


class WireError(ValueError):
    pass


@dataclass
class Envelope:
    kind: str
    sender: str
    receiver: str
    seq: int
    ts: float = 0.0
    payload: Any = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise WireError(f"unknown envelope kind {self.kind!r}")
        if is_worker(self.sender) and is_worker(self.receiver):
            raise WireError(f"worker-to-worker envelope {self.sender} -> {self.receiver}")

    def header(self) -> dict:
        return {"kind": self.kind, "sender": self.sender, "receiver": self.receiver, "seq": self.seq, "ts": self.ts}


def encode_payload(kind: str, payload: Any) -> Any:
    if kind == "data":
        return {"task": payload.task, "y": payload.y, "x": payload.x.tolist()}
    if kind == "model":
        return {"version": payload.version, "k": payload.k, "d": payload.d, "w": payload.flat().tolist()}
    if kind == "gradient":
        return {
            "worker": payload.worker,
            "samples": payload.samples,
            "basis_version": payload.basis_version,
            "d": payload.d,
            "blocks": [[t, row.tolist()] for t, row in zip(payload.tasks, payload.values)],
        }
    return payload if payload is not None else {}


def decode_payload(kind: str, obj: Any) -> Any:
    try:
        if kind == "data":
            return CompoundInstance(int(obj["task"]), np.array(obj["x"], dtype=np.float64), int(obj["y"]))
        if kind == "model":
            w = np.array(obj["w"], dtype=np.float64).reshape(obj["k"], obj["d"])
            return CompoundWeight(w, int(obj["version"]))
        if kind == "gradient":
            blocks = obj["blocks"]
            values = np.array([row for _, row in blocks], dtype=np.float64).reshape(len(blocks), obj["d"])
            return SparseGradient(
                tuple(int(t) for t, _ in blocks), values, int(obj["samples"]), int(obj["basis_version"]), int(obj["worker"])
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"malformed {kind} payload: {exc}") from exc
    return obj


def encode(env: Envelope) -> bytes:
    rec = env.header()
    rec["payload"] = encode_payload(env.kind, env.payload)
    return (json.dumps(rec, separators=(",", ":"), allow_nan=False) + "\n").encode()


def decode(line: bytes | str) -> Envelope:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"not a JSON record: {exc}") from exc
    if not isinstance(rec, dict):
        raise WireError("record is not an object")
    try:
        kind = rec["kind"]
        return Envelope(
            kind,
            rec["sender"],
            rec["receiver"],
            int(rec["seq"]),
            float(rec.get("ts", 0.0)),
            decode_payload(kind, rec.get("payload")),
        )
    except KeyError as exc:
        raise WireError(f"missing field {exc}") from exc
