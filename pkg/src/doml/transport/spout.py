"""Streaming data source: interleaves task samples and routes each to a
uniformly drawn worker."""

from __future__ import annotations

from typing import Iterable, Iterator, Sequence

import numpy as np

from ..core import CompoundInstance
from ..rng import SplitMix64
from ..synth import TaskFamily, sample_arrays
from .wire import SPOUT, Envelope, worker_name


def task_order(schedule: Sequence[int], order: str = "round-robin", seed: int = 0) -> np.ndarray:
    """Task index of every emitted sample.

    ``round-robin`` cycles over the tasks that still have samples left;
    ``shuffled`` applies a seeded Fisher-Yates shuffle to that sequence.
    """
    counts = np.asarray(schedule, dtype=np.int64)
    if (counts < 0).any():
        raise ValueError("per-task sample counts must be non-negative")
    rounds = int(counts.max()) if len(counts) else 0
    grid = np.arange(rounds)[:, None] < counts[None, :]
    seq = np.nonzero(grid)[1]
    if order == "round-robin":
        return seq
    if order == "shuffled":
        rng = SplitMix64.substream(seed, "shuffle")
        seq = seq.copy()
        for i in range(len(seq) - 1, 0, -1):
            j = rng.randbelow(i + 1)
            seq[i], seq[j] = seq[j], seq[i]
        return seq
    raise ValueError(f"unknown order {order!r}")


def synthetic_stream(
    family: TaskFamily, schedule: Sequence[int], seed: int, order: str = "round-robin"
) -> Iterator[CompoundInstance]:
    """Instances from the task family in spout order."""
    arrays = [sample_arrays(family, t, int(n), seed) for t, n in enumerate(schedule)]
    cursor = [0] * len(arrays)
    for t in task_order(schedule, order, seed):
        i = cursor[t]
        cursor[t] += 1
        x, y = arrays[t]
        yield CompoundInstance.trusted(int(t), x[i], int(y[i]))


def assign_workers(stream: Iterable[CompoundInstance], n_workers: int, seed: int) -> Iterator[tuple[int, CompoundInstance]]:
    if n_workers < 1:
        raise ValueError("no workers registered")
    rng = SplitMix64.substream(seed, "spout")
    for inst in stream:
        yield rng.randbelow(n_workers), inst


def dispatch(stream: Iterable[CompoundInstance], n_workers: int, seed: int) -> Iterator[Envelope]:
    """Data envelopes, ``seq`` counting from 0 in emission order."""
    for seq, (w, inst) in enumerate(assign_workers(stream, n_workers, seed)):
        yield Envelope("data", SPOUT, worker_name(w), seq, float(seq), inst)


def spout_dispatch(
    family: TaskFamily, schedule: Sequence[int], seed: int, n_workers: int, order: str = "round-robin"
) -> Iterator[Envelope]:
    return dispatch(synthetic_stream(family, schedule, seed, order), n_workers, seed)
