"""Synthetic related-task family: rotated Fourier-series decision boundaries.

Task ``t`` labels a point ``p`` in the square ``[-3, 3]^2`` with
``sign(x2' - h(x1'; a_t))`` where ``(x1', x2')`` is ``p`` rotated
counter-clockwise by ``theta_t`` and ``h`` is a four-term Fourier series with
phase ``a_0``. Task parameters follow a Gaussian random walk started at
``a = (0, 1, 1, 1, 1), theta = 0``; the step scale ``sigma`` controls how
similar neighbouring tasks are.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .core import CompoundInstance
from .rng import SplitMix64

FEATURE_DIM = 9
SQUARE = 3.0
A_START = (0.0, 1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class TaskParams:
    a: tuple[float, float, float, float, float]
    theta: float

    def __post_init__(self):
        if len(self.a) != 5:
            raise ValueError("a must have 5 coefficients")
        if not all(math.isfinite(v) for v in (*self.a, self.theta)):
            raise ValueError("task parameters must be finite")


@dataclass(frozen=True)
class TaskFamily:
    tasks: tuple[TaskParams, ...]
    sigma: float
    seed: int

    @property
    def k(self) -> int:
        return len(self.tasks)

    def to_json(self) -> str:
        return json.dumps(
            {
                "sigma": self.sigma,
                "seed": self.seed,
                "tasks": [{"a": list(t.a), "theta": t.theta} for t in self.tasks],
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "TaskFamily":
        obj = json.loads(text)
        tasks = tuple(TaskParams(tuple(t["a"]), t["theta"]) for t in obj["tasks"])
        return cls(tasks, obj["sigma"], obj["seed"])


def generate_family(k: int, sigma: float, seed: int) -> TaskFamily:
    """Random walk over (a, theta); each step draws 5 + 1 Gaussians in that order."""
    if k < 1:
        raise ValueError("task family needs k >= 1")
    if sigma < 0 or not math.isfinite(sigma):
        raise ValueError("sigma must be finite and >= 0")
    rng = SplitMix64.substream(seed, "family")
    steps = rng.gauss_array(6 * (k - 1)).reshape(k - 1, 6)
    a = np.array(A_START)
    theta = 0.0
    tasks = [TaskParams(A_START, 0.0)]
    for z in steps:
        a = a + sigma * z[:5]
        theta = theta + sigma * (math.pi / 4) * z[5]
        tasks.append(TaskParams(tuple(float(v) for v in a), float(theta)))
    return TaskFamily(tuple(tasks), sigma, seed)


def boundary_h(x, a: Sequence[float]):
    """Fourier-series boundary; works on scalars and arrays."""
    u = np.subtract(x, a[0])
    out = a[1] * np.sin(u) + a[2] * np.sin(2 * u) + a[3] * np.cos(u) + a[4] * np.cos(2 * u)
    return float(out) if np.ndim(out) == 0 else out


def rotate(p: tuple[float, float], theta: float) -> tuple[float, float]:
    c, s = math.cos(theta), math.sin(theta)
    x1, x2 = p
    return (x1 * c - x2 * s, x1 * s + x2 * c)


def label_point(p: tuple[float, float], task: TaskParams) -> int:
    x1, x2 = rotate(p, task.theta)
    return 1 if x2 - boundary_h(x1, task.a) >= 0 else -1


def label_points(points: np.ndarray, task: TaskParams) -> np.ndarray:
    """Vectorised :func:`label_point` for an ``(n, 2)`` array."""
    c, s = math.cos(task.theta), math.sin(task.theta)
    x1 = points[:, 0] * c - points[:, 1] * s
    x2 = points[:, 0] * s + points[:, 1] * c
    return np.where(x2 - boundary_h(x1, task.a) >= 0, 1, -1)


def lift_features(p) -> np.ndarray:
    """Cubic polynomial lift, ``(n, 2) -> (n, 9)`` or ``(2,) -> (9,)``.

    Column order: x1, x2, x1 x2, x1^2, x2^2, x1^3, x2^3, x1 x2^2, x1^2 x2.
    """
    p = np.asarray(p, dtype=np.float64)
    x1, x2 = p[..., 0], p[..., 1]
    return np.stack(
        [x1, x2, x1 * x2, x1 * x1, x2 * x2, x1 * x1 * x1, x2 * x2 * x2, x1 * x2 * x2, x1 * x1 * x2],
        axis=-1,
    )


def sample_points(seed: int, task: int, n: int) -> np.ndarray:
    """``n`` raw points uniform on the square; the first ``n`` of any longer draw."""
    rng = SplitMix64.substream(seed, "sample", task)
    u = rng.random_array(2 * n).reshape(n, 2)
    return -SQUARE + 2 * SQUARE * u


def sample_arrays(family: TaskFamily, task: int, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Features ``(n, 9)`` and labels ``(n,)`` for one task."""
    if not 0 <= task < family.k:
        raise IndexError(f"task {task} out of range for K={family.k}")
    if n < 0:
        raise ValueError("n must be non-negative")
    pts = sample_points(seed, task, n)
    x = lift_features(pts).reshape(n, FEATURE_DIM)
    x.setflags(write=False)
    return x, label_points(pts, family.tasks[task])


def sample_stream(family: TaskFamily, task: int, n: int, seed: int) -> list[CompoundInstance]:
    x, y = sample_arrays(family, task, n, seed)
    return [CompoundInstance.trusted(task, x[i], int(y[i])) for i in range(n)]


# dataset export ---------------------------------------------------------------


def write_dataset(
    stream: Iterable[CompoundInstance], fh: TextIO, *, k: int, sigma: float, seed: int, count: int
) -> int:
    """One JSON object per line after a header line; floats round-trip exactly."""
    fh.write(json.dumps({"k": k, "sigma": sigma, "seed": seed, "count": count}) + "\n")
    written = 0
    for inst in stream:
        fh.write(json.dumps({"task": inst.task, "y": inst.y, "x": inst.x.tolist()}) + "\n")
        written += 1
    if written != count:
        raise ValueError(f"header announced {count} records, wrote {written}")
    return written


def read_dataset(path: str | Path) -> tuple[dict, list[CompoundInstance]]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        data = [_record(json.loads(line)) for line in fh if line.strip()]
    if len(data) != header["count"]:
        raise ValueError(f"{path}: header says {header['count']} records, found {len(data)}")
    return header, data


def iter_dataset(fh: TextIO) -> Iterator[CompoundInstance]:
    fh.readline()
    for line in fh:
        if line.strip():
            yield _record(json.loads(line))


def _record(obj: dict) -> CompoundInstance:
    return CompoundInstance(int(obj["task"]), np.array(obj["x"], dtype=np.float64), int(obj["y"]))
