"""Numeric primitives for distributed online multitask logistic regression.

The global model is a compound vector of ``K`` task blocks of length ``d``,
stored as a ``(K, d)`` float64 array. Task coupling goes through the
uniform interaction matrix

    A     = (1/K) * [[a, -b, ...], [-b, a, ...], ...],   a = K + b(K - 1)
    A^-1  = 1/((1 + b)K) * [[b + K, b, ...], [b, b + K, ...], ...]

which is kept as two scalars (diagonal, off-diagonal). The Kronecker lift
``A (x) I_d`` acting on a compound vector is therefore "diag times the block
plus offdiag times the sum of the other blocks" and is never materialised.

Gradients follow the RKHS reading: the gradient of the per-round loss with
respect to the inner product ``<u, v> = u^T (A (x) I) v`` is ``A^-1`` times
the Euclidean gradient, which is why the regulariser contributes a plain
``lam * w`` term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

Kind = Literal["forward", "inverse"]


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CompoundWeight:
    """``K`` task weight vectors of length ``d`` plus a version counter."""

    blocks: np.ndarray
    version: int = 0

    def __post_init__(self):
        blocks = np.array(self.blocks, dtype=np.float64)
        if blocks.ndim != 2:
            raise ValueError(f"blocks must be 2-D (K, d), got shape {blocks.shape}")
        if not np.isfinite(blocks).all():
            raise ValueError("compound weight has non-finite entries")
        if self.version < 0:
            raise ValueError("version must be non-negative")
        object.__setattr__(self, "blocks", _readonly(blocks))

    @classmethod
    def zeros(cls, k: int, d: int) -> "CompoundWeight":
        return cls(np.zeros((k, d)), 0)

    @property
    def k(self) -> int:
        return self.blocks.shape[0]

    @property
    def d(self) -> int:
        return self.blocks.shape[1]

    def norm(self) -> float:
        return float(np.linalg.norm(self.blocks))

    def flat(self) -> np.ndarray:
        return self.blocks.reshape(-1)


@dataclass(frozen=True)
class CompoundInstance:
    """One labelled sample of task ``task``.

    Only the task's own feature block is stored; the compound representation
    is zero everywhere else.
    """

    task: int
    x: np.ndarray
    y: int

    def __post_init__(self):
        if self.task < 0:
            raise ValueError(f"task index must be non-negative, got {self.task}")
        if self.y not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.y!r}")
        x = np.array(self.x, dtype=np.float64)
        if x.ndim != 1 or not np.isfinite(x).all():
            raise ValueError("features must be a finite 1-D vector")
        object.__setattr__(self, "x", _readonly(x))

    @classmethod
    def trusted(cls, task: int, x: np.ndarray, y: int) -> "CompoundInstance":
        """Skip validation; for rows of arrays that were checked in bulk."""
        inst = object.__new__(cls)
        object.__setattr__(inst, "task", task)
        object.__setattr__(inst, "x", x)
        object.__setattr__(inst, "y", y)
        return inst


@dataclass(frozen=True)
class InteractionMatrix:
    k: int
    b: float
    kind: Kind
    diag: float
    offdiag: float

    def to_dense(self) -> np.ndarray:
        """K x K array; for inspection and tests only."""
        m = np.full((self.k, self.k), self.offdiag)
        np.fill_diagonal(m, self.diag)
        return m

    def entry(self, i: int, j: int) -> float:
        return self.diag if i == j else self.offdiag


@dataclass(frozen=True)
class SparseGradient:
    """Buffer-averaged raw gradient as transmitted by a worker.

    ``tasks`` are the touched task blocks in increasing order and ``values``
    the matching ``(p, d)`` rows. Blocks not listed are zero.
    """

    tasks: tuple[int, ...]
    values: np.ndarray
    samples: int
    basis_version: int = 0
    worker: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        tasks = tuple(int(t) for t in self.tasks)
        if values.ndim != 2 or values.shape[0] != len(tasks):
            raise ValueError("values must be (len(tasks), d)")
        if len(set(tasks)) != len(tasks) or any(t < 0 for t in tasks):
            raise ValueError(f"invalid block indices {tasks}")
        if list(tasks) != sorted(tasks):
            order = np.argsort(tasks, kind="stable")
            tasks = tuple(tasks[i] for i in order)
            values = values[order]
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not np.isfinite(values).all():
            raise ValueError("gradient has non-finite entries")
        object.__setattr__(self, "tasks", tasks)
        object.__setattr__(self, "values", _readonly(values))

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def blocks(self) -> dict[int, np.ndarray]:
        return dict(zip(self.tasks, self.values))

    def nonzero_tasks(self) -> tuple[int, ...]:
        hit = self.values.any(axis=1)
        return tuple(t for t, h in zip(self.tasks, hit) if h)

    def to_dense(self, k: int) -> np.ndarray:
        out = np.zeros((k, self.d))
        if self.tasks:
            out[list(self.tasks)] = self.values
        return out


@dataclass(frozen=True)
class HyperParams:
    eta: float = 0.01
    lam: float = 0.001
    b: float = 6.0
    radius: float = 10.0
    buffer: int = 10
    tau_max: int = 8

    def __post_init__(self):
        checks = [
            (self.eta > 0 and math.isfinite(self.eta), "eta must be a finite positive number"),
            (self.lam >= 0 and math.isfinite(self.lam), "lam must be finite and >= 0"),
            (self.b >= 0 and math.isfinite(self.b), "b must be finite and >= 0"),
            (self.radius > 0, "radius must be > 0"),
            (self.buffer >= 1, "buffer must be >= 1"),
            (self.tau_max >= 0, "tau_max must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


def build_interaction(k: int, b: float, kind: Kind = "forward") -> InteractionMatrix:
    if k < 1:
        raise ValueError("need at least one task")
    if b < 0:
        raise ValueError("interaction parameter b must be non-negative")
    if kind == "forward":
        a = k + b * (k - 1)
        return InteractionMatrix(k, b, kind, a / k, -b / k)
    if kind == "inverse":
        denom = (1 + b) * k
        return InteractionMatrix(k, b, kind, (b + k) / denom, b / denom)
    raise ValueError(f"unknown interaction kind {kind!r}")


def apply_interaction(m: InteractionMatrix, g: SparseGradient) -> np.ndarray:
    """``(M (x) I_d) g`` as a dense ``(K, d)`` array.

    Block ``j`` is ``diag * g_j + offdiag * sum_{l != j} g_l``; one pass builds
    the total block sum, the touched blocks then subtract their own share.
    """
    if g.tasks and g.tasks[-1] >= m.k:
        raise ValueError(f"block index {g.tasks[-1]} out of range for K={m.k}")
    out = np.empty((m.k, g.d))
    p = len(g.tasks)
    if p == 0:
        out.fill(0.0)
        return out
    total = g.values[0].copy()
    for row in g.values[1:]:
        total += row
    out[:] = m.offdiag * total
    idx = list(g.tasks)
    if p == 1:
        # no other blocks: keep this exact so single-sample updates match the
        # direct gradient formula bit for bit
        out[idx] = m.diag * g.values
    else:
        out[idx] = m.diag * g.values + m.offdiag * (total - g.values)
    return out


def margin(w: CompoundWeight, inst: CompoundInstance) -> float:
    if inst.task >= w.k:
        raise ValueError(f"task {inst.task} out of range for K={w.k}")
    return float(w.blocks[inst.task] @ inst.x)


def predict(w: CompoundWeight, inst: CompoundInstance) -> int:
    return 1 if margin(w, inst) >= 0.0 else -1


def logistic_factor(y: int, m: float) -> float:
    """``-y / (1 + exp(y m))``, the scalar in front of the feature vector."""
    z = y * m
    if z >= 0:
        e = math.exp(-z)
        return -y * e / (1.0 + e)
    return -y / (1.0 + math.exp(z))


def softplus(z: float) -> float:
    """``log(1 + exp(z))`` without overflow."""
    if z > 0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def quadratic_form(a: InteractionMatrix, w: CompoundWeight) -> float:
    """``w^T (A (x) I) w`` from the two closed-form scalars."""
    sq = float(np.sum(w.blocks * w.blocks))
    s = w.blocks.sum(axis=0)
    return a.diag * sq + a.offdiag * (float(s @ s) - sq)


def _require(m: InteractionMatrix, kind: Kind) -> None:
    if m.kind != kind:
        raise ValueError(f"expected {kind} interaction matrix, got {m.kind}")


def instance_loss(w: CompoundWeight, inst: CompoundInstance, a: InteractionMatrix, lam: float) -> float:
    _require(a, "forward")
    return softplus(-inst.y * margin(w, inst)) + 0.5 * lam * quadratic_form(a, w)


def empirical_risk(w: CompoundWeight, data: Sequence[CompoundInstance], a: InteractionMatrix, lam: float) -> float:
    _require(a, "forward")
    if not data:
        raise ValueError("empirical risk needs at least one sample")
    logistic = math.fsum(softplus(-s.y * margin(w, s)) for s in data) / len(data)
    return logistic + 0.5 * lam * quadratic_form(a, w)


def compound_gradient(w: CompoundWeight, inst: CompoundInstance, ainv: InteractionMatrix, lam: float) -> np.ndarray:
    """Task-wise RKHS gradient of the per-round loss, as a ``(K, d)`` array.

    The own task gets weight ``(b + K)/((1 + b)K)``, every other task
    ``b/((1 + b)K)``; the regulariser adds ``lam * w_j`` to each block.
    """
    _require(ainv, "inverse")
    if w.k != ainv.k:
        raise ValueError(f"model has K={w.k}, interaction matrix K={ainv.k}")
    step = logistic_factor(inst.y, margin(w, inst)) * inst.x
    out = np.empty_like(w.blocks)
    out[:] = ainv.offdiag * step
    out[inst.task] = ainv.diag * step
    out += lam * w.blocks
    return out


def raw_buffer_gradient(w: CompoundWeight, buffer: Sequence[CompoundInstance], worker: int = 0) -> SparseGradient:
    """Average of ``logistic_factor * x`` over the buffer, kept per task block.

    Neither ``A^-1`` nor the regulariser is applied; the master does both.
    """
    if not buffer:
        raise ValueError("cannot compute a gradient from an empty buffer")
    acc: dict[int, np.ndarray] = {}
    for s in buffer:
        contrib = logistic_factor(s.y, margin(w, s)) * s.x
        if s.task in acc:
            acc[s.task] += contrib
        else:
            acc[s.task] = contrib
    m = len(buffer)
    tasks = sorted(acc)
    values = np.stack([acc[t] for t in tasks]) / m
    return SparseGradient(tuple(tasks), values, m, w.version, worker)


def assemble_direction(ainv: InteractionMatrix, g: SparseGradient, lam: float, w_stale: CompoundWeight) -> np.ndarray:
    _require(ainv, "inverse")
    if w_stale.k != ainv.k or w_stale.d != g.d:
        raise ValueError(
            f"shape mismatch: weight ({w_stale.k}, {w_stale.d}), matrix K={ainv.k}, gradient d={g.d}"
        )
    out = apply_interaction(ainv, g)
    out += lam * w_stale.blocks
    return out


def project(w: CompoundWeight, radius: float) -> CompoundWeight:
    """Scale onto the Euclidean ball of the given radius if outside it."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    n = w.norm()
    if n <= radius:
        return w
    return CompoundWeight(w.blocks * (radius / n), w.version)


def kernel_product(s: CompoundInstance, t: CompoundInstance, ainv: InteractionMatrix) -> float:
    _require(ainv, "inverse")
    if s.x.shape != t.x.shape:
        raise ValueError("instances have different feature dimensions")
    return ainv.entry(s.task, t.task) * float(s.x @ t.x)


def block_weights(k: int, b: float) -> tuple[float, float]:
    """(own-task, other-task) gradient weights."""
    ainv = build_interaction(k, b, "inverse")
    return ainv.diag, ainv.offdiag


__all__ = [
    "CompoundInstance",
    "CompoundWeight",
    "HyperParams",
    "InteractionMatrix",
    "SparseGradient",
    "apply_interaction",
    "assemble_direction",
    "block_weights",
    "build_interaction",
    "compound_gradient",
    "empirical_risk",
    "instance_loss",
    "kernel_product",
    "logistic_factor",
    "margin",
    "predict",
    "project",
    "quadratic_form",
    "raw_buffer_gradient",
    "softplus",
]
