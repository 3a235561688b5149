"""End-to-end experiment runner for DOML and the two baselines."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .baselines import OlLearner, OmlLearner
from .core import CompoundInstance, HyperParams
from .master import MasterNode
from .metrics import (
    ErrorCurves,
    MetricsRecord,
    cumulative_error,
    mean_sparsity,
    records_from_stream,
    sparsity_trace,
    write_metrics_csv,
    write_trace_csv,
)
from .synth import FEATURE_DIM, generate_family, read_dataset
from .transport.latency import Delay, LatencyModel
from .transport.lockstep import RunResult, lockstep_run
from .transport.sockets import BindConfig, socket_run
from .transport.spout import dispatch, synthetic_stream
from .worker import WorkerNode

log = logging.getLogger(__name__)

ALGORITHMS = ("doml", "oml", "ol")
MODES = ("lockstep", "socket")
ORDERS = ("round-robin", "shuffled")

# config file sections -> field names
SECTIONS = {
    "experiment": ("algorithm", "k", "n_workers", "d", "samples_per_task", "sigma", "seed", "order", "dataset", "metrics_interval", "output_dir", "transcript"),
    "hyper": ("eta", "lam", "b", "radius", "buffer", "tau_max", "oml_buffer", "ol_radius", "strict_staleness"),
    "transport": ("mode", "latency", "latency_seed", "host", "master_port", "worker_port_base", "timeout"),
}


class ConfigError(ValueError):
    def __init__(self, errors: dict[str, str]):
        super().__init__("; ".join(f"{k}: {v}" for k, v in errors.items()))
        self.errors = errors


@dataclass
class ExperimentConfig:
    algorithm: str = "doml"
    k: int = 64
    n_workers: int = 8
    d: int = FEATURE_DIM
    samples_per_task: int = 2000
    sigma: float = 0.3
    seed: int = 0
    order: str = "round-robin"
    dataset: str | None = None
    metrics_interval: int = 100
    output_dir: str | None = None
    transcript: bool = False

    eta: float = 0.01
    lam: float = 0.001
    b: float = 6.0
    radius: float = 10.0
    buffer: int = 10
    tau_max: int = 8
    # None: the OML baseline averages over the same buffer size as DOML
    oml_buffer: int | None = None
    ol_radius: float = math.inf
    strict_staleness: bool = False

    mode: str = "lockstep"
    latency: dict[str, str] = field(default_factory=dict)
    latency_seed: int | None = None
    host: str = "127.0.0.1"
    master_port: int = 0
    worker_port_base: int = 0
    timeout: float = 30.0

    @classmethod
    def full_scale(cls, **kw) -> "ExperimentConfig":
        """Full-length profile: 15,000 samples per task."""
        return cls(**{"samples_per_task": 15000, **kw})

    def validate(self) -> "ExperimentConfig":
        errors: dict[str, str] = {}

        def need(ok: bool, name: str, msg: str):
            if not ok and name not in errors:
                errors[name] = msg

        need(self.algorithm in ALGORITHMS, "algorithm", f"must be one of {ALGORITHMS}")
        need(self.mode in MODES, "mode", f"must be one of {MODES}")
        need(self.order in ORDERS, "order", f"must be one of {ORDERS}")
        for name in ("k", "n_workers", "d", "buffer", "metrics_interval"):
            need(isinstance(getattr(self, name), int) and getattr(self, name) >= 1, name, "must be an integer >= 1")
        need(self.samples_per_task >= 1, "samples_per_task", "must be >= 1")
        need(self.dataset is not None or self.d == FEATURE_DIM, "d", f"synthetic tasks have d = {FEATURE_DIM}")
        need(self.sigma >= 0 and math.isfinite(self.sigma), "sigma", "must be finite and >= 0")
        need(self.eta > 0, "eta", "must be > 0")
        need(self.lam >= 0, "lam", "must be >= 0")
        need(self.b >= 0, "b", "must be >= 0")
        need(self.radius > 0, "radius", "must be > 0")
        need(self.ol_radius > 0, "ol_radius", "must be > 0")
        need(self.oml_buffer is None or self.oml_buffer >= 1, "oml_buffer", "must be >= 1")
        need(self.tau_max >= 0, "tau_max", "must be >= 0")
        need(
            self.algorithm != "doml" or self.tau_max >= self.n_workers - 1,
            "tau_max",
            f"must be >= n_workers - 1 = {self.n_workers - 1} to bound every worker's outage",
        )
        need(self.timeout > 0, "timeout", "must be > 0")
        for link, spec in self.latency.items():
            try:
                LatencyModel({link: Delay.parse(spec)})
            except ValueError as exc:
                errors[f"latency.{link}"] = str(exc)
        if errors:
            raise ConfigError(errors)
        return self

    def hyper(self) -> HyperParams:
        return HyperParams(self.eta, self.lam, self.b, self.radius, self.buffer, self.tau_max)

    def latency_model(self) -> LatencyModel:
        seed = self.seed if self.latency_seed is None else self.latency_seed
        return LatencyModel({k: Delay.parse(v) for k, v in self.latency.items()}, seed)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        flat = dataclasses.asdict(self)
        return {sec: {name: _jsonable(flat[name]) for name in names} for sec, names in SECTIONS.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "ExperimentConfig":
        flat: dict[str, Any] = {}
        for key, val in obj.items():
            if key in SECTIONS and isinstance(val, dict):
                flat.update(val)
            else:
                flat[key] = val
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigError({name: "unknown field" for name in unknown})
        for name in ("radius", "ol_radius"):
            if isinstance(flat.get(name), str):
                flat[name] = float(flat[name])
        return cls(**flat)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    curves: ErrorCurves
    records: list[MetricsRecord]
    summary: dict[str, Any]
    update_log: list[dict]
    run: RunResult | None = None

    @property
    def final_error(self) -> float:
        return self.summary["final_error"]


def build_stream(cfg: ExperimentConfig) -> tuple[list[CompoundInstance], int, int]:
    """Instances in spout order, plus (K, d)."""
    if cfg.dataset:
        header, data = read_dataset(cfg.dataset)
        k = int(header["k"])
        d = len(data[0].x) if data else cfg.d
        return data, k, d
    family = generate_family(cfg.k, cfg.sigma, cfg.seed)
    stream = list(synthetic_stream(family, [cfg.samples_per_task] * cfg.k, cfg.seed, cfg.order))
    return stream, cfg.k, FEATURE_DIM


def run_doml(cfg: ExperimentConfig, stream: list[CompoundInstance], k: int, d: int, **kw) -> RunResult:
    hp = cfg.hyper()
    master = MasterNode(k, d, cfg.n_workers, hp, strict_staleness=cfg.strict_staleness, on_update=kw.pop("on_update", None))
    workers = [WorkerNode(i, k, d, hp) for i in range(cfg.n_workers)]
    data = dispatch(stream, cfg.n_workers, cfg.seed)
    record = kw.pop("record", cfg.transcript)
    if cfg.mode == "lockstep":
        return lockstep_run(master, workers, data, cfg.latency_model(), record=record, **kw)
    bind = BindConfig.from_env(
        host=cfg.host, master_port=cfg.master_port, worker_port_base=cfg.worker_port_base, timeout=cfg.timeout
    )
    return socket_run(master, workers, data, cfg.latency_model(), bind, record=record, **kw)


def run_experiment(cfg: ExperimentConfig, **kw) -> ExperimentResult:
    """Run one configuration; extra keywords go to the DOML transport runner."""
    cfg.validate()
    start = time.perf_counter()
    stream, k, d = build_stream(cfg)
    run = None
    update_log: list[dict] = []
    messages: dict[str, int] = {}
    if cfg.algorithm == "doml":
        run = run_doml(cfg, stream, k, d, **kw)
        obs = sorted(o for w in run.workers for o in w.observations)
        tasks = [o[1] for o in obs]
        mistakes = [o[2] for o in obs]
        update_log = [r.as_dict() for r in run.master.log]
        messages = dict(sorted(run.sent.items()))
    else:
        if cfg.algorithm == "oml":
            learner = OmlLearner(k, d, cfg.hyper(), buffer=cfg.oml_buffer or cfg.buffer)
        else:
            learner = OlLearner(k, d, cfg.hyper(), radius=cfg.ol_radius)
        mistakes = learner.run(stream)
        tasks = [inst.task for inst in stream]
    curves = cumulative_error(tasks, mistakes, k)
    records = records_from_stream(tasks, mistakes, k, cfg.metrics_interval)
    summary = {
        "algorithm": cfg.algorithm,
        "mode": cfg.mode if cfg.algorithm == "doml" else "local",
        "seed": cfg.seed,
        "sigma": cfg.sigma,
        "samples": len(stream),
        "epochs": curves.epochs,
        "final_error": curves.final(),
        "wall_time": time.perf_counter() - start,
    }
    if run is not None:
        summary.update(
            rounds=run.master.round,
            messages=messages,
            mean_nonzero_blocks=float(np.mean([r["nonzero_blocks"] for r in update_log])) if update_log else 0.0,
            mean_sparsity=mean_sparsity(update_log, k),
            leftover_gradients=len(run.leftover),
            max_tau=max((r["tau"] for r in update_log), default=0),
        )
    result = ExperimentResult(cfg, curves, records, summary, update_log, run)
    if cfg.output_dir:
        write_outputs(result)
    return result


def write_outputs(result: ExperimentResult) -> Path:
    cfg = result.config
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    k = result.curves.k
    with open(out / "metrics.csv", "w", newline="") as fh:
        write_metrics_csv(result.records, fh, k)
    with open(out / "summary.json", "w") as fh:
        json.dump(result.summary, fh, indent=2)
        fh.write("\n")
    if result.update_log:
        with open(out / "updates.ndjson", "w") as fh:
            for rec in result.update_log:
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        with open(out / "sparsity.csv", "w", newline="") as fh:
            write_trace_csv(sparsity_trace(result.update_log), fh)
    if result.run is not None and result.run.transcript is not None:
        with open(out / "transcript.ndjson", "w") as fh:
            for line in result.run.transcript_lines():
                fh.write(line + "\n")
    return out


def compare(cfg: ExperimentConfig, algorithms=ALGORITHMS, seeds=(0,)) -> dict[str, list[float]]:
    """Final macro error per algorithm and seed."""
    out: dict[str, list[float]] = {a: [] for a in algorithms}
    for seed in seeds:
        for alg in algorithms:
            res = run_experiment(cfg.replace(algorithm=alg, seed=seed, output_dir=None))
            out[alg].append(res.final_error)
            log.info("%s seed=%d sigma=%g -> %.4f", alg, seed, cfg.sigma, res.final_error)
    return out
