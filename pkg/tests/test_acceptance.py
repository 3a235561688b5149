"""Acceptance gate. Each test prints one PASS/FAIL line (also collected in the
terminal summary). Full-length runs (15,000 samples per task) only execute
with ``DOML_FULLSCALE=1``; they take several minutes per algorithm."""

import hashlib
import os
import time
from functools import lru_cache

import numpy as np
import pytest

from conftest import random_buffer
from doml.baselines import OmlLearner
from doml.core import (
    CompoundInstance,
    CompoundWeight,
    HyperParams,
    block_weights,
    build_interaction,
    compound_gradient,
    instance_loss,
    raw_buffer_gradient,
)
from doml.experiment import ExperimentConfig, run_experiment
from doml.master import MasterNode
from doml.synth import generate_family
from doml.transport import Delay, LatencyModel, dispatch, lockstep_run, synthetic_stream
from doml.transport.wire import is_worker
from doml.worker import WorkerNode

SEEDS = (0, 1, 2, 3, 4)
FULLSCALE = os.environ.get("DOML_FULLSCALE") == "1"


@lru_cache(maxsize=None)
def final_error(algorithm: str, seed: int, sigma: float = 0.3, samples: int = 2000, oml_buffer=None) -> float:
    cfg = ExperimentConfig(algorithm=algorithm, seed=seed, sigma=sigma, samples_per_task=samples, oml_buffer=oml_buffer)
    return run_experiment(cfg).final_error


def mean_error(algorithm: str, sigma: float = 0.3, samples: int = 2000, oml_buffer=None) -> float:
    return float(np.mean([final_error(algorithm, s, sigma, samples, oml_buffer) for s in SEEDS]))


@lru_cache(maxsize=None)
def main_run(mode: str = "lockstep", transcript: bool = False):
    return run_experiment(ExperimentConfig(seed=0, mode=mode, transcript=transcript))


def pct(v: float) -> str:
    return f"{100 * v:.2f}%"


# 1 --------------------------------------------------------------------------------


def test_criterion_1_math_core_properties(verdict):
    start = time.perf_counter()
    worst_identity = 0.0
    for b in (0.0, 0.5, 1.0, 6.0):
        for k in range(1, 65):
            prod = build_interaction(k, b).to_dense() @ build_interaction(k, b, "inverse").to_dense()
            worst_identity = max(worst_identity, float(np.max(np.abs(prod - np.eye(k)))))

    sums_exact = all(
        (lambda c: c[0] + (k - 1) * c[1] == 1.0)(block_weights(k, b)) for k in (1, 2, 3, 8, 64) for b in (0.0, 0.5, 1.0, 6.0)
    )

    rng = np.random.default_rng(1)
    worst_fd, h = 0.0, 1e-6
    for _ in range(100):
        k, d = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        b, lam = float(rng.uniform(0, 8)), float(rng.uniform(0, 0.2))
        w = rng.normal(size=(k, d))
        inst = CompoundInstance(int(rng.integers(k)), rng.normal(size=d), int(rng.choice([-1, 1])))
        fwd, inv = build_interaction(k, b), build_interaction(k, b, "inverse")
        grad = np.zeros(k * d)
        for i in range(k * d):
            e = np.zeros(k * d)
            e[i] = h
            f = lambda v: instance_loss(CompoundWeight(v.reshape(k, d), 0), inst, fwd, lam)
            grad[i] = (f(w.ravel() + e) - f(w.ravel() - e)) / (2 * h)
        expected = np.kron(inv.to_dense(), np.eye(d)) @ grad
        got = compound_gradient(CompoundWeight(w, 0), inst, inv, lam).ravel()
        worst_fd = max(worst_fd, float(np.linalg.norm(got - expected) / max(np.linalg.norm(expected), 1e-12)))

    violations = 0
    wz = CompoundWeight(rng.normal(size=(64, 9)), 0)
    for _ in range(10_000):
        k, m = int(rng.integers(1, 65)), int(rng.integers(1, 25))
        g = raw_buffer_gradient(CompoundWeight(wz.blocks[:k], 0), random_buffer(rng, k, 9, m))
        violations += len(g.nonzero_tasks()) > min(m, k)

    elapsed = time.perf_counter() - start
    ok = worst_identity <= 1e-12 and sums_exact and worst_fd <= 1e-6 and violations == 0 and elapsed < 10
    verdict(
        "criterion 1 (math core)",
        ok,
        f"max |A A^-1 - I| = {worst_identity:.1e}, block sums exact = {sums_exact}, "
        f"finite-difference rel err = {worst_fd:.1e}, sparsity violations = {violations}, {elapsed:.1f}s",
    )


# 2 --------------------------------------------------------------------------------


def test_criterion_2_synchronous_reduction(verdict):
    start = time.perf_counter()
    k, per_task, seed = 16, 625, 0
    hp = HyperParams(buffer=1, tau_max=5)
    stream = list(synthetic_stream(generate_family(k, 0.3, seed), [per_task] * k, seed))

    def digest(w):
        return hashlib.sha256(w.blocks.tobytes()).digest()

    oml_traj = []
    OmlLearner(k, 9, hp, on_update=lambda w: oml_traj.append(digest(w))).run(stream)

    doml_traj = []
    master = MasterNode(k, 9, 1, hp, on_update=lambda rec, w: doml_traj.append(digest(w)))
    lockstep_run(master, [WorkerNode(0, k, 9, hp)], dispatch(stream, 1, seed), record=False)

    elapsed = time.perf_counter() - start
    same = len(oml_traj) == len(stream) and oml_traj == doml_traj
    first_diff = next((i for i, (a, b) in enumerate(zip(oml_traj, doml_traj)) if a != b), None)
    verdict(
        "criterion 2 (N=1, m=1 equals OML)",
        same and elapsed < 10,
        f"{len(doml_traj)} DOML vs {len(oml_traj)} OML weight snapshots, bitwise equal = {same}"
        + (f" (first difference at step {first_diff})" if first_diff is not None else "")
        + f", {elapsed:.1f}s",
    )


# 3 --------------------------------------------------------------------------------


def test_criterion_3_main_experiment_desk_scale(verdict):
    start = time.perf_counter()
    doml, oml, ol = mean_error("doml"), mean_error("oml"), mean_error("ol")
    elapsed = time.perf_counter() - start
    # informational: OML with one update per sample instead of per buffer of 10
    oml_1 = mean_error("oml", oml_buffer=1)
    ok = abs(doml - oml) <= 0.02 and ol - doml >= 0.02 and ol - oml >= 0.02
    verdict(
        "criterion 3 (desk scale, 5 seeds)",
        ok,
        f"DOML {pct(doml)}, OML {pct(oml)}, OL {pct(ol)}; |DOML-OML| = {100 * abs(doml - oml):.2f} pp, "
        f"OL-DOML = {100 * (ol - doml):.2f} pp, OL-OML = {100 * (ol - oml):.2f} pp, {elapsed:.0f}s "
        f"[per-sample OML, not gated: {pct(oml_1)}]",
    )


@pytest.mark.skipif(not FULLSCALE, reason="set DOML_FULLSCALE=1 for 15,000 samples per task")
def test_criterion_3_main_experiment_full_scale(verdict):
    start = time.perf_counter()
    doml, oml, ol = (mean_error(a, samples=15000) for a in ("doml", "oml", "ol"))
    elapsed = time.perf_counter() - start
    oml_1 = mean_error("oml", samples=15000, oml_buffer=1)
    bands = {"DOML": (doml, 0.2422), "OML": (oml, 0.2467), "OL": (ol, 0.2896)}
    ok = all(abs(v - ref) <= 0.05 for v, ref in bands.values())
    verdict(
        "criterion 3 (full scale, 5 seeds)",
        ok,
        ", ".join(f"{name} {pct(v)} (target {pct(ref)} +/- 5 pp)" for name, (v, ref) in bands.items())
        + f", {elapsed:.0f}s [per-sample OML, not gated: {pct(oml_1)}]",
    )


# 4 --------------------------------------------------------------------------------


def test_criterion_4_task_similarity_ablation(verdict):
    doml_lo, ol_lo = mean_error("doml", 0.1), mean_error("ol", 0.1)
    doml_hi, ol_hi = mean_error("doml", 0.5), mean_error("ol", 0.5)
    ok = ol_lo < doml_lo and ol_hi - doml_hi >= 0.08
    verdict(
        "criterion 4 (sigma ablation, 5 seeds)",
        ok,
        f"sigma=0.1: OL {pct(ol_lo)} vs DOML {pct(doml_lo)}; sigma=0.5: DOML {pct(doml_hi)} vs OL {pct(ol_hi)} "
        f"(gap {100 * (ol_hi - doml_hi):.2f} pp)",
    )


# 5 --------------------------------------------------------------------------------


def test_criterion_5_gradient_sparsity(verdict):
    res = main_run()
    log = res.update_log
    first = [r["nonzero_blocks"] for r in log[:100]]
    every = max(r["nonzero_blocks"] for r in log)
    frac = res.summary["mean_sparsity"]
    ok = len(first) == 100 and max(first) <= 10 and every <= 10 and frac <= 10 / 64 + 0.01
    verdict(
        "criterion 5 (sparsity, m=10, K=64)",
        ok,
        f"max nonzero blocks in first 100 epochs = {max(first)}, over the run = {every}, "
        f"mean nonzero fraction = {frac:.4f} (bound {10 / 64 + 0.01:.4f})",
    )


# 6 --------------------------------------------------------------------------------


def check_transcript(run, tau_max: int) -> list[str]:
    problems = []
    delivered = set()
    for e in run.transcript:
        if e["ev"] != "deliver":
            continue
        if is_worker(e["sender"]) and is_worker(e["receiver"]):
            problems.append(f"worker-to-worker message {e}")
        if e["kind"] == "gradient":
            delivered.add((e["sender"], e["seq"]))
    applied = [e for e in run.transcript if e["ev"] == "apply"]
    keys = [(e["sender"], e["seq"]) for e in applied]
    if len(set(keys)) != len(keys):
        problems.append("a gradient was applied twice")
    if not set(keys) <= delivered:
        problems.append("applied a gradient that was never delivered")
    for e in applied:
        if e["round"] - e["stale_version"] > tau_max + 1:
            problems.append(f"round {e['round']} staleness {e['round'] - e['stale_version']}")
        if min(e["outage"]) != 0:
            problems.append(f"round {e['round']} min outage {min(e['outage'])}")
    return problems


def jittered(seed: int):
    k, n, hp = 64, 8, HyperParams()
    lat = LatencyModel(
        {"data": Delay.parse("uniform:0:2"), "pull": Delay.parse("uniform:0:5"), "model": Delay.parse("uniform:0:5"), "gradient": Delay.parse("uniform:0:40")},
        seed=seed,
    )
    stream = synthetic_stream(generate_family(k, 0.3, seed), [200] * k, seed)
    master = MasterNode(k, 9, n, hp)
    workers = [WorkerNode(i, k, 9, hp) for i in range(n)]
    return lockstep_run(master, workers, dispatch(stream, n, seed), lat)


def test_criterion_6_protocol_invariants(verdict):
    main = main_run(transcript=True)
    problems = check_transcript(main.run, 8)
    a, b = jittered(3), jittered(3)
    problems += check_transcript(a, 8)
    rounds = main.summary["rounds"] + a.master.round
    identical = a.transcript_bytes() == b.transcript_bytes()
    cfg = ExperimentConfig(seed=2, samples_per_task=300, transcript=True)
    r1, r2 = run_experiment(cfg).run, run_experiment(cfg).run
    identical = identical and r1.transcript_bytes() == r2.transcript_bytes()
    ok = not problems and identical
    verdict(
        "criterion 6 (protocol invariants)",
        ok,
        f"{rounds} rounds checked (zero-latency and jittered runs), {len(problems)} violations"
        + (f" e.g. {problems[0]}" if problems else "")
        + f", same-seed transcripts byte-identical = {identical}",
    )


# 7 --------------------------------------------------------------------------------


def test_criterion_7_socket_matches_lockstep(verdict):
    lock = main_run().final_error
    sock_res = main_run("socket")
    sock = sock_res.final_error
    ok = abs(sock - lock) <= 0.01 and sock_res.summary["leftover_gradients"] == 0
    verdict(
        "criterion 7 (socket vs lockstep, seed 0)",
        ok,
        f"socket {pct(sock)} vs lockstep {pct(lock)} (diff {100 * abs(sock - lock):.3f} pp), "
        f"{sock_res.summary['rounds']} rounds over loopback in {sock_res.summary['wall_time']:.0f}s",
    )
