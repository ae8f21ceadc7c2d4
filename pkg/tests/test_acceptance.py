"""Acceptance criteria 1-10. Each test prints one line: ACCEPTANCE <n> PASS|FAIL ..."""

from __future__ import annotations

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from seedes.cli import main
from seedes.dist.harness import run_distributed, start_sim_workers
from seedes.dist.transport import SimNetwork
from seedes.dist.worker import WorkerCrash
from seedes.engine import apply_update, perturb_in_place, restore_in_place
from seedes.manifest import preset
from seedes.metrics.behavior import BehaviorPoint, evaluate_behavior, greedy_reward
from seedes.metrics.consistency import run_consistency
from seedes.metrics.kl import exact_kl, k3, monte_carlo_kl
from seedes.metrics.pareto import pareto_front, pareto_front_bruteforce
from seedes.noise import sample_seeds
from seedes.params import ParameterSet
from seedes.runner import build, execute, resolved
from seedes.tasks.countdown import (CountdownInstance, all_expressions, countdown_reward,
                                    generate_instances, verify_countdown)
from seedes.tasks.datasets import load_pairs
from seedes.tinylm import TinyLm

from conftest import ROOT, make_params
from test_engine import dense_update, smoothed_gradient_cosines

CALIBRATION = json.loads((ROOT / "conformance" / "calibration.json").read_text())
RUNS: dict[str, tuple[Path, str]] = {}     # name -> (run dir, final digest) for criterion 10


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def run_preset(name: str, out: Path, **es):
    man = preset(name)
    for key, value in es.items():
        setattr(man.es, key, value)
    man.output_dir = str(out)
    man = resolved(man).validate()
    result = execute(man)
    RUNS[f"{name}:{out.name}"] = (out, result.params.digest())
    return man, result


# 1 ----------------------------------------------------------------------------------

def test_criterion_1_round_trip_fidelity(report):
    p = make_params([25_000] * 4, seed=3)
    x0 = p.to_vector().astype(np.float64)
    start = time.perf_counter()
    for seed in sample_seeds(100, 11):
        perturb_in_place(p, seed, 0.001)
        restore_in_place(p, seed, 0.001)
    elapsed = time.perf_counter() - start
    drift = np.abs(p.to_vector().astype(np.float64) - x0) / np.abs(x0)
    worst = float(drift.max())
    ok = worst <= 1e-6 and elapsed < 60
    report(1, ok, f"max relative drift {worst:.3g} (limit 1e-6) on 10^5 parameters, "
                  f"{elapsed:.2f}s (limit 60s); worst element |x0| = "
                  f"{abs(x0[int(drift.argmax())]):.3g}")


# 2 ----------------------------------------------------------------------------------

def test_criterion_2_update_equivalence(report):
    p = make_params([4000, 3000, 2000, 1000], seed=1)
    seeds = sample_seeds(30, 7)
    z = np.random.default_rng(0).standard_normal(30)
    z = ((z - z.mean()) / z.std()).astype(np.float32)
    worst = 0.0
    for alpha in (5e-4, 0.2):
        q = p.copy()
        oracle = dense_update(q, seeds, z, alpha)
        apply_update(q, seeds, z, alpha)
        worst = max(worst, float(np.abs(q.to_vector() - oracle).max()))
    report(2, worst <= 1e-6, f"max |decomposed - dense| {worst:.3g} (limit 1e-6), "
                             "10^4 parameters, N=30")


# 3 ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sphere_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("sphere")
    man, single = run_preset("sphere", base / "p1")

    # P=4 over the simulated network, worker 1 crashes mid-iteration 50
    def crash(worker, stage, iteration, index):
        if stage == "reward" and iteration == 50 and index == 3:
            raise WorkerCrash("injected")

    net = SimNetwork()
    model, _ = build(man)
    sims = start_sim_workers(net, 4, lambda _t: build(man), hooks={1: crash})
    cfg = preset("sphere").es
    cfg.workers = 4
    meta = {"model": man.to_dict()["model"], "task": man.to_dict()["task"]}
    try:
        sim, coord = run_distributed(cfg, model, net, timeout=30, heartbeat_interval=0,
                                     register_timeout=10, run_dir=base / "p4sim", meta=meta)
    finally:
        for _, t in sims:
            t.join(timeout=10)
    RUNS["sphere:p4sim"] = (base / "p4sim", sim.params.digest())

    # P=4 over TCP with worker processes spawned by the command line
    env = {**os.environ, "PYTHONPATH": str(ROOT / "src")}
    proc = subprocess.run([sys.executable, "-m", "seedes", "run", "--preset", "sphere",
                           "--workers", "4", "--heartbeat-interval", "1",
                           "--output-dir", str(base / "p4tcp")],
                          capture_output=True, text=True, timeout=600, env=env)
    assert proc.returncode == 0, proc.stderr
    tcp_digest = ParameterSet.load(base / "p4tcp" / "snapshots" / "final.esp").digest()
    RUNS["sphere:p4tcp"] = (base / "p4tcp", tcp_digest)
    return single, sim, coord, [w.exit_code for w, _ in sims], base


def test_criterion_3_distributed_equivalence(report, sphere_runs):
    single, sim, coord, codes, base = sphere_runs
    log1 = (base / "p1" / "runlog.jsonl").read_bytes()
    same_sim = (base / "p4sim" / "runlog.jsonl").read_bytes() == log1
    same_tcp = (base / "p4tcp" / "runlog.jsonl").read_bytes() == log1
    d1 = single.params.digest()
    digests = {d1, sim.params.digest(), RUNS["sphere:p4tcp"][1]}
    ok = same_sim and same_tcp and len(digests) == 1 and coord.reassigned > 0 and codes[1] == 2
    report(3, ok, f"P=1 vs P=4 (simulated, crash at iteration 50, {coord.reassigned} seeds "
                  f"reassigned) vs P=4 (TCP): runlogs identical {same_sim and same_tcp}, "
                  f"final digests {'identical' if len(digests) == 1 else 'differ'} "
                  f"({d1[:16]}...)")


# 4 ----------------------------------------------------------------------------------

def test_criterion_4_smoothed_gradient(report):
    start = time.perf_counter()
    cos = smoothed_gradient_cosines(dim=100, n=10_000, points=5)
    elapsed = time.perf_counter() - start
    ok = min(cos) >= 0.9 and elapsed < 300
    report(4, ok, f"cosines {', '.join(f'{c:.4f}' for c in cos)} (limit 0.9), "
                  f"{elapsed:.1f}s (limit 300s)")


# 5 ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def large_run(tmp_path_factory):
    return run_preset("sphere-large", tmp_path_factory.mktemp("large") / "run")


@pytest.mark.slow
def test_criterion_5_convergence_small_population(report, large_run):
    man, result = large_run
    means = [m["reward_mean"] for m in result.metrics]
    remaining = means[-1] / means[0]         # optimum is 0, rewards are negative
    windows = all(means[t + 50] > means[t] for t in range(len(means) - 50))
    pinned = CALIBRATION["sphere-large"]["remaining_fraction"]
    report(5, remaining <= 0.01,
           f"dim 10^5, N=30, {man.es.iterations} iterations: mean reward {means[0]:.1f} -> "
           f"{means[-1]:.1f}, {remaining:.2%} of the initial gap remains (limit 1%, "
           f"calibration {pinned:.2%}); strict improvement over every 50-iteration "
           f"window {windows}")


# 6 ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def concise_run(tmp_path_factory):
    return run_preset("conciseness-desk", tmp_path_factory.mktemp("concise") / "run")


@pytest.mark.slow
def test_criterion_6_conciseness(report, concise_run):
    man, result = concise_run
    pairs = load_pairs("conciseness-eval")
    base = TinyLm.load()
    before = greedy_reward(base, pairs)
    after = greedy_reward(TinyLm(result.params), pairs)
    closed = (after - before) / (0 - before)
    self_kl = evaluate_behavior(base, base, pairs, 20, seed=0).kl
    ok = closed >= 0.5 and self_kl == 0.0 and man.es.iterations <= 300
    report(6, ok, f"greedy eval reward {before:.3f} -> {after:.3f} after {man.es.iterations} "
                  f"iterations, {closed:.1%} of the gap to 0 closed (limit 50%); "
                  f"base-vs-self KL {self_kl}")


# 7 ----------------------------------------------------------------------------------

def test_criterion_7_countdown(report):
    wrap = "<think>73 - 41 = 32, 49 - 32 = 17</think><answer>49 - (73 - 41)</answer>"
    examples = [
        verify_countdown("49 - (73 - 41)", CountdownInstance((49, 41, 73), 17))[0],
        verify_countdown("100 * (6+3) + 50", CountdownInstance((100, 50, 6, 3), 950))[0],
        tuple(countdown_reward(wrap, CountdownInstance((49, 41, 73), 17))) == (1.1, 1.0, 1.0),
    ]
    records = generate_instances(500, 4, seed=2024)
    disagree, checked, totals = 0, 0, set()
    for rec in records:
        inst = CountdownInstance(tuple(rec["numbers"]), rec["target"])
        exprs = all_expressions(inst.numbers)
        hits = [t for t, v in exprs.items() if v == inst.target]
        disagree += (len(hits) > 0) != rec["solvable"]
        # every solution, plus every 7th other expression
        sample = hits + [t for i, (t, v) in enumerate(exprs.items())
                         if i % 7 == 0 and v != inst.target]
        for text in sample:
            checked += 1
            disagree += verify_countdown(text, inst)[0] != (text in hits)
        for text in sample[:3]:
            totals.add(countdown_reward(f"<think>x</think><answer>{text}</answer>", inst).total)
        totals.add(countdown_reward("no tags", inst).total)
    ok = all(examples) and disagree == 0 and totals <= {0.0, 0.1, 1.1}
    report(7, ok, f"examples {examples}; 500 instances "
                  f"({sum(r['solvable'] for r in records)} solvable), {checked} expressions "
                  f"checked, {disagree} disagreements; reward values {sorted(totals)}")


# 8 ----------------------------------------------------------------------------------

def test_criterion_8_kl_estimator(report):
    grid = np.logspace(-3, 3, 100_001)
    nonneg = bool(np.all(k3(grid) >= 0))
    p_ft = np.array([0.40, 0.25, 0.15, 0.10, 0.06, 0.04])
    p_base = np.array([0.20, 0.20, 0.20, 0.15, 0.15, 0.10])
    exact = exact_kl(p_ft, p_base)
    mc = monte_carlo_kl(p_ft, p_base, 100_000, np.random.default_rng(0))
    rel = abs(mc - exact) / exact
    report(8, nonneg and rel <= 0.05, f"nonnegative on 10^5-point grid {nonneg}; Monte-Carlo "
                                      f"{mc:.5f} vs exact {exact:.5f}, {rel:.2%} off (limit 5%)")


# 9 ----------------------------------------------------------------------------------

def test_criterion_9_pareto_and_consistency(report):
    rng = np.random.default_rng(9)
    pts = [BehaviorPoint("m", float(r), float(k))
           for r, k in zip(rng.normal(size=200), rng.gamma(2.0, size=200))]
    front_ok = pareto_front(pts) == pareto_front_bruteforce(pts)
    runs = [BehaviorPoint("es", r, k, sigma=0.001, alpha=0.0005)
            for r, k in zip([0.88, 0.89, 0.90, 0.89], [0.10, 0.12, 0.11, 0.11])]
    (row,) = run_consistency(runs)
    # hand computation: deviations 0.01, 0, 0.01, 0 -> sample variance 0.0002 / 3
    expected = (0.89, (0.0002 / 3) ** 0.5, 0.11, (0.0002 / 3) ** 0.5)
    got = (row["reward_mean"], row["reward_std"], row["kl_mean"], row["kl_std"])
    err = max(abs(a - b) for a, b in zip(got, expected))
    ok = front_ok and err <= 1e-6
    report(9, ok, f"Pareto front of 200 points equals brute force {front_ok} "
                  f"({len(pareto_front(pts))} points); consistency error {err:.2g} (limit 1e-6)")


# 10 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_10_replay(report, sphere_runs, large_run, concise_run, capsys):
    # every run directory written by criteria 3, 5 and 6
    results = {}
    for name, (run, digest) in sorted(RUNS.items()):
        code = main(["replay", str(run)])
        printed = capsys.readouterr().out
        results[name] = code == 0 and digest in printed
    shipped = ROOT / "conformance" / "example_run"
    code = main(["replay", str(shipped)])
    results["conformance/example_run"] = code == 0
    capsys.readouterr()
    ok = all(results.values()) and len(results) == 6
    report(10, ok, f"{sum(results.values())}/{len(results)} runs replayed to their final "
                   f"digest: {', '.join(f'{k}={v}' for k, v in results.items())}")
