"""End-to-end acceptance checks, numbered 1 to 12.

Each test prints a single ``[n] name: PASS|FAIL detail`` line straight to the
terminal (even under output capture) and then asserts.
"""
import json
import os
import statistics
import time
import warnings

import numpy as np
import pytest

from oracles import central_differences, gaussian_matrix, naive_partition_class
from rcdsgd.benchmarks import TrainingBenchmark, run_training_benchmark, spread_benchmark
from rcdsgd.cli import main, random_gaussian_similarity
from rcdsgd.dataset import Dataset, SyntheticSpec, generate_gaussian_mixture
from rcdsgd.hetsim import ClusterSpec, add_busy, advance_to_barrier, iteration_time, new_ledger
from rcdsgd.partition import (compute_constraints, partition_class, random_partition,
                              ratio_constrained_partition, sorted_partition)
from rcdsgd.similarity import KernelSpec
from rcdsgd.submodular import SubmodularObjective, verify_diminishing_returns
from rcdsgd.topology import TopologySpec, build_mixing_matrix, spectral_gap
from rcdsgd.training import SoftmaxModel, TrainConfig, batch_sizes, run_centralized_sgd, run_rcd_sgd

SEEDS = range(10)


def report(capsys, n, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{n}] {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def test_submodularity_suite(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    bad = 0
    for trial in range(200):
        sim = random_gaussian_similarity(int(rng.integers(6, 9)), rng)
        fl = verify_diminishing_returns(SubmodularObjective("facility_location", sim))
        gc = verify_diminishing_returns(SubmodularObjective("graph_cut", sim))
        bad += (not fl.submodular) + (not fl.monotone) + (not gc.submodular)
    dt = time.perf_counter() - t0
    report(capsys, 1, "submodularity suite", bad == 0 and dt < 30,
           f"violations={bad} over 200 matrices, {dt:.1f}s (limit 30s)")


def test_greedy_trace_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    mismatches, runs = 0, 0
    for i in range(20):
        m = int(rng.integers(20, 201))
        N = (2, 4)[i % 2]
        ratios = tuple(int(x) for x in rng.integers(1, 5, N))
        caps = compute_constraints([m], ratios).capacities[0]
        S = gaussian_matrix(rng.standard_normal((m, 3)), 1.0 + rng.random())
        for kind in ("facility_location", "graph_cut"):
            _, trace = partition_class(S, caps, kind)
            _, naive = naive_partition_class(S, caps, kind)
            mismatches += [(j, u) for j, u, _ in trace] != naive
            runs += 1
    dt = time.perf_counter() - t0
    report(capsys, 2, "lazy greedy trace equals naive greedy", mismatches == 0 and dt < 60,
           f"mismatches={mismatches}/{runs}, {dt:.1f}s (limit 60s)")


def test_constraint_exactness(capsys):
    rng = np.random.default_rng(11)
    failures = 0
    for _ in range(50):
        L = int(rng.integers(1, 6))
        sizes = rng.integers(1, 60, L)
        labels = np.repeat(np.arange(L), sizes)
        n = labels.size
        ds = Dataset(rng.permutation(5 * n)[:n], labels, rng.standard_normal((n, 3)), L)
        ratios = tuple(float(x) for x in rng.uniform(0.5, 4, int(rng.integers(1, 6))))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            table = compute_constraints(ds.class_sizes(), ratios)
            res = ratio_constrained_partition(ds, ratios, KernelSpec(sigma=1.0))
        owner = res.block_of(ds.ids)
        realized = np.array([[np.sum((ds.labels == l) & (owner == j)) for j in range(len(ratios))]
                             for l in range(L)])
        blocks = res.blocks(ds)
        union = np.sort(np.concatenate(blocks))
        ok = (np.array_equal(realized, table.capacities) and np.array_equal(union, np.arange(n))
              and sum(b.size for b in blocks) == n)
        failures += not ok
    report(capsys, 3, "constraint exactness", failures == 0, f"failures={failures}/50")


def test_complexity_counter(capsys):
    t0 = time.perf_counter()
    ds = generate_gaussian_mixture(SyntheticSpec(10, 200, 8, 1.0, 0))
    res = ratio_constrained_partition(ds, (1, 1, 1, 1))
    whole = ds.n * (ds.n + 1) // 2
    dt = time.perf_counter() - t0
    ratio = res.kernel_evals / whole
    report(capsys, 4, "kernel evaluations per class", res.kernel_evals <= 0.12 * whole and dt < 60,
           f"kernel_evals={res.kernel_evals} whole={whole} ratio={ratio:.4f} (limit 0.12), {dt:.1f}s")


def test_distribution_quality(capsys):
    runs = [spread_benchmark(s) for s in SEEDS]
    beats_sorted = sum(r["submodular"] <= r["sorted"] for r in runs)
    rand_median = statistics.median(r["random"] for r in runs)
    within = sum(r["submodular"] <= 1.25 * rand_median for r in runs)
    worst = max(r["submodular"] for r in runs) / rand_median
    ok = beats_sorted >= 9 and within == len(runs)
    report(capsys, 5, "distribution quality", ok,
           f"<= sorted in {beats_sorted}/10 seeds; max submodular / random median = {worst:.3f} (limit 1.25)")


def test_gradient_check(capsys):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        d, L, B = int(rng.integers(1, 6)), int(rng.integers(2, 6)), int(rng.integers(1, 12))
        model = SoftmaxModel(d, L)
        X, y = rng.standard_normal((B, d)), rng.integers(0, L, B)
        x = rng.standard_normal(model.size)
        _, g = model.loss_grad(x, X, y)
        num = central_differences(lambda v: model.loss(v, X, y), x, 1e-6)
        err = np.max(np.abs(g - num) / np.maximum(1e-8, np.abs(g) + np.abs(num)))
        worst = max(worst, float(err))
    report(capsys, 6, "softmax gradient check", worst <= 1e-4, f"max relative error={worst:.2e} (limit 1e-4)")


def test_centralized_equivalence(capsys):
    ds = generate_gaussian_mixture(SyntheticSpec(3, 50, 5, 1.0, 1))
    N = 4
    cfg = TrainConfig(lr=0.1, batch_ref=16, comm_freq=1, iters=100, topology=TopologySpec.complete(N),
                      ratios=(1,) * N, seed=3, shared_batches=True)
    shards = [np.arange(ds.n)] * N
    dec = run_rcd_sgd(ds, shards, cfg, record_params=True)
    cen = run_centralized_sgd(ds, cfg, shards, record_params=True)
    gap = max(float(np.max(np.abs(d - c))) for d, c in zip(dec.params_history, cen.params_history))
    report(capsys, 7, "centralized equivalence", gap <= 1e-9, f"max |worker - centralized|={gap:.2e} over 100 iterations")


def test_mixing_matrix_contract(capsys):
    problems = []
    for n in (2, 4, 8):
        for spec in (TopologySpec.ring(n), TopologySpec.complete(n)):
            W = build_mixing_matrix(spec).W
            A = spec.adjacency() | np.eye(n, dtype=bool)
            gap = spectral_gap(W)
            if not np.array_equal(W, W.T):
                problems.append(f"{spec.kind}{n} asymmetric")
            if np.max(np.abs(W.sum(axis=0) - 1)) > 1e-12 or np.max(np.abs(W.sum(axis=1) - 1)) > 1e-12:
                problems.append(f"{spec.kind}{n} not doubly stochastic")
            if np.any(W[~A] != 0) or np.any(W[A & ~np.eye(n, dtype=bool)] <= 0):
                problems.append(f"{spec.kind}{n} sparsity")
            if not gap > 0:
                problems.append(f"{spec.kind}{n} gap {gap}")
            if spec.kind == "complete" and gap != 1.0:
                problems.append(f"complete{n} gap {gap!r}")
    report(capsys, 8, "mixing matrix contract", not problems, "; ".join(problems) or "ring/complete N in {2,4,8}")


def test_straggler_elimination(capsys):
    ratios = (1, 2, 2, 4)
    cluster = ClusterSpec(ratios)
    prop = batch_sizes(ratios, 32)
    led = new_ledger(4)
    per_barrier = []
    for _ in range(20):
        before = led.idle.copy()
        led = advance_to_barrier(led, [iteration_time(i, prop[i], cluster) for i in range(4)])
        per_barrier.append(float(np.max(led.idle - before)))
    eq = new_ledger(4)
    for _ in range(20):
        eq = advance_to_barrier(eq, [iteration_time(i, 32, cluster) for i in range(4)])
    fastest = int(np.argmax(ratios))
    frac = eq.idle[fastest] / (eq.wall - eq.comm_time)  # share of compute segments spent waiting
    closed_form = 1 - ratios[0] / ratios[fastest]
    ok = max(per_barrier) == 0.0 and frac >= 0.7 and frac == closed_form
    report(capsys, 9, "straggler elimination", ok,
           f"proportional idle per barrier={max(per_barrier)}; equal-batch fastest idle fraction={frac} "
           f"(closed form {closed_form})")


@pytest.fixture(scope="module")
def training_runs():
    t0 = time.perf_counter()
    out = {s: run_training_benchmark(s, TrainingBenchmark()) for s in SEEDS}
    return out, time.perf_counter() - t0


def test_communication_saving(capsys, training_runs):
    runs, dt = training_runs
    good, ratios = 0, []
    for s in SEEDS:
        _, res = runs[s]
        (_, w1), (_, w2) = res[("submodular", 1)], res[("submodular", 2)]
        if w1 is not None and w2 is not None:
            ratios.append(w2 / w1)
            good += w2 <= 0.8 * w1
    worst = max(ratios) if ratios else float("nan")
    report(capsys, 10, "communication saving at F=2", good >= 8 and dt < 120,
           f"{good}/10 seeds with wall(F=2) <= 0.8 wall(F=1); worst ratio={worst:.3f}; {dt:.1f}s (limit 120s)")


def test_convergence_ordering(capsys, training_runs):
    runs, _ = training_runs
    good = 0
    rows = []
    for s in SEEDS:
        _, res = runs[s]
        it = {m: res[(m, 2)][0] for m in ("submodular", "random", "sorted")}
        big = 10 ** 9
        sub, rnd, srt = (big if it[m] is None else it[m] for m in ("submodular", "random", "sorted"))
        good += it["submodular"] is not None and sub <= rnd <= srt
        rows.append(f"{it['submodular']}/{it['random']}/{it['sorted']}")
    report(capsys, 11, "convergence ordering submodular <= random <= sorted", good >= 8,
           f"{good}/10 seeds; iterations sub/rand/sorted per seed: {' '.join(rows)}")


def _pipeline(root):
    os.makedirs(root)
    data, part, metrics = (os.path.join(root, f) for f in ("data.csv", "part.csv", "metrics.csv"))
    cfg = os.path.join(root, "cfg.json")
    codes = [main(["gen", "--classes", "3", "--per-class", "40", "--dim", "4", "--sep", "1.0", "--seed", "8",
                   "--out", data]),
             main(["partition", "--data", data, "--ratios", "1,2,2,4", "--objective", "facility", "--out", part])]
    with open(cfg, "w") as fh:
        json.dump({"model": "softmax", "lr": 0.1, "lr_schedule": [], "batch_ref": 8, "comm_freq": 2,
                   "iters": 30, "topology": "ring", "ratios": [1, 2, 2, 4], "seed": 8, "eval_period": 1,
                   "comm_cost": 1.0, "partition_file": "part.csv", "data_file": "data.csv", "test_file": None}, fh)
    codes.append(main(["train", "--config", cfg, "--out", metrics]))
    blobs = {}
    for name in sorted(os.listdir(root)):
        with open(os.path.join(root, name), "rb") as fh:
            blobs[name] = fh.read()
    return codes, blobs


def test_end_to_end_determinism(capsys, tmp_path):
    codes_a, a = _pipeline(str(tmp_path / "a"))
    codes_b, b = _pipeline(str(tmp_path / "b"))
    names = ["part.csv", "metrics.csv"]
    same = all(a[n] == b[n] for n in names)
    ok = codes_a == codes_b == [0, 0, 0] and same and all(n in a for n in names)
    report(capsys, 12, "end-to-end determinism", ok,
           f"exit codes {codes_a} / {codes_b}; assignment and metrics byte-identical: {same}")
