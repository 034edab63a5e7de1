"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (lines are collected in the
terminal summary) or directly with ``python tests/test_acceptance.py``.
Criteria 7 and 8 need the MNIST IDX files (``data/mnist-5k`` or
``$CLRUN_DATA_DIR``) and are skipped without them.
"""

import json
import statistics
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))
import conftest  # noqa: E402

from clrun.harness import ExperimentConfig, run, sweep  # noqa: E402
from clrun.learners import AlgorithmConfig, Learner  # noqa: E402
from clrun.metrics import bti, retained_accuracy  # noqa: E402
from clrun.selftest import alpha_gradient_check, metric_check, reservoir_check  # noqa: E402
from clrun.streams import StreamSchedule, iterate, make_synthetic  # noqa: E402

# tolerances and margins
GRAD_TOL, GRAD_SECONDS = 1e-5, 60.0
ALPHA_TOL, ALPHA_MAX_PARAMS = 1e-4, 50
RESERVOIR_SECONDS = 120.0
FORGET_RA_MARGIN, FORGET_SECONDS = 10.0, 300.0
MNIST_SGD_MARGIN, MNIST_ER_MARGIN, MNIST_SECONDS = 8.0, 2.0, 1800.0
BATCH_TIME_RATIO = 0.20
ETA_GRID = [0.001, 0.003, 0.01, 0.03, 0.1, 0.3]
SEEDS = [0, 1, 2]


def verdict(n, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2} {title}: {detail}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


def synthetic_config(variant, **kw):
    return ExperimentConfig(benchmark="synthetic", tasks=5, per_task=200, dim=20, pass_mode="single",
                            variant=variant, seeds=SEEDS, **kw)


def rotations_config(variant, data_dir, **kw):
    kw.setdefault("tasks", 5)
    kw.setdefault("per_task", 1000)
    return ExperimentConfig(benchmark="rotations", pass_mode="single", glances=5, alpha0=0.25, eta=0.1,
                            buffer_capacity=200, variant=variant, data_dir=str(data_dir), seeds=SEEDS, **kw)


@pytest.fixture(scope="module")
def forgetting_runs():
    t0 = time.perf_counter()
    records = {v: [run(synthetic_config(v), s) for s in SEEDS] for v in ("sgd", "la_maml")}
    return records, time.perf_counter() - t0


def test_criterion_01_gradient_selftest():
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "clrun", "selftest", "--only", "gradients"],
                          capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    line = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr
    ok = proc.returncode == 0 and "[PASS]" in line and elapsed < GRAD_SECONDS
    verdict(1, "gradient exactness", ok, f"{line.split(': ', 1)[-1]}; wall {elapsed:.1f}s (< {GRAD_SECONDS:g}s)")


def test_criterion_02_alpha_gradient():
    _, ok, detail = alpha_gradient_check(tol=ALPHA_TOL)
    n_params = int(detail.split()[0])
    verdict(2, "alpha-gradient oracle", ok and n_params <= ALPHA_MAX_PARAMS, detail)


def test_criterion_03_metric_oracles():
    _, ok, detail = metric_check(n=1000)
    hand = [[0.9, np.nan], [0.6, 0.8]]
    bitwise = retained_accuracy(hand).hex() == (70.0).hex() and bti(hand).hex() == (-15.0).hex()
    verdict(3, "metric oracles", ok and bitwise, detail)


def test_criterion_04_reservoir():
    t0 = time.perf_counter()
    _, ok, detail = reservoir_check(trials=100_000)
    elapsed = time.perf_counter() - t0
    verdict(4, "reservoir statistics", ok and elapsed < RESERVOIR_SECONDS, f"{detail}; {elapsed:.1f}s")


def _trajectory(config, n_batches=10, seed=0):
    stream = make_synthetic(5, 200, seed=0)
    learner = Learner(config, [20, 100, 100, 10], seed)
    out = []
    for i, (tid, batch) in enumerate(iterate(stream, StreamSchedule(batch_size=10), seed)):
        if i == n_batches:
            break
        learner.observe_batch(tid, batch)
        out.append(learner.params.flat().tobytes())
    return out


def test_criterion_05_reductions():
    a0 = 0.25
    sync0 = _trajectory(AlgorithmConfig(variant="sync", alpha0=a0, beta=0.3, eta=0.0))
    cmaml = _trajectory(AlgorithmConfig(variant="c_maml", alpha0=a0, beta=0.3))
    lamaml0 = _trajectory(AlgorithmConfig(variant="la_maml", alpha0=a0, eta=0.0, clip_alpha=False))
    sync_async = _trajectory(AlgorithmConfig(variant="sync", alpha0=a0, beta=a0, eta=0.0))
    first = sum(x == y for x, y in zip(sync0, cmaml))
    second = sum(x == y for x, y in zip(lamaml0, sync_async))
    ok = len(sync0) == len(lamaml0) == 10 and first == 10 and second == 10
    verdict(5, "reduction equivalences", ok,
            f"sync(eta=0)==c_maml on {first}/10 batches; la_maml(eta=0, no clip)==sync(beta=alpha0) on {second}/10")


def test_criterion_06_synthetic_forgetting(forgetting_runs):
    records, elapsed = forgetting_runs
    ra = {v: statistics.median(r.ra for r in rs) for v, rs in records.items()}
    bt = {v: statistics.median(r.bti for r in rs) for v, rs in records.items()}
    clean = not any(r.diverged for rs in records.values() for r in rs)
    ok = clean and ra["la_maml"] >= ra["sgd"] + FORGET_RA_MARGIN and bt["la_maml"] > bt["sgd"] and elapsed < FORGET_SECONDS
    verdict(6, "synthetic forgetting", ok,
            f"median RA la_maml {ra['la_maml']:.1f} vs sgd {ra['sgd']:.1f} (margin >= {FORGET_RA_MARGIN:g}); "
            f"median BTI {bt['la_maml']:.1f} vs {bt['sgd']:.1f}; {elapsed:.0f}s (< {FORGET_SECONDS:g}s)")


@pytest.mark.mnist
@pytest.mark.slow
def test_criterion_07_mnist_rotations(mnist_dir):
    t0 = time.perf_counter()
    ra, notes = {}, set()
    for variant in ("la_maml", "sgd", "er"):
        recs = [run(rotations_config(variant, mnist_dir), s) for s in SEEDS]
        assert not any(r.diverged for r in recs), f"{variant} diverged"
        ra[variant] = statistics.median(r.ra for r in recs)
        notes.update(n for r in recs for n in r.stream_notes)
    elapsed = time.perf_counter() - t0
    ok = (ra["la_maml"] >= ra["sgd"] + MNIST_SGD_MARGIN and ra["la_maml"] >= ra["er"] + MNIST_ER_MARGIN
          and elapsed < MNIST_SECONDS)
    verdict(7, "MNIST rotations (5x1000)", ok,
            f"median RA la_maml {ra['la_maml']:.1f}, sgd {ra['sgd']:.1f} (need +{MNIST_SGD_MARGIN:g}), "
            f"er {ra['er']:.1f} (need +{MNIST_ER_MARGIN:g}); {elapsed:.0f}s; data {mnist_dir.name}"
            + (f"; {sorted(notes)[0]}" if notes else ""))


@pytest.mark.mnist
@pytest.mark.slow
def test_criterion_08_batch_time_scaling(mnist_dir):
    # Full 20 x 1000 rotations shape: 100 batches per task keep the per-task
    # median robust to short bursts of machine load.
    r = run(rotations_config("la_maml", mnist_dir, tasks=20, per_task=1000, eval_test_size=100), 0)
    per_batch = r.timing["batch_seconds_median"]
    t2, t20 = per_batch[1], per_batch[19]
    change = abs(t20 - t2) / t2
    verdict(8, "per-batch time, task 2 vs 20", not r.diverged and change < BATCH_TIME_RATIO,
            f"median per-batch {t2 * 1e3:.1f} ms vs {t20 * 1e3:.1f} ms, change {change:.1%} (< {BATCH_TIME_RATIO:.0%})")


def test_criterion_09_eta_sweep(tmp_path):
    res = sweep(synthetic_config("la_maml"), "eta", ETA_GRID, seeds=SEEDS, output_dir=tmp_path)
    complete = [s["axis_value"] for s in res.summary] == ETA_GRID and len(res.rows) == len(ETA_GRID) * len(SEEDS)
    diverged = sum(r["diverged"] for r in res.rows)
    means = ", ".join(f"{s['axis_value']:g}:{s['RA_mean']:.1f}" for s in res.summary)
    verdict(9, "eta sweep", complete and diverged == 0 and res.series_path.exists(),
            f"{len(res.summary)} points, {diverged} divergent runs; RA {means}; spread {res.ra_spread:.2f}")


def test_criterion_10_determinism(forgetting_runs):
    records, _ = forgetting_runs
    first = records["la_maml"][0]
    again = run(synthetic_config("la_maml"), first.seed)
    a = json.dumps(first.to_dict(timing=False), sort_keys=True).encode()
    b = json.dumps(again.to_dict(timing=False), sort_keys=True).encode()
    verdict(10, "determinism", a == b, f"RunRecord bytes equal ({len(a)} bytes) for la_maml seed {first.seed}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
