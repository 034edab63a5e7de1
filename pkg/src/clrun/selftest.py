"""Built-in checks run by ``clrun selftest``.

Each check returns ``(name, passed, detail)``; the CLI prints one line per
check and exits non-zero if any failed.
"""

from __future__ import annotations

import time
from decimal import Decimal, localcontext
from typing import Callable

import numpy as np

from . import tensor
from .learners import AlgorithmConfig, meta_step
from .metrics import bti, retained_accuracy
from .replay import simulate_inclusion
from .streams import Batch
from .tensor import ParameterSet, backward, finite_diff_grad, relative_error

Check = tuple[str, bool, str]


def _random_case(rng, sizes=None, kink_margin=1e-3):
    """Random two-layer network (at most 784-32-10, batch at most 8) whose
    hidden pre-activations all stay clear of the ReLU kink."""
    while True:
        if sizes is None:
            n_in, hidden = int(rng.integers(1, 785)), int(rng.integers(1, 33))
            classes, batch = int(rng.integers(2, 11)), int(rng.integers(1, 9))
        else:
            n_in, hidden, classes, batch = sizes
        params = tensor.init_params(int(rng.integers(2**31)), [n_in, hidden, classes])
        params.biases[0] = rng.normal(0, 0.1, hidden)
        params.biases[1] = rng.normal(0, 0.1, classes)
        x = rng.random((batch, n_in))
        y = rng.integers(0, classes, batch)
        if np.min(np.abs(x @ params.weights[0].T + params.biases[0])) > kink_margin:
            return params, x, y


def gradient_check(cases: int = 100, seed: int = 0, tol: float = 1e-5) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for i in range(cases):
        # the first case is always the largest allowed one
        params, x, y = _random_case(rng, (784, 32, 10, 8) if i == 0 else None)
        _, g = backward(params, x, y)
        worst = max(worst, relative_error(g, finite_diff_grad(params, x, y)))
    elapsed = time.perf_counter() - t0
    return ("gradient exactness", worst < tol,
            f"{cases} cases, max rel err {worst:.2e} (< {tol:g}), {elapsed:.1f}s")


def alpha_gradient_check(seed: int = 0, tol: float = 1e-4, eps: float = 1e-6) -> Check:
    """First-order learning-rate gradient against central differences of the
    full inner-step + meta-loss computation (one inner step)."""
    rng = np.random.default_rng(seed)
    dims = [4, 5, 3]  # 43 parameters
    params = tensor.init_params(seed, dims)
    inner = Batch(rng.random((3, 4)), rng.integers(0, 3, 3), np.zeros(3, dtype=int))
    meta = Batch(rng.random((6, 4)), rng.integers(0, 3, 6), np.zeros(6, dtype=int))
    alpha = ParameterSet.from_flat(dims, rng.uniform(0.05, 0.3, params.total_count))
    cfg = AlgorithmConfig(variant="la_maml", eta=1.0, inner_batch_size=3, grad_clip_norm=None)
    analytic = meta_step(params, alpha, [inner], meta, cfg).alpha_grad.flat()

    def meta_loss(a_flat):
        a = ParameterSet.from_flat(dims, a_flat)
        _, g = backward(params, inner.x, inner.y)
        return tensor.loss(tensor.axpy_params(params, a, g), meta.x, meta.y)

    a0 = alpha.flat()
    numeric = np.empty_like(a0)
    for i in range(a0.size):
        up, down = a0.copy(), a0.copy()
        up[i] += eps
        down[i] -= eps
        numeric[i] = (meta_loss(up) - meta_loss(down)) / (2 * eps)
    err = relative_error(analytic, numeric)
    return ("alpha-gradient oracle", err < tol, f"{a0.size} rates, rel err {err:.2e} (< {tol:g})")


def brute_ra(acc) -> float:
    """RA recomputed entry by entry in 800-digit decimal arithmetic (exact for doubles)."""
    with localcontext() as ctx:
        ctx.prec = 800
        total = Decimal(0)
        for v in acc[-1]:
            total += Decimal(100.0 * v)
        return float(total / len(acc[-1]))


def brute_bti(acc) -> float:
    with localcontext() as ctx:
        ctx.prec = 800
        total = Decimal(0)
        last = len(acc) - 1
        for j in range(len(acc)):
            total += Decimal(100.0 * acc[last][j]) - Decimal(100.0 * acc[j][j])
        return float(total / len(acc))


def metric_check(n: int = 1000, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(n):
        t = int(rng.integers(1, 21))
        acc = np.tril(rng.integers(0, 501, (t, t)) / 500.0)
        rows = acc.tolist()
        mismatches += (retained_accuracy(acc) != brute_ra(rows)) + (bti(acc) != brute_bti(rows))
    hand_ra = retained_accuracy([[0.9, np.nan], [0.6, 0.8]])
    hand_bti = bti([[0.9, np.nan], [0.6, 0.8]])
    ok = mismatches == 0 and hand_ra == 70.0 and hand_bti == -15.0
    return ("metric oracles", ok,
            f"{n} random matrices, {mismatches} inexact; RA {hand_ra!r}, BTI {hand_bti!r}")


def reservoir_check(trials: int = 100_000, seed: int = 0) -> Check:
    details, ok = [], True
    for m, n in ((10, 100), (50, 1000)):
        freq = simulate_inclusion(m, n, trials, seed)
        p = m / n
        sigma = np.sqrt(p * (1 - p) / trials)
        for item in (0, n - 1):
            z = abs(freq[item] - p) / sigma
            ok &= z < 3
            details.append(f"({m},{n}) item {item + 1}: {freq[item]:.4f} ({z:.1f} se)")
    return ("reservoir inclusion", bool(ok), "; ".join(details))


CHECKS: dict[str, Callable[[], Check]] = {
    "gradients": gradient_check,
    "alpha": alpha_gradient_check,
    "metrics": metric_check,
    "reservoir": reservoir_check,
}


def run_all(names=None) -> list[Check]:
    return [CHECKS[name]() for name in (names or CHECKS)]
