"""Accuracy-matrix bookkeeping, Retained Accuracy and BTI.

Accuracies are stored as fractions; the headline metrics are reported in
percent. ``acc[i, j]`` is the test accuracy on task ``j`` right after
training stage ``i``; unmeasured cells are NaN.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional

import numpy as np


class MetricError(ValueError):
    pass


class EvaluationError(ValueError):
    pass


class AggregationError(ValueError):
    pass


class AccuracyMatrix:
    def __init__(self, n_tasks: int):
        self.acc = np.full((n_tasks, n_tasks), np.nan)

    @classmethod
    def from_array(cls, values) -> "AccuracyMatrix":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise MetricError(f"accuracy matrix must be square, got {values.shape}")
        m = cls(values.shape[0])
        m.acc[:] = values
        return m

    @property
    def n_tasks(self) -> int:
        return self.acc.shape[0]

    def set_row(self, stage: int, accuracies) -> None:
        accuracies = np.asarray(accuracies, dtype=np.float64)
        if np.any((accuracies < 0) | (accuracies > 1)):
            raise MetricError("accuracies must lie in [0, 1]")
        self.acc[stage, : len(accuracies)] = accuracies

    def tolist(self) -> list[list[Optional[float]]]:
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.acc]

    @classmethod
    def fromlist(cls, rows) -> "AccuracyMatrix":
        return cls.from_array([[np.nan if v is None else v for v in row] for row in rows])


def _as_array(m) -> np.ndarray:
    return m.acc if isinstance(m, AccuracyMatrix) else np.asarray(m, dtype=np.float64)


def _percent_mean(plus, minus=()) -> float:
    # Each entry is scaled to percent once; the mean is then taken exactly and
    # rounded a single time, so results do not depend on summation order.
    total = sum(Fraction(100.0 * float(a)) for a in plus) - sum(Fraction(100.0 * float(a)) for a in minus)
    return float(total / len(plus))


def retained_accuracy(m) -> float:
    """Mean final-row accuracy, in percent."""
    acc = _as_array(m)
    final = acc[-1]
    if np.isnan(final).any():
        raise MetricError("final row of the accuracy matrix is not fully populated")
    return _percent_mean(final)


def bti(m) -> float:
    """Mean of ``acc[T-1, j] - acc[j, j]`` over all ``T`` tasks, in points.

    The last task contributes a zero term and is still counted.
    """
    acc = _as_array(m)
    final, diag = acc[-1], np.diag(acc)
    if np.isnan(final).any() or np.isnan(diag).any():
        raise MetricError("diagonal and final row must be populated")
    return _percent_mean(final, diag)


def accuracy(predict, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise EvaluationError("empty test set")
    return float(np.mean(np.asarray(predict(x)) == np.asarray(y)))


def evaluate_row(learner, stream) -> list[float]:
    """Test accuracy of ``learner`` on every task of ``stream``."""
    return [accuracy(learner.predict, t.test_x, t.test_y) for t in stream.tasks]


@dataclass
class RunRecord:
    config: dict
    seed: int
    accuracy: list
    diverged: bool = False
    divergence: Optional[dict] = None
    alpha_stats: list = field(default_factory=list)
    stream_notes: list = field(default_factory=list)
    gradient_evals: int = 0
    timing: dict = field(default_factory=dict)

    @property
    def matrix(self) -> AccuracyMatrix:
        return AccuracyMatrix.fromlist(self.accuracy)

    @property
    def ra(self) -> Optional[float]:
        try:
            return retained_accuracy(self.matrix)
        except MetricError:
            return None

    @property
    def bti(self) -> Optional[float]:
        try:
            return bti(self.matrix)
        except MetricError:
            return None

    def to_dict(self, timing: bool = True) -> dict[str, Any]:
        out = {
            "config": self.config,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "diverged": self.diverged,
            "divergence": self.divergence,
            "alpha_stats": self.alpha_stats,
            "stream_notes": self.stream_notes,
            "gradient_evals": self.gradient_evals,
            "retained_accuracy": self.ra,
            "bti": self.bti,
        }
        if timing:
            out["timing"] = self.timing
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            config=d["config"],
            seed=d["seed"],
            accuracy=d["accuracy"],
            diverged=d.get("diverged", False),
            divergence=d.get("divergence"),
            alpha_stats=d.get("alpha_stats", []),
            stream_notes=d.get("stream_notes", []),
            gradient_evals=d.get("gradient_evals", 0),
            timing=d.get("timing", {}),
        )


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    if len(values) == 1:
        return float(values[0]), 0.0
    return float(statistics.fmean(values)), float(statistics.stdev(values))


def aggregate(records: list[RunRecord], ignore: tuple[str, ...] = ("seed",)) -> dict:
    """Mean and sample std of RA, BTI and runtime over clean runs.

    Divergent runs are left out of the means and counted separately.
    """
    if not records:
        raise AggregationError("nothing to aggregate")

    def key(r):
        return {k: v for k, v in r.config.items() if k not in ignore}

    ref = key(records[0])
    for r in records[1:]:
        if key(r) != ref:
            raise AggregationError("records differ in more than the seed")
    clean = [r for r in records if not r.diverged]
    ra_m, ra_s = _mean_std([r.ra for r in clean])
    bti_m, bti_s = _mean_std([r.bti for r in clean])
    t_m, t_s = _mean_std([r.timing.get("total_seconds", float("nan")) for r in clean])
    return {
        "n_runs": len(records),
        "n_clean": len(clean),
        "n_diverged": len(records) - len(clean),
        "ra_mean": ra_m,
        "ra_std": ra_s,
        "bti_mean": bti_m,
        "bti_std": bti_s,
        "runtime_mean": t_m,
        "runtime_std": t_s,
    }
