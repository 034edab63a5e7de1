"""Continual learners: online SGD, ER, La-ER, C-MAML, Sync and La-MAML.

All six share :class:`Learner`; the variant only changes how one incoming
batch is turned into parameter (and learning-rate) updates.

The meta-gradient is first order: inner-loop gradients are treated as
constants with respect to the starting weights and the learning rates.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .replay import ReplayBuffer
from .streams import Batch
from .tensor import GradientSet, ParameterSet, axpy_params, backward, forward, init_params

VARIANTS = ("sgd", "er", "la_er", "c_maml", "sync", "la_maml")
LEARNABLE_LR = ("la_er", "sync", "la_maml")
META_VARIANTS = ("c_maml", "sync", "la_maml")
REPLAY_VARIANTS = ("er", "la_er", "c_maml", "sync", "la_maml")

# Hyperparameters each variant actually exposes.
VARIANT_AXES = {
    "sgd": ("beta", "glances"),
    "er": ("beta", "glances"),
    "la_er": ("alpha0", "eta", "glances"),
    "c_maml": ("alpha0", "beta", "glances"),
    "sync": ("alpha0", "beta", "eta", "glances"),
    "la_maml": ("alpha0", "eta", "glances"),
}


class NumericalDivergence(ArithmeticError):
    def __init__(self, step: int, detail: str = "non-finite meta-loss"):
        super().__init__(f"{detail} at step {step}")
        self.step = step


@dataclass
class AlgorithmConfig:
    variant: str = "la_maml"
    alpha0: float = 0.25
    beta: float = 0.3
    eta: float = 0.1
    glances: int = 5
    replay_sample: int = 10
    buffer_capacity: int = 200
    # None: one inner step per example; otherwise sub-batches of this size
    inner_batch_size: Optional[int] = None
    meta_loss_at: str = "every_step"
    clip_alpha: bool = True
    # global L2 cap on every gradient before it is applied; None or 0 disables
    grad_clip_norm: Optional[float] = 2.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.meta_loss_at not in ("every_step", "final"):
            raise ValueError("meta_loss_at must be 'every_step' or 'final'")
        if self.glances < 1:
            raise ValueError("glances must be >= 1")
        if self.replay_sample < 0 or self.buffer_capacity < 0:
            raise ValueError("replay_sample and buffer_capacity must be >= 0")
        if self.inner_batch_size is not None and self.inner_batch_size < 1:
            raise ValueError("inner_batch_size must be >= 1")

    def validate_rates(self) -> None:
        """Positive rates; ``eta == 0`` is allowed to freeze the learning rates."""
        if self.alpha0 <= 0 or self.beta <= 0 or self.eta < 0:
            raise ValueError("alpha0 and beta must be > 0 and eta >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _zeros_like(p: ParameterSet) -> ParameterSet:
    return ParameterSet.full_like(p, 0.0)


def _add_(acc: ParameterSet, g: ParameterSet, scale: float = 1.0) -> None:
    for a, b in zip(acc.arrays(), g.arrays()):
        a += scale * b


def _finite(p: ParameterSet) -> bool:
    return all(np.isfinite(a).all() for a in p.arrays())


def clip_norm(g: GradientSet, max_norm: Optional[float]) -> GradientSet:
    if not max_norm:
        return g
    norm = np.sqrt(sum(float(np.sum(a * a)) for a in g.arrays()))
    if norm <= max_norm or not np.isfinite(norm):
        return g
    return g.map(lambda a: a * (max_norm / norm))


def inner_update(params: ParameterSet, lr, batch: Batch, max_norm: Optional[float] = None) -> tuple[ParameterSet, GradientSet]:
    """One SGD step on ``batch``; returns the new weights and the gradient used."""
    if len(batch) == 0:
        raise ValueError("inner_update needs a non-empty batch")
    _, g = backward(params, batch.x, batch.y)
    g = clip_norm(g, max_norm)
    return axpy_params(params, lr, g), g


def build_meta_batch(current: Batch, buffer: ReplayBuffer, k: int) -> Batch:
    """The current batch plus ``k`` replayed examples (none while memory is empty)."""
    x, y, t = buffer.sample(k)
    return Batch.concat(current, x, y, t)


@dataclass
class MetaStepResult:
    params: ParameterSet
    alpha: Optional[ParameterSet]
    meta_loss: float
    meta_grad: GradientSet
    alpha_grad: Optional[GradientSet]


def meta_step(
    params: ParameterSet,
    alpha: Optional[ParameterSet],
    inner_batches: list[Batch],
    meta_batch: Batch,
    config: AlgorithmConfig,
    step: int = 0,
) -> MetaStepResult:
    """Lookahead update of the weights (and learning rates, if learnable).

    The inner loop runs from a copy of ``params`` over ``inner_batches``. The
    meta-loss is the meta-batch loss after every inner step (or only the last,
    with ``meta_loss_at='final'``), averaged over the evaluations. With
    ``theta_j = theta_0 - alpha * sum_{i<=j} g_i`` and the ``g_i`` held
    constant, its gradients are::

        d/d theta_0 = mean_j grad L(theta_j)
        d/d alpha   = -mean_j grad L(theta_j) * sum_{i<=j} g_i
    """
    if not inner_batches:
        raise ValueError("meta_step needs at least one inner batch")
    variant = config.variant
    learnable = variant in LEARNABLE_LR
    inner_lr = alpha if learnable else config.alpha0

    theta = params
    g_sum = _zeros_like(params)
    g_meta = _zeros_like(params)
    g_alpha = _zeros_like(params) if learnable else None
    total, evals = 0.0, 0
    last = len(inner_batches) - 1
    for j, b in enumerate(inner_batches):
        theta, g = inner_update(theta, inner_lr, b, config.grad_clip_norm)
        _add_(g_sum, g)
        if config.meta_loss_at == "every_step" or j == last:
            value, gm = backward(theta, meta_batch.x, meta_batch.y)
            if not np.isfinite(value):
                raise NumericalDivergence(step)
            total += value
            evals += 1
            gm = clip_norm(gm, config.grad_clip_norm)
            _add_(g_meta, gm)
            if learnable:
                _add_(g_alpha, gm.combine(g_sum, np.multiply), -1.0)

    g_meta = g_meta.map(lambda a: a / evals)
    new_alpha = alpha
    if learnable:
        g_alpha = g_alpha.map(lambda a: a / evals)
        new_alpha = axpy_params(alpha, config.eta, g_alpha)

    if variant == "la_maml":
        step_size = new_alpha.map(lambda a: np.maximum(a, 0.0)) if config.clip_alpha else new_alpha
        new_params = axpy_params(params, step_size, g_meta)
    else:
        new_params = axpy_params(params, config.beta, g_meta)
    if not _finite(new_params):
        raise NumericalDivergence(step, "non-finite parameters")
    return MetaStepResult(new_params, new_alpha, total / evals, g_meta, g_alpha)


class Learner:
    """Owns the weights, learnable rates and replay memory of one run."""

    def __init__(self, config: AlgorithmConfig, dims, seed=0):
        config.validate_rates()
        self.config = config
        init_seq, replay_seq = np.random.SeedSequence(seed).spawn(2)
        self.params = init_params(init_seq, dims)
        self.alpha = ParameterSet.full_like(self.params, config.alpha0) if config.variant in LEARNABLE_LR else None
        capacity = config.buffer_capacity if config.variant in REPLAY_VARIANTS else 0
        self.buffer = ReplayBuffer(capacity, replay_seq)
        self.step_counter = 0
        self.gradient_evals = 0
        self._prev_grad: Optional[GradientSet] = None

    def observe_batch(self, task_id: int, batch: Batch) -> None:
        cfg = self.config
        for _ in range(cfg.glances):
            if cfg.variant == "sgd":
                self._sgd_step(batch)
            elif cfg.variant == "er":
                self._sgd_step(build_meta_batch(batch, self.buffer, cfg.replay_sample))
            elif cfg.variant == "la_er":
                self._la_er_step(build_meta_batch(batch, self.buffer, cfg.replay_sample))
            else:
                meta = build_meta_batch(batch, self.buffer, cfg.replay_sample)
                inner = batch.split(cfg.inner_batch_size)
                res = meta_step(self.params, self.alpha, inner, meta, cfg, self.step_counter)
                self.gradient_evals += len(inner) + (len(inner) if cfg.meta_loss_at == "every_step" else 1)
                self.params, self.alpha = res.params, res.alpha
            self.step_counter += 1
        if self.buffer.capacity:
            self.buffer.insert_batch(batch.x, batch.y, batch.task_ids)

    def _gradient(self, batch: Batch) -> GradientSet:
        value, g = backward(self.params, batch.x, batch.y)
        self.gradient_evals += 1
        if not np.isfinite(value):
            raise NumericalDivergence(self.step_counter, "non-finite loss")
        return clip_norm(g, self.config.grad_clip_norm)

    def _sgd_step(self, batch: Batch) -> None:
        self.params = axpy_params(self.params, self.config.beta, self._gradient(batch))
        if not _finite(self.params):
            raise NumericalDivergence(self.step_counter, "non-finite parameters")

    def _la_er_step(self, batch: Batch) -> None:
        # The previous ER step is the "inner" step whose outcome the current
        # gradient judges: d L(theta_t) / d alpha = -g_t * g_{t-1}.
        g = self._gradient(batch)
        if self._prev_grad is not None:
            self.alpha = axpy_params(self.alpha, -self.config.eta, g.combine(self._prev_grad, np.multiply))
        step = self.alpha.map(lambda a: np.maximum(a, 0.0)) if self.config.clip_alpha else self.alpha
        self.params = axpy_params(self.params, step, g)
        self._prev_grad = g
        if not _finite(self.params):
            raise NumericalDivergence(self.step_counter, "non-finite parameters")

    def logits(self, x) -> np.ndarray:
        return forward(self.params, x)

    def predict(self, x) -> np.ndarray:
        """Arg-max class per row; ties resolve to the lowest index."""
        return np.argmax(self.logits(x), axis=1)

    def alpha_summary(self) -> Optional[dict]:
        if self.alpha is None:
            return None
        flat = self.alpha.flat()
        return {"min": float(flat.min()), "mean": float(flat.mean()), "max": float(flat.max())}
