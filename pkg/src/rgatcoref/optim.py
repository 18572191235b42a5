"""Adam, linear warmup/decay schedule, L2 penalty, dropout and batch norm."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import numcore as nc
from .errors import BatchError, ConfigError, NumericalError, UsageError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-3
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float | None = None,
) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Raises NumericalError naming the first tensor whose gradient is not finite;
    in that case nothing is updated.
    """
    lr = state.lr if lr is None else lr
    if not lr >= 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    for name, g in grads.items():
        if name not in params:
            raise UsageError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise UsageError(f"gradient shape {g.shape} does not match parameter {name!r} {params[name].shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NumericalError(f"non-finite gradient in {name!r} ({bad} of {g.size} entries)")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.t
    correction2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


@dataclass(frozen=True)
class WarmupSchedule:
    """Linear ramp from 0 to ``peak_lr`` over ``warmup_steps``, then linear decay to 0."""

    peak_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(f"warmup_steps must lie in [0, {self.total_steps}], got {self.warmup_steps}")
        if not self.peak_lr > 0:
            raise ConfigError(f"peak_lr must be positive, got {self.peak_lr}")

    @classmethod
    def from_fraction(cls, peak_lr: float, total_steps: int, warmup_fraction: float = 0.1) -> "WarmupSchedule":
        warmup = int(round(warmup_fraction * total_steps))
        return cls(peak_lr, min(max(warmup, 1), total_steps), total_steps)


def lr_at(step: int, schedule: WarmupSchedule) -> float:
    if not 1 <= step <= schedule.total_steps:
        raise UsageError(f"step {step} outside [1, {schedule.total_steps}]")
    w, total = schedule.warmup_steps, schedule.total_steps
    if step <= w:
        return schedule.peak_lr * step / w
    return schedule.peak_lr * (total - step) / (total - w)


@dataclass(frozen=True)
class RegularizerSpec:
    lam: float = 1e-4
    tags: tuple[str, ...] = ("rgat.",)

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"L2 coefficient must be >= 0, got {self.lam}")

    def selects(self, name: str) -> bool:
        return any(name.startswith(tag) for tag in self.tags)


def l2_penalty(params: Mapping[str, nc.Node], reg: RegularizerSpec) -> nc.Node:
    """``lam * sum ||W||^2`` over the tensors whose names carry one of ``reg.tags``."""
    terms = [nc.sum_squares(node) for name, node in params.items() if reg.selects(name)]
    if not terms:
        return nc.constant(0.0)
    return nc.scale(nc.stack_sum(terms), reg.lam)


def dropout(x: nc.Node, rate: float, training: bool, rng: np.random.Generator | None = None) -> nc.Node:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.value.dtype) / (1.0 - rate)
    return nc.mul(x, nc.constant(mask))


@dataclass
class BatchNormState:
    """Running statistics of a batch-norm layer over ``features`` rows."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, features: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float64) -> "BatchNormState":
        return cls(np.zeros((features, 1), dtype), np.ones((features, 1), dtype), momentum, eps)


def _bn_train(x: nc.Node, eps: float) -> tuple[nc.Node, np.ndarray, np.ndarray]:
    batch = x.cols
    mu = x.value.mean(axis=1, keepdims=True)
    centered = x.value - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def backward(g):
        return (
            inv_std / batch * (batch * g - g.sum(axis=1, keepdims=True) - xhat * (g * xhat).sum(axis=1, keepdims=True)),
        )

    return nc._make(xhat, (x,), backward, "batch_norm"), mu, var


def batch_norm(
    x: nc.Node,
    gamma: nc.Node,
    beta: nc.Node,
    state: BatchNormState,
    training: bool,
) -> nc.Node:
    """Normalize each feature (row) across the batch (columns), then scale and shift.

    Training mode uses batch statistics and updates the running averages in
    ``state``; eval mode uses the running averages and never mutates.
    """
    if gamma.shape != (x.rows, 1) or beta.shape != (x.rows, 1):
        raise UsageError(f"batch_norm: gamma/beta must be ({x.rows}, 1)")
    if training:
        if x.cols < 2:
            raise BatchError(f"batch norm in training mode needs >= 2 samples, got {x.cols}")
        xhat, mu, var = _bn_train(x, state.eps)
        unbiased = var * x.cols / (x.cols - 1)
        state.running_mean = state.momentum * state.running_mean + (1 - state.momentum) * mu
        state.running_var = state.momentum * state.running_var + (1 - state.momentum) * unbiased
    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = nc.mul(nc.sub(x, nc.constant(state.running_mean)), nc.constant(inv_std))
    return nc.add(nc.mul(xhat, gamma), beta)


def collect_grads(nodes: Mapping[str, nc.Node]) -> dict[str, np.ndarray]:
    return {name: node.grad for name, node in nodes.items() if node.requires_grad}

