"""Noise-matching training: Adam plus the per-window (k, eps) regression step."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import ParamStore
from .data import TrajectoryWindow, shuffled_batches, stack_windows
from .diffusion import forward_sample
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

STREAMS = ("init", "shuffle", "k", "eps", "z", "data")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators fanned out from one master seed."""
    return {name: np.random.default_rng([int(seed), i]) for i, name in enumerate(STREAMS)}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    steps: int = 1000
    seed: int = 0
    grad_clip: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.steps < 0 or self.checkpoint_every < 0:
            raise ValueError("batch_size must be >= 1; steps and checkpoint_every >= 0")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0 (0 disables clipping)")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1) or self.adam_eps <= 0:
            raise ValueError("Adam moments must be in [0, 1) and eps positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamStore, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls({n: np.zeros_like(p.data) for n, p in params.items()},
                   {n: np.zeros_like(p.data) for n, p in params.items()},
                   0, beta1, beta2, eps)


def adam_update(params: ParamStore, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam step from the gradients stored on ``params``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_gradients(params: ParamStore, max_norm: float) -> float:
    """Rescale gradients to global L2 norm ``max_norm``; returns the norm before clipping."""
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad))
                              for _, p in params.items() if p.grad is not None)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for _, p in params.items():
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


def train_step(net, batch, schedule: NoiseSchedule, optimizer: AdamState, rng,
               lr: float = 1e-3, eps_rng: np.random.Generator | None = None,
               grad_clip: float = 0.0) -> float:
    """One Adam update on the simplified noise-matching loss of ``batch``.

    ``net`` needs ``params`` and ``predict_noise(yk, k, x)``. Each window gets
    its own ``k ~ U{1..K}`` (from ``rng``) and ``eps ~ N(0, I)`` (from
    ``eps_rng``, defaulting to ``rng``). ``batch`` is a list of windows or an
    ``(X, Y)`` pair of arrays.
    """
    if isinstance(batch, tuple):
        X, Y = (np.asarray(a, dtype=np.float64) for a in batch)
    else:
        if not batch:
            raise ValueError("empty batch")
        X, Y, _ = stack_windows(batch)
    if len(X) == 0:
        raise ValueError("empty batch")
    eps_rng = rng if eps_rng is None else eps_rng
    B = len(X)
    k = rng.integers(1, schedule.K + 1, size=B)
    eps = eps_rng.standard_normal(Y.shape)
    yk = forward_sample(schedule, Y, k, eps)

    net.params.zero_grad()
    loss = ag.mse(net.predict_noise(yk, k, X), eps)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at Adam step {optimizer.t + 1}")
    if loss.requires_grad:
        loss.backward()
    if grad_clip > 0:
        clip_gradients(net.params, grad_clip)
    adam_update(net.params, optimizer, lr)
    return value


@dataclass
class TrainResult:
    params: ParamStore
    losses: list[float] = field(default_factory=list)
    log_rows: list[tuple[int, float, float]] = field(default_factory=list)
    optimizer: AdamState | None = None


def train_loop(net, config: TrainConfig, dataset, schedule: NoiseSchedule,
               checkpoint_sink: Callable[[int, ParamStore], None] | None = None,
               streams: dict[str, np.random.Generator] | None = None) -> TrainResult:
    """Run ``config.steps`` train steps over shuffled mini-batches of ``dataset``.

    ``checkpoint_sink(step, params)`` is called every ``checkpoint_every``
    steps and once at the end. Log rows are ``(step, loss, wall_ms)``.
    """
    streams = streams if streams is not None else rng_streams(config.seed)
    if isinstance(dataset, tuple):
        X, Y = dataset
    else:
        X, Y, _ = stack_windows(dataset)
    optimizer = AdamState.for_params(net.params, config.adam_beta1, config.adam_beta2,
                                     config.adam_eps)
    result = TrainResult(net.params, optimizer=optimizer)
    if config.steps == 0:
        return result
    batches = shuffled_batches(len(X), config.batch_size, streams["shuffle"])
    t0 = time.perf_counter()
    for step in range(1, config.steps + 1):
        idx = next(batches)
        loss = train_step(net, (X[idx], Y[idx]), schedule, optimizer, streams["k"],
                          lr=config.learning_rate, eps_rng=streams["eps"],
                          grad_clip=config.grad_clip)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        result.losses.append(loss)
        result.log_rows.append((step, loss, wall_ms))
        if step % 500 == 0:
            log.info("step %d loss %.5f", step, loss)
        if checkpoint_sink is not None and config.checkpoint_every and \
                step % config.checkpoint_every == 0 and step != config.steps:
            checkpoint_sink(step, net.params)
    if checkpoint_sink is not None:
        checkpoint_sink(config.steps, net.params)
    return result
