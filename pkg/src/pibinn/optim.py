"""First-order optimizers, learning-rate schedule and minibatch iteration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import stream_rng

SHUFFLE_STREAM = 1000


class SGD:
    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        for name, p in params.items():
            p -= lr * grads[name]


class Adam:
    """Adam with bias correction; state is keyed by parameter name."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str):
    if name == "adam":
        return Adam()
    if name == "sgd":
        return SGD()
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass(frozen=True)
class StepDecay:
    """``lr0 * decay ** (epoch // every)``."""

    lr0: float
    decay: float = 1.0
    every: int = 10

    def __call__(self, epoch: int) -> float:
        return self.lr0 * self.decay ** (epoch // max(self.every, 1))


def minibatches(n: int, batch_size: int | None, seed: int | None, epoch: int):
    """Index chunks covering ``range(n)``; shuffled per epoch when ``seed`` is given."""
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    order = np.arange(n) if seed is None else stream_rng(seed, SHUFFLE_STREAM, epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
