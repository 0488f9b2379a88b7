"""Gradient-descent optimizers over named parameter dictionaries."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError
from .tensor import Tensor


def _check_finite(grads: dict[str, np.ndarray]) -> None:
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NumericError(f"non-finite gradients for {bad}; step aborted")


def _collect(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {n: (np.zeros_like(p.data) if p.grad is None else p.grad) for n, p in params.items()}


class SGD:
    def __init__(self, lr: float = 1e-2):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.lr = lr

    def step(self, params: dict[str, Tensor], grads=None) -> None:
        grads = _collect(params) if grads is None else grads
        _check_finite(grads)
        for name, p in params.items():
            p.data -= self.lr * grads[name]


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1) or eps <= 0:
            raise ConfigError(f"invalid Adam settings lr={lr} betas=({beta1}, {beta2}) eps={eps}")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads=None) -> None:
        grads = _collect(params) if grads is None else grads
        _check_finite(grads)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(config):
    if config.optimizer == "adam":
        return Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    if config.optimizer == "sgd":
        return SGD(config.lr)
    raise ConfigError(f"unknown optimizer {config.optimizer!r}")


def zero_grad(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
