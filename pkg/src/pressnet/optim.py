"""Adam with bias correction and the step-decay learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .errors import UsageError


class AdamState:
    """Per-parameter moment estimates plus the schedule constants."""

    def __init__(self, params: dict, base_lr: float = 2e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 decay_rate: float = 0.95, decay_every: int = 10):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.base_lr = base_lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay_rate = decay_rate
        self.decay_every = decay_every


def lr_schedule(base_lr: float, epoch: int, rate: float = 0.95,
                every: int = 10) -> float:
    """base_lr * rate ** floor(epoch / every)."""
    return base_lr * rate ** (epoch // every)


def adam_step(params: dict, grads: dict, state: AdamState,
              lr: float | None = None) -> None:
    """One Adam update, in place on the parameter arrays."""
    if set(grads) != set(params):
        raise UsageError("gradient keys do not match parameter keys")
    if lr is None:
        lr = state.base_lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise UsageError(f"gradient shape mismatch for '{key}'")
        dt = p.dtype.type
        m = state.m[key]
        v = state.v[key]
        m *= dt(b1)
        m += dt(1.0 - b1) * g
        v *= dt(b2)
        v += dt(1.0 - b2) * np.square(g)
        mhat = m / dt(bc1)
        vhat = v / dt(bc2)
        p -= dt(lr) * mhat / (np.sqrt(vhat) + dt(state.eps))
