"""Adam optimiser and the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

BASE_LR = 1e-3
DECAY = 0.9
DECAY_EVERY = 10


def lr_schedule(epoch: int, base_lr: float = BASE_LR, decay: float = DECAY,
                every: int = DECAY_EVERY) -> float:
    """Learning rate reduced by 10% every ``every`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * decay ** (epoch // every)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DataError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
