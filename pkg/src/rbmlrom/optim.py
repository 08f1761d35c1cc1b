"""Adam optimizer state machine and a central finite-difference gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np


@dataclass
class AdamState:
    """Moment estimates for a list of parameter arrays.

    ``skipped`` counts steps rejected because of a non-finite gradient.
    """

    m: list
    v: list
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    skipped: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], learning_rate: float = 1e-3, **kw):
        return cls(
            m=[np.zeros_like(p, dtype=float) for p in params],
            v=[np.zeros_like(p, dtype=float) for p in params],
            learning_rate=learning_rate,
            **kw,
        )


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    """One bias-corrected Adam update.

    Returns ``(new_params, new_state)``; the inputs are not modified. A step
    with any non-finite gradient entry leaves parameters and moments
    untouched and increments ``state.skipped``.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must have matching lengths")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(m):
            raise ValueError("shape mismatch between params, grads and moments")

    if not all(np.all(np.isfinite(g)) for g in grads):
        return [np.array(p, dtype=float) for p in params], replace(
            state, skipped=state.skipped + 1
        )

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, replace(state, m=new_m, v=new_v, t=t)


def fd_gradient(f: Callable[[np.ndarray], float], params, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    if h <= 0:
        raise ValueError("h must be positive")
    p = np.array(params, dtype=float)
    grad = np.empty_like(p)
    flat = p.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(p)
        flat[i] = orig - h
        fm = f(p)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at entry {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
