"""Adam with bias-corrected moment estimates."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, NumericError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        arrays = params.arrays()
        return cls(lr, beta1, beta2, eps, 0, [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params, grads, state):
    """Update ``params`` in place from ``grads`` (aligned with ``params.arrays()``).

    Returns ``(params, state)`` for chaining.
    """
    named = params.named_arrays()
    if len(grads) != len(named) or len(state.m) != len(named):
        raise DimensionError(f"expected {len(named)} gradient arrays, got {len(grads)}")
    for (name, p), g in zip(named, grads):
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name}")
        with np.errstate(over="ignore"):
            if not np.isfinite(g * g).all():
                raise NumericError(f"gradient for parameter {name} overflows the second moment")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for i, ((_, p), g) in enumerate(zip(named, grads)):
        m = state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        v = state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
