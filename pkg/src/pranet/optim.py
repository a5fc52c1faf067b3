"""Adam with bias correction, operating on named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .errors import InvalidArgument, NumericError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros(p.shape, dtype=np.float64) for k, p in params.items()},
            v={k: np.zeros(p.shape, dtype=np.float64) for k, p in params.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Apply one Adam update in place.

    ``params`` maps names to :class:`Tensor`; ``grads`` maps the same names to
    arrays. Moments are kept in float64. If any gradient is non-finite the
    step is refused and neither parameters nor state change.
    """
    if lr <= 0:
        raise InvalidArgument(f"learning rate must be positive, got {lr}")
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if np.shape(g) != p.shape or state.m[name].shape != p.shape:
            raise InvalidArgument(f"shape mismatch for {name}: param {p.shape}, grad {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; step refused")

    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        g = np.asarray(g, dtype=np.float64)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data.astype(np.float64) - step).astype(p.dtype)


class Adam:
    """Thin stateful wrapper over :func:`adam_step`."""

    def __init__(self, params: dict, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState.zeros(params)

    def step(self, grads: dict) -> None:
        adam_step(self.params, grads, self.state, self.lr, *self.betas, self.eps)
