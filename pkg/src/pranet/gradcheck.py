"""Central finite-difference checks in float64 shadow mode."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import GradTape, Tensor


def numeric_grad(f: Callable[..., Tensor], arrays: Sequence[np.ndarray], wrt: int,
                 step: float = 1e-3, indices=None) -> np.ndarray:
    """Finite-difference gradient of scalar ``f`` w.r.t. ``arrays[wrt]``.

    ``indices`` restricts evaluation to the given flat positions; other
    entries of the result are left as NaN.
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[wrt]
    flat = target.reshape(-1)
    out = np.full(target.size, np.nan)
    positions = range(target.size) if indices is None else indices
    for i in positions:
        orig = flat[i]
        flat[i] = orig + step
        fp = f(*[Tensor(a, dtype=np.float64) for a in base]).item()
        flat[i] = orig - step
        fm = f(*[Tensor(a, dtype=np.float64) for a in base]).item()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * step)
    return out.reshape(target.shape)


def analytic_grads(f: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list:
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True, dtype=np.float64)
              for a in arrays]
    with GradTape() as tape:
        loss = f(*leaves)
    grads = tape.backward(loss)
    return [grads.get(t, np.zeros(t.shape)) for t in leaves]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest ``|a-n| / max(|a|, |n|, floor)`` over entries where ``numeric`` is defined."""
    mask = ~np.isnan(numeric)
    a, n = analytic[mask], numeric[mask]
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(f: Callable[..., Tensor], arrays: Sequence[np.ndarray],
                    step: float = 1e-3, floor: float = 1e-6) -> float:
    """Worst relative error across all inputs of ``f``."""
    analytic = analytic_grads(f, arrays)
    worst = 0.0
    for k in range(len(arrays)):
        worst = max(worst, relative_error(analytic[k], numeric_grad(f, arrays, k, step), floor))
    return worst
