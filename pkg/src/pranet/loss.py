"""Boundary-weighted BCE + IoU objective with deep supervision."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.special import expit

from . import ops
from .autograd import Tensor, make_result
from .errors import InvalidArgument

POOL = 31
BOUNDARY_GAIN = 5.0


def _box_mean(g: np.ndarray, k: int) -> np.ndarray:
    """Mean over the k x k window around each pixel, counting only in-image pixels."""
    r = k // 2
    h, w = g.shape[-2:]
    padded = np.pad(g.astype(np.float64), [(0, 0)] * (g.ndim - 2) + [(r + 1, r), (r + 1, r)])
    sat = padded.cumsum(-1).cumsum(-2)
    total = (sat[..., k:, k:] - sat[..., :-k, k:] - sat[..., k:, :-k] + sat[..., :-k, :-k])
    ones = np.pad(np.ones((h, w)), [(r + 1, r), (r + 1, r)]).cumsum(-1).cumsum(-2)
    count = ones[k:, k:] - ones[:-k, k:] - ones[k:, :-k] + ones[:-k, :-k]
    return total / count


def pixel_weights(mask) -> Tensor:
    """``1 + 5 * |local_mean(G) - G|`` over a 31x31 window; values in [1, 6]."""
    g = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if not np.all((g == 0) | (g == 1)):
        raise InvalidArgument("pixel_weights requires a binary mask")
    w = 1.0 + BOUNDARY_GAIN * np.abs(_box_mean(g, POOL) - g)
    return Tensor(np.clip(w, 1.0, 1.0 + BOUNDARY_GAIN).astype(g.dtype if g.dtype.kind == "f" else np.float32))


def _check_same(logits: Tensor, g: np.ndarray, w: np.ndarray) -> None:
    if logits.ndim != 4 or logits.shape != g.shape or g.shape != w.shape:
        raise InvalidArgument(f"shape mismatch: logits {logits.shape}, mask {g.shape}, weights {w.shape}")


def weighted_bce(logits: Tensor, mask, weights) -> Tensor:
    """Per-image weight-normalised BCE from logits, averaged over the batch."""
    g = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=logits.dtype)
    w = np.asarray(weights.data if isinstance(weights, Tensor) else weights, dtype=logits.dtype)
    _check_same(logits, g, w)
    x = logits.data
    n = x.shape[0]
    # stable form: max(x,0) - x*g + log(1 + exp(-|x|))
    bce = np.maximum(x, 0) - x * g + np.log1p(np.exp(-np.abs(x)))
    wsum = w.sum(axis=(1, 2, 3))
    per_image = (w * bce).sum(axis=(1, 2, 3)) / wsum
    out = np.asarray(per_image.mean(), dtype=x.dtype)

    def bw(grad):
        p = expit(x)
        return (grad * w * (p - g) / (wsum[:, None, None, None] * n),)

    return make_result(out, (logits,), bw, "weighted_bce")


def weighted_iou(logits: Tensor, mask, weights) -> Tensor:
    """``1 - (inter+1)/(union-inter+1)`` on sigmoid probabilities, batch-averaged."""
    g = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=logits.dtype)
    w = np.asarray(weights.data if isinstance(weights, Tensor) else weights, dtype=logits.dtype)
    _check_same(logits, g, w)
    p = expit(logits.data)
    n = p.shape[0]
    inter = (w * p * g).sum(axis=(1, 2, 3))
    union = (w * (p + g)).sum(axis=(1, 2, 3))
    denom = union - inter + 1
    out = np.asarray((1 - (inter + 1) / denom).mean(), dtype=p.dtype)

    def bw(grad):
        i = inter[:, None, None, None]
        d = denom[:, None, None, None]
        # d inter/dp = w*g ; d union/dp = w
        dl_dp = -(w * g * d - (i + 1) * (w - w * g)) / (d * d)
        return (grad * dl_dp * p * (1 - p) / n,)

    return make_result(out, (logits,), bw, "weighted_iou")


def structure_loss(logits: Tensor, mask, weights) -> Tuple[Tensor, float, float]:
    bce = weighted_bce(logits, mask, weights)
    iou = weighted_iou(logits, mask, weights)
    return ops.add(bce, iou), bce.item(), iou.item()


@dataclass
class LossBreakdown:
    per_map: List[Tuple[str, float, float]]
    total: float


MAP_NAMES = ("s_g", "s5", "s4", "s3")


def total_loss(outs, mask) -> Tuple[Tensor, LossBreakdown]:
    """Sum of the structure loss over all four side outputs, each resized to the mask."""
    g = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    h, w = g.shape[2:]
    weights = pixel_weights(g)
    total = None
    rows = []
    for name, s in zip(MAP_NAMES, outs):
        up = ops.bilinear_resize(s, h, w)
        term, bce, iou = structure_loss(up, g, weights)
        rows.append((name, bce, iou))
        total = term if total is None else ops.add(total, term)
    return total, LossBreakdown(rows, total.item())
