"""Segmentation scores: Dice/IoU, MAE, weighted F, S-measure, max E-measure.

Every function takes a real-valued map ``P`` in [0, 1] and a binary mask
``G`` of the same 2-D extent (``[1,1,H,W]`` arrays are squeezed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.ndimage import correlate, distance_transform_edt

from . import ops
from .autograd import Tensor
from .errors import InvalidArgument, UndefinedMetric

EPS = np.finfo(np.float64).eps
THRESHOLD = 0.5
METRIC_KEYS = ("meanDice", "meanIoU", "wFbeta", "sAlpha", "eMax", "mae")


def _pair(P, G) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(P.data if isinstance(P, Tensor) else P, dtype=np.float64)
    g = np.asarray(G.data if isinstance(G, Tensor) else G)
    p = p.reshape(p.shape[-2:]) if p.ndim > 2 else p
    g = g.reshape(g.shape[-2:]) if g.ndim > 2 else g
    if p.shape != g.shape:
        raise InvalidArgument(f"prediction {p.shape} and mask {g.shape} differ in extent")
    return p, g > 0.5


def dice_iou(P, G) -> Tuple[float, float]:
    p, g = _pair(P, G)
    b = p >= THRESHOLD
    inter = np.count_nonzero(b & g)
    nb, ng = np.count_nonzero(b), np.count_nonzero(g)
    if nb == 0 and ng == 0:
        return 1.0, 1.0
    return 2.0 * inter / (nb + ng), inter / np.count_nonzero(b | g)


def mae(P, G) -> float:
    p, g = _pair(P, G)
    return float(np.mean(np.abs(p - g)))


# ---------------------------------------------------------------- weighted F

@lru_cache(maxsize=8)
def _lattice(max_d2: int):
    """Integer offsets with dy^2+dx^2 <= max_d2, sorted by (d2, dy, dx)."""
    r = math.isqrt(max_d2)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    dy, dx = dy.ravel(), dx.ravel()
    d2 = dy * dy + dx * dx
    keep = d2 <= max_d2
    dy, dx, d2 = dy[keep], dx[keep], d2[keep]
    order = np.lexsort((dx, dy, d2))
    return d2[order], dy[order], dx[order]


def nearest_foreground(g: np.ndarray):
    """Euclidean distance to, and flat index of, the nearest foreground pixel.

    Among equidistant foreground pixels the one with the smallest raster
    index wins. Foreground pixels map to themselves at distance 0.
    """
    h, w = g.shape
    dist = distance_transform_edt(~g)
    d2 = np.rint(dist * dist).astype(np.int64)
    nearest = np.arange(h * w).reshape(h, w)
    by, bx = np.nonzero(~g)
    if by.size == 0:
        return dist, nearest
    v = d2[by, bx]
    # bucket sizes keep the lattice cache small; the table only needs to cover max(v)
    lat_d2, lat_dy, lat_dx = _lattice(int(2 ** np.ceil(np.log2(v.max() + 1))))
    start = np.searchsorted(lat_d2, v, "left")
    count = np.searchsorted(lat_d2, v, "right") - start
    pix = np.repeat(np.arange(v.size), count)
    group = np.concatenate(([0], np.cumsum(count)[:-1]))
    off = start[pix] + np.arange(pix.size) - np.repeat(group, count)
    ty = by[pix] + lat_dy[off]
    tx = bx[pix] + lat_dx[off]
    inside = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
    hit = inside & g[np.clip(ty, 0, h - 1), np.clip(tx, 0, w - 1)]
    cand = np.where(hit, ty * w + tx, h * w)
    best = np.minimum.reduceat(cand, group)
    nearest[by, bx] = best
    return dist, nearest


@lru_cache(maxsize=1)
def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = size // 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    return k / k.sum()


def weighted_fbeta(P, G) -> float:
    p, g = _pair(P, G)
    if not g.any():
        raise UndefinedMetric("weighted F is undefined for an empty foreground")
    e = np.abs(p - g)
    dist, nearest = nearest_foreground(g)
    et = e.ravel()[nearest]
    # replicate padding: a constant error field stays constant under the blur
    ea = correlate(et, _gaussian_kernel(), mode="nearest")
    min_e = np.where(g & (ea < e), ea, e)
    b = np.where(g, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    ew = min_e * b
    tpw = np.count_nonzero(g) - ew[g].sum()
    fpw = ew[~g].sum()
    recall = 1.0 - ew[g].mean()
    precision = tpw / (tpw + fpw) if tpw + fpw > 0 else 0.0
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


# ---------------------------------------------------------------- S-measure

def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sigma + EPS)


def _s_object(p: np.ndarray, g: np.ndarray) -> float:
    mu = g.mean()
    return mu * _object_score(p[g]) + (1 - mu) * _object_score(1.0 - p[~g])


def _ssim_block(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    x, y = p.mean(), g.mean()
    sx = ((p - x) ** 2).sum() / (n - 1 + EPS)
    sy = ((g - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((p - x) * (g - y)).sum() / (n - 1 + EPS)
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    return 1.0 if b == 0 else 0.0


def foreground_centroid(g: np.ndarray) -> Tuple[int, int]:
    """1-based rounded centroid ``(X, Y)``; also the split column/row counts."""
    h, w = g.shape
    total = g.sum()
    x = np.floor((g.sum(axis=0) * np.arange(1, w + 1)).sum() / total + 0.5)
    y = np.floor((g.sum(axis=1) * np.arange(1, h + 1)).sum() / total + 0.5)
    return int(x), int(y)


def _s_region(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    cx, cy = foreground_centroid(g)
    gf = g.astype(np.float64)
    score = 0.0
    for rows in (slice(0, cy), slice(cy, h)):
        for cols in (slice(0, cx), slice(cx, w)):
            pb, gb = p[rows, cols], gf[rows, cols]
            if pb.size:
                score += pb.size / (h * w) * _ssim_block(pb, gb)
    return score


def s_measure(P, G, alpha: float = 0.5) -> float:
    p, g = _pair(P, G)
    fg = g.mean()
    if fg == 0:
        s = 1.0 - p.mean()
    elif fg == 1:
        s = p.mean()
    else:
        s = alpha * _s_object(p, g) + (1 - alpha) * _s_region(p, g)
    return float(min(max(s, 0.0), 1.0))


# ---------------------------------------------------------------- E-measure

THRESHOLDS = np.arange(256) / 255.0


def e_measure_curve(P, G) -> np.ndarray:
    """Mean enhanced-alignment score at each of the 256 thresholds ``k/255``."""
    p, g = _pair(P, G)
    n = p.size
    n_fg = np.count_nonzero(g)
    fg_sorted = np.sort(p[g])
    bg_sorted = np.sort(p[~g])
    tp = n_fg - np.searchsorted(fg_sorted, THRESHOLDS, "left")
    fp = (n - n_fg) - np.searchsorted(bg_sorted, THRESHOLDS, "left")
    mu_b = (tp + fp) / n
    if n_fg == 0:
        return 1.0 - mu_b
    if n_fg == n:
        return mu_b
    mu_g = n_fg / n

    def enhanced(gv, bv):
        pg, pb = gv - mu_g, bv - mu_b
        xi = 2 * pg * pb / (pg * pg + pb * pb + EPS)
        return (xi + 1) ** 2 / 4

    fn = n_fg - tp
    tn = (n - n_fg) - fp
    total = (tp * enhanced(1, 1) + fn * enhanced(1, 0)
             + fp * enhanced(0, 1) + tn * enhanced(0, 0))
    return total / n


def e_measure_max(P, G) -> float:
    return float(np.max(e_measure_curve(P, G)))


# ---------------------------------------------------------------- datasets

@dataclass
class MetricReport:
    mean_dice: float
    mean_iou: float
    wfbeta: Optional[float]
    s_alpha: float
    e_max: float
    mae: float
    per_image: List[dict] = field(default_factory=list)
    count: int = 0

    def to_dict(self) -> dict:
        return {
            "meanDice": self.mean_dice,
            "meanIoU": self.mean_iou,
            "wFbeta": self.wfbeta,
            "sAlpha": self.s_alpha,
            "eMax": self.e_max,
            "mae": self.mae,
            "perImage": self.per_image,
            "count": self.count,
        }


def score_image(P, G) -> dict:
    dice, iou = dice_iou(P, G)
    try:
        wf = weighted_fbeta(P, G)
    except UndefinedMetric:
        wf = None
    return {
        "meanDice": dice,
        "meanIoU": iou,
        "wFbeta": wf,
        "sAlpha": s_measure(P, G),
        "eMax": e_measure_max(P, G),
        "mae": mae(P, G),
    }


def _column_mean(rows: List[dict], key: str) -> Optional[float]:
    vals = [r[key] for r in rows if r[key] is not None]
    return float(np.mean(vals)) if vals else None


def evaluate_dataset(predictions: Dict[str, np.ndarray], ground_truths: Dict[str, np.ndarray]) -> MetricReport:
    """Score every id and average each metric over the images where it is defined."""
    ids = sorted(set(predictions) & set(ground_truths))
    if not ids:
        raise InvalidArgument("no image ids in common between predictions and ground truths")
    if set(predictions) != set(ground_truths):
        raise InvalidArgument("prediction and ground-truth id sets differ")
    rows = []
    for image_id in ids:
        p = np.asarray(predictions[image_id], dtype=np.float32)
        g = np.asarray(ground_truths[image_id])
        gh, gw = g.shape[-2:]
        if p.shape[-2:] != (gh, gw):
            p4 = p.reshape((1, 1) + p.shape[-2:])
            p = ops.bilinear_resize(Tensor(p4), gh, gw).data
        rows.append({"imageId": image_id, **score_image(p, g)})
    means = {k: _column_mean(rows, k) for k in METRIC_KEYS}
    return MetricReport(
        mean_dice=means["meanDice"], mean_iou=means["meanIoU"], wfbeta=means["wFbeta"],
        s_alpha=means["sAlpha"], e_max=means["eMax"], mae=means["mae"],
        per_image=rows, count=len(rows),
    )
