"""Polygon regression loss: corner GIoU term plus mean corner distance.

``total = w_giou * (1 - mean corner GIoU) + w_dist * mean corner distance``

Gradients are taken with respect to the eight predicted corner
coordinates in storage order ``(x1, y1, x2, y2, x3, y3, x4, y4)``. The
predicted center is the mean of the corners, so every corner also moves
all four boxes through the center.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .geometry import PolygonSlot, validate_slot
from .iou import box_giou_with_grad, corner_boxes

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "corner_distance_loss",
    "polygon_loss",
    "polygon_loss_batch",
    "fit_polygon",
    "FitStep",
    "DivergenceError",
    "bce_classification_loss",
    "SlotFitter",
]


@dataclass(frozen=True)
class LossWeights:
    w_giou: float = 1.0
    w_dist: float = 0.75

    def __post_init__(self):
        for name in ("w_giou", "w_dist"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)


@dataclass
class LossBreakdown:
    giou_term: float
    dist_term: float
    total: float
    gradient: np.ndarray = field(repr=False)
    corner_gious: np.ndarray = field(repr=False, default=None)


def _corners(slot) -> np.ndarray:
    if isinstance(slot, PolygonSlot):
        return slot.corners
    return np.asarray(slot, dtype=float).reshape(4, 2)


def corner_distance_loss(pred: PolygonSlot, gt: PolygonSlot, scale: float = 1.0) -> float:
    """Mean Euclidean distance between matching corners, divided by ``scale``."""
    d = _corners(pred) - _corners(gt)
    return float(np.hypot(d[:, 0], d[:, 1]).mean() / scale)


def _loss_and_grad(p, g, weights, scale=1.0, pred_center=None, gt_center=None):
    """Core evaluation on raw (4, 2) arrays; no validation."""
    c = p.mean(axis=0) if pred_center is None else np.asarray(pred_center, float)
    a_lo, a_hi = np.minimum(c, p), np.maximum(c, p)
    b_lo, b_hi = corner_boxes(g, gt_center)
    gious, d_lo, d_hi = box_giou_with_grad(a_lo, a_hi, b_lo, b_hi)
    same = np.all((a_lo == b_lo) & (a_hi == b_hi), axis=-1)
    gious = np.where(same, 1.0, gious)
    d_lo[same] = 0.0
    d_hi[same] = 0.0

    # box lo = min(center, corner): a tie counts as the center branch
    corner_is_hi = p >= c
    d_corner = np.where(corner_is_hi, d_hi, d_lo)
    d_center = np.where(corner_is_hi, d_lo, d_hi)
    d_mean_giou = d_corner / 4.0
    if pred_center is None:
        d_mean_giou = d_mean_giou + d_center.sum(axis=0) / 16.0

    diff = p - g
    dist = np.hypot(diff[:, 0], diff[:, 1])
    safe = np.where(dist > 0, dist, 1.0)
    d_dist = np.where(dist[:, None] > 0, diff / safe[:, None], 0.0) / (4.0 * scale)

    giou_term = 1.0 - float(gious.mean())
    dist_term = float(dist.mean() / scale)
    total = weights.w_giou * giou_term + weights.w_dist * dist_term
    grad = -weights.w_giou * d_mean_giou + weights.w_dist * d_dist
    return LossBreakdown(giou_term, dist_term, total, grad.reshape(-1), gious)


def polygon_loss(pred: PolygonSlot, gt: PolygonSlot,
                 weights: LossWeights | None = None, *, scale: float = 1.0,
                 pred_center=None, gt_center=None) -> LossBreakdown:
    """Evaluate the polygon regression loss and its gradient.

    Parameters
    ----------
    pred, gt : PolygonSlot
        Corner orders must correspond (index ``i`` in both is the same role).
    weights : LossWeights, optional
        Defaults to ``w_giou=1``, ``w_dist=0.75``.
    scale : float
        Divides corner distances, e.g. the raster size to make the distance
        term unitless. The default keeps working units (topview pixels).
    pred_center, gt_center : array-like, optional
        Explicit box centers. When ``pred_center`` is given it is treated
        as an independent quantity and no gradient flows through it.

    Returns
    -------
    LossBreakdown
        ``gradient`` is d(total)/d(pred corners), flattened to 8 values.
    """
    weights = weights or LossWeights()
    validate_slot(gt)
    p = _corners(pred)
    if not np.all(np.isfinite(p)):
        raise ValueError("prediction contains non-finite coordinates")
    return _loss_and_grad(p, gt.corners, weights, scale, pred_center, gt_center)


def polygon_loss_batch(preds, gts, weights: LossWeights | None = None, **kw) -> np.ndarray:
    """Total loss for each aligned (pred, gt) pair."""
    return np.array([polygon_loss(p, g, weights, **kw).total for p, g in zip(preds, gts)])


def bce_classification_loss(pred_prob, label) -> float:
    p = min(max(float(pred_prob), BCE_EPS), 1.0 - BCE_EPS)
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    return -(label * math.log(p) + (1 - label) * math.log(1.0 - p))


class DivergenceError(RuntimeError):
    pass


@dataclass
class FitStep:
    slot: np.ndarray
    loss: LossBreakdown
    lr: float


def fit_polygon(gt: PolygonSlot, init: PolygonSlot, weights: LossWeights | None = None,
                steps: int = 500, lr: float = 0.05, *, momentum: float = 0.0,
                backtrack: bool = True, scale: float = 1.0) -> list[FitStep]:
    """Gradient descent on the eight predicted corner coordinates.

    With ``backtrack`` a step that would raise the loss is rejected and the
    learning rate halved, which makes the trajectory monotone. Without it,
    a loss that grows past 10x its initial value raises
    :class:`DivergenceError`.

    Returns the trajectory, starting with the initial state.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    weights = weights or LossWeights()
    validate_slot(gt)
    validate_slot(init)
    g = gt.corners
    x = init.corners.astype(float).copy()
    cur = _loss_and_grad(x, g, weights, scale)
    first = cur.total
    history = [FitStep(x.copy(), cur, lr)]
    velocity = np.zeros(8)
    for _ in range(int(steps)):
        if cur.total == 0.0:
            history.append(FitStep(x.copy(), cur, lr))
            continue
        velocity = momentum * velocity - lr * cur.gradient
        cand = x + velocity.reshape(4, 2)
        new = _loss_and_grad(cand, g, weights, scale)
        if backtrack:
            while new.total > cur.total and lr > 1e-300:
                lr *= 0.5
                velocity = -lr * cur.gradient
                cand = x + velocity.reshape(4, 2)
                new = _loss_and_grad(cand, g, weights, scale)
            if new.total > cur.total:
                cand, new = x, cur
        elif new.total > 10.0 * max(first, 1e-12):
            raise DivergenceError(
                f"loss grew from {first:.6g} to {new.total:.6g}; lower the learning rate"
            )
        x, cur = cand, new
        history.append(FitStep(x.copy(), cur, lr))
    return history


class SlotFitter(BaseEstimator, RegressorMixin):
    """Fit predicted slot corners to ground-truth slots by gradient descent.

    ``fit(X, y)`` takes initial corners ``X`` and targets ``y``, each of
    shape (n, 8) or a list of :class:`PolygonSlot`. The fitted corners are
    in ``corners_`` and returned by :meth:`predict`.
    """

    def __init__(self, w_giou=1.0, w_dist=0.75, steps=500, lr=0.05,
                 momentum=0.0, backtrack=True, scale=1.0):
        self.w_giou = w_giou
        self.w_dist = w_dist
        self.steps = steps
        self.lr = lr
        self.momentum = momentum
        self.backtrack = backtrack
        self.scale = scale

    @staticmethod
    def _as_slots(data):
        if len(data) and isinstance(data[0], PolygonSlot):
            return list(data)
        arr = np.asarray(data, dtype=float).reshape(-1, 8)
        return [PolygonSlot(row.reshape(4, 2)) for row in arr]

    def fit(self, X, y):
        inits, gts = self._as_slots(X), self._as_slots(y)
        if len(inits) != len(gts):
            raise ValueError(f"X has {len(inits)} slots but y has {len(gts)}")
        weights = LossWeights(self.w_giou, self.w_dist)
        self.histories_ = [
            fit_polygon(g, i, weights, self.steps, self.lr, momentum=self.momentum,
                        backtrack=self.backtrack, scale=self.scale)
            for i, g in zip(inits, gts)
        ]
        self.corners_ = np.array([h[-1].slot.reshape(-1) for h in self.histories_])
        self.loss_ = np.array([h[-1].loss.total for h in self.histories_])
        return self

    def predict(self, X=None):
        check_is_fitted(self, "corners_")
        return self.corners_.copy()

    def score(self, X, y):
        """Negative mean polygon loss of the fitted corners against ``y``."""
        check_is_fitted(self, "corners_")
        gts = self._as_slots(y)
        weights = LossWeights(self.w_giou, self.w_dist)
        totals = [
            _loss_and_grad(c.reshape(4, 2), g.corners, weights, self.scale).total
            for c, g in zip(self.corners_, gts)
        ]
        return -float(np.mean(totals))
