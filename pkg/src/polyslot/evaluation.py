"""Detection metrics for polygon slots.

Predictions are matched to ground truth per frame, greedily in descending
confidence order, using exact polygon IoU. Precision, recall and F1 are
reported at one confidence operating point with IoU 0.5 matching. Average
precision uses all predictions, sorted by confidence, and samples the
monotone precision envelope at 101 recall points.

Predictions that share a confidence value form a single point on the PR
curve, so the report does not depend on the order of frames or of tied
predictions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_unit_interval
from .geometry import TRAVERSAL, PolygonSlot, entrance_angle, validate_slot
from .iou import polygon_iou_exact

logger = logging.getLogger(__name__)

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
DEFAULT_CONF_THRESHOLD = 0.25
PRF_IOU = 0.5

__all__ = [
    "MatchResult",
    "EvalReport",
    "IOU_THRESHOLDS",
    "iou_matrix",
    "match_frame",
    "precision_recall_curve",
    "average_precision",
    "compute_report",
    "entrance_correct",
    "entrance_accuracy",
]


@dataclass
class MatchResult:
    pairs: list = field(default_factory=list)  # (pred index, gt index, iou)
    unmatched_preds: list = field(default_factory=list)
    unmatched_gts: list = field(default_factory=list)

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_preds)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gts)


def iou_matrix(preds, gts) -> np.ndarray:
    """Exact polygon IoU for every (pred, gt) pair, shape (n_pred, n_gt)."""
    out = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            out[i, j] = polygon_iou_exact(p, g)
    return out


def _confidence_order(preds) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: -preds[i].confidence)


def match_frame(preds, gts, iou_threshold: float = PRF_IOU, ious=None) -> MatchResult:
    """Greedy one-to-one matching of one frame.

    Predictions are visited by descending confidence (ties keep input
    order); each takes the unmatched gt with the highest IoU, provided that
    IoU is at least ``iou_threshold``. ``ious`` may pass a precomputed
    :func:`iou_matrix`.
    """
    iou_threshold = check_unit_interval(iou_threshold, "iou_threshold")
    if ious is None:
        for s in (*preds, *gts):
            validate_slot(s)
        ious = iou_matrix(preds, gts)
    free = np.ones(len(gts), dtype=bool)
    result = MatchResult()
    for i in _confidence_order(preds):
        row = np.where(free, ious[i], -1.0) if len(gts) else np.empty(0)
        j = int(np.argmax(row)) if row.size else -1
        if j >= 0 and row[j] >= iou_threshold:
            free[j] = False
            result.pairs.append((i, j, float(ious[i, j])))
        else:
            result.unmatched_preds.append(i)
    result.unmatched_gts = [int(j) for j in np.flatnonzero(free)]
    return result


def precision_recall_curve(scores, is_tp, n_gt: int):
    """PR points at every distinct confidence threshold, highest first.

    Returns ``(recall, precision, thresholds)``.
    """
    scores = np.asarray(scores, dtype=float)
    is_tp = np.asarray(is_tp, dtype=bool)
    if scores.size == 0 or n_gt <= 0:
        return np.empty(0), np.empty(0), np.empty(0)
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], is_tp[order]
    tp = np.cumsum(t)
    seen = np.arange(1, len(t) + 1)
    last = np.r_[s[1:] != s[:-1], True]
    return tp[last] / n_gt, tp[last] / seen[last], s[last]


def average_precision(scores, is_tp, n_gt: int) -> float:
    """101-point interpolated AP.

    The precision at recall ``r`` is the best precision reached at any
    recall ``>= r``; recall levels never reached contribute zero.
    """
    recall, precision, _ = precision_recall_curve(scores, is_tp, n_gt)
    if recall.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    ap_per_threshold: dict
    map_50: float
    map_50_95: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    num_gt: int = 0
    num_pred: int = 0
    conf_threshold: float = DEFAULT_CONF_THRESHOLD
    flags: tuple = ()
    frames: list = field(default_factory=list, repr=False)

    def to_text(self, per_frame: bool = False) -> str:
        """Plain ``key: value`` report with fixed 6-decimal numbers."""
        lines = [
            f"precision: {self.precision:.6f}",
            f"recall: {self.recall:.6f}",
            f"f1: {self.f1:.6f}",
            f"map_50: {self.map_50:.6f}",
            f"map_50_95: {self.map_50_95:.6f}",
        ]
        lines += [f"ap@{t:.2f}: {ap:.6f}" for t, ap in sorted(self.ap_per_threshold.items())]
        lines += [
            f"tp: {self.tp}", f"fp: {self.fp}", f"fn: {self.fn}",
            f"num_gt: {self.num_gt}", f"num_pred: {self.num_pred}",
            f"conf_threshold: {self.conf_threshold:.6f}",
            f"flags: {','.join(self.flags) if self.flags else 'none'}",
        ]
        if per_frame:
            for fr in self.frames:
                lines.append(f"frame {fr['frame']}: tp {fr['tp']} fp {fr['fp']} fn {fr['fn']}")
        return "\n".join(lines) + "\n"


def compute_report(frames, conf_threshold: float = DEFAULT_CONF_THRESHOLD,
                   iou_thresholds=IOU_THRESHOLDS, names=None) -> EvalReport:
    """Aggregate metrics over ``frames``, a sequence of ``(preds, gts)``.

    Flags: ``no_predictions`` when precision is undefined at the operating
    point (reported as 0) and ``no_ground_truth`` when recall is undefined
    (reported as 0).
    """
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    conf_threshold = check_unit_interval(conf_threshold, "conf_threshold")
    names = list(names) if names is not None else [str(i) for i in range(len(frames))]
    mats = []
    for preds, gts in frames:
        for s in (*preds, *gts):
            validate_slot(s)
        mats.append(iou_matrix(preds, gts))
    num_gt = sum(len(g) for _, g in frames)

    tp = fp = fn = 0
    per_frame = []
    for name, (preds, gts), m in zip(names, frames, mats):
        keep = [i for i, p in enumerate(preds) if p.confidence >= conf_threshold]
        res = match_frame([preds[i] for i in keep], gts, PRF_IOU, m[keep])
        tp, fp, fn = tp + res.tp, fp + res.fp, fn + res.fn
        per_frame.append({"frame": name, "tp": res.tp, "fp": res.fp, "fn": res.fn})

    flags = []
    if tp + fp == 0:
        flags.append("no_predictions")
        precision = 0.0
    else:
        precision = tp / (tp + fp)
    if num_gt == 0:
        flags.append("no_ground_truth")
        recall = 0.0
    else:
        recall = tp / num_gt
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0

    ap = {}
    for thr in iou_thresholds:
        scores, hits = [], []
        for (preds, gts), m in zip(frames, mats):
            res = match_frame(preds, gts, thr, m)
            matched = {i for i, _, _ in res.pairs}
            scores += [p.confidence for p in preds]
            hits += [i in matched for i in range(len(preds))]
        ap[float(thr)] = average_precision(scores, hits, num_gt)
    map_50 = ap.get(0.5, float("nan"))
    std = [ap[t] for t in IOU_THRESHOLDS if t in ap]
    map_50_95 = float(np.mean(std)) if len(std) == len(IOU_THRESHOLDS) else float("nan")
    return EvalReport(precision, recall, f1, ap, map_50, map_50_95, tp, fp, fn, num_gt,
                      sum(len(p) for p, _ in frames), conf_threshold, tuple(flags), per_frame)


_RELABELINGS = [np.roll(TRAVERSAL, -k) for k in range(4)]
_RELABELINGS += [r[::-1] for r in _RELABELINGS]


def entrance_correct(pred: PolygonSlot, gt: PolygonSlot, angle_tol_deg: float = 5.0) -> bool:
    """True when the prediction labels the same edge as entrance and its
    entrance angle is within ``angle_tol_deg`` of the gt.

    The corner correspondence is the outline relabeling (rotation or
    reflection) that brings the predicted corners closest to the gt; the
    entrance is right only when that relabeling is the identity.
    """
    p, g = pred.corners, gt.corners
    costs = [np.hypot(*(p[list(TRAVERSAL)] - g[list(r)]).T).sum() for r in _RELABELINGS]
    if int(np.argmin(costs)) != 0:
        return False
    diff = (entrance_angle(pred) - entrance_angle(gt) + 180.0) % 360.0 - 180.0
    return abs(diff) <= angle_tol_deg


def entrance_accuracy(matches: MatchResult, preds, gts, angle_tol_deg: float = 5.0) -> float:
    """Fraction of matched pairs with a correct entrance line; 0 when nothing matched."""
    if not matches.pairs:
        return 0.0
    ok = sum(entrance_correct(preds[i], gts[j], angle_tol_deg) for i, j, _ in matches.pairs)
    return ok / len(matches.pairs)
