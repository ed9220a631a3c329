"""Decoding of grid head outputs into slots, and polygon NMS.

Per anchor the head emits ``11 + C`` pre-activation values::

    tx, ty, dx1, dy1, dx2, dy2, dx3, dy3, dx4, dy4, objectness, class_1..class_C

The slot center is ``(cell + sigmoid(t)) * stride`` and each corner is the
center plus its raw offset in pixels. Offsets stay linear because corner
offsets are signed and unbounded in direction. Confidence is
``sigmoid(objectness) * max(softmax(class scores))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy.special import expit, logit, softmax
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import InvalidSlotError, check_unit_interval
from .geometry import PolygonSlot, SlotType, validate_slot
from .iou import polygon_iou_exact

logger = logging.getLogger(__name__)

GEOMETRY_VALUES = 10
DEFAULT_CONF_THRESHOLD = 0.25
DEFAULT_NMS_IOU = 0.45
ENCODE_CLASS_LOGIT = 10.0

__all__ = [
    "HeadSpec",
    "decode",
    "encode",
    "polygon_nms",
    "read_raw_prediction",
    "write_raw_prediction",
    "SlotDecoder",
]


@dataclass(frozen=True)
class HeadSpec:
    grid: tuple = (20, 20)
    anchors_per_cell: int = 1
    num_classes: int = 3
    stride: float = 32.0

    def __post_init__(self):
        grid = tuple(int(v) for v in self.grid)
        if len(grid) != 2 or min(grid) < 1:
            raise ValueError(f"grid must be two positive ints, got {self.grid}")
        if int(self.anchors_per_cell) < 1:
            raise ValueError("anchors_per_cell must be >= 1")
        if int(self.num_classes) < 1:
            raise ValueError("num_classes must be >= 1")
        if not float(self.stride) > 0:
            raise ValueError("stride must be positive")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "anchors_per_cell", int(self.anchors_per_cell))
        object.__setattr__(self, "num_classes", int(self.num_classes))
        object.__setattr__(self, "stride", float(self.stride))

    @property
    def values_per_anchor(self) -> int:
        return GEOMETRY_VALUES + 1 + self.num_classes

    @property
    def shape(self) -> tuple:
        sx, sy = self.grid
        return (sy, sx, self.anchors_per_cell, self.values_per_anchor)


def _class_of(index: int, num_classes: int):
    types = list(SlotType)
    return types[index] if num_classes == len(types) else types[index % len(types)]


def decode(raw, head: HeadSpec, conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> list[PolygonSlot]:
    """Turn a raw (S_y, S_x, A, V) prediction into slots above the threshold.

    Candidates whose decoded outline is self-intersecting or degenerate are
    skipped. Output follows grid scan order (row, column, anchor).
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != head.shape:
        raise ValueError(f"prediction shape {raw.shape} does not match head {head.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("prediction contains non-finite values")
    conf_threshold = check_unit_interval(conf_threshold, "conf_threshold")
    sy, sx, a, _ = raw.shape
    flat = raw.reshape(-1, head.values_per_anchor)
    probs = softmax(flat[:, GEOMETRY_VALUES + 1:], axis=1)
    conf = expit(flat[:, GEOMETRY_VALUES]) * probs.max(axis=1)
    keep = np.flatnonzero(conf >= conf_threshold)
    iy, ix, _ = np.unravel_index(keep, (sy, sx, a))
    cells = np.stack([ix, iy], axis=1).astype(float)
    centers = (cells + expit(flat[keep, :2])) * head.stride
    corners = centers[:, None, :] + flat[keep, 2:GEOMETRY_VALUES].reshape(-1, 4, 2)
    labels = probs[keep].argmax(axis=1)
    slots = []
    for c, k, cf in zip(corners, labels, conf[keep]):
        slot = PolygonSlot(c, _class_of(int(k), head.num_classes), float(cf))
        try:
            validate_slot(slot)
        except InvalidSlotError as exc:
            logger.debug("dropping undecodable candidate: %s", exc)
            continue
        slots.append(slot)
    return slots


def encode(slots, head: HeadSpec, frac_eps: float = 1e-6) -> np.ndarray:
    """Inverse of :func:`decode` for testing: build a raw tensor holding ``slots``.

    Each slot goes to the cell containing its corner centroid, using the
    first free anchor. Unused anchors get very negative objectness.
    Confidences must stay below the class-probability ceiling
    (``~0.9999`` with three classes).
    """
    raw = np.zeros(head.shape)
    raw[..., GEOMETRY_VALUES] = -50.0
    sy, sx, na, _ = head.shape
    used = np.zeros((sy, sx, na), dtype=bool)
    cls_logits = np.zeros(head.num_classes)
    for slot in slots:
        center = slot.corners.mean(axis=0)
        cell = np.floor(center / head.stride).astype(int)
        ix, iy = cell
        if not (0 <= ix < sx and 0 <= iy < sy):
            raise ValueError(f"slot center {center} lies outside the grid")
        free = np.flatnonzero(~used[iy, ix])
        if free.size == 0:
            raise ValueError(f"no free anchor left in cell ({ix}, {iy})")
        k = free[0]
        used[iy, ix, k] = True
        frac = np.clip(center / head.stride - cell, frac_eps, 1 - frac_eps)
        logits = cls_logits.copy()
        logits[slot.slot_type.index % head.num_classes] = ENCODE_CLASS_LOGIT
        ceiling = softmax(logits).max()
        if slot.confidence >= ceiling:
            raise ValueError(f"confidence {slot.confidence} not encodable (max {ceiling:.6f})")
        vec = raw[iy, ix, k]
        vec[:2] = logit(frac)
        vec[2:GEOMETRY_VALUES] = (slot.corners - ((cell + frac) * head.stride)).reshape(-1)
        vec[GEOMETRY_VALUES] = logit(slot.confidence / ceiling)
        vec[GEOMETRY_VALUES + 1:] = logits
    return raw


def polygon_nms(slots, iou_threshold: float = DEFAULT_NMS_IOU) -> list[PolygonSlot]:
    """Greedy non-maximum suppression with exact polygon IoU.

    A candidate is dropped when its IoU with an already kept slot exceeds
    ``iou_threshold``. Ties in confidence keep the input order.
    """
    iou_threshold = check_unit_interval(iou_threshold, "iou_threshold")
    order = sorted(range(len(slots)), key=lambda i: -slots[i].confidence)
    kept: list[PolygonSlot] = []
    for i in order:
        cand = slots[i]
        if all(polygon_iou_exact(k, cand) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


# -- raw tensor files ------------------------------------------------------------

def _header_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".hdr")


def write_raw_prediction(path, raw, head: HeadSpec) -> None:
    """Write ``raw`` as little-endian float32 plus a ``<path>.hdr`` text header."""
    raw = np.asarray(raw)
    if raw.shape != head.shape:
        raise ValueError(f"prediction shape {raw.shape} does not match head {head.shape}")
    raw.astype("<f4").tofile(path)
    header = {
        "grid_x": head.grid[0],
        "grid_y": head.grid[1],
        "anchors_per_cell": head.anchors_per_cell,
        "num_classes": head.num_classes,
        "stride": head.stride,
        "dtype": "float32-le",
        "layout": "grid_y grid_x anchor value",
    }
    _header_path(path).write_text(yaml.safe_dump(header, sort_keys=False))


def read_raw_prediction(path):
    """Load a raw prediction and its head spec. Returns ``(raw, head)``."""
    hdr = _header_path(path)
    if not hdr.exists():
        raise FileNotFoundError(f"missing header file {hdr}")
    meta = yaml.safe_load(hdr.read_text()) or {}
    try:
        head = HeadSpec((meta["grid_x"], meta["grid_y"]), meta.get("anchors_per_cell", 1),
                        meta.get("num_classes", 3), meta.get("stride", 32.0))
    except KeyError as exc:
        raise ValueError(f"{hdr}: missing field {exc}") from None
    data = np.fromfile(path, dtype="<f4")
    if data.size != int(np.prod(head.shape)):
        raise ValueError(
            f"{path}: holds {data.size} floats, header implies {int(np.prod(head.shape))}")
    return data.reshape(head.shape).astype(float), head


class SlotDecoder(BaseEstimator, TransformerMixin):
    """Decode raw head outputs to slots, optionally followed by NMS."""

    def __init__(self, grid=(20, 20), anchors_per_cell=1, num_classes=3, stride=32.0,
                 conf_threshold=DEFAULT_CONF_THRESHOLD, iou_threshold=DEFAULT_NMS_IOU,
                 nms=True):
        self.grid = grid
        self.anchors_per_cell = anchors_per_cell
        self.num_classes = num_classes
        self.stride = stride
        self.conf_threshold = conf_threshold
        self.iou_threshold = iou_threshold
        self.nms = nms

    def fit(self, X=None, y=None):
        self.head_ = HeadSpec(self.grid, self.anchors_per_cell, self.num_classes, self.stride)
        return self

    def _one(self, raw):
        slots = decode(raw, self.head_, self.conf_threshold)
        return polygon_nms(slots, self.iou_threshold) if self.nms else slots

    def transform(self, X):
        """``X``: one raw tensor or a batch with a leading axis."""
        if not hasattr(self, "head_"):
            self.fit()
        X = np.asarray(X, dtype=float)
        if X.shape == self.head_.shape:
            return self._one(X)
        return [self._one(r) for r in X]
