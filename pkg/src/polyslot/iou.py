"""Box and polygon overlap measures.

Three families live here:

* axis-aligned box IoU / GIoU (scalar and vectorised, with gradients),
* the polygon-corner GIoU: four boxes per slot, each spanned by the slot
  center and one corner, compared corner by corner and averaged,
* exact polygon IoU / GIoU by convex clipping, with a rasterised fallback
  that doubles as an independent oracle in the tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from ._validation import DegenerateSlotError, check_points
from .geometry import PolygonSlot, outline, signed_area, validate_slot

logger = logging.getLogger(__name__)

#: Denominator floor for zero-area boxes.
EPS = 1e-9

#: Default grid size of the rasterised fallback / oracle.
RASTER_RESOLUTION = 2048

__all__ = [
    "AxisBox",
    "box_iou",
    "box_giou",
    "box_giou_with_grad",
    "corner_box",
    "corner_boxes",
    "corner_gious",
    "polygon_corner_giou",
    "polygon_iou_exact",
    "polygon_giou_exact",
    "polygon_iou_raster",
    "is_convex",
    "clip_convex",
]


@dataclass(frozen=True)
class AxisBox:
    min_corner: tuple
    max_corner: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min_corner)
        hi = tuple(float(v) for v in self.max_corner)
        if len(lo) != 2 or len(hi) != 2:
            raise ValueError("box corners must be 2D points")
        if not np.all(np.isfinite(lo + hi)):
            raise ValueError("box corners must be finite")
        if lo[0] > hi[0] or lo[1] > hi[1]:
            raise ValueError(f"min_corner {lo} exceeds max_corner {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @classmethod
    def from_points(cls, p, q) -> "AxisBox":
        p, q = np.asarray(p, float), np.asarray(q, float)
        return cls(np.minimum(p, q), np.maximum(p, q))

    @property
    def area(self) -> float:
        return ((self.max_corner[0] - self.min_corner[0])
                * (self.max_corner[1] - self.min_corner[1]))


def _giou_kernel(a_lo, a_hi, b_lo, b_hi, want_grad=False):
    """IoU and GIoU of box arrays with shape (..., 2).

    With ``want_grad`` also returns dGIoU/d(a_lo) and dGIoU/d(a_hi). At
    min/max ties the gradient follows the ``b`` (reference) branch.
    """
    a_wh = a_hi - a_lo
    b_wh = b_hi - b_lo
    area_a = a_wh[..., 0] * a_wh[..., 1]
    area_b = b_wh[..., 0] * b_wh[..., 1]

    i_raw = np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo)
    i_wh = np.maximum(i_raw, 0.0)
    inter = i_wh[..., 0] * i_wh[..., 1]
    union = area_a + area_b - inter
    union_d = np.maximum(union, EPS)
    iou = inter / union_d

    c_wh = np.maximum(a_hi, b_hi) - np.minimum(a_lo, b_lo)
    encl = c_wh[..., 0] * c_wh[..., 1]
    encl_d = np.maximum(encl, EPS)
    giou = iou - (encl - union) / encl_d
    if not want_grad:
        return iou, giou

    # d(area)/d(hi) for axis k is the other axis' extent
    other_a = a_wh[..., ::-1]
    other_i = i_wh[..., ::-1]
    other_c = c_wh[..., ::-1]
    overlap = (i_raw > 0).all(axis=-1, keepdims=True)

    d_area_hi = other_a
    d_area_lo = -other_a
    d_inter_hi = np.where(overlap & (a_hi < b_hi), other_i, 0.0)
    d_inter_lo = np.where(overlap & (a_lo > b_lo), -other_i, 0.0)
    d_encl_hi = np.where(a_hi > b_hi, other_c, 0.0)
    d_encl_lo = np.where(a_lo < b_lo, -other_c, 0.0)

    u_live = (union > EPS)[..., None]
    c_live = (encl > EPS)[..., None]
    ud = union_d[..., None]
    cd = encl_d[..., None]
    it = inter[..., None]
    gap = (encl - union)[..., None]

    def combine(d_area, d_inter, d_encl):
        d_union = d_area - d_inter
        d_iou = d_inter / ud - np.where(u_live, it * d_union / ud**2, 0.0)
        d_pen = (d_encl - d_union) / cd - np.where(c_live, gap * d_encl / cd**2, 0.0)
        return d_iou - d_pen

    return (iou, giou,
            combine(d_area_lo, d_inter_lo, d_encl_lo),
            combine(d_area_hi, d_inter_hi, d_encl_hi))


def _box_arrays(box: AxisBox):
    return np.asarray(box.min_corner), np.asarray(box.max_corner)


def box_iou(a: AxisBox, b: AxisBox) -> float:
    if a.area == 0 and b.area == 0:
        logger.debug("box_iou: both boxes have zero area, returning 0")
    iou, _ = _giou_kernel(*_box_arrays(a), *_box_arrays(b))
    return float(iou)


def box_giou(a: AxisBox, b: AxisBox) -> float:
    if a.area == 0 and b.area == 0:
        logger.debug("box_giou: both boxes have zero area")
    _, giou = _giou_kernel(*_box_arrays(a), *_box_arrays(b))
    return float(giou)


def box_giou_with_grad(a_lo, a_hi, b_lo, b_hi):
    """Vectorised GIoU of ``a`` against ``b`` plus its gradient w.r.t. ``a``.

    Returns ``(giou, d_lo, d_hi)`` where ``d_lo``/``d_hi`` have the shape of
    ``a_lo``/``a_hi``.
    """
    args = [np.asarray(v, dtype=float) for v in (a_lo, a_hi, b_lo, b_hi)]
    _, giou, d_lo, d_hi = _giou_kernel(*args, want_grad=True)
    return giou, d_lo, d_hi


def corner_box(center, corner) -> AxisBox:
    return AxisBox.from_points(center, corner)


def corner_boxes(corners, center=None):
    """Low/high arrays (4, 2) of the center-to-corner boxes of a slot."""
    corners = np.asarray(corners, dtype=float)
    c = corners.mean(axis=0) if center is None else np.asarray(center, float)
    return np.minimum(c, corners), np.maximum(c, corners)


def corner_gious(pred, gt, pred_center=None, gt_center=None) -> np.ndarray:
    """Per-corner GIoU values, shape (4,).

    Each slot uses its own centroid unless an explicit center is given
    (e.g. the center regressed by a detection head). A corner box that is
    identical in both slots scores exactly 1 even when it has zero area.
    """
    p = pred.corners if isinstance(pred, PolygonSlot) else np.asarray(pred, float)
    g = gt.corners if isinstance(gt, PolygonSlot) else np.asarray(gt, float)
    p_lo, p_hi = corner_boxes(p, pred_center)
    g_lo, g_hi = corner_boxes(g, gt_center)
    _, giou = _giou_kernel(p_lo, p_hi, g_lo, g_hi)
    same = np.all((p_lo == g_lo) & (p_hi == g_hi), axis=-1)
    return np.where(same, 1.0, giou)


def polygon_corner_giou(pred: PolygonSlot, gt: PolygonSlot,
                        pred_center=None, gt_center=None) -> float:
    """Mean GIoU over the four center-to-corner boxes, in (-1, 1].

    Corner ``i`` of ``pred`` is compared with corner ``i`` of ``gt``, so a
    prediction with the right outline but the wrong corner order scores
    below 1.
    """
    validate_slot(pred)
    validate_slot(gt)
    return float(corner_gious(pred, gt, pred_center, gt_center).mean())


# -- exact polygon overlap ---------------------------------------------------

def _ring(poly) -> np.ndarray:
    """Counterclockwise vertex ring of a slot or an (N, 2) point array."""
    if isinstance(poly, PolygonSlot):
        validate_slot(poly)
        ring = outline(poly)
    else:
        ring = check_points(poly, name="polygon")
        if ring.shape[0] < 3 or abs(signed_area(ring)) < EPS:
            raise DegenerateSlotError("polygon has fewer than 3 vertices or zero area")
    if signed_area(ring) < 0:
        ring = ring[::-1]
    return np.ascontiguousarray(ring)


def is_convex(ring) -> bool:
    ring = np.asarray(ring, dtype=float)
    e = np.roll(ring, -1, axis=0) - ring
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    return bool(np.all(cross >= 0) or np.all(cross <= 0))


def clip_convex(subject, clipper) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by convex CCW ``clipper``."""
    out = [tuple(p) for p in subject]
    m = len(clipper)
    for k in range(m):
        if not out:
            break
        ax, ay = clipper[k]
        bx, by = clipper[(k + 1) % m]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        src, out = out, []
        prev = src[-1]
        s_prev = side(prev)
        for cur in src:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    out.append(_cut(prev, cur, s_prev, s_cur))
                out.append(cur)
            elif s_prev >= 0:
                out.append(_cut(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return np.asarray(out, dtype=float).reshape(-1, 2)


def _cut(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _clip_area(ra, rb):
    if is_convex(rb):
        inter = clip_convex(ra, rb)
    else:
        inter = clip_convex(rb, ra)
    return abs(signed_area(inter)) if len(inter) >= 3 else 0.0


def _bbox_disjoint(ra, rb) -> bool:
    return bool(np.any(ra.max(0) <= rb.min(0)) or np.any(rb.max(0) <= ra.min(0)))


def _overlap_areas(ra, rb):
    """Exact (intersection, union) areas; needs one convex ring or disjoint bboxes."""
    area_a = abs(signed_area(ra))
    area_b = abs(signed_area(rb))
    if _bbox_disjoint(ra, rb):
        return 0.0, area_a + area_b
    inter = _clip_area(ra, rb)
    return inter, area_a + area_b - inter


def _needs_raster(ra, rb) -> bool:
    return not (is_convex(ra) or is_convex(rb)) and not _bbox_disjoint(ra, rb)


def polygon_iou_exact(a, b, resolution: int = RASTER_RESOLUTION) -> float:
    """Area IoU of two simple polygons.

    Uses convex clipping when at least one polygon is convex; a pair of
    non-convex polygons falls back to :func:`polygon_iou_raster`.
    """
    ra, rb = _ring(a), _ring(b)
    if _needs_raster(ra, rb):
        logger.debug("non-convex pair, using rasterised IoU")
        return polygon_iou_raster(ra, rb, resolution)
    inter, union = _overlap_areas(ra, rb)
    return float(min(max(inter / max(union, EPS), 0.0), 1.0))


def _hull_area(points) -> float:
    try:
        return float(ConvexHull(points).volume)
    except Exception:
        # collinear or duplicated input; joggle to get a valid hull
        return float(ConvexHull(points, qhull_options="QJ").volume)


def polygon_giou_exact(a, b, enclosure: str = "hull",
                       resolution: int = RASTER_RESOLUTION) -> float:
    """Polygon GIoU using the convex hull of both polygons as enclosure.

    ``enclosure="box"`` uses the smallest axis-aligned box instead.
    """
    ra, rb = _ring(a), _ring(b)
    if _needs_raster(ra, rb):
        counts, cell = _raster_counts(ra, rb, resolution)
        inter_c, union_c = counts[0], counts[1] + counts[2] - counts[0]
        iou = inter_c / max(union_c, 1)
        union = abs(signed_area(ra)) + abs(signed_area(rb)) - inter_c * cell
    else:
        inter, union = _overlap_areas(ra, rb)
        iou = inter / max(union, EPS)
    pts = np.vstack([ra, rb])
    if enclosure == "hull":
        encl = _hull_area(pts)
    elif enclosure == "box":
        encl = float(np.prod(pts.max(0) - pts.min(0)))
    else:
        raise ValueError(f"enclosure must be 'hull' or 'box', got {enclosure!r}")
    return float(iou - max(encl - union, 0.0) / max(encl, EPS))


# -- rasterisation -------------------------------------------------------------

def _row_intervals(ring, ys, x0, dx, ncols):
    """Per-row pixel-center index intervals [lo, hi) inside ``ring``.

    Returns two int arrays of shape (rows, k) where ``k`` is the maximum
    number of spans per row. Empty spans have lo == hi.
    """
    p = ring
    q = np.roll(ring, -1, axis=0)
    y1, y2 = p[:, 1][None, :], q[:, 1][None, :]
    x1, x2 = p[:, 0][None, :], q[:, 0][None, :]
    yy = ys[:, None]
    crosses = ((y1 <= yy) & (yy < y2)) | ((y2 <= yy) & (yy < y1))
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = x1 + (yy - y1) * (x2 - x1) / (y2 - y1)
    xs = np.where(crosses, xs, np.inf)
    xs.sort(axis=1)
    n_span = xs.shape[1] // 2
    left = xs[:, 0:2 * n_span:2]
    right = xs[:, 1:2 * n_span:2]
    valid = np.isfinite(left) & np.isfinite(right)
    # pixel j has center x0 + (j + 0.5) dx; it is inside when left <= x < right
    with np.errstate(invalid="ignore"):
        lo = np.ceil((left - x0) / dx - 0.5)
        hi = np.ceil((right - x0) / dx - 0.5)
    lo = np.clip(np.where(valid, lo, 0), 0, ncols).astype(np.int64)
    hi = np.clip(np.where(valid, hi, 0), 0, ncols).astype(np.int64)
    hi = np.maximum(hi, lo)
    return lo, hi


def _raster_counts(ra, rb, resolution):
    """Pixel counts (intersection, |A|, |B|) on a grid over the joint bbox."""
    pts = np.vstack([ra, rb])
    lo, hi = pts.min(0), pts.max(0)
    dx = (hi[0] - lo[0]) / resolution
    dy = (hi[1] - lo[1]) / resolution
    ys = lo[1] + (np.arange(resolution) + 0.5) * dy
    a_lo, a_hi = _row_intervals(ra, ys, lo[0], dx, resolution)
    b_lo, b_hi = _row_intervals(rb, ys, lo[0], dx, resolution)
    count_a = int((a_hi - a_lo).sum())
    count_b = int((b_hi - b_lo).sum())
    inter = 0
    for i in range(a_lo.shape[1]):
        for j in range(b_lo.shape[1]):
            span = (np.minimum(a_hi[:, i], b_hi[:, j])
                    - np.maximum(a_lo[:, i], b_lo[:, j]))
            inter += int(np.maximum(span, 0).sum())
    return (inter, count_a, count_b), dx * dy


def polygon_iou_raster(a, b, resolution: int = RASTER_RESOLUTION) -> float:
    """IoU from counting the centers of a ``resolution`` x ``resolution``
    grid laid over the joint bounding box.

    Works for any simple polygons. Each grid row is resolved with exact
    edge crossings, so the count equals testing every grid center.
    """
    ra, rb = _ring(a), _ring(b)
    (inter, ca, cb), _ = _raster_counts(ra, rb, int(resolution))
    union = ca + cb - inter
    return inter / union if union else 0.0
