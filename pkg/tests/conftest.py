from pathlib import Path

import numpy as np
import pytest

from polyslot.geometry import PolygonSlot

DATA = Path(__file__).parent / "data"


def square(cx=0.0, cy=0.0, half=1.0, conf=1.0, kind="perpendicular"):
    """Axis-aligned square; entrance on the top edge (y = cy + half)."""
    c = np.array([[cx - half, cy + half], [cx + half, cy + half],
                  [cx - half, cy - half], [cx + half, cy - half]])
    return PolygonSlot(c, kind, conf)


def ring_to_slot(ring, conf=1.0):
    """Outline points (in traversal order) to a slot in storage order."""
    ring = np.asarray(ring, dtype=float)
    return PolygonSlot(ring[[0, 1, 3, 2]], confidence=conf)


def random_convex_quad(rng, center_scale=5.0, size=(0.5, 3.0), min_gap=0.3, conf=1.0):
    """Convex quad with vertices on a random rotated ellipse."""
    while True:
        ang = np.sort(rng.uniform(0, 2 * np.pi, 4))
        gaps = np.diff(np.r_[ang, ang[0] + 2 * np.pi])
        if gaps.min() > min_gap:
            break
    a, b = rng.uniform(*size, 2)
    rot = rng.uniform(0, np.pi)
    pts = np.stack([a * np.cos(ang), b * np.sin(ang)], axis=1)
    r = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
    pts = pts @ r.T + rng.uniform(-center_scale, center_scale, 2)
    return ring_to_slot(pts, conf)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def data_dir():
    return DATA


# -- gradient checking -------------------------------------------------------------

FD_STEP = 1e-5
KINK_MARGIN = 1e-3


def _boxes(p):
    c = p.mean(axis=0)
    return np.minimum(c, p), np.maximum(c, p), c


def near_kink(p, g, margin=KINK_MARGIN):
    """True when the loss is not smooth within ``margin`` of ``p``.

    The loss has kinks where a corner coordinate equals the center, where
    box edges of pred and gt coincide, where a box overlap starts or ends,
    and where a corner distance is zero.
    """
    a_lo, a_hi, ca = _boxes(p)
    b_lo, b_hi, _ = _boxes(g)
    gaps = [p - ca, a_lo - b_lo, a_hi - b_hi, a_hi - b_lo, b_hi - a_lo]
    if min(np.abs(x).min() for x in gaps) < margin:
        return True
    return np.hypot(*(p - g).T).min() < margin


def random_loss_config(rng):
    """(pred, gt) corner arrays away from kinks, gt a valid slot."""
    from polyslot.geometry import is_simple
    base = np.array([[-1, 1], [1, 1], [-1, -1], [1, -1]], float)
    while True:
        g = base * rng.uniform(0.5, 3.0, 2) + rng.normal(0, 0.2, (4, 2))
        p = g + rng.normal(0, 0.4, (4, 2))
        if is_simple(g) and not near_kink(p, g):
            return p, g


def fd_relative_error(loss_fn, grad, p, h=FD_STEP):
    """Norm-wise relative error of ``grad`` against central differences."""
    flat = p.reshape(-1)
    fd = np.zeros_like(flat)
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = h
        fd[k] = (loss_fn((flat + e).reshape(p.shape)) - loss_fn((flat - e).reshape(p.shape))) / (2 * h)
    return np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)


# -- topview reconstruction ------------------------------------------------------------

SEAM_DILATION = 3


def checkerboard_mae(square_m, radius_m=None, supersample=2):
    """Render a ground checkerboard through the fixture rig, stitch it and
    compare against the checkerboard evaluated directly on the raster.

    Returns (mean absolute error, number of pixels compared). Pixels near
    seams (blended from several cameras, dilated) and uncovered pixels are
    excluded; ``radius_m`` further limits the comparison to a disc around
    the ego origin.
    """
    from scipy.ndimage import binary_dilation

    from polyslot.camera import fixture_rig_path, load_rig
    from polyslot.topview import (TopviewSpec, build_remap_table, checkerboard,
                                  pixel_center_grid, render_ground_image,
                                  render_topview_truth, synthesize_topview)

    rig = load_rig(fixture_rig_path())
    spec = TopviewSpec()
    texture = checkerboard(square_m)
    images = [render_ground_image(cam, texture, supersample=supersample) for cam in rig]
    table = build_remap_table(rig, spec)
    top = synthesize_topview(table, images).astype(float)
    truth = render_topview_truth(spec, texture, supersample=supersample)
    mask = table.covered & ~binary_dilation(table.seam_mask(), iterations=SEAM_DILATION)
    if radius_m is not None:
        g = pixel_center_grid(spec)
        mask &= np.hypot(g[..., 0], g[..., 1]) < radius_m
    err = np.abs(top - truth).mean(axis=2)
    return float(err[mask].mean()), int(mask.sum())


def random_frame(rng, n_max=6, spec=None, quantum=None, image=False):
    """Random labelled frame with convex slots inside the raster.

    ``quantum`` snaps corner coordinates to multiples of that value.
    """
    from polyslot.dataset import SCENE_TAGS, LabeledFrame
    from polyslot.geometry import PolygonSlot, SlotType, is_simple
    from polyslot.topview import TopviewSpec

    spec = spec or TopviewSpec()
    slots = []
    while len(slots) < rng.integers(0, n_max + 1):
        q = random_convex_quad(rng, center_scale=0.0, size=(10, 80)).corners
        q = q + rng.uniform(80, min(spec.width, spec.height) - 80, 2)
        if quantum:
            q = np.round(q / quantum) * quantum
        if not is_simple(q):
            continue
        kind = list(SlotType)[rng.integers(3)]
        slots.append(PolygonSlot(q, kind, float(rng.uniform(0.01, 1.0))))
    scene = [None, *SCENE_TAGS][rng.integers(4)]
    img = None
    if image:
        img = rng.integers(0, 256, (spec.height, spec.width, 3)).astype(np.uint8)
    return LabeledFrame(f"frame_{rng.integers(10**6):06d}.png", slots, spec, scene, img)


# -- brute-force precision/recall oracles ----------------------------------------------

def brute_pr_points(scores, is_tp, n_gt):
    """(recall, precision) arrays at every distinct score threshold, by direct counting."""
    scores, is_tp = np.asarray(scores, float), np.asarray(is_tp, bool)
    taus = np.unique(scores)
    sel = scores[None, :] >= taus[:, None]
    tp = (sel & is_tp[None, :]).sum(axis=1)
    return tp / n_gt, tp / sel.sum(axis=1)


def _interp_precision(recall, precision, r):
    """Best precision at any recall >= r (0 when r is never reached)."""
    hit = recall >= r
    return float(precision[hit].max()) if hit.any() else 0.0


def brute_ap_101(scores, is_tp, n_gt):
    recall, precision = brute_pr_points(scores, is_tp, n_gt)
    return float(np.mean([_interp_precision(recall, precision, r)
                          for r in np.linspace(0, 1, 101)]))


def brute_ap_area(scores, is_tp, n_gt):
    """Exact area under the interpolated (monotone envelope) PR curve."""
    recall, precision = brute_pr_points(scores, is_tp, n_gt)
    area, prev = 0.0, 0.0
    for r in np.unique(recall[recall > 0]):
        area += (r - prev) * _interp_precision(recall, precision, r)
        prev = r
    return float(area)


def random_detection_set(rng, n):
    """Scores, TP flags and gt count for a synthetic detector of random quality."""
    scores = rng.random(n)
    is_tp = rng.random(n) < scores ** rng.uniform(0.3, 3.0)
    n_gt = int(is_tp.sum()) + int(rng.integers(0, n // 4 + 1))
    return scores, is_tp, max(n_gt, 1)
