"""Surround-view topview synthesis by inverse perspective mapping.

Every topview pixel is a point on the flat ground. It is projected into
each camera, and the cameras that see it are blended: the camera whose
optical-axis ground point is nearest wins, with a linear feather of
``feather`` meters across the seams. The mapping only depends on the rig
and the raster geometry, so it is computed once (:func:`build_remap_table`)
and reused for every frame (:func:`synthesize_topview`).

Raster convention: continuous pixel coordinates, pixel ``(i, j)`` covers
``[i, i+1) x [j, j+1)``; ego forward (+y ground) points to the top of the
raster.
"""

from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image
from .camera import FisheyeCamera

logger = logging.getLogger(__name__)

DEFAULT_FEATHER_M = 0.5

__all__ = [
    "TopviewSpec",
    "RemapTable",
    "ground_to_raster",
    "raster_to_ground",
    "build_remap_table",
    "synthesize_topview",
    "bilinear_sample",
    "render_ground_image",
    "checkerboard",
    "render_topview_truth",
    "pixel_center_grid",
    "TopviewStitcher",
]


@dataclass(frozen=True)
class TopviewSpec:
    resolution: tuple = (640, 640)
    coverage: tuple = (25.0, 25.0)
    origin: tuple | None = None

    def __post_init__(self):
        res = tuple(int(v) for v in self.resolution)
        cov = tuple(float(v) for v in self.coverage)
        if len(res) != 2 or min(res) <= 0:
            raise ValueError(f"resolution must be two positive ints, got {self.resolution}")
        if len(cov) != 2 or min(cov) <= 0:
            raise ValueError(f"coverage must be two positive lengths, got {self.coverage}")
        mx, my = cov[0] / res[0], cov[1] / res[1]
        if abs(mx - my) > 1e-12 * max(mx, my):
            raise ValueError(
                f"meters per pixel differs between axes ({mx:g} vs {my:g}); "
                "topview pixels must be square"
            )
        origin = (res[0] / 2, res[1] / 2) if self.origin is None else tuple(
            float(v) for v in self.origin)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "coverage", cov)
        object.__setattr__(self, "origin", origin)

    @property
    def meters_per_pixel(self) -> float:
        return self.coverage[0] / self.resolution[0]

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    @classmethod
    def parse(cls, text: str) -> "TopviewSpec":
        """Parse ``WxH:M`` (square coverage of M meters) or ``WxH:MXxMY``."""
        num = r"(\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)"
        m = re.fullmatch(rf"\s*(\d+)x(\d+):{num}(?:x{num})?\s*", text)
        if not m:
            raise ValueError(f"bad topview spec {text!r}; expected e.g. 640x640:25")
        w, h = int(m.group(1)), int(m.group(2))
        cx = float(m.group(3))
        cy = float(m.group(4)) if m.group(4) else cx * h / w
        return cls((w, h), (cx, cy))

    def __str__(self):
        cx, cy = (repr(v).removesuffix(".0") for v in self.coverage)
        return f"{self.resolution[0]}x{self.resolution[1]}:{cx}x{cy}"


def ground_to_raster(spec: TopviewSpec, points) -> np.ndarray:
    """Ground meters (x right, y forward) to continuous raster pixels."""
    p = np.asarray(points, dtype=float)
    mpp = spec.meters_per_pixel
    u = spec.origin[0] + p[..., 0] / mpp
    v = spec.origin[1] - p[..., 1] / mpp
    return np.stack([u, v], axis=-1)


def raster_to_ground(spec: TopviewSpec, pixels) -> np.ndarray:
    q = np.asarray(pixels, dtype=float)
    mpp = spec.meters_per_pixel
    x = (q[..., 0] - spec.origin[0]) * mpp
    y = (spec.origin[1] - q[..., 1]) * mpp
    return np.stack([x, y], axis=-1)


def pixel_center_grid(spec: TopviewSpec) -> np.ndarray:
    """Ground coordinates of every raster pixel center, shape (H, W, 2)."""
    ii, jj = np.meshgrid(np.arange(spec.width) + 0.5, np.arange(spec.height) + 0.5)
    return raster_to_ground(spec, np.stack([ii, jj], axis=-1))


@dataclass
class RemapTable:
    """Per-pixel source coordinates and blend weights for each camera.

    ``map_u``, ``map_v`` and ``weight`` have shape (n_cameras, H, W).
    A weight of zero means the camera does not contribute; a pixel with
    all-zero weights is uncovered.
    """

    spec: TopviewSpec
    camera_names: tuple
    image_sizes: tuple
    map_u: np.ndarray
    map_v: np.ndarray
    weight: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return self.weight.sum(axis=0) > 0

    @property
    def coverage_fraction(self) -> float:
        return float(self.covered.mean())

    def seam_mask(self) -> np.ndarray:
        """Pixels blended from more than one camera."""
        return (self.weight > 0).sum(axis=0) > 1

    def camera_ids(self) -> np.ndarray:
        """Dominant camera per pixel, -1 where uncovered."""
        ids = self.weight.argmax(axis=0)
        return np.where(self.covered, ids, -1)


def build_remap_table(rig, spec: TopviewSpec | None = None,
                      feather: float = DEFAULT_FEATHER_M) -> RemapTable:
    spec = spec or TopviewSpec()
    if not rig:
        raise ValueError("rig must contain at least one camera")
    if feather < 0:
        raise ValueError("feather width must be non-negative")
    ground = pixel_center_grid(spec).reshape(-1, 2)
    n, k = len(ground), len(rig)
    map_u = np.zeros((k, n))
    map_v = np.zeros((k, n))
    dist = np.full((k, n), np.inf)
    for c, cam in enumerate(rig):
        uv, valid = cam.project_ground(ground)
        map_u[c] = np.where(valid, uv[:, 0], 0.0)
        map_v[c] = np.where(valid, uv[:, 1], 0.0)
        anchor = cam.axis_ground_point()
        d = np.hypot(ground[:, 0] - anchor[0], ground[:, 1] - anchor[1])
        dist[c] = np.where(valid, d, np.inf)
        if not valid.any():
            warnings.warn(f"camera {cam.name!r} covers no topview pixel", RuntimeWarning,
                          stacklevel=2)
    nearest = dist.min(axis=0)
    if feather > 0:
        with np.errstate(invalid="ignore"):
            raw = np.clip(1.0 - (dist - nearest) / feather, 0.0, 1.0)
    else:
        raw = (dist == nearest).astype(float)
        raw[:, ~np.isfinite(nearest)] = 0.0
    raw[~np.isfinite(dist)] = 0.0
    total = raw.sum(axis=0)
    weight = np.divide(raw, total, out=np.zeros_like(raw), where=total > 0)
    shape = (k, spec.height, spec.width)
    table = RemapTable(
        spec=spec,
        camera_names=tuple(cam.name for cam in rig),
        image_sizes=tuple(cam.image_size for cam in rig),
        map_u=map_u.reshape(shape),
        map_v=map_v.reshape(shape),
        weight=weight.reshape(shape),
    )
    logger.info("remap table built: %.1f%% of %s covered",
                100 * table.coverage_fraction, spec)
    return table


def bilinear_sample(image, u, v):
    """Sample ``image`` (H, W[, C]) at pixel-center coordinates ``u``, ``v``.

    Coordinates must lie in ``[0, W-1] x [0, H-1]``.
    """
    img = np.asarray(image)
    h, w = img.shape[:2]
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    x0 = np.clip(np.floor(u).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(v).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = u - x0
    fy = v - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    img = img.astype(float, copy=False)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def synthesize_topview(table: RemapTable, images) -> np.ndarray:
    """Blend camera images into one topview raster of shape (H, W, 3).

    8-bit inputs give an 8-bit result (rounded); float inputs give a float
    result, which keeps the mapping exactly linear in the intensities.
    Uncovered pixels are black.
    """
    images = [check_image(img, f"image {i}") for i, img in enumerate(images)]
    if len(images) != len(table.camera_names):
        raise ValueError(
            f"expected {len(table.camera_names)} images, got {len(images)}")
    for name, (w, h), img in zip(table.camera_names, table.image_sizes, images):
        if img.shape[:2] != (h, w):
            raise ValueError(
                f"image for camera {name!r} is {img.shape[1]}x{img.shape[0]}, "
                f"calibration expects {w}x{h}")
    as_uint8 = all(img.dtype == np.uint8 for img in images)
    spec = table.spec
    out = np.zeros((spec.height * spec.width, 3))
    for c, img in enumerate(images):
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        img = img[..., :3]
        wgt = table.weight[c].reshape(-1)
        idx = np.flatnonzero(wgt > 0)
        if idx.size == 0:
            continue
        samples = bilinear_sample(img, table.map_u[c].reshape(-1)[idx],
                                  table.map_v[c].reshape(-1)[idx])
        out[idx] += wgt[idx, None] * samples
    out = out.reshape(spec.height, spec.width, 3)
    if as_uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


# -- synthetic scenes -------------------------------------------------------------

def checkerboard(square: float = 1.0, dark=30, light=220):
    """Ground texture: alternating ``square``-meter gray tiles."""

    def texture(xy):
        xy = np.asarray(xy, dtype=float)
        parity = (np.floor(xy[..., 0] / square) + np.floor(xy[..., 1] / square)) % 2
        val = np.where(parity == 0, float(dark), float(light))
        return np.repeat(val[..., None], 3, axis=-1)

    return texture


def render_ground_image(camera: FisheyeCamera, texture, supersample: int = 2,
                        background=0) -> np.ndarray:
    """Render what ``camera`` sees of a textured flat ground, as uint8 RGB.

    Each pixel averages ``supersample**2`` rays. Rays that miss the ground
    get ``background``.
    """
    w, h = camera.image_size
    s = int(supersample)
    offs = (np.arange(s) + 0.5) / s - 0.5
    acc = np.zeros((h, w, 3))
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    for oy in offs:
        for ox in offs:
            uv = np.column_stack([(uu + ox).ravel(), (vv + oy).ravel()])
            pts, valid = camera.unproject_to_ground(uv)
            col = np.full((len(uv), 3), float(background))
            col[valid] = texture(pts[valid])
            acc += col.reshape(h, w, 3)
    return np.clip(np.rint(acc / (s * s)), 0, 255).astype(np.uint8)


def render_topview_truth(spec: TopviewSpec, texture, supersample: int = 1) -> np.ndarray:
    """Texture evaluated directly on the raster (float, no camera involved)."""
    s = int(supersample)
    offs = (np.arange(s) + 0.5) / s - 0.5
    ii, jj = np.meshgrid(np.arange(spec.width) + 0.5, np.arange(spec.height) + 0.5)
    acc = np.zeros((spec.height, spec.width, 3))
    for oy in offs:
        for ox in offs:
            pts = raster_to_ground(spec, np.stack([ii + ox, jj + oy], axis=-1))
            acc += texture(pts)
    return acc / (s * s)


class TopviewStitcher(BaseEstimator, TransformerMixin):
    """Estimator wrapper: ``fit`` precomputes the remap table, ``transform``
    turns a list of camera images (one per rig camera) into a topview."""

    def __init__(self, rig=None, resolution=(640, 640), coverage=(25.0, 25.0),
                 feather=DEFAULT_FEATHER_M):
        self.rig = rig
        self.resolution = resolution
        self.coverage = coverage
        self.feather = feather

    def fit(self, X=None, y=None):
        if not self.rig:
            raise ValueError("TopviewStitcher needs a camera rig")
        spec = TopviewSpec(self.resolution, self.coverage)
        self.table_ = build_remap_table(self.rig, spec, self.feather)
        return self

    def transform(self, X):
        """``X`` is one list of images, or a list of such lists (a batch)."""
        check_is_fitted(self, "table_")
        first = X[0]
        if isinstance(first, (list, tuple)):
            return np.stack([synthesize_topview(self.table_, imgs) for imgs in X])
        return synthesize_topview(self.table_, X)
