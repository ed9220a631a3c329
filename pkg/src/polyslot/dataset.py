"""Annotation files, PS2.0 conversion and label-aware augmentation.

Annotation files are JSON Lines, one frame per line::

    {"image": "0001.png", "topview": "640x640:25x25", "scene": "normal",
     "slots": [{"corners": [x1, y1, x2, y2, x3, y3, x4, y4],
                "type": "perpendicular", "confidence": 1.0}]}

Corners are topview pixels in the order entrance-left, entrance-right,
ending-left, ending-right. ``scene`` and ``confidence`` are optional
(``confidence`` defaults to 1.0, as for ground truth). Blank lines and
lines starting with ``#`` are ignored. See ``docs/formats.md``.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import AREA_TOL, InvalidSlotError
from .geometry import PolygonSlot, SlotType, is_simple, polygon_area
from .topview import TopviewSpec, bilinear_sample

logger = logging.getLogger(__name__)

SCENE_TAGS = ("normal", "indoor", "paving")
#: Slot depth (m) used to synthesise the ending line of PS2.0 slots.
PS20_DEPTH_M = {
    SlotType.PERPENDICULAR: 5.0,
    SlotType.PARALLEL: 2.5,
    SlotType.DIAGONAL: 5.0,
}
PS20_IMAGE_SIZE = 600
PS20_PX_PER_M = 60.0
HSV_GAINS = (0.015, 0.7, 0.4)
MAX_ROTATION_DEG = 25.0
KEEP_MARGIN = 0.1

#: Corner permutation applied by mirror flips (left and right swap roles).
MIRROR_ROLES = [1, 0, 3, 2]

__all__ = [
    "LabeledFrame",
    "AnnotationError",
    "read_annotations",
    "write_annotations",
    "frame_to_record",
    "frame_from_record",
    "parse_ps20_export",
    "convert_ps20",
    "augment",
    "flip_lr",
    "flip_ud",
    "rotate",
    "adjust_hsv",
    "SlotAugmenter",
]


class AnnotationError(ValueError):
    pass


@dataclass(eq=False)
class LabeledFrame:
    image_path: str
    slots: list = field(default_factory=list)
    topview_spec: TopviewSpec = field(default_factory=TopviewSpec)
    scene_tag: str | None = None
    image: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.scene_tag is not None and self.scene_tag not in SCENE_TAGS:
            raise AnnotationError(
                f"scene tag must be one of {SCENE_TAGS}, got {self.scene_tag!r}")

    def __eq__(self, other):
        # image pixels are not part of the label identity
        if not isinstance(other, LabeledFrame):
            return NotImplemented
        return (self.image_path == other.image_path
                and self.topview_spec == other.topview_spec
                and self.scene_tag == other.scene_tag
                and self.slots == other.slots)

    def replace(self, **changes) -> "LabeledFrame":
        kw = dict(image_path=self.image_path, slots=self.slots,
                  topview_spec=self.topview_spec, scene_tag=self.scene_tag,
                  image=self.image)
        kw.update(changes)
        return LabeledFrame(**kw)

    def load_image(self, root=".") -> np.ndarray:
        path = Path(root) / self.image_path
        with Image.open(path) as im:
            self.image = np.asarray(im.convert("RGB"))
        return self.image


# -- annotation files -----------------------------------------------------------

def frame_to_record(frame: LabeledFrame) -> dict:
    rec = {"image": frame.image_path, "topview": str(frame.topview_spec)}
    if frame.scene_tag is not None:
        rec["scene"] = frame.scene_tag
    rec["slots"] = [
        {"corners": [float(v) for v in s.corners.reshape(-1)],
         "type": s.slot_type.value,
         "confidence": float(s.confidence)}
        for s in frame.slots
    ]
    return rec


def frame_from_record(rec, where: str = "record") -> LabeledFrame:
    if not isinstance(rec, dict):
        raise AnnotationError(f"{where}: expected a JSON object")
    if not isinstance(rec.get("image"), str):
        raise AnnotationError(f"{where}: field 'image' must be a string")
    try:
        spec = TopviewSpec.parse(rec["topview"]) if "topview" in rec else TopviewSpec()
    except (ValueError, TypeError) as exc:
        raise AnnotationError(f"{where}: field 'topview': {exc}") from None
    scene = rec.get("scene")
    if scene is not None and scene not in SCENE_TAGS:
        raise AnnotationError(f"{where}: field 'scene' must be one of {SCENE_TAGS}")
    raw_slots = rec.get("slots", [])
    if not isinstance(raw_slots, list):
        raise AnnotationError(f"{where}: field 'slots' must be a list")
    slots = []
    for k, s in enumerate(raw_slots):
        at = f"{where}, slot {k}"
        if not isinstance(s, dict):
            raise AnnotationError(f"{at}: expected an object")
        corners = s.get("corners")
        if (not isinstance(corners, list) or len(corners) != 8
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                           for v in corners)):
            raise AnnotationError(f"{at}: field 'corners' must be 8 numbers")
        try:
            slots.append(PolygonSlot(np.reshape(corners, (4, 2)),
                                     s.get("type", "perpendicular"),
                                     s.get("confidence", 1.0)))
        except InvalidSlotError:
            raise AnnotationError(f"{at}: field 'corners' must be finite") from None
        except ValueError as exc:
            field_name = "confidence" if "confidence" in str(exc) else "type"
            raise AnnotationError(f"{at}: field '{field_name}': {exc}") from None
    return LabeledFrame(rec["image"], slots, spec, scene)


def read_annotations(path) -> list[LabeledFrame]:
    path = Path(path)
    frames = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(text)
            except json.JSONDecodeError as exc:
                raise AnnotationError(f"{where}: invalid JSON ({exc.msg})") from None
            frames.append(frame_from_record(rec, where))
    return frames


def write_annotations(frames, path) -> None:
    with Path(path).open("w") as fh:
        for frame in frames:
            fh.write(json.dumps(frame_to_record(frame)) + "\n")


# -- PS2.0 export ---------------------------------------------------------------

def parse_ps20_export(path) -> list[tuple]:
    """Read ``x1 y1 x2 y2 angle_deg type`` records, one slot per line."""
    records = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 6:
                raise AnnotationError(
                    f"{path}:{lineno}: expected 'x1 y1 x2 y2 angle_deg type', got {text!r}")
            try:
                nums = tuple(float(v) for v in parts[:5])
                kind = SlotType.parse(int(parts[5]) if parts[5].isdigit() else parts[5])
            except (ValueError, IndexError) as exc:
                raise AnnotationError(f"{path}:{lineno}: {exc}") from None
            records.append(nums + (kind,))
    return records


def convert_ps20(records, image_path: str = "", image_size: int = PS20_IMAGE_SIZE,
                 px_per_meter: float = PS20_PX_PER_M, depths=None) -> LabeledFrame:
    """Build four-corner slots from PS2.0 entrance marking pairs.

    Each record is ``(x1, y1, x2, y2, angle_deg, type)``. The marking pair
    becomes entrance-left/entrance-right; the ending corners are the
    entrance corners moved by the type's slot depth along the direction
    ``(cos a, sin a)`` (raster axes, y down).
    """
    depths = {**PS20_DEPTH_M, **(depths or {})}
    coverage = image_size / px_per_meter
    spec = TopviewSpec((image_size, image_size), (coverage, coverage))
    slots = []
    for k, (x1, y1, x2, y2, angle, kind) in enumerate(records):
        kind = SlotType.parse(kind)
        el, er = np.array([x1, y1], float), np.array([x2, y2], float)
        if np.array_equal(el, er):
            warnings.warn(f"PS2.0 record {k}: coincident marking points, skipped",
                          RuntimeWarning, stacklevel=2)
            continue
        a = math.radians(angle)
        step = depths[kind] * px_per_meter * np.array([math.cos(a), math.sin(a)])
        corners = np.array([el, er, el + step, er + step])
        if polygon_area(corners) < AREA_TOL or not is_simple(corners):
            warnings.warn(f"PS2.0 record {k}: slot direction parallel to the entrance, "
                          "skipped", RuntimeWarning, stacklevel=2)
            continue
        slots.append(PolygonSlot(corners, kind))
    return LabeledFrame(image_path, slots, spec)


# -- augmentation ----------------------------------------------------------------

def _keep(slot: PolygonSlot, spec: TopviewSpec, margin: float) -> bool:
    w, h = spec.resolution
    c = slot.corners
    inside = ((c[:, 0] >= -margin * w) & (c[:, 0] <= (1 + margin) * w)
              & (c[:, 1] >= -margin * h) & (c[:, 1] <= (1 + margin) * h))
    return bool(inside.all()) and polygon_area(c) >= AREA_TOL and is_simple(c)


def flip_lr(frame: LabeledFrame) -> LabeledFrame:
    """Mirror left-right. Left and right corner roles swap."""
    w = frame.topview_spec.width
    slots = []
    for s in frame.slots:
        c = s.corners.copy()
        c[:, 0] = w - c[:, 0]
        slots.append(s.with_corners(c[MIRROR_ROLES]))
    image = None if frame.image is None else np.ascontiguousarray(frame.image[:, ::-1])
    return frame.replace(slots=slots, image=image)


def flip_ud(frame: LabeledFrame) -> LabeledFrame:
    """Mirror up-down. A mirror also swaps left and right corner roles."""
    h = frame.topview_spec.height
    slots = []
    for s in frame.slots:
        c = s.corners.copy()
        c[:, 1] = h - c[:, 1]
        slots.append(s.with_corners(c[MIRROR_ROLES]))
    image = None if frame.image is None else np.ascontiguousarray(frame.image[::-1])
    return frame.replace(slots=slots, image=image)


def _rotation(angle_deg):
    # counterclockwise as displayed, in y-down raster coordinates
    a = math.radians(angle_deg)
    return np.array([[math.cos(a), math.sin(a)], [-math.sin(a), math.cos(a)]])


def rotate(frame: LabeledFrame, angle_deg: float, margin: float = KEEP_MARGIN) -> LabeledFrame:
    """Rotate about the raster center (the ego position).

    Slots whose corners leave the raster by more than ``margin`` of its size
    are dropped. The image is resampled bilinearly with black fill.
    """
    spec = frame.topview_spec
    center = np.array([spec.width / 2, spec.height / 2])
    rot = _rotation(angle_deg)
    slots = []
    for s in frame.slots:
        moved = s.with_corners((s.corners - center) @ rot.T + center)
        if _keep(moved, spec, margin):
            slots.append(moved)
        else:
            logger.debug("rotation dropped slot %r", moved)
    image = frame.image
    if image is not None:
        image = _rotate_image(image, rot, center)
    return frame.replace(slots=slots, image=image)


def _rotate_image(image, rot, center):
    h, w = image.shape[:2]
    ii, jj = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dst = np.stack([ii, jj], axis=-1) - center
    src = dst @ rot + center           # inverse rotation (rot is orthonormal)
    x = src[..., 0] - 0.5
    y = src[..., 1] - 0.5
    inside = (x >= -0.5) & (x <= w - 0.5) & (y >= -0.5) & (y <= h - 0.5)
    vals = bilinear_sample(image, np.clip(x, 0, w - 1), np.clip(y, 0, h - 1))
    mask = inside[..., None] if image.ndim == 3 else inside
    out = np.where(mask, vals, 0.0)
    if image.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out.astype(image.dtype)


def adjust_hsv(image, dh: float, ds: float, dv: float) -> np.ndarray:
    """Scale hue, saturation and value by ``1 + d``; zero gains are a no-op."""
    image = np.asarray(image)
    if dh == 0 and ds == 0 and dv == 0:
        return image.copy()
    hsv = np.asarray(Image.fromarray(image.astype(np.uint8)).convert("HSV")).astype(float)
    hsv[..., 0] = np.mod(hsv[..., 0] * (1 + dh), 256)
    hsv[..., 1] = np.clip(hsv[..., 1] * (1 + ds), 0, 255)
    hsv[..., 2] = np.clip(hsv[..., 2] * (1 + dv), 0, 255)
    bands = [Image.fromarray(np.rint(hsv[..., k]).astype(np.uint8)) for k in range(3)]
    out = Image.merge("HSV", bands).convert("RGB")
    return np.asarray(out)


def augment(frame: LabeledFrame, op: str, seed=None, *, angle: float | None = None,
            gains=None, margin: float = KEEP_MARGIN,
            max_angle: float = MAX_ROTATION_DEG, hsv_ranges=HSV_GAINS) -> LabeledFrame:
    """Apply one augmentation to a frame (labels and, if loaded, its image).

    ``op`` is ``flip_lr``, ``flip_ud``, ``rotate`` or ``hsv``. Without an
    explicit ``angle``/``gains``, ``rotate`` draws an angle in
    ``[0, max_angle]`` and ``hsv`` draws gains in ``+-hsv_ranges`` from
    ``numpy.random.default_rng(seed)``.
    """
    rng = np.random.default_rng(seed)
    if op == "flip_lr":
        return flip_lr(frame)
    if op == "flip_ud":
        return flip_ud(frame)
    if op == "rotate":
        if angle is None:
            angle = float(rng.uniform(0.0, max_angle))
        return rotate(frame, angle, margin)
    if op == "hsv":
        if gains is None:
            gains = rng.uniform(-1, 1, 3) * np.asarray(hsv_ranges)
        if frame.image is None:
            return frame.replace()
        return frame.replace(image=adjust_hsv(frame.image, *gains))
    raise ValueError(f"unknown augmentation {op!r}; use flip_lr, flip_ud, rotate or hsv")


class SlotAugmenter(BaseEstimator, TransformerMixin):
    """Random augmentation pipeline over a list of frames.

    Each op fires independently with its probability, in the order
    flip_lr, flip_ud, rotate, hsv. Stateless: ``fit`` does nothing.
    """

    def __init__(self, p_flip_lr=0.5, p_flip_ud=0.5, p_rotate=0.5, p_hsv=0.5,
                 max_angle=MAX_ROTATION_DEG, hsv_ranges=HSV_GAINS, margin=KEEP_MARGIN,
                 random_state=None):
        self.p_flip_lr = p_flip_lr
        self.p_flip_ud = p_flip_ud
        self.p_rotate = p_rotate
        self.p_hsv = p_hsv
        self.max_angle = max_angle
        self.hsv_ranges = hsv_ranges
        self.margin = margin
        self.random_state = random_state

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        rng = np.random.default_rng(self.random_state)
        probs = [("flip_lr", self.p_flip_lr), ("flip_ud", self.p_flip_ud),
                 ("rotate", self.p_rotate), ("hsv", self.p_hsv)]
        out = []
        for frame in X:
            for op, p in probs:
                if rng.random() < p:
                    frame = augment(frame, op, int(rng.integers(2**32)), margin=self.margin,
                                    max_angle=self.max_angle, hsv_ranges=self.hsv_ranges)
            out.append(frame)
        return out
