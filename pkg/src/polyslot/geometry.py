"""Ordered four-corner parking slot polygons.

Corners are stored in the order entrance-left, entrance-right, ending-left,
ending-right. The closed outline of a slot is walked in a different order
(entrance-left, entrance-right, ending-right, ending-left) because the
entrance and ending lines are opposite edges; see :data:`TRAVERSAL`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ._validation import (
    AREA_TOL,
    DegenerateSlotError,
    InvalidSlotError,
    check_corners,
    check_points,
    check_unit_interval,
)

__all__ = [
    "SlotType",
    "PolygonSlot",
    "RelativeSlot",
    "TRAVERSAL",
    "ENTRANCE_LEFT",
    "ENTRANCE_RIGHT",
    "ENDING_LEFT",
    "ENDING_RIGHT",
    "outline",
    "polygon_area",
    "signed_area",
    "is_simple",
    "validate_slot",
    "centroid",
    "to_relative",
    "from_relative",
    "entrance_angle",
]

ENTRANCE_LEFT, ENTRANCE_RIGHT, ENDING_LEFT, ENDING_RIGHT = range(4)

#: Storage indices in outline order.
TRAVERSAL = (ENTRANCE_LEFT, ENTRANCE_RIGHT, ENDING_RIGHT, ENDING_LEFT)


class SlotType(str, enum.Enum):
    PERPENDICULAR = "perpendicular"
    PARALLEL = "parallel"
    DIAGONAL = "diagonal"

    @classmethod
    def parse(cls, value) -> "SlotType":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return list(cls)[int(value)]
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown slot type {value!r}; expected one of "
                f"{[t.value for t in cls]}"
            ) from None

    @property
    def index(self) -> int:
        return list(SlotType).index(self)


@dataclass(eq=False)
class PolygonSlot:
    """A parking slot as four ordered corners plus type and confidence.

    Construction only checks shape and finiteness, so that malformed
    orderings (a "bowtie") can still be represented and inspected with
    :func:`is_simple`. Operations that need a proper polygon call
    :func:`validate_slot`.
    """

    corners: np.ndarray
    slot_type: SlotType = SlotType.PERPENDICULAR
    confidence: float = 1.0

    def __post_init__(self):
        self.corners = check_corners(self.corners).copy()
        self.corners.flags.writeable = False
        self.slot_type = SlotType.parse(self.slot_type)
        self.confidence = check_unit_interval(self.confidence, "confidence")

    def __eq__(self, other):
        if not isinstance(other, PolygonSlot):
            return NotImplemented
        return (
            np.array_equal(self.corners, other.corners)
            and self.slot_type == other.slot_type
            and self.confidence == other.confidence
        )

    def __repr__(self):
        pts = ", ".join(f"({x:g}, {y:g})" for x, y in self.corners)
        return (
            f"PolygonSlot([{pts}], {self.slot_type.value}, "
            f"confidence={self.confidence:g})"
        )

    @property
    def entrance(self) -> np.ndarray:
        return self.corners[[ENTRANCE_LEFT, ENTRANCE_RIGHT]]

    @property
    def center(self) -> np.ndarray:
        return centroid(self)

    def with_corners(self, corners) -> "PolygonSlot":
        return PolygonSlot(corners, self.slot_type, self.confidence)

    def replace(self, **changes) -> "PolygonSlot":
        kw = dict(corners=self.corners, slot_type=self.slot_type,
                  confidence=self.confidence)
        kw.update(changes)
        return PolygonSlot(**kw)


@dataclass(eq=False)
class RelativeSlot:
    """Center point plus per-corner offsets, in corner storage order."""

    center: np.ndarray
    offsets: np.ndarray
    slot_type: SlotType = SlotType.PERPENDICULAR
    confidence: float = 1.0

    def __post_init__(self):
        self.center = check_points(self.center, n=1, name="center")[0]
        self.offsets = check_points(self.offsets, n=4, name="offsets")
        self.slot_type = SlotType.parse(self.slot_type)
        self.confidence = check_unit_interval(self.confidence, "confidence")

    def __eq__(self, other):
        if not isinstance(other, RelativeSlot):
            return NotImplemented
        return (
            np.array_equal(self.center, other.center)
            and np.array_equal(self.offsets, other.offsets)
            and self.slot_type == other.slot_type
            and self.confidence == other.confidence
        )


def _as_corners(slot) -> np.ndarray:
    if isinstance(slot, PolygonSlot):
        return slot.corners
    return check_corners(slot)


def outline(slot) -> np.ndarray:
    """Corners of ``slot`` in outline (traversal) order, shape (4, 2)."""
    return _as_corners(slot)[list(TRAVERSAL)]


def signed_area(ring) -> float:
    """Shoelace area of a closed ring; positive when counterclockwise."""
    ring = np.asarray(ring, dtype=float)
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(slot) -> float:
    return abs(signed_area(outline(slot)))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p) -> bool:
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


def segments_intersect(p1, p2, q1, q2) -> bool:
    """Closed-segment intersection test (touching counts)."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    return ((d1 == 0 and _on_segment(q1, q2, p1))
            or (d2 == 0 and _on_segment(q1, q2, p2))
            or (d3 == 0 and _on_segment(p1, p2, q1))
            or (d4 == 0 and _on_segment(p1, p2, q2)))


def ring_is_simple(ring) -> bool:
    ring = np.asarray(ring, dtype=float)
    n = len(ring)
    for i in range(n):
        for j in range(i + 1, n):
            # adjacent edges share a vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if segments_intersect(ring[i], ring[(i + 1) % n],
                                  ring[j], ring[(j + 1) % n]):
                return False
    return True


def is_simple(slot) -> bool:
    """True when no two non-adjacent outline edges intersect."""
    return ring_is_simple(outline(slot))


def validate_slot(slot) -> np.ndarray:
    """Raise if ``slot`` is not a simple polygon with positive area.

    Returns the corner array for convenience.
    """
    corners = _as_corners(slot)
    area = polygon_area(corners)
    if area < AREA_TOL:
        raise DegenerateSlotError(
            f"slot area {area:.3g} is below the degeneracy tolerance {AREA_TOL:g}"
        )
    if not is_simple(corners):
        raise InvalidSlotError(
            "slot outline is self-intersecting; check the corner order "
            "(entrance-left, entrance-right, ending-left, ending-right)"
        )
    return corners


def centroid(slot) -> np.ndarray:
    """Arithmetic mean of the four corners (not the area centroid)."""
    return _as_corners(slot).mean(axis=0)


def to_relative(slot: PolygonSlot) -> RelativeSlot:
    corners = validate_slot(slot)
    center = corners.mean(axis=0)
    return RelativeSlot(center, corners - center, slot.slot_type, slot.confidence)


def from_relative(rel: RelativeSlot) -> PolygonSlot:
    slot = PolygonSlot(rel.center + rel.offsets, rel.slot_type, rel.confidence)
    validate_slot(slot)
    return slot


def entrance_angle(slot, frame: str = "ego") -> float:
    """Signed angle in degrees, in (-180, 180], of the entrance line.

    The direction entrance-left -> entrance-right is measured
    counterclockwise from the lateral +x axis. With ``frame="raster"`` the
    corners are taken as image pixels (y pointing down) and y is flipped
    first so the result matches the ego convention (forward = raster up).
    """
    corners = _as_corners(slot)
    dx, dy = corners[ENTRANCE_RIGHT] - corners[ENTRANCE_LEFT]
    if frame == "raster":
        dy = -dy
    elif frame != "ego":
        raise ValueError(f"frame must be 'ego' or 'raster', got {frame!r}")
    if dx == 0 and dy == 0:
        raise DegenerateSlotError("entrance-left and entrance-right coincide")
    angle = math.degrees(math.atan2(dy, dx))
    return 180.0 if angle == -180.0 else angle
