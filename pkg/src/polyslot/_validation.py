"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

#: Polygons with an absolute area below this are treated as degenerate.
AREA_TOL = 1e-9


class InvalidSlotError(ValueError):
    """A slot violates the polygon invariants (shape, finiteness, simplicity)."""


class DegenerateSlotError(InvalidSlotError):
    """A slot has (near) zero area or coincident defining points."""


def check_points(points, n=None, name="points") -> np.ndarray:
    """Return ``points`` as a finite float array of shape (n, 2).

    A flat sequence of ``2 * n`` numbers is accepted and reshaped.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size % 2 == 0:
        arr = arr.reshape(-1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidSlotError(f"{name} must have shape (N, 2), got {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise InvalidSlotError(f"{name} must hold {n} points, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidSlotError(f"{name} contains non-finite values")
    return arr


def check_corners(corners) -> np.ndarray:
    return check_points(corners, n=4, name="corners")


def check_unit_interval(value, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_positive(value, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def check_image(image, name="image") -> np.ndarray:
    """Validate an HxWx3 (or HxW) raster and return it as an ndarray."""
    arr = np.asarray(image)
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] not in (1, 3, 4)):
        raise ValueError(f"{name} must be HxW or HxWxC, got shape {arr.shape}")
    return arr
