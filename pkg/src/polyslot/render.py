"""Slot overlays on topview images."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from ._validation import check_image
from .geometry import ENTRANCE_LEFT, ENTRANCE_RIGHT, TRAVERSAL, entrance_angle

__all__ = ["OverlayStyle", "render_overlay"]

# how far outside the raster (as a fraction of its size) a corner may lie before we warn
FAR_OUTSIDE = 0.5


@dataclass(frozen=True)
class OverlayStyle:
    polygon_color: tuple = (0, 0, 255)
    entrance_color: tuple = (0, 255, 0)
    text_color: tuple = (0, 0, 255)
    line_width: int = 2
    show_angle: bool = True
    show_confidence: bool = True

    def __post_init__(self):
        if int(self.line_width) < 1:
            raise ValueError("line_width must be >= 1 px")
        for name in ("polygon_color", "entrance_color", "text_color"):
            c = tuple(int(v) for v in getattr(self, name))
            if len(c) != 3 or min(c) < 0 or max(c) > 255:
                raise ValueError(f"{name} must be three values in 0..255")
            object.__setattr__(self, name, c)


def render_overlay(image, slots, style: OverlayStyle | None = None) -> np.ndarray:
    """Draw slots onto a copy of ``image`` (H, W, 3) uint8 and return it.

    Each slot gets its outline, the entrance edge drawn on top in the
    entrance color, and a label at the corner mean with the entrance angle
    in degrees (raster frame, counterclockwise as displayed) and the
    confidence.
    """
    style = style or OverlayStyle()
    image = check_image(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    image = image[:, :, :3]
    if not slots:
        return image.copy()
    h, w = image.shape[:2]
    canvas = Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8))
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    lo = -FAR_OUTSIDE * np.array([w, h])
    hi = (1 + FAR_OUTSIDE) * np.array([w, h])
    for k, slot in enumerate(slots):
        c = slot.corners
        if np.any(c < lo) or np.any(c > hi):
            warnings.warn(f"slot {k} lies far outside the {w}x{h} raster; drawing clipped",
                          stacklevel=2)
        ring = [tuple(map(float, c[i])) for i in TRAVERSAL]
        draw.line(ring + [ring[0]], fill=style.polygon_color, width=style.line_width)
        draw.line([tuple(map(float, c[ENTRANCE_LEFT])), tuple(map(float, c[ENTRANCE_RIGHT]))],
                  fill=style.entrance_color, width=style.line_width)
        parts = []
        if style.show_angle:
            parts.append(f"{entrance_angle(slot, frame='raster'):.1f} deg")
        if style.show_confidence:
            parts.append(f"{slot.confidence:.2f}")
        if parts:
            text = "\n".join(parts)
            x0, y0, x1, y1 = draw.multiline_textbbox((0, 0), text, font=font)
            cx, cy = c.mean(axis=0)
            draw.multiline_text((float(cx) - (x1 - x0) / 2, float(cy) - (y1 - y0) / 2), text,
                                fill=style.text_color, font=font)
    return np.asarray(canvas)
