"""
Axis-aligned rectangle arithmetic.

Coordinates are continuous pixel positions and may lie outside the
image canvas. Rasterization happens only when views are rendered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle; ``x_min < x_max`` and ``y_min < y_max``."""
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        values = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"Box coordinates must be finite: {values}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"Degenerate box: {values}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: float) -> Box:
        return cls(cx - width / 2, cy - height / 2, cx + width / 2, cy + height / 2)

    @classmethod
    def from_list(cls, coords) -> Box:
        x1, y1, x2, y2 = (float(c) for c in coords)
        return cls(x1, y1, x2, y2)

    def to_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def contains(self, other: Box) -> bool:
        return (
            self.x_min <= other.x_min and self.y_min <= other.y_min
            and other.x_max <= self.x_max and other.y_max <= self.y_max
        )


def intersection_area(a: Box, b: Box) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """Intersection over union; symmetric, 0 for disjoint boxes."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def tiou(d: Box, g: Box) -> float:
    """
    Tightness-aware IoU of detection ``d`` against ground truth ``g``.

    The IoU is scaled by the fraction of ``g`` covered by ``d``, so cut-off
    text is penalized; equals ``iou(d, g)`` whenever ``g`` lies inside ``d``.
    Not symmetric.
    """
    inter = intersection_area(d, g)
    if inter == 0.0:
        return 0.0
    return (inter / (d.area + g.area - inter)) * (inter / g.area)


def upscale_box(g: Box, factor: float) -> Box:
    """Scale width and height by ``factor`` around the same center."""
    if factor < 1:
        raise ValueError(f"upscale factor must be >= 1, got {factor}")
    cx, cy = g.center
    return Box.from_center(cx, cy, g.width * factor, g.height * factor)


def center_distance(a: Box, b: Box) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


def closest_box(detection: Box, candidates: list[Box]) -> int:
    """
    Index of the candidate with maximal IoU to ``detection``.

    Ties go to the smaller center distance, then to the earlier candidate.
    """
    if not candidates:
        raise ValueError("closest_box needs at least one candidate")
    return min(
        range(len(candidates)),
        key=lambda i: (
            -iou(detection, candidates[i]),
            center_distance(detection, candidates[i]),
            i,
        ),
    )
