"""Axis-aligned box primitives on an integer pixel grid.

Boxes are half-open on both axes: a box covers the pixel set
``[x_min, x_max) x [y_min, y_max)`` with the origin at the top-left
corner.  Areas are therefore exact integers and two boxes that merely
share an edge do not overlap.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True, slots=True)
class BBox:
    """Integer pixel box; coordinates must satisfy 0 <= min < max."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    def is_valid(self) -> bool:
        return (
            self.x_min >= 0
            and self.y_min >= 0
            and self.x_min < self.x_max
            and self.y_min < self.y_max
        )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def bbox_area(b: BBox) -> int:
    return b.width * b.height


def bbox_intersect(b1: BBox, b2: BBox) -> BBox | None:
    """Largest box contained in both, or None when they are disjoint."""
    x0 = max(b1.x_min, b2.x_min)
    y0 = max(b1.y_min, b2.y_min)
    x1 = min(b1.x_max, b2.x_max)
    y1 = min(b1.y_max, b2.y_max)
    if x0 >= x1 or y0 >= y1:
        return None
    return BBox(x0, y0, x1, y1)


def bbox_intersection_area(b1: BBox, b2: BBox) -> int:
    inter = bbox_intersect(b1, b2)
    return 0 if inter is None else bbox_area(inter)


def bbox_union_area(b1: BBox, b2: BBox) -> int:
    return bbox_area(b1) + bbox_area(b2) - bbox_intersection_area(b1, b2)


def bbox_iou(b1: BBox, b2: BBox) -> float:
    """Intersection over union; 0.0 for disjoint boxes."""
    inter = bbox_intersection_area(b1, b2)
    if inter == 0:
        return 0.0
    return inter / bbox_union_area(b1, b2)


def bbox_contains(outer: BBox, inner: BBox) -> bool:
    """True when ``inner`` lies fully inside ``outer`` (edges may touch)."""
    return (
        outer.x_min <= inner.x_min
        and outer.y_min <= inner.y_min
        and inner.x_max <= outer.x_max
        and inner.y_max <= outer.y_max
    )
