"""Quantitative layout metrics.

Geometric metrics (``overlap``, ``alignment``, ``max_iou``) need only
the boxes; composition metrics (``r_com``, ``r_sub``) additionally need
the scene rasters; ``r_occ`` is defined over a batch.  All iteration is
in element index order so results are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError
from .geometry import BBox, bbox_contains, bbox_iou
from .model import Layout, SceneContext

#: Categories whose pixels should sit on calm background regions.
READABLE_CATEGORIES = ("text", "title", "logo")

_SOBEL_NORM = 4.0 * math.sqrt(2.0) * 255.0


def underlay_exempt_pair(a, b, task) -> bool:
    """Nested-underlay overlap exemption.

    On background-constrained tasks an underlay may fully enclose
    another element; such a pair does not count as overlapping.
    """
    if not task.background_constrained:
        return False
    if a.category.name == "underlay" and bbox_contains(a.bbox, b.bbox):
        return True
    if b.category.name == "underlay" and bbox_contains(b.bbox, a.bbox):
        return True
    return False


def overlap(layout: Layout) -> float:
    """Mean pairwise IoU over unordered element pairs.

    Pairs covered by the nested-underlay exemption are excluded.
    Returns 0.0 when no eligible pair exists.
    """
    els = layout.elements
    values = []
    for i in range(len(els)):
        for j in range(i + 1, len(els)):
            if underlay_exempt_pair(els[i], els[j], layout.task):
                continue
            values.append(bbox_iou(els[i].bbox, els[j].bbox))
    if not values:
        return 0.0
    return float(sum(values) / len(values))


def _axes(el, w: int, h: int) -> tuple[float, float, float, float, float, float]:
    b = el.bbox
    return (
        b.x_min / w,
        (b.x_min + b.x_max) / (2.0 * w),
        b.x_max / w,
        b.y_min / h,
        (b.y_min + b.y_max) / (2.0 * h),
        b.y_max / h,
    )


def nearest_axis_distance(layout: Layout, index: int) -> float:
    """Minimum same-axis normalized distance from element ``index`` to any
    other element, over the six axes (left, x-center, right, top,
    y-center, bottom).  Infinity for a single-element layout."""
    w, h = layout.canvas_w, layout.canvas_h
    mine = _axes(layout.elements[index], w, h)
    best = math.inf
    for j, other in enumerate(layout.elements):
        if j == index:
            continue
        theirs = _axes(other, w, h)
        for k in range(6):
            d = abs(mine[k] - theirs[k])
            if d < best:
                best = d
    return best


def alignment(layout: Layout) -> float:
    """Mean of -ln(1 - d_i) where d_i is each element's nearest same-axis
    distance; 0.0 for layouts with fewer than two elements."""
    n = len(layout.elements)
    if n < 2:
        return 0.0
    total = 0.0
    for i in range(n):
        d = nearest_axis_distance(layout, i)
        total += -math.log1p(-d)
    return total / n


def max_iou(generated: Layout, reference: Layout) -> float:
    """Similarity via per-category optimal matching.

    Within each category, generated and reference elements are paired
    by an assignment that maximizes total IoU; the total is divided by
    max(|generated|, |reference|).  Two empty layouts score 1.0.
    """
    n_gen, n_ref = len(generated.elements), len(reference.elements)
    if n_gen == 0 and n_ref == 0:
        return 1.0
    denom = max(n_gen, n_ref)

    by_cat_gen: dict[str, list[BBox]] = {}
    by_cat_ref: dict[str, list[BBox]] = {}
    for el in generated.elements:
        by_cat_gen.setdefault(el.category.name, []).append(el.bbox)
    for el in reference.elements:
        by_cat_ref.setdefault(el.category.name, []).append(el.bbox)

    total = 0.0
    for cat in sorted(set(by_cat_gen) & set(by_cat_ref)):
        gens = by_cat_gen[cat]
        refs = by_cat_ref[cat]
        matrix = np.array(
            [[bbox_iou(g, r) for r in refs] for g in gens], dtype=np.float64
        )
        rows, cols = linear_sum_assignment(matrix, maximize=True)
        for r, c in zip(rows, cols):
            total += matrix[r, c]
    return total / denom


def coverage_mask(
    layout: Layout, categories: Iterable[str] | None = None
) -> np.ndarray:
    """Boolean (H, W) union of element boxes, optionally category-filtered."""
    wanted = None if categories is None else set(categories)
    mask = np.zeros((layout.canvas_h, layout.canvas_w), dtype=bool)
    for el in layout.elements:
        if wanted is not None and el.category.name not in wanted:
            continue
        b = el.bbox
        mask[b.y_min : b.y_max, b.x_min : b.x_max] = True
    return mask


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    """Normalized Sobel gradient magnitude in [0, 1].

    Standard 3x3 kernels on an edge-replicated pad; magnitudes are
    divided by 4 * sqrt(2) * 255, the maximum attainable for uint8.
    """
    g = np.asarray(gray, dtype=np.float64)
    p = np.pad(g, 1, mode="edge")
    gx = (
        (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2])
    )
    gy = (
        (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:])
    )
    return np.sqrt(gx * gx + gy * gy) / _SOBEL_NORM


def r_com(layout: Layout, ctx: SceneContext) -> float:
    """Background busyness under readable elements.

    100 times the mean normalized Sobel magnitude of the gray background
    over the pixel union of text, title, and logo boxes; 0.0 when those
    categories cover nothing.
    """
    gray = ctx.background_gray() if ctx is not None else None
    if gray is None:
        raise InputError("r_com needs a background raster")
    if gray.shape != (layout.canvas_h, layout.canvas_w):
        raise InputError("background raster does not match the canvas")
    mask = coverage_mask(layout, READABLE_CATEGORIES)
    if not mask.any():
        return 0.0
    return 100.0 * float(sobel_magnitude(gray)[mask].mean())


def r_sub(layout: Layout, ctx: SceneContext) -> float:
    """Mean saliency under the union of all element boxes; 0.0 when empty."""
    if ctx is None or ctx.saliency is None:
        raise InputError("r_sub needs a saliency map")
    if ctx.saliency.shape != (layout.canvas_h, layout.canvas_w):
        raise InputError("saliency map does not match the canvas")
    mask = coverage_mask(layout)
    if not mask.any():
        return 0.0
    return float(ctx.saliency[mask].mean())


def r_occ(batch: Sequence[Layout]) -> float:
    """Fraction of layouts with at least one element."""
    if not batch:
        raise InputError("r_occ is undefined on an empty batch")
    return sum(1 for lay in batch if len(lay.elements) > 0) / len(batch)


# ---------------------------------------------------------------------------
# Batch reporting
# ---------------------------------------------------------------------------

_METRIC_COLUMNS = ("ove", "ali", "max_iou", "r_com", "r_sub")


@dataclass(frozen=True, slots=True)
class LayoutMetrics:
    index: int
    task: str
    values: dict[str, float] = field(default_factory=dict)
    skips: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class MetricReport:
    rows: tuple[LayoutMetrics, ...]
    means: dict[str, float | None]
    skip_counts: dict[str, dict[str, int]]
    r_occ: float

    def to_dict(self) -> dict:
        return {
            "size": len(self.rows),
            "rows": [
                {"index": r.index, "task": r.task, "values": r.values, "skips": r.skips}
                for r in self.rows
            ],
            "means": self.means,
            "skip_counts": self.skip_counts,
            "r_occ": self.r_occ,
        }

    def to_table(self) -> str:
        """CSV; one row per layout, then a mean row carrying r_occ."""
        lines = ["index,task," + ",".join(_METRIC_COLUMNS) + ",r_occ"]
        for r in self.rows:
            cells = [str(r.index), r.task]
            for m in _METRIC_COLUMNS:
                cells.append("" if m not in r.values else f"{r.values[m]:.6f}")
            cells.append("")
            lines.append(",".join(cells))
        mean_cells = ["mean", ""]
        for m in _METRIC_COLUMNS:
            v = self.means.get(m)
            mean_cells.append("" if v is None else f"{v:.6f}")
        mean_cells.append(f"{self.r_occ:.6f}")
        lines.append(",".join(mean_cells))
        return "\n".join(lines) + "\n"


def metric_report(
    batch: Sequence[Layout],
    references: Sequence[Layout] | None = None,
    ctxs: Sequence[SceneContext | None] | None = None,
) -> MetricReport:
    """Evaluate every metric that the inputs support, recording skips.

    ``references`` unlocks ``max_iou``; per-layout contexts unlock
    ``r_com`` (background) and ``r_sub`` (saliency).
    """
    if not batch:
        raise InputError("metric_report needs a non-empty batch")
    if references is not None and len(references) != len(batch):
        raise InputError("references must align 1:1 with the batch")
    if ctxs is not None and len(ctxs) != len(batch):
        raise InputError("contexts must align 1:1 with the batch")

    rows: list[LayoutMetrics] = []
    for i, lay in enumerate(batch):
        values: dict[str, float] = {}
        skips: dict[str, str] = {}
        values["ove"] = overlap(lay)
        values["ali"] = alignment(lay)
        if references is not None:
            values["max_iou"] = max_iou(lay, references[i])
        else:
            skips["max_iou"] = "no_reference"
        ctx = ctxs[i] if ctxs is not None else None
        if ctx is not None and ctx.background is not None:
            values["r_com"] = r_com(lay, ctx)
        else:
            skips["r_com"] = "no_background"
        if ctx is not None and ctx.saliency is not None:
            values["r_sub"] = r_sub(lay, ctx)
        else:
            skips["r_sub"] = "no_saliency"
        rows.append(LayoutMetrics(index=i, task=lay.task.value, values=values, skips=skips))

    means: dict[str, float | None] = {}
    skip_counts: dict[str, dict[str, int]] = {}
    for m in _METRIC_COLUMNS:
        present = [r.values[m] for r in rows if m in r.values]
        means[m] = float(np.mean(present)) if present else None
        for r in rows:
            if m in r.skips:
                skip_counts.setdefault(m, {}).setdefault(r.skips[m], 0)
                skip_counts[m][r.skips[m]] += 1
    return MetricReport(
        rows=tuple(rows),
        means=means,
        skip_counts=skip_counts,
        r_occ=r_occ(batch),
    )
