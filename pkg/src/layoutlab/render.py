"""Dual-branch rendering: a colored raster and a text description.

``visualize`` paints category-colored boxes at fixed 60 percent opacity
over the background (or a white canvas for background-free tasks) using
pure integer arithmetic, so output bytes are reproducible everywhere.
``geometry_prompt`` describes the same layout in plain text.  The two
together form the dual representation used by downstream evaluation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geometry import bbox_area
from .metrics import coverage_mask
from .model import Layout, SceneContext

#: (r, g, b, human name) per known category; colors are pairwise distinct.
_DEFAULT_COLOR_TABLE: dict[str, tuple[int, int, int, str]] = {
    "text": (220, 50, 47, "red"),
    "title": (203, 75, 22, "orange"),
    "logo": (38, 139, 210, "blue"),
    "underlay": (133, 153, 0, "olive"),
    "embellishment": (181, 137, 0, "yellow"),
    "list": (108, 113, 196, "violet"),
    "table": (42, 161, 152, "teal"),
    "figure": (211, 54, 130, "magenta"),
    "product": (88, 110, 117, "gray"),
}

#: Slots for categories outside the default table.
_FALLBACK_PALETTE: tuple[tuple[int, int, int], ...] = (
    (128, 0, 0),
    (0, 128, 0),
    (0, 0, 128),
    (128, 128, 0),
    (128, 0, 128),
    (0, 128, 128),
    (255, 128, 0),
    (0, 160, 96),
    (96, 0, 192),
    (192, 0, 96),
    (64, 96, 160),
    (160, 96, 64),
)


def _hash_slot(name: str) -> int:
    digest = hashlib.md5(name.encode("utf-8")).digest()
    return digest[0] % len(_FALLBACK_PALETTE)


@dataclass(frozen=True, slots=True)
class ColorMap:
    """Category to color lookup; unknown names hash to a stable slot."""

    table: dict[str, tuple[int, int, int, str]] = field(
        default_factory=lambda: dict(_DEFAULT_COLOR_TABLE)
    )

    def color(self, category: str) -> tuple[int, int, int]:
        entry = self.table.get(category)
        if entry is not None:
            return entry[:3]
        return _FALLBACK_PALETTE[_hash_slot(category)]

    def color_name(self, category: str) -> str:
        entry = self.table.get(category)
        if entry is not None:
            return entry[3]
        r, g, b = _FALLBACK_PALETTE[_hash_slot(category)]
        return f"#{r:02x}{g:02x}{b:02x}"


DEFAULT_COLORMAP = ColorMap()


def _blend_region(canvas: np.ndarray, b, color: tuple[int, int, int]) -> None:
    # out = (3 * color + 2 * base) // 5, exact integer arithmetic
    region = canvas[b.y_min : b.y_max, b.x_min : b.x_max].astype(np.uint16)
    col = np.array(color, dtype=np.uint16)
    canvas[b.y_min : b.y_max, b.x_min : b.x_max] = (
        (3 * col + 2 * region) // 5
    ).astype(np.uint8)


# 5x7 dot glyphs derived from the character hash: deterministic without
# shipping a font, and enough to signal that content occupies the box.
_GLYPH_CACHE: dict[str, np.ndarray] = {}
_GLYPH_W, _GLYPH_H = 5, 7
_DOT = 2  # pixels per glyph dot
_ADVANCE = (_GLYPH_W + 1) * _DOT
_LINE_STEP = (_GLYPH_H + 1) * _DOT


def _glyph(ch: str) -> np.ndarray:
    cached = _GLYPH_CACHE.get(ch)
    if cached is not None:
        return cached
    digest = hashlib.md5(ch.encode("utf-8")).digest()
    bits = np.unpackbits(np.frombuffer(digest, dtype=np.uint8))
    grid = bits[: _GLYPH_W * _GLYPH_H].reshape(_GLYPH_H, _GLYPH_W).astype(bool)
    _GLYPH_CACHE[ch] = grid
    return grid


def _stamp_content(canvas: np.ndarray, b, text: str, color: tuple[int, int, int]) -> None:
    """Blend dot glyphs for ``text`` strictly inside box ``b``."""
    dot_color = np.array([c // 3 for c in color], dtype=np.uint16)
    x = b.x_min + _DOT
    y = b.y_min + _DOT
    for ch in text:
        if x + _GLYPH_W * _DOT > b.x_max:
            x = b.x_min + _DOT
            y += _LINE_STEP
            if x + _GLYPH_W * _DOT > b.x_max:
                return  # box narrower than a single glyph
        if y + _GLYPH_H * _DOT > b.y_max:
            return
        grid = _glyph(ch)
        for gy in range(_GLYPH_H):
            for gx in range(_GLYPH_W):
                if not grid[gy, gx]:
                    continue
                y0 = y + gy * _DOT
                x0 = x + gx * _DOT
                region = canvas[y0 : y0 + _DOT, x0 : x0 + _DOT].astype(np.uint16)
                canvas[y0 : y0 + _DOT, x0 : x0 + _DOT] = (
                    (3 * dot_color + 2 * region) // 5
                ).astype(np.uint8)
        x += _ADVANCE


def visualize(
    layout: Layout,
    ctx: SceneContext | None = None,
    cmap: ColorMap | None = None,
) -> np.ndarray:
    """Render the layout to an (H, W, 3) uint8 raster.

    Background-constrained tasks paint over the context raster (which
    must match the canvas); the others start from white.  Underlays go
    down first, then the remaining elements in layout order, each at 60
    percent opacity.  Content strings, when the task allows them, are
    stamped as dot glyphs inside their boxes.
    """
    cmap = cmap or DEFAULT_COLORMAP
    ctx = ctx or SceneContext()
    h, w = layout.canvas_h, layout.canvas_w
    if layout.task.background_constrained:
        if ctx.background is None:
            raise InputError(f"task {layout.task.value} needs a background to render")
        bg = ctx.background
        if bg.shape[:2] != (h, w):
            raise InputError("background raster does not match the canvas")
        canvas = (
            np.repeat(bg[:, :, None], 3, axis=2).copy()
            if bg.ndim == 2
            else bg.copy()
        )
    else:
        canvas = np.full((h, w, 3), 255, dtype=np.uint8)

    underlays = [el for el in layout.elements if el.category.name == "underlay"]
    others = [el for el in layout.elements if el.category.name != "underlay"]
    for el in underlays + others:
        _blend_region(canvas, el.bbox, cmap.color(el.category.name))
        if el.content and layout.task.content_constrained:
            _stamp_content(canvas, el.bbox, el.content, cmap.color(el.category.name))
    return canvas


def geometry_prompt(layout: Layout, cmap: ColorMap | None = None) -> str:
    """Text twin of the raster: one line per element plus summary lines."""
    cmap = cmap or DEFAULT_COLORMAP
    w, h = layout.canvas_w, layout.canvas_h
    lines = []
    for i, el in enumerate(layout.elements):
        b = el.bbox
        cx = (b.x_min + b.x_max) / (2.0 * w)
        cy = (b.y_min + b.y_max) / (2.0 * h)
        lines.append(
            f"{i}. {el.category.name} ({cmap.color_name(el.category.name)}) "
            f"box=[{b.x_min}, {b.y_min}, {b.x_max}, {b.y_max}] "
            f"w={b.width} h={b.height} area={bbox_area(b)} "
            f"center=({cx:.3f}, {cy:.3f})"
        )
    covered = (
        float(coverage_mask(layout).sum()) / (w * h) if layout.elements else 0.0
    )
    lines.append(f"elements: {len(layout.elements)}")
    lines.append(f"covered area fraction: {covered:.4f}")
    return "\n".join(lines) + "\n"


def dual_branch(
    layout: Layout,
    ctx: SceneContext | None = None,
    cmap: ColorMap | None = None,
) -> tuple[str, np.ndarray]:
    """(text description, rendered raster) for the same layout."""
    return geometry_prompt(layout, cmap), visualize(layout, ctx, cmap)
