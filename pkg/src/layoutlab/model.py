"""Layout data model: tasks, categories, elements, scene context.

A layout is an ordered collection of categorised boxes on an integer
pixel canvas (default 513 x 750).  Four task kinds describe whether the
background and the element contents are constrained:

======  ==========  ========
kind    background  contents
======  ==========  ========
bfef    free        free
bcef    constrained free
bfec    free        constrained
bcec    constrained constrained
======  ==========  ========

Background-constrained layouts carry a raster (and usually a saliency
map) in a :class:`SceneContext`; content-constrained layouts may attach
a text string to each element.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import images
from .errors import InputError
from .geometry import BBox

DEFAULT_CANVAS_W = 513
DEFAULT_CANVAS_H = 750

#: Category names with first-class support (colors, token ids).  The set
#: is open: other names are carried verbatim and flagged as unknown.
KNOWN_CATEGORIES: tuple[str, ...] = (
    "logo",
    "text",
    "underlay",
    "embellishment",
    "title",
    "list",
    "table",
    "figure",
    "product",
)


class TaskKind(enum.Enum):
    BFEF = "bfef"
    BCEF = "bcef"
    BFEC = "bfec"
    BCEC = "bcec"

    @property
    def background_constrained(self) -> bool:
        return self in (TaskKind.BCEF, TaskKind.BCEC)

    @property
    def content_constrained(self) -> bool:
        return self in (TaskKind.BFEC, TaskKind.BCEC)


#: Deterministic ordering used wherever tasks index a table.
TASK_ORDER: tuple[TaskKind, ...] = (
    TaskKind.BFEF,
    TaskKind.BCEF,
    TaskKind.BFEC,
    TaskKind.BCEC,
)


def task_from_string(name: str) -> TaskKind:
    try:
        return TaskKind(name.strip().lower())
    except ValueError as exc:
        raise InputError(f"unknown task kind: {name!r}") from exc


@dataclass(frozen=True, slots=True)
class Category:
    """Element category; ``known`` is False for names outside the core set."""

    name: str

    @property
    def known(self) -> bool:
        return self.name in KNOWN_CATEGORIES

    def is_wellformed(self) -> bool:
        return bool(self.name) and self.name == self.name.strip().lower()


@dataclass(frozen=True, slots=True)
class Element:
    category: Category
    bbox: BBox
    content: str | None = None


@dataclass(frozen=True, slots=True)
class Layout:
    """Immutable ordered element collection on a fixed canvas."""

    task: TaskKind
    elements: tuple[Element, ...] = ()
    canvas_w: int = DEFAULT_CANVAS_W
    canvas_h: int = DEFAULT_CANVAS_H

    def __post_init__(self) -> None:
        object.__setattr__(self, "elements", tuple(self.elements))

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def canvas_area(self) -> int:
        return self.canvas_w * self.canvas_h


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, slots=True)
class SceneContext:
    """Optional per-layout rasters.

    ``background`` is uint8, (H, W) gray or (H, W, 3) RGB.  ``saliency``
    is float64 in [0, 1], shape (H, W).  Arrays are copied and marked
    read-only at construction.
    """

    background: np.ndarray | None = None
    saliency: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.background is not None:
            bg = _frozen(np.asarray(self.background, dtype=np.uint8))
            object.__setattr__(self, "background", bg)
        if self.saliency is not None:
            sal = _frozen(np.asarray(self.saliency, dtype=np.float64))
            object.__setattr__(self, "saliency", sal)

    def background_gray(self) -> np.ndarray | None:
        if self.background is None:
            return None
        if self.background.ndim == 3:
            return images.rgb_to_gray(self.background)
        return self.background


EMPTY_SCENE = SceneContext()


@dataclass(frozen=True, slots=True)
class Fault:
    """One structural defect found by :func:`validate`."""

    kind: str
    message: str
    element: int | None = None


def validate(layout: Layout, ctx: SceneContext | None = None) -> list[Fault]:
    """Collect structural faults; an empty list means the layout is sound.

    Faults are data, not exceptions: callers that require soundness
    (the rule evaluator does) raise on a non-empty result.
    """
    ctx = ctx or EMPTY_SCENE
    faults: list[Fault] = []
    w, h = layout.canvas_w, layout.canvas_h
    if w <= 0 or h <= 0:
        faults.append(Fault("bad_canvas", f"canvas {w}x{h} is not positive"))
        return faults

    for i, el in enumerate(layout.elements):
        b = el.bbox
        if not b.is_valid():
            faults.append(
                Fault("degenerate_bbox", f"element {i} box {b.as_tuple()} is degenerate", i)
            )
        elif b.x_max > w or b.y_max > h:
            faults.append(
                Fault(
                    "out_of_canvas",
                    f"element {i} box {b.as_tuple()} exceeds canvas {w}x{h}",
                    i,
                )
            )
        if not el.category.is_wellformed():
            faults.append(
                Fault("bad_category", f"element {i} category {el.category.name!r}", i)
            )
        if el.content is not None and not layout.task.content_constrained:
            faults.append(
                Fault(
                    "forbidden_content",
                    f"element {i} carries content on task {layout.task.value}",
                    i,
                )
            )

    if layout.task.background_constrained and ctx.background is None:
        faults.append(
            Fault("missing_background", f"task {layout.task.value} requires a background raster")
        )
    if ctx.background is not None and ctx.background.shape[:2] != (h, w):
        faults.append(
            Fault(
                "raster_mismatch",
                f"background shape {ctx.background.shape[:2]} != canvas (h={h}, w={w})",
            )
        )
    if ctx.saliency is not None:
        if ctx.saliency.shape != (h, w):
            faults.append(
                Fault(
                    "raster_mismatch",
                    f"saliency shape {ctx.saliency.shape} != canvas (h={h}, w={w})",
                )
            )
        elif ctx.saliency.size and (ctx.saliency.min() < 0.0 or ctx.saliency.max() > 1.0):
            faults.append(Fault("bad_saliency", "saliency values outside [0, 1]"))
    return faults


# ---------------------------------------------------------------------------
# JSON serialisation
#
# Schema:
#   {"canvas": {"w": int, "h": int}, "task": "bfef",
#    "elements": [{"category": str, "bbox": [x0, y0, x1, y1],
#                  "content": str (optional)}],
#    "background_path": str (optional), "saliency_path": str (optional)}
# Raster paths are resolved relative to the JSON file's directory.
# ---------------------------------------------------------------------------


def layout_to_dict(
    layout: Layout,
    background_path: str | None = None,
    saliency_path: str | None = None,
) -> dict[str, Any]:
    elements = []
    for el in layout.elements:
        entry: dict[str, Any] = {
            "category": el.category.name,
            "bbox": list(el.bbox.as_tuple()),
        }
        if el.content is not None:
            entry["content"] = el.content
        elements.append(entry)
    doc: dict[str, Any] = {
        "canvas": {"w": layout.canvas_w, "h": layout.canvas_h},
        "task": layout.task.value,
        "elements": elements,
    }
    if background_path is not None:
        doc["background_path"] = background_path
    if saliency_path is not None:
        doc["saliency_path"] = saliency_path
    return doc


def layout_from_dict(doc: dict[str, Any]) -> Layout:
    try:
        canvas = doc["canvas"]
        task = task_from_string(doc["task"])
        raw_elements = doc["elements"]
    except (KeyError, TypeError) as exc:
        raise InputError(f"layout document missing field: {exc}") from exc
    elements = []
    for i, entry in enumerate(raw_elements):
        try:
            name = str(entry["category"]).strip().lower()
            x0, y0, x1, y1 = (int(v) for v in entry["bbox"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"layout element {i} is malformed: {exc}") from exc
        content = entry.get("content")
        elements.append(
            Element(Category(name), BBox(x0, y0, x1, y1), None if content is None else str(content))
        )
    return Layout(
        task=task,
        elements=tuple(elements),
        canvas_w=int(canvas["w"]),
        canvas_h=int(canvas["h"]),
    )


def dumps_json(doc: dict[str, Any]) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_layout_file(
    path: str | os.PathLike[str],
    layout: Layout,
    ctx: SceneContext | None = None,
) -> None:
    """Write the layout JSON plus PGM sidecars for any context rasters."""
    p = Path(path)
    bg_name = sal_name = None
    if ctx is not None and ctx.background is not None:
        bg_name = p.stem + "_bg.pgm"
        bg = ctx.background if ctx.background.ndim == 2 else images.rgb_to_gray(ctx.background)
        images.save_pgm(p.with_name(bg_name), bg)
    if ctx is not None and ctx.saliency is not None:
        sal_name = p.stem + "_sal.pgm"
        images.save_pgm(
            p.with_name(sal_name),
            np.round(ctx.saliency * 255.0).astype(np.uint8),
        )
    doc = layout_to_dict(layout, background_path=bg_name, saliency_path=sal_name)
    images.write_text_atomic(p, dumps_json(doc))


def load_layout_file(path: str | os.PathLike[str]) -> tuple[Layout, SceneContext]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"layout file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse layout file {p}: {exc}") from exc
    layout = layout_from_dict(doc)
    background = saliency = None
    if doc.get("background_path"):
        background = images.load_gray(p.parent / doc["background_path"])
    if doc.get("saliency_path"):
        saliency = images.load_saliency(p.parent / doc["saliency_path"])
    return layout, SceneContext(background=background, saliency=saliency)


def make_layout(
    task: TaskKind | str,
    boxes: list[tuple[str, tuple[int, int, int, int]]] | None = None,
    canvas_w: int = DEFAULT_CANVAS_W,
    canvas_h: int = DEFAULT_CANVAS_H,
) -> Layout:
    """Convenience constructor from (category, (x0, y0, x1, y1)) pairs."""
    if isinstance(task, str):
        task = task_from_string(task)
    elements = tuple(
        Element(Category(name), BBox(*coords)) for name, coords in (boxes or [])
    )
    return Layout(task=task, elements=elements, canvas_w=canvas_w, canvas_h=canvas_h)
