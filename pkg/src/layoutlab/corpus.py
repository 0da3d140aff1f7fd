"""Synthetic labeled corpora for exercising the rule evaluator.

Positive samples are single-column stacks: every box shares the column's
left and right edge, heights are uniform, and vertical spacing is even,
so all eight rules stay silent by construction.  Negative samples start
from the same template and receive one named defect injection sized to
push the weighted severity past the decision threshold.  The label is
assigned by construction, never by running the evaluator, so evaluator
agreement is a real measurement.

On background-constrained tasks the scene is a flat gray card with a
brighter or darker subject rectangle in the upper half (saliency 1.0
inside it); the element band starts below the subject.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import images
from .errors import CorpusFormatError, InputError
from .geometry import BBox
from .model import (
    TASK_ORDER,
    Category,
    Element,
    Layout,
    SceneContext,
    TaskKind,
    dumps_json,
    layout_from_dict,
    layout_to_dict,
    task_from_string,
)

LABELS = ("qualified", "unqualified")

#: Injection rotations per task family; "clean" is the only positive
#: provenance.  Injections on background-free tasks avoid the rules
#: that only run with a background, and vice versa.
INJECTIONS_FREE: tuple[str, ...] = ("overlap", "oversized", "jitter", "emptied")
INJECTIONS_CONSTRAINED: tuple[str, ...] = ("overlap", "tiny", "oversized", "orphan", "jitter")

_COLUMN_X = (30, 60, 90)
_COLUMN_W = (280, 320, 360)
_FILL_CATEGORIES = ("text", "title", "logo", "list", "figure", "product")
_PHRASES = (
    "Fresh deal today",
    "Limited offer",
    "Now 20% off",
    "New arrival",
    "Free shipping",
)

#: Flat background gray values and the fixed subject rectangle.
_BG_BASES = (90, 168, 235)
_SUBJECT = BBox(150, 80, 400, 280)

# Vertical band available to elements, per task family.
_BAND_FREE = (40, 740)
_BAND_CONSTRAINED = (300, 740)  # below the subject


@dataclass(frozen=True, slots=True)
class LabeledSample:
    layout: Layout
    ctx: SceneContext
    label: str
    provenance: str

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise InputError(f"unknown label {self.label!r}")
        if (self.provenance == "clean") != (self.label == "qualified"):
            raise InputError(
                f"provenance {self.provenance!r} is inconsistent with label {self.label!r}"
            )


@dataclass(frozen=True)
class CorpusSpec:
    """How many samples per task, what share is positive, and the seed."""

    counts: Mapping[TaskKind, int]
    positive_ratio: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        for task, n in self.counts.items():
            if not isinstance(task, TaskKind):
                raise InputError(f"counts key {task!r} is not a task kind")
            if n < 0:
                raise InputError(f"negative count for {task.value}")
        if not 0.0 <= self.positive_ratio <= 1.0:
            raise InputError("positive_ratio must lie in [0, 1]")


def scene_for_base(base: int) -> SceneContext:
    """Flat gray card with the fixed subject rectangle and its saliency."""
    h, w = 750, 513
    background = np.full((h, w), base, dtype=np.uint8)
    subject_value = base + 60 if base < 128 else base - 60
    background[_SUBJECT.y_min : _SUBJECT.y_max, _SUBJECT.x_min : _SUBJECT.x_max] = subject_value
    saliency = np.zeros((h, w), dtype=np.float64)
    saliency[_SUBJECT.y_min : _SUBJECT.y_max, _SUBJECT.x_min : _SUBJECT.x_max] = 1.0
    return SceneContext(background=background, saliency=saliency)


def _column_layout(
    task: TaskKind,
    rng: np.random.Generator,
    n: int | None = None,
    allow_underlay: bool = True,
) -> Layout:
    """One evenly spaced column stack of ``n`` elements (2..8 if unset).

    When the slot height allows it, background-constrained stacks may
    spend one slot on an underlay with a text box nested 10 px inside,
    sharing the column's x-center.
    """
    if n is None:
        n = int(rng.integers(2, 9))
    col_x = _COLUMN_X[int(rng.integers(len(_COLUMN_X)))]
    width = _COLUMN_W[int(rng.integers(len(_COLUMN_W)))]
    if task.background_constrained:
        band0, band1 = _BAND_CONSTRAINED
        height = min(60, (band1 - band0) // n - 18)
    else:
        band0, band1 = _BAND_FREE
        height = min(90, (band1 - band0) // n - 18)

    use_pair = (
        task.background_constrained
        and allow_underlay
        and height >= 50  # nested text keeps at least 30 px of height
        and rng.random() < 0.5
    )
    slots = n - 1 if use_pair else n
    pair_slot = int(rng.integers(slots)) if use_pair else -1

    slot_h = (band1 - band0) // slots
    elements: list[Element] = []
    for i in range(slots):
        y0 = band0 + i * slot_h + (slot_h - height) // 2
        box = BBox(col_x, y0, col_x + width, y0 + height)
        if i == pair_slot:
            elements.append(Element(Category("underlay"), box))
            inner = BBox(col_x + 10, y0 + 10, col_x + width - 10, y0 + height - 10)
            elements.append(Element(Category("text"), inner, _maybe_phrase(task, rng)))
        else:
            cat = _FILL_CATEGORIES[int(rng.integers(len(_FILL_CATEGORIES)))]
            content = _maybe_phrase(task, rng) if cat in ("text", "title") else None
            elements.append(Element(Category(cat), box, content))
    return Layout(task=task, elements=tuple(elements))


def _maybe_phrase(task: TaskKind, rng: np.random.Generator) -> str | None:
    if not task.content_constrained:
        return None
    return _PHRASES[int(rng.integers(len(_PHRASES)))]


def _column_bounds(layout: Layout) -> tuple[int, int]:
    xs0 = min(el.bbox.x_min for el in layout.elements)
    xs1 = max(el.bbox.x_max for el in layout.elements)
    return xs0, xs1


def _with_elements(layout: Layout, elements: Sequence[Element]) -> Layout:
    return Layout(
        task=layout.task,
        elements=tuple(elements),
        canvas_w=layout.canvas_w,
        canvas_h=layout.canvas_h,
    )


# ---------------------------------------------------------------------------
# Injections.  Each must (a) fire its namesake rule and (b) push the
# total weighted severity over 0.5, flipping the verdict.
# ---------------------------------------------------------------------------


def _inject_overlap(layout: Layout, rng: np.random.Generator) -> Layout:
    """Duplicate one non-underlay box exactly: one pair at IoU 1.0."""
    idxs = [i for i, el in enumerate(layout.elements) if el.category.name != "underlay"]
    k = idxs[int(rng.integers(len(idxs)))]
    return _with_elements(layout, layout.elements + (layout.elements[k],))


def _inject_tiny(layout: Layout, rng: np.random.Generator) -> Layout:
    """Two 40 x 20 boxes above the band; both under-area and under-height."""
    x0, x1 = _column_bounds(layout)
    cx = (x0 + x1) // 2
    extra = (
        Element(Category("embellishment"), BBox(cx - 20, 10, cx + 20, 30)),
        Element(Category("embellishment"), BBox(cx - 20, 40, cx + 20, 60)),
    )
    return _with_elements(layout, layout.elements + extra)


def _inject_oversized(layout: Layout, rng: np.random.Generator) -> Layout:
    """Replace everything with two boxes over a third of the canvas each."""
    elements = (
        Element(Category("figure"), BBox(30, 40, 500, 340)),
        Element(Category("figure"), BBox(30, 360, 500, 660)),
    )
    return _with_elements(layout, elements)


def _inject_orphan(layout: Layout, rng: np.random.Generator) -> Layout:
    """Two underlays above the band that enclose nothing."""
    x0, x1 = _column_bounds(layout)
    extra = (
        Element(Category("underlay"), BBox(x0, 5, x1, 40)),
        Element(Category("underlay"), BBox(x0, 45, x1, 80)),
    )
    return _with_elements(layout, layout.elements + extra)


def _inject_jitter(layout: Layout, rng: np.random.Generator) -> Layout:
    """Knock two boxes off the column; the rest keep their shared edges."""
    elements = list(layout.elements)
    for idx, dx in ((1, 25), (2, -22)):
        el = elements[idx]
        b = el.bbox
        elements[idx] = Element(
            el.category, BBox(b.x_min + dx, b.y_min, b.x_max + dx, b.y_max), el.content
        )
    return _with_elements(layout, elements)


def _inject_emptied(layout: Layout, rng: np.random.Generator) -> Layout:
    """Cram two unaligned boxes into the top-left ninth of the canvas."""
    elements = (
        Element(Category("text"), BBox(20, 20, 150, 90)),
        Element(Category("figure"), BBox(55, 140, 166, 230)),
    )
    return _with_elements(layout, elements)


_INJECTORS = {
    "overlap": _inject_overlap,
    "tiny": _inject_tiny,
    "oversized": _inject_oversized,
    "orphan": _inject_orphan,
    "jitter": _inject_jitter,
    "emptied": _inject_emptied,
}


def _build_sample(
    task: TaskKind,
    provenance: str,
    rng: np.random.Generator,
    scenes: dict[int, SceneContext],
) -> LabeledSample:
    if task.background_constrained:
        base = _BG_BASES[int(rng.integers(len(_BG_BASES)))]
        if base not in scenes:
            scenes[base] = scene_for_base(base)
        ctx = scenes[base]
    else:
        ctx = SceneContext()

    if provenance == "clean":
        layout = _column_layout(task, rng)
        return LabeledSample(layout, ctx, "qualified", "clean")

    if provenance == "jitter":
        # needs two off-column boxes plus two still sharing the column
        base_layout = _column_layout(task, rng, n=int(rng.integers(4, 9)), allow_underlay=False)
    else:
        base_layout = _column_layout(task, rng)
    layout = _INJECTORS[provenance](base_layout, rng)
    return LabeledSample(layout, ctx, "unqualified", provenance)


def generate_corpus(spec: CorpusSpec) -> list[LabeledSample]:
    """Deterministic corpus; identical specs yield identical samples.

    Per task: positives first (``round(count * positive_ratio)``), then
    negatives cycling through the task family's injection rotation.
    """
    rng = np.random.default_rng(spec.seed)
    scenes: dict[int, SceneContext] = {}
    samples: list[LabeledSample] = []
    for task in TASK_ORDER:
        count = spec.counts.get(task, 0)
        if count == 0:
            continue
        n_pos = int(count * spec.positive_ratio + 0.5)
        rotation = (
            INJECTIONS_CONSTRAINED if task.background_constrained else INJECTIONS_FREE
        )
        for i in range(count):
            if i < n_pos:
                provenance = "clean"
            else:
                provenance = rotation[(i - n_pos) % len(rotation)]
            samples.append(_build_sample(task, provenance, rng, scenes))
    return samples


def corpus_stats(samples: Sequence[LabeledSample]) -> dict:
    by_task: dict[str, int] = {}
    by_label: dict[str, int] = {}
    by_provenance: dict[str, int] = {}
    for s in samples:
        by_task[s.layout.task.value] = by_task.get(s.layout.task.value, 0) + 1
        by_label[s.label] = by_label.get(s.label, 0) + 1
        by_provenance[s.provenance] = by_provenance.get(s.provenance, 0) + 1
    return {
        "total": len(samples),
        "by_task": by_task,
        "by_label": by_label,
        "by_provenance": by_provenance,
    }


# ---------------------------------------------------------------------------
# Disk format: sample_00000.json ... plus an index.json manifest.
# Rasters are deduplicated by content into assets/ and referenced by
# relative path, so a thousand samples over three scenes store three
# backgrounds.
# ---------------------------------------------------------------------------


def save_corpus(samples: Sequence[LabeledSample], out_dir: str | Path) -> Path:
    d = Path(out_dir)
    (d / "assets").mkdir(parents=True, exist_ok=True)
    written: set[str] = set()

    def _asset(arr: np.ndarray, kind: str) -> str:
        if arr.ndim == 2:
            data, ext = images.encode_pgm(arr), "pgm"
        else:
            data, ext = images.encode_ppm(arr), "ppm"
        digest = hashlib.md5(data).hexdigest()[:10]
        rel = f"assets/{kind}_{digest}.{ext}"
        if rel not in written:
            images.write_bytes_atomic(d / rel, data)
            written.add(rel)
        return rel

    entries = []
    for i, s in enumerate(samples):
        name = f"sample_{i:05d}.json"
        bg_rel = sal_rel = None
        if s.ctx.background is not None:
            bg_rel = _asset(s.ctx.background, "bg")
        if s.ctx.saliency is not None:
            sal_rel = _asset(np.round(s.ctx.saliency * 255.0).astype(np.uint8), "sal")
        doc = layout_to_dict(s.layout, background_path=bg_rel, saliency_path=sal_rel)
        doc["label"] = s.label
        doc["provenance"] = s.provenance
        images.write_text_atomic(d / name, dumps_json(doc))
        entries.append(
            {
                "file": name,
                "label": s.label,
                "provenance": s.provenance,
                "task": s.layout.task.value,
            }
        )
    index = {"count": len(samples), "samples": entries}
    images.write_text_atomic(d / "index.json", dumps_json(index))
    return d


def load_corpus(corpus_dir: str | Path) -> list[LabeledSample]:
    """Read a saved corpus back, in lexicographic sample-file order.

    Any structural problem raises :class:`CorpusFormatError` naming the
    offending record.
    """
    d = Path(corpus_dir)
    index_path = d / "index.json"
    if not index_path.is_file():
        raise CorpusFormatError(f"no index.json in {d}")
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
        entries = list(index["samples"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorpusFormatError(f"index.json: {exc}") from exc

    raster_cache: dict[str, np.ndarray] = {}
    scene_cache: dict[tuple[str | None, str | None], SceneContext] = {}

    def _raster(rel: str | None, saliency: bool) -> np.ndarray | None:
        if rel is None:
            return None
        if rel not in raster_cache:
            path = d / rel
            if saliency:
                raster_cache[rel] = images.load_saliency(path)
            elif rel.endswith(".ppm"):
                raster_cache[rel] = images.load_raster(path)
            else:
                raster_cache[rel] = images.load_gray(path)
        return raster_cache[rel]

    samples: list[LabeledSample] = []
    for entry in sorted(entries, key=lambda e: str(e.get("file", ""))):
        name = entry.get("file")
        if not name:
            raise CorpusFormatError("index.json: entry without a file name")
        path = d / name
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorpusFormatError(f"{name}: {exc}") from exc
        try:
            layout = layout_from_dict(doc)
        except InputError as exc:
            raise CorpusFormatError(f"{name}: {exc}") from exc
        label = doc.get("label")
        provenance = doc.get("provenance")
        if label is None or provenance is None:
            raise CorpusFormatError(f"{name}: missing label or provenance")
        if label != entry.get("label") or provenance != entry.get("provenance"):
            raise CorpusFormatError(f"{name}: disagrees with index.json")
        key = (doc.get("background_path"), doc.get("saliency_path"))
        if key not in scene_cache:
            try:
                scene_cache[key] = SceneContext(
                    background=_raster(key[0], saliency=False),
                    saliency=_raster(key[1], saliency=True),
                )
            except InputError as exc:
                raise CorpusFormatError(f"{name}: {exc}") from exc
        try:
            samples.append(LabeledSample(layout, scene_cache[key], label, provenance))
        except InputError as exc:
            raise CorpusFormatError(f"{name}: {exc}") from exc
    return samples


def counts_from_strings(pairs: Sequence[str]) -> dict[TaskKind, int]:
    """Parse CLI-style ``task=count`` pairs into a counts mapping."""
    counts: dict[TaskKind, int] = {}
    for raw in pairs:
        name, _, value = raw.partition("=")
        if not value:
            raise InputError(f"expected task=count, got {raw!r}")
        task = task_from_string(name)
        try:
            counts[task] = int(value)
        except ValueError as exc:
            raise InputError(f"bad count in {raw!r}") from exc
    return counts
