"""Instruction grammar: building prompts and parsing completions.

A task specification renders to a fixed-order instruction string; the
full prompt wraps it in role tokens with an optional image placeholder.
Completions serialize one element per line as

    'category': [x_min, y_min, x_max, y_max]

optionally followed by ``, content: "..."``.  The parser is the exact
inverse on well-formed text and degrades gracefully (clamp, then drop)
on anything else.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any

from .errors import LayoutParseError, PromptSpecError
from .geometry import BBox
from .model import (
    DEFAULT_CANVAS_H,
    DEFAULT_CANVAS_W,
    Category,
    Element,
    Layout,
    TaskKind,
    task_from_string,
)

STOP_TOKEN = "<STOP>"
IMAGE_TOKEN = "<image>"
OUTPUT_FORMAT_ID = "xyxy_v1"
_OUTPUT_FORMAT_LINE = "Output format: 'element_type': [x_min, y_min, x_max, y_max]."

DEFAULT_TASK_DESCRIPTIONS: dict[TaskKind, str] = {
    TaskKind.BFEF: "Create a clean, well-organized document layout.",
    TaskKind.BCEF: "Create a poster layout that complements the given background.",
    TaskKind.BFEC: (
        "Create an engaging, product-focused layout using provided selling "
        "point elements."
    ),
    TaskKind.BCEC: (
        "Create an engaging, product-focused layout using provided selling "
        "point elements."
    ),
}


@dataclass(frozen=True, slots=True)
class TaskSpec:
    """Everything the instruction builder needs for one request."""

    task: TaskKind
    element_types: tuple[str, ...]
    task_description: str | None = None
    canvas_w: int = DEFAULT_CANVAS_W
    canvas_h: int = DEFAULT_CANVAS_H
    background_notes: str = ""
    background_ref: str | None = None
    contents: tuple[str, ...] = ()
    output_format: str = OUTPUT_FORMAT_ID

    def description(self) -> str:
        if self.task_description is not None:
            return self.task_description
        return DEFAULT_TASK_DESCRIPTIONS[self.task]


def _check_spec(spec: TaskSpec) -> None:
    if not spec.element_types:
        raise PromptSpecError("at least one element type is required")
    if spec.output_format != OUTPUT_FORMAT_ID:
        raise PromptSpecError(f"unknown output format: {spec.output_format!r}")
    if spec.task.background_constrained and spec.background_ref is None:
        raise PromptSpecError(
            f"task {spec.task.value} needs a background reference"
        )
    if not spec.task.background_constrained and spec.background_ref is not None:
        raise PromptSpecError(
            f"task {spec.task.value} must not carry a background reference"
        )
    if spec.task.content_constrained and not spec.contents:
        raise PromptSpecError(
            f"task {spec.task.value} needs selling point candidates"
        )
    if not spec.task.content_constrained and spec.contents:
        raise PromptSpecError(
            f"task {spec.task.value} must not carry selling point candidates"
        )


def _join_names(names: tuple[str, ...]) -> str:
    if len(names) == 1:
        return names[0]
    if len(names) == 2:
        return f"{names[0]} and {names[1]}"
    return ", ".join(names[:-1]) + f", and {names[-1]}"


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def build_instruction(spec: TaskSpec) -> str:
    """Render the instruction in its fixed component order."""
    _check_spec(spec)
    parts = [f"Task: {spec.description()}"]
    canvas = f"Canvas size: {spec.canvas_w} × {spec.canvas_h} pixels."
    if spec.background_notes:
        canvas += f" {spec.background_notes}"
    parts.append(canvas)
    if spec.background_ref is not None:
        parts.append("Background image: please see the given image.")
    parts.append(f"Element types: {_join_names(spec.element_types)}.")
    if spec.contents:
        listed = ", ".join(_quote(c) for c in spec.contents)
        parts.append(f"Selling point candidates: [{listed}].")
    parts.append(_OUTPUT_FORMAT_LINE)
    return " ".join(parts)


def build_prompt(
    task: TaskKind,
    ctx_has_background: bool,
    instruction: str,
    completion: Layout | None = None,
) -> str:
    """Assemble the full conversational prompt.

    The image placeholder and its line break appear only when a
    background raster accompanies the request; a completion layout, if
    given, is serialized after the assistant role token.
    """
    if task.background_constrained and not ctx_has_background:
        raise PromptSpecError(f"task {task.value} requires a background raster")
    if not task.background_constrained and ctx_has_background:
        raise PromptSpecError(f"task {task.value} does not take a background raster")
    image_part = f"{IMAGE_TOKEN}\n" if ctx_has_background else ""
    prompt = f"Human: {image_part}{instruction}{STOP_TOKEN} Assistant:"
    if completion is not None:
        prompt += f" {serialize_layout(completion)}{STOP_TOKEN}"
    return prompt


def serialize_layout(layout: Layout) -> str:
    """One line per element, in element order."""
    lines = []
    for el in layout.elements:
        b = el.bbox
        line = f"'{el.category.name}': [{b.x_min}, {b.y_min}, {b.x_max}, {b.y_max}]"
        if el.content is not None:
            line += f", content: {_quote(el.content)}"
        lines.append(line)
    return "\n".join(lines)


_LINE_RE = re.compile(
    r"""^\s*
        '(?P<cat>[^']+)'\s*:\s*
        \[\s*(?P<x0>-?\d+)\s*,\s*(?P<y0>-?\d+)\s*,\s*(?P<x1>-?\d+)\s*,\s*(?P<y1>-?\d+)\s*\]
        (?:\s*,\s*content:\s*"(?P<content>(?:[^"\\]|\\.)*)")?
        \s*,?\s*$""",
    re.VERBOSE,
)

_UNESCAPE_RE = re.compile(r"\\(.)")


def _unquote(text: str) -> str:
    return _UNESCAPE_RE.sub(r"\1", text)


def parse_layout(
    text: str,
    task: TaskKind | str,
    canvas_w: int = DEFAULT_CANVAS_W,
    canvas_h: int = DEFAULT_CANVAS_H,
) -> tuple[Layout, list[str]]:
    """Recover a layout from model-style output text.

    Coordinates are clamped to the canvas; boxes left degenerate by the
    clamp are dropped.  Both repairs append a warning.  Empty text means
    an empty layout; non-empty text with zero recoverable lines raises
    :class:`LayoutParseError`.
    """
    if isinstance(task, str):
        task = task_from_string(task)
    warnings: list[str] = []
    elements: list[Element] = []
    stripped_all = text.strip()
    matched = 0
    # split on newlines only: content strings may carry exotic whitespace
    # (form feeds and the like) that str.splitlines would treat as breaks
    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.strip()
        if not line:
            continue
        m = _LINE_RE.match(line)
        if m is None:
            warnings.append(f"line {lineno}: unrecognized, skipped")
            continue
        matched += 1
        x0, y0 = int(m["x0"]), int(m["y0"])
        x1, y1 = int(m["x1"]), int(m["y1"])
        cx0 = min(max(x0, 0), canvas_w)
        cy0 = min(max(y0, 0), canvas_h)
        cx1 = min(max(x1, 0), canvas_w)
        cy1 = min(max(y1, 0), canvas_h)
        if (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1):
            warnings.append(
                f"line {lineno}: box [{x0}, {y0}, {x1}, {y1}] clamped to canvas"
            )
        if cx0 >= cx1 or cy0 >= cy1:
            warnings.append(f"line {lineno}: degenerate box dropped")
            continue
        content = m["content"]
        elements.append(
            Element(
                Category(m["cat"].strip().lower()),
                BBox(cx0, cy0, cx1, cy1),
                None if content is None else _unquote(content),
            )
        )
    if stripped_all and matched == 0:
        raise LayoutParseError("no layout lines could be recovered from the text")
    layout = Layout(
        task=task, elements=tuple(elements), canvas_w=canvas_w, canvas_h=canvas_h
    )
    return layout, warnings


def taskspec_from_dict(doc: dict[str, Any]) -> TaskSpec:
    """Build a TaskSpec from a JSON-style dict (used by the CLI)."""
    try:
        task = task_from_string(doc["task"])
        element_types = tuple(str(t) for t in doc["element_types"])
    except (KeyError, TypeError) as exc:
        raise PromptSpecError(f"task spec missing field: {exc}") from exc
    canvas = doc.get("canvas", {})
    return TaskSpec(
        task=task,
        element_types=element_types,
        task_description=doc.get("task_description"),
        canvas_w=int(canvas.get("w", DEFAULT_CANVAS_W)),
        canvas_h=int(canvas.get("h", DEFAULT_CANVAS_H)),
        background_notes=str(doc.get("background_notes", "")),
        background_ref=doc.get("background_ref"),
        contents=tuple(str(c) for c in doc.get("contents", ())),
        output_format=str(doc.get("output_format", OUTPUT_FORMAT_ID)),
    )
