"""Deterministic rule-based layout evaluation.

Eight geometric rules produce weighted violations; a confidence score
``max(0, 1 - sum(weight * severity))`` and a decision threshold turn
them into a qualified/unqualified verdict with a four-section natural
language report.  Identical inputs always produce bit-identical
verdicts, report text included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, InvalidLayoutError
from .geometry import bbox_area, bbox_contains, bbox_intersection_area, bbox_iou
from .metrics import coverage_mask, nearest_axis_distance, underlay_exempt_pair
from .model import Layout, SceneContext, validate

#: Evaluation (and reporting) order of the rules.
RULE_IDS: tuple[str, ...] = (
    "overlap_inter",
    "overlap_background",
    "invalid_underlay",
    "extreme_small",
    "extreme_large",
    "empty_region",
    "misaligned",
    "disorder",
)


@dataclass(frozen=True, slots=True)
class Violation:
    rule_id: str
    severity: float  # in (0, 1]
    element_refs: tuple[int, ...]
    message: str


@dataclass(frozen=True, slots=True)
class RuleConfig:
    """Weights, thresholds, and the qualify decision threshold.

    Weight order mirrors how disruptive each defect is; thresholds use
    strict comparisons, so a box of exactly ``extreme_small_area`` px
    or exactly ``extreme_small_height`` px tall passes.
    """

    overlap_inter_weight: float = 0.6
    overlap_background_weight: float = 0.5
    invalid_underlay_weight: float = 0.4
    extreme_small_weight: float = 0.4
    extreme_large_weight: float = 0.4
    empty_region_weight: float = 0.3
    misaligned_weight: float = 0.3
    disorder_weight: float = 0.3
    extreme_small_area: int = 1000
    extreme_small_height: int = 30
    extreme_large_fraction: float = 1.0 / 3.0
    salient_cover_threshold: float = 0.5
    alignment_tolerance: float = 0.01
    empty_grid: int = 3
    empty_max_fraction: float = 2.0 / 3.0
    disorder_cv_threshold: float = 1.0
    decision_threshold: float = 0.5

    def weight(self, rule_id: str) -> float:
        if rule_id not in RULE_IDS:
            raise InputError(f"unknown rule id: {rule_id}")
        return getattr(self, f"{rule_id}_weight")

    def to_file(self, path: str | Path) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "RuleConfig":
        """Parse ``key = value`` lines; '#' starts a comment.

        Unknown keys are rejected so silent typos cannot skew scoring.
        """
        p = Path(path)
        if not p.is_file():
            raise InputError(f"rule config not found: {p}")
        known = {f.name: f.type for f in fields(cls)}
        overrides: dict[str, float | int] = {}
        for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{p}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in known:
                raise InputError(f"{p}:{lineno}: unknown key {key!r}")
            try:
                overrides[key] = int(value) if known[key] == "int" else float(value)
            except ValueError as exc:
                raise InputError(f"{p}:{lineno}: bad value for {key}") from exc
        return replace(cls(), **overrides)


def applicable_rules(task) -> tuple[str, ...]:
    """Rules evaluated for a task, in RULE_IDS order."""
    out = ["overlap_inter"]
    if task.background_constrained:
        out += ["overlap_background", "invalid_underlay", "extreme_small"]
    out.append("extreme_large")
    if not task.background_constrained:
        out.append("empty_region")
    out.append("misaligned")
    if not task.background_constrained:
        out.append("disorder")
    return tuple(out)


def skipped_rules(layout: Layout, ctx: SceneContext | None) -> tuple[str, ...]:
    """Applicable rules that cannot run on the given context."""
    skipped = []
    if layout.task.background_constrained and (ctx is None or ctx.saliency is None):
        skipped.append("overlap_background")
    return tuple(skipped)


def _element_salient_cover(el, saliency: np.ndarray) -> float:
    b = el.bbox
    region = saliency[b.y_min : b.y_max, b.x_min : b.x_max]
    return float(region.mean()) if region.size else 0.0


def check_rules(
    layout: Layout, ctx: SceneContext | None = None, cfg: RuleConfig | None = None
) -> list[Violation]:
    """Evaluate every applicable rule; returns violations in rule order.

    A missing saliency map silently disables overlap.background
    checking (see :func:`skipped_rules`); it is not itself a violation.
    """
    cfg = cfg or RuleConfig()
    ctx = ctx or SceneContext()
    rules = applicable_rules(layout.task)
    els = layout.elements
    out: list[Violation] = []

    if "overlap_inter" in rules:
        for i in range(len(els)):
            for j in range(i + 1, len(els)):
                if bbox_intersection_area(els[i].bbox, els[j].bbox) == 0:
                    continue
                if underlay_exempt_pair(els[i], els[j], layout.task):
                    continue
                iou = bbox_iou(els[i].bbox, els[j].bbox)
                out.append(
                    Violation(
                        "overlap_inter",
                        iou,
                        (i, j),
                        f"elements {i} and {j} overlap (iou {iou:.4f})",
                    )
                )

    if "overlap_background" in rules and ctx.saliency is not None:
        for i, el in enumerate(els):
            if el.category.name == "underlay":
                continue
            cover = _element_salient_cover(el, ctx.saliency)
            if cover > cfg.salient_cover_threshold:
                out.append(
                    Violation(
                        "overlap_background",
                        cover,
                        (i,),
                        f"element {i} sits on salient background (mean {cover:.4f})",
                    )
                )

    if "invalid_underlay" in rules:
        for i, el in enumerate(els):
            if el.category.name != "underlay":
                continue
            nested = any(
                j != i and bbox_contains(el.bbox, other.bbox)
                for j, other in enumerate(els)
            )
            if not nested:
                out.append(
                    Violation(
                        "invalid_underlay",
                        1.0,
                        (i,),
                        f"underlay {i} encloses no element",
                    )
                )

    if "extreme_small" in rules:
        for i, el in enumerate(els):
            area = bbox_area(el.bbox)
            height = el.bbox.height
            if area < cfg.extreme_small_area or height < cfg.extreme_small_height:
                out.append(
                    Violation(
                        "extreme_small",
                        1.0,
                        (i,),
                        f"element {i} is tiny (area {area}, height {height})",
                    )
                )

    if "extreme_large" in rules:
        limit = layout.canvas_area * cfg.extreme_large_fraction
        for i, el in enumerate(els):
            area = bbox_area(el.bbox)
            if area > limit:
                out.append(
                    Violation(
                        "extreme_large",
                        1.0,
                        (i,),
                        f"element {i} covers {area} px, over a third of the canvas",
                    )
                )

    if "empty_region" in rules and els:
        g = cfg.empty_grid
        w, h = layout.canvas_w, layout.canvas_h
        xs = [k * w // g for k in range(g + 1)]
        ys = [k * h // g for k in range(g + 1)]
        empty = 0
        for r in range(g):
            for c in range(g):
                hit = any(
                    el.bbox.x_min < xs[c + 1]
                    and el.bbox.x_max > xs[c]
                    and el.bbox.y_min < ys[r + 1]
                    and el.bbox.y_max > ys[r]
                    for el in els
                )
                if not hit:
                    empty += 1
        frac = empty / (g * g)
        if frac > cfg.empty_max_fraction:
            out.append(
                Violation(
                    "empty_region",
                    frac,
                    (),
                    f"{empty} of {g * g} grid cells are empty",
                )
            )

    if "misaligned" in rules and len(els) >= 2:
        tol = cfg.alignment_tolerance
        for i in range(len(els)):
            d = nearest_axis_distance(layout, i)
            if d > tol:
                severity = min(1.0, d / tol - 1.0)
                out.append(
                    Violation(
                        "misaligned",
                        severity,
                        (i,),
                        f"element {i} aligns with nothing (nearest axis gap {d:.4f})",
                    )
                )

    if "disorder" in rules and len(els) >= 2:
        centers = np.array(
            [
                (
                    (el.bbox.x_min + el.bbox.x_max) / 2.0,
                    (el.bbox.y_min + el.bbox.y_max) / 2.0,
                )
                for el in els
            ]
        )
        diffs = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diffs**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        nn = dist.min(axis=1)
        mean = float(nn.mean())
        if mean > 0.0:
            cv = float(nn.std()) / mean
            if cv > cfg.disorder_cv_threshold:
                severity = min(1.0, cv - cfg.disorder_cv_threshold)
                out.append(
                    Violation(
                        "disorder",
                        severity,
                        tuple(range(len(els))),
                        f"element spacing is erratic (cv {cv:.4f})",
                    )
                )

    return out


def confidence(violations: Iterable[Violation], cfg: RuleConfig | None = None) -> float:
    """``max(0, 1 - sum(weight * severity))``; no violations gives 1.0."""
    cfg = cfg or RuleConfig()
    total = sum(cfg.weight(v.rule_id) * v.severity for v in violations)
    return max(0.0, 1.0 - total)


@dataclass(frozen=True, slots=True)
class Verdict:
    label: str  # "qualified" | "unqualified"
    score: float
    violations: tuple[Violation, ...]
    sections: tuple[tuple[str, str], ...]

    @property
    def qualified(self) -> bool:
        return self.label == "qualified"

    @property
    def report(self) -> str:
        parts = []
        for title, body in self.sections:
            parts.append(f"## {title}\n{body}")
        return "\n\n".join(parts) + "\n"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "score": self.score,
            "violations": [
                {
                    "rule": v.rule_id,
                    "severity": v.severity,
                    "elements": list(v.element_refs),
                    "message": v.message,
                }
                for v in self.violations
            ],
            "report": {title: body for title, body in self.sections},
        }


def _census(layout: Layout) -> str:
    counts: dict[str, int] = {}
    for el in layout.elements:
        counts[el.category.name] = counts.get(el.category.name, 0) + 1
    if not counts:
        return "no elements"
    return ", ".join(f"{name} x{n}" for name, n in sorted(counts.items()))


def _glimpse(layout: Layout, ctx: SceneContext) -> str:
    bg = "with a background raster" if ctx.background is not None else "on a blank canvas"
    return (
        f"A {layout.task.value} layout on a {layout.canvas_w} x {layout.canvas_h} "
        f"pixel canvas {bg}, holding {len(layout.elements)} element(s): "
        f"{_census(layout)}."
    )


def _spatial(layout: Layout, ctx: SceneContext, violations: Sequence[Violation]) -> str:
    skipped = set(skipped_rules(layout, ctx))
    by_rule: dict[str, list[Violation]] = {}
    for v in violations:
        by_rule.setdefault(v.rule_id, []).append(v)
    lines = []
    for rule in applicable_rules(layout.task):
        if rule in skipped:
            lines.append(f"- {rule}: skipped (no saliency map)")
            continue
        found = by_rule.get(rule, [])
        if not found:
            lines.append(f"- {rule}: clear")
        else:
            worst = max(v.severity for v in found)
            lines.append(f"- {rule}: {len(found)} finding(s), worst severity {worst:.4f}")
            for v in found:
                lines.append(f"    {v.message}")
    return "\n".join(lines)


def _aesthetic(layout: Layout) -> str:
    w, h = layout.canvas_w, layout.canvas_h
    if layout.elements:
        covered = float(coverage_mask(layout).sum()) / (w * h)
        areas = [bbox_area(el.bbox) for el in layout.elements]
        cx = sum(
            a * (el.bbox.x_min + el.bbox.x_max) / 2.0
            for a, el in zip(areas, layout.elements)
        ) / sum(areas)
        cy = sum(
            a * (el.bbox.y_min + el.bbox.y_max) / 2.0
            for a, el in zip(areas, layout.elements)
        ) / sum(areas)
        dx = (cx - w / 2.0) / w
        dy = (cy - h / 2.0) / h
    else:
        covered, dx, dy = 0.0, 0.0, 0.0
    return (
        f"Elements cover {covered:.4f} of the canvas; the visual mass sits at "
        f"offset ({dx:+.4f}, {dy:+.4f}) from the canvas center."
    )


def _holistic(score: float, n_violations: int, cfg: RuleConfig) -> str:
    word = "pass" if score >= cfg.decision_threshold else "fail"
    return (
        f"Weighted severity leaves a confidence of {score:.4f} against a "
        f"threshold of {cfg.decision_threshold:.2f}, with {n_violations} "
        f"violation(s) recorded. Final judgment: {word}"
    )


def qualify(
    layout: Layout,
    ctx: SceneContext | None = None,
    cfg: RuleConfig | None = None,
) -> Verdict:
    """Validate, evaluate rules, score, and narrate a verdict.

    Raises :class:`InvalidLayoutError` when the layout (or its context)
    is structurally unsound; soundness is a precondition of scoring.
    """
    cfg = cfg or RuleConfig()
    ctx = ctx or SceneContext()
    faults = validate(layout, ctx)
    if faults:
        detail = "; ".join(f"{f.kind}: {f.message}" for f in faults)
        raise InvalidLayoutError(f"layout failed validation: {detail}")

    violations = tuple(check_rules(layout, ctx, cfg))
    score = confidence(violations, cfg)
    label = "qualified" if score >= cfg.decision_threshold else "unqualified"
    sections = (
        ("Layout Glimpse", _glimpse(layout, ctx)),
        ("Spatial Deconstruction", _spatial(layout, ctx, violations)),
        ("Aesthetic Appraisal", _aesthetic(layout)),
        ("Holistic Evaluation", _holistic(score, len(violations), cfg)),
    )
    return Verdict(label=label, score=score, violations=violations, sections=sections)


def score_layout(
    layout: Layout,
    ctx: SceneContext | None = None,
    cfg: RuleConfig | None = None,
) -> float:
    """Confidence score, with structurally invalid layouts scored 0.0.

    Convenience wrapper for callers (training loops) that must map any
    candidate to a number instead of failing.
    """
    try:
        return qualify(layout, ctx, cfg).score
    except InvalidLayoutError:
        return 0.0


def accuracy(predicted: Sequence[object], actual: Sequence[object]) -> float:
    """Mean agreement between two equal-length label sequences."""
    if len(predicted) != len(actual):
        raise InputError(
            f"label sequences differ in length ({len(predicted)} vs {len(actual)})"
        )
    if not predicted:
        raise InputError("accuracy is undefined on empty sequences")
    hits = sum(1 for p, a in zip(predicted, actual) if p == a)
    return hits / len(predicted)
