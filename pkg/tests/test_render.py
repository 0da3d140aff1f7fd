"""Raster rendering against a per-pixel compositing oracle."""

import numpy as np
import pytest

from layoutlab.errors import InputError
from layoutlab.geometry import BBox
from layoutlab.images import encode_ppm
from layoutlab.model import (
    Category,
    Element,
    Layout,
    SceneContext,
    TaskKind,
    make_layout,
)
from layoutlab.render import (
    DEFAULT_COLORMAP,
    ColorMap,
    dual_branch,
    geometry_prompt,
    visualize,
)
from oracles import blend_render, encode_p6, painted_mask, random_layout

SMALL = dict(canvas_w=48, canvas_h=40)


def default_colors(layout):
    return {el.category.name: DEFAULT_COLORMAP.color(el.category.name) for el in layout.elements}


def gray_scene(w=48, h=40, value=128):
    return SceneContext(background=np.full((h, w), value, dtype=np.uint8))


# ---------------------------------------------------------------------------
# blend arithmetic
# ---------------------------------------------------------------------------


def test_blend_formula_on_white():
    lay = make_layout("bfef", [("text", (10, 10, 20, 20))], **SMALL)
    img = visualize(lay)
    # (3 * color + 2 * 255) // 5 per channel for the text color (220, 50, 47)
    assert tuple(img[15, 15]) == (234, 132, 130)
    assert tuple(img[0, 0]) == (255, 255, 255)


def test_blend_formula_over_gray_background():
    lay = make_layout("bcef", [("logo", (5, 5, 25, 25))], **SMALL)
    img = visualize(lay, gray_scene(value=100))
    # logo is (38, 139, 210) over base 100
    expected = tuple((3 * c + 2 * 100) // 5 for c in (38, 139, 210))
    assert tuple(img[10, 10]) == expected
    assert tuple(img[0, 0]) == (100, 100, 100)


def test_painted_pixels_equal_box_union():
    rng = np.random.default_rng(11)
    for _ in range(10):
        lay = random_layout(rng, max_elements=4, max_box_w=16, max_box_h=12, **SMALL)
        img = visualize(lay)
        changed = (img != 255).any(axis=2)
        assert np.array_equal(changed, painted_mask(lay))


def test_matches_oracle_white_background():
    rng = np.random.default_rng(22)
    for _ in range(6):
        lay = random_layout(rng, task=TaskKind.BFEF, max_elements=5, **SMALL)
        want = blend_render(lay, default_colors(lay))
        assert np.array_equal(visualize(lay), want)


def test_matches_oracle_gray_and_rgb_backgrounds():
    rng = np.random.default_rng(33)
    gray = rng.integers(0, 256, size=(40, 48), dtype=np.uint8)
    rgb = rng.integers(0, 256, size=(40, 48, 3), dtype=np.uint8)
    for bg in (gray, rgb):
        lay = random_layout(rng, task=TaskKind.BCEF, max_elements=5, **SMALL)
        got = visualize(lay, SceneContext(background=bg))
        assert np.array_equal(got, blend_render(lay, default_colors(lay), bg))


def test_order_independent_when_disjoint():
    boxes = [("text", (2, 2, 12, 12)), ("logo", (20, 2, 30, 12)), ("figure", (2, 20, 12, 30))]
    fwd = visualize(make_layout("bfef", boxes, **SMALL))
    rev = visualize(make_layout("bfef", list(reversed(boxes)), **SMALL))
    assert np.array_equal(fwd, rev)


def test_layout_order_decides_overlaps():
    a = [("text", (5, 5, 25, 25)), ("figure", (15, 15, 35, 35))]
    b = list(reversed(a))
    img_a = visualize(make_layout("bfef", a, **SMALL))
    img_b = visualize(make_layout("bfef", b, **SMALL))
    assert not np.array_equal(img_a, img_b)
    # both still match the oracle, which paints in the same order
    for boxes, img in ((a, img_a), (b, img_b)):
        lay = make_layout("bfef", boxes, **SMALL)
        assert np.array_equal(img, blend_render(lay, default_colors(lay)))


def test_underlays_painted_first():
    # the underlay is listed last but must sit beneath the text
    lay = make_layout(
        "bfef", [("text", (10, 10, 30, 30)), ("underlay", (5, 5, 35, 35))], **SMALL
    )
    img = visualize(lay)
    under = DEFAULT_COLORMAP.color("underlay")
    text = DEFAULT_COLORMAP.color("text")
    base_under = tuple((3 * c + 2 * 255) // 5 for c in under)
    over_text = tuple(
        (3 * t + 2 * u) // 5 for t, u in zip(text, base_under)
    )
    assert tuple(img[7, 7]) == base_under
    assert tuple(img[20, 20]) == over_text
    assert np.array_equal(img, blend_render(lay, default_colors(lay)))


def test_ppm_bytes_match_oracle():
    rng = np.random.default_rng(44)
    lay = random_layout(rng, task=TaskKind.BFEF, max_elements=5, **SMALL)
    got = encode_ppm(visualize(lay))
    want = encode_p6(blend_render(lay, default_colors(lay)))
    assert got == want


# ---------------------------------------------------------------------------
# backgrounds and validation
# ---------------------------------------------------------------------------


def test_background_required_for_constrained_tasks():
    lay = make_layout("bcef", [("text", (5, 5, 20, 20))], **SMALL)
    with pytest.raises(InputError):
        visualize(lay)
    with pytest.raises(InputError):
        visualize(lay, SceneContext(background=np.zeros((8, 8), dtype=np.uint8)))


def test_background_ignored_for_free_tasks():
    lay = make_layout("bfef", [("text", (5, 5, 20, 20))], **SMALL)
    img = visualize(lay, gray_scene(value=10))
    assert tuple(img[0, 0]) == (255, 255, 255)  # white canvas, not the raster


def test_render_does_not_mutate_background():
    bg = np.full((40, 48), 128, dtype=np.uint8)
    ctx = SceneContext(background=bg)
    lay = make_layout("bcef", [("text", (5, 5, 20, 20))], **SMALL)
    visualize(lay, ctx)
    assert int(ctx.background[10, 10]) == 128


# ---------------------------------------------------------------------------
# content stamping
# ---------------------------------------------------------------------------


def content_layout(task, text):
    el = Element(Category("text"), BBox(8, 8, 40, 36), text)
    return Layout(task=task, elements=(el,), canvas_w=48, canvas_h=40)


def test_content_stamped_only_on_content_tasks():
    with_text = content_layout(TaskKind.BFEC, "Hi")
    without = content_layout(TaskKind.BFEC, None)
    assert not np.array_equal(visualize(with_text), visualize(without))

    free_task = content_layout(TaskKind.BFEF, "Hi")
    free_blank = content_layout(TaskKind.BFEF, None)
    assert np.array_equal(visualize(free_task), visualize(free_blank))


def test_content_stays_inside_its_box():
    with_text = content_layout(TaskKind.BFEC, "Hello layout world, a longer string")
    without = content_layout(TaskKind.BFEC, None)
    diff = (visualize(with_text) != visualize(without)).any(axis=2)
    ys, xs = np.nonzero(diff)
    assert diff.any()
    assert xs.min() >= 8 and xs.max() < 40
    assert ys.min() >= 8 and ys.max() < 36


def test_content_rendering_deterministic():
    lay = content_layout(TaskKind.BCEC, "Deal!")
    ctx = gray_scene()
    assert np.array_equal(visualize(lay, ctx), visualize(lay, ctx))


def test_tiny_box_swallows_content_silently():
    cramped = Layout(
        task=TaskKind.BFEC,
        elements=(Element(Category("text"), BBox(0, 0, 8, 8), "Wide"),),
        canvas_w=48,
        canvas_h=40,
    )
    blank = Layout(
        task=TaskKind.BFEC,
        elements=(Element(Category("text"), BBox(0, 0, 8, 8)),),
        canvas_w=48,
        canvas_h=40,
    )
    assert np.array_equal(visualize(cramped), visualize(blank))


# ---------------------------------------------------------------------------
# colors
# ---------------------------------------------------------------------------


def test_colormap_known_names():
    cmap = ColorMap()
    assert cmap.color("text") == (220, 50, 47)
    assert cmap.color_name("text") == "red"


def test_colormap_unknown_names_are_stable():
    a, b = ColorMap(), ColorMap()
    assert a.color("sticker") == b.color("sticker")
    assert a.color_name("sticker").startswith("#")
    lay = make_layout("bfef", [("sticker", (5, 5, 20, 20))], **SMALL)
    assert np.array_equal(visualize(lay), visualize(lay))


def test_default_colors_pairwise_distinct():
    cmap = ColorMap()
    seen = [cmap.color(name) for name in cmap.table]
    assert len(set(seen)) == len(seen)


# ---------------------------------------------------------------------------
# text branch
# ---------------------------------------------------------------------------


def test_geometry_prompt_fixture():
    lay = make_layout("bfef", [("text", (0, 0, 24, 20))], **SMALL)
    text = geometry_prompt(lay)
    lines = text.strip().split("\n")
    assert lines[0] == (
        "0. text (red) box=[0, 0, 24, 20] w=24 h=20 area=480 center=(0.250, 0.250)"
    )
    assert lines[1] == "elements: 1"
    assert lines[2] == "covered area fraction: 0.2500"
    assert text.endswith("\n")


def test_geometry_prompt_empty_layout():
    text = geometry_prompt(make_layout("bfef", [], **SMALL))
    assert "elements: 0" in text
    assert "covered area fraction: 0.0000" in text


def test_geometry_prompt_counts_union_once():
    lay = make_layout(
        "bfef", [("text", (0, 0, 24, 20)), ("logo", (0, 0, 24, 20))], **SMALL
    )
    assert "covered area fraction: 0.2500" in geometry_prompt(lay)


def test_dual_branch_agrees_with_parts():
    lay = make_layout("bfef", [("text", (4, 4, 30, 28))], **SMALL)
    text, raster = dual_branch(lay)
    assert text == geometry_prompt(lay)
    assert np.array_equal(raster, visualize(lay))
