"""Token scheme and a tabular autoregressive layout generator.

Layouts become token sequences: BOS, then per element a category token
and four quantized coordinate tokens closed by SEP, then EOS.  The
generator keeps an explicit logit table ``theta[context, slot, vocab]``
with one softmax per sequence slot, conditioned on a prompt context
(task kind crossed with a background brightness bucket).  Tiny by
design: exact log-probabilities and gradients in closed form, which is
what the preference-training math is exercised against.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, MalformedTokenStreamError
from .geometry import BBox
from .model import (
    KNOWN_CATEGORIES,
    TASK_ORDER,
    Category,
    Element,
    Layout,
    SceneContext,
    TaskKind,
)

BOS, EOS, SEP = 0, 1, 2
_SPECIALS = 3
_TOKENS_PER_ELEMENT = 6  # category + 4 coordinates + SEP

N_BRIGHTNESS_BUCKETS = 3


@dataclass(frozen=True, slots=True)
class TokenScheme:
    """Vocabulary layout and coordinate quantization parameters."""

    grid: int = 32
    max_elements: int = 8
    categories: tuple[str, ...] = KNOWN_CATEGORIES

    def __post_init__(self) -> None:
        if self.grid < 2:
            raise InputError("grid must be at least 2")
        if self.max_elements < 1:
            raise InputError("max_elements must be at least 1")
        if not self.categories:
            raise InputError("at least one category is required")

    @property
    def vocab_size(self) -> int:
        return _SPECIALS + len(self.categories) + self.grid

    @property
    def max_slots(self) -> int:
        # every token after BOS: elements plus the closing EOS
        return _TOKENS_PER_ELEMENT * self.max_elements + 1

    def category_token(self, name: str) -> int:
        try:
            return _SPECIALS + self.categories.index(name)
        except ValueError as exc:
            raise InputError(f"category {name!r} is outside the token scheme") from exc

    def category_name(self, token: int) -> str:
        return self.categories[token - _SPECIALS]

    def is_category_token(self, token: int) -> bool:
        return _SPECIALS <= token < _SPECIALS + len(self.categories)

    def bin_token(self, b: int) -> int:
        return _SPECIALS + len(self.categories) + b

    def is_bin_token(self, token: int) -> bool:
        return _SPECIALS + len(self.categories) <= token < self.vocab_size

    def bin_of_token(self, token: int) -> int:
        return token - _SPECIALS - len(self.categories)

    def quantize(self, coord: int, dim: int) -> int:
        """bin = floor(grid * coord / dim), clamped into [0, grid - 1]."""
        b = self.grid * coord // dim
        return min(max(b, 0), self.grid - 1)

    def bin_center(self, b: int, dim: int) -> int:
        """Integer pixel nearest to the true bin center (half rounds up)."""
        return int((b + 0.5) * dim / self.grid + 0.5)


def tokenize(layout: Layout, scheme: TokenScheme) -> tuple[int, ...]:
    """Encode a layout; elements past ``max_elements`` are an error."""
    if len(layout.elements) > scheme.max_elements:
        raise InputError(
            f"layout has {len(layout.elements)} elements, scheme allows "
            f"{scheme.max_elements}"
        )
    tokens = [BOS]
    for el in layout.elements:
        b = el.bbox
        tokens.append(scheme.category_token(el.category.name))
        tokens.append(scheme.bin_token(scheme.quantize(b.x_min, layout.canvas_w)))
        tokens.append(scheme.bin_token(scheme.quantize(b.y_min, layout.canvas_h)))
        tokens.append(scheme.bin_token(scheme.quantize(b.x_max, layout.canvas_w)))
        tokens.append(scheme.bin_token(scheme.quantize(b.y_max, layout.canvas_h)))
        tokens.append(SEP)
    tokens.append(EOS)
    return tuple(tokens)


def detokenize(
    tokens: tuple[int, ...] | list[int],
    scheme: TokenScheme,
    task: TaskKind,
    canvas_w: int,
    canvas_h: int,
) -> Layout:
    """Decode a token stream back to a layout via bin centers.

    Streams produced by :func:`tokenize` always decode; anything else
    must follow the same grammar or :class:`MalformedTokenStreamError`
    is raised (sampled sequences are allowed to be garbage, callers
    score them accordingly).
    """
    toks = list(tokens)
    if not toks or toks[0] != BOS:
        raise MalformedTokenStreamError("stream does not start with BOS")
    i = 1
    elements: list[Element] = []
    while True:
        if i >= len(toks):
            raise MalformedTokenStreamError("stream ended without EOS")
        if toks[i] == EOS:
            if i != len(toks) - 1:
                raise MalformedTokenStreamError("tokens after EOS")
            break
        if i + _TOKENS_PER_ELEMENT > len(toks):
            raise MalformedTokenStreamError("truncated element group")
        cat_tok, bx0, by0, bx1, by1, sep = toks[i : i + _TOKENS_PER_ELEMENT]
        if not scheme.is_category_token(cat_tok):
            raise MalformedTokenStreamError(f"expected category token, got {cat_tok}")
        for t in (bx0, by0, bx1, by1):
            if not scheme.is_bin_token(t):
                raise MalformedTokenStreamError(f"expected coordinate token, got {t}")
        if sep != SEP:
            raise MalformedTokenStreamError("element group not closed by SEP")
        gx0, gy0 = scheme.bin_of_token(bx0), scheme.bin_of_token(by0)
        gx1, gy1 = scheme.bin_of_token(bx1), scheme.bin_of_token(by1)
        if gx1 < gx0 or gy1 < gy0:
            raise MalformedTokenStreamError("reversed coordinate bins")
        x0 = scheme.bin_center(gx0, canvas_w)
        y0 = scheme.bin_center(gy0, canvas_h)
        x1 = scheme.bin_center(gx1, canvas_w)
        y1 = scheme.bin_center(gy1, canvas_h)
        # equal bins collapse to a point; keep at least one pixel
        if x1 <= x0:
            x1 = min(x0 + 1, canvas_w)
            x0 = x1 - 1
        if y1 <= y0:
            y1 = min(y0 + 1, canvas_h)
            y0 = y1 - 1
        elements.append(Element(Category(scheme.category_name(cat_tok)), BBox(x0, y0, x1, y1)))
        if len(elements) > scheme.max_elements:
            raise MalformedTokenStreamError("too many element groups")
        i += _TOKENS_PER_ELEMENT
    return Layout(task=task, elements=tuple(elements), canvas_w=canvas_w, canvas_h=canvas_h)


# ---------------------------------------------------------------------------
# Contexts
# ---------------------------------------------------------------------------


def brightness_bucket(background: np.ndarray | None) -> int:
    """Tercile of the mean background gray; 0 when there is none."""
    if background is None:
        return 0
    mean = float(np.asarray(background, dtype=np.float64).mean())
    if mean < 85.0:
        return 0
    if mean < 170.0:
        return 1
    return 2


def context_id(task: TaskKind, ctx: SceneContext | None = None) -> int:
    gray = ctx.background_gray() if ctx is not None else None
    return TASK_ORDER.index(task) * N_BRIGHTNESS_BUCKETS + brightness_bucket(gray)


def n_default_contexts() -> int:
    return len(TASK_ORDER) * N_BRIGHTNESS_BUCKETS


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------


@dataclass
class ToyPolicy:
    """Per-slot softmax tables, one row set per prompt context."""

    scheme: TokenScheme
    n_contexts: int = field(default_factory=n_default_contexts)
    theta: np.ndarray | None = None

    def __post_init__(self) -> None:
        shape = (self.n_contexts, self.scheme.max_slots, self.scheme.vocab_size)
        if self.theta is None:
            self.theta = np.zeros(shape, dtype=np.float64)
        else:
            self.theta = np.asarray(self.theta, dtype=np.float64)
            if self.theta.shape != shape:
                raise InputError(
                    f"theta shape {self.theta.shape} does not match scheme {shape}"
                )

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(
            scheme=self.scheme, n_contexts=self.n_contexts, theta=self.theta.copy()
        )


def _log_softmax(rows: np.ndarray) -> np.ndarray:
    shifted = rows - rows.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _softmax(rows: np.ndarray) -> np.ndarray:
    shifted = rows - rows.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_context(policy: ToyPolicy, context: int) -> None:
    if not 0 <= context < policy.n_contexts:
        raise InputError(f"context {context} outside [0, {policy.n_contexts})")


def logprob(policy: ToyPolicy, context: int, tokens: tuple[int, ...] | list[int]) -> float:
    """Sum of per-slot log-softmax terms for every token after BOS."""
    _check_context(policy, context)
    toks = list(tokens)
    if not toks or toks[0] != BOS:
        raise InputError("sequences must start with BOS")
    n_slots = len(toks) - 1
    if n_slots > policy.scheme.max_slots:
        raise InputError("sequence longer than the policy table")
    if n_slots == 0:
        return 0.0
    rows = _log_softmax(policy.theta[context, :n_slots])
    return float(rows[np.arange(n_slots), toks[1:]].sum())


def logprob_grad(
    policy: ToyPolicy, context: int, tokens: tuple[int, ...] | list[int]
) -> np.ndarray:
    """d logprob / d theta[context]; shape (max_slots, vocab)."""
    _check_context(policy, context)
    toks = list(tokens)
    n_slots = len(toks) - 1
    grad = np.zeros((policy.scheme.max_slots, policy.scheme.vocab_size))
    if n_slots <= 0:
        return grad
    probs = _softmax(policy.theta[context, :n_slots])
    grad[:n_slots] = -probs
    grad[np.arange(n_slots), toks[1:]] += 1.0
    return grad


def sample(
    policy: ToyPolicy,
    context: int,
    temperature: float = 1.0,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[int, ...]:
    """Draw one sequence; deterministic given a seed (or generator).

    Stops after sampling EOS or once every slot is used.  Temperature
    scales the logits; values approaching zero approach the per-slot
    argmax sequence.
    """
    _check_context(policy, context)
    if temperature <= 0.0:
        raise InputError("temperature must be positive")
    if rng is None:
        rng = np.random.default_rng(seed)
    tokens = [BOS]
    for slot in range(policy.scheme.max_slots):
        row = policy.theta[context, slot] / temperature
        probs = _softmax(row)
        tok = int(rng.choice(policy.scheme.vocab_size, p=probs))
        tokens.append(tok)
        if tok == EOS:
            break
    return tuple(tokens)


def nll_pretrain(
    policy: ToyPolicy,
    corpus: list[tuple[int, tuple[int, ...]]],
    epochs: int = 50,
    lr: float = 1.0,
) -> list[float]:
    """Full-batch gradient descent on mean sequence NLL, in place.

    Returns the loss history: entry 0 is the pre-update loss, entry k
    the loss after k steps.  The objective is convex (a sum of
    log-sum-exp terms), and with the default step size the history is
    non-increasing.
    """
    if not corpus:
        raise InputError("pretraining corpus is empty")
    if epochs < 0:
        raise InputError("epochs must be non-negative")
    C, T, V = policy.theta.shape
    counts = np.zeros((C, T, V), dtype=np.float64)
    for context, tokens in corpus:
        _check_context(policy, context)
        toks = list(tokens)
        if not toks or toks[0] != BOS:
            raise InputError("sequences must start with BOS")
        if len(toks) - 1 > T:
            raise InputError("sequence longer than the policy table")
        for slot, target in enumerate(toks[1:]):
            counts[context, slot, target] += 1.0
    n_seqs = float(len(corpus))
    slot_totals = counts.sum(axis=2)  # occupancy of each (context, slot)

    def mean_nll() -> float:
        logp = _log_softmax(policy.theta)
        return float(-(counts * logp).sum() / n_seqs)

    history = [mean_nll()]
    for _ in range(epochs):
        probs = _softmax(policy.theta)
        grad = (slot_totals[:, :, None] * probs - counts) / n_seqs
        policy.theta -= lr * grad
        history.append(mean_nll())
    return history


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"TOYPOL01"


def save_policy(policy: ToyPolicy, path: str | Path) -> None:
    """Versioned binary checkpoint: header, scheme, little-endian table."""
    parts = [_MAGIC]
    parts.append(
        struct.pack(
            "<III",
            policy.scheme.grid,
            policy.scheme.max_elements,
            len(policy.scheme.categories),
        )
    )
    for name in policy.scheme.categories:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    C, T, V = policy.theta.shape
    parts.append(struct.pack("<III", C, T, V))
    parts.append(np.ascontiguousarray(policy.theta, dtype="<f8").tobytes())
    from .images import write_bytes_atomic

    write_bytes_atomic(Path(path), b"".join(parts))


def load_policy(path: str | Path) -> ToyPolicy:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"checkpoint not found: {p}")
    data = p.read_bytes()
    if data[: len(_MAGIC)] != _MAGIC:
        raise InputError(f"{p}: not a policy checkpoint")
    off = len(_MAGIC)
    try:
        grid, max_elements, n_cats = struct.unpack_from("<III", data, off)
        off += 12
        categories = []
        for _ in range(n_cats):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            categories.append(data[off : off + ln].decode("utf-8"))
            off += ln
        C, T, V = struct.unpack_from("<III", data, off)
        off += 12
        table = np.frombuffer(data, dtype="<f8", count=C * T * V, offset=off)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise InputError(f"{p}: corrupt checkpoint: {exc}") from exc
    scheme = TokenScheme(grid=grid, max_elements=max_elements, categories=tuple(categories))
    if (T, V) != (scheme.max_slots, scheme.vocab_size):
        raise InputError(f"{p}: table shape disagrees with the stored scheme")
    theta = table.reshape(C, T, V).astype(np.float64)
    return ToyPolicy(scheme=scheme, n_contexts=C, theta=theta)
