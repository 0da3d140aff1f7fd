"""Preference optimization for the toy layout generator.

Pairs of sampled layouts are ranked by an external scorer, and the
policy is pushed toward the winner with a sigmoid pairwise loss over
reference-anchored log-ratios.  Three margin flavours share one code
path:

* ``dpo``   - margin 0
* ``fixed`` - a constant margin supplied by the caller
* ``dmpo``  - margin ``f(delta) = exp(delta) - exp(-delta)`` where
  ``delta`` is the score gap of the pair, so confidently-separated
  pairs are pushed harder than near-ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DegenerateFeedbackError, InputError, MalformedTokenStreamError
from .model import DEFAULT_CANVAS_H, DEFAULT_CANVAS_W, Layout, SceneContext, TaskKind
from .policy import ToyPolicy, context_id, detokenize, logprob, logprob_grad, sample

LOSS_KINDS = ("dpo", "fixed", "dmpo")

#: Scorer contract: (layout, scene) -> quality in [0, 1].
ScoreFn = Callable[[Layout, SceneContext], float]


@dataclass(frozen=True, slots=True)
class PreferencePair:
    """One ranked pair of token sequences under a shared context."""

    context: int
    winner: tuple[int, ...]
    loser: tuple[int, ...]
    score_winner: float
    score_loser: float

    def __post_init__(self) -> None:
        if self.winner == self.loser:
            raise InputError("winner and loser are the same sequence")
        d = self.score_winner - self.score_loser
        if not 0.0 < d <= 1.0:
            raise InputError(f"score gap {d} outside (0, 1]")

    @property
    def delta(self) -> float:
        return self.score_winner - self.score_loser


def margin(score_winner: float, score_loser: float) -> float:
    """Raw score gap; non-positive values mean the pair is unusable."""
    return score_winner - score_loser


def f_transform(delta: float) -> float:
    """Monotone margin transform ``exp(delta) - exp(-delta)``.

    Zero at zero, strictly increasing, and steeper than linear, so a
    wide quality gap demands a wide log-ratio gap before the pair's
    loss flattens out.
    """
    return math.exp(delta) - math.exp(-delta)


def preference_loss(
    policy: ToyPolicy,
    reference: ToyPolicy,
    pair: PreferencePair,
    beta: float = 0.1,
    kind: str = "dpo",
    fixed_margin: float | None = None,
) -> tuple[float, np.ndarray]:
    """Pairwise loss and its exact gradient in ``policy.theta``.

    With ``r = logprob(policy) - logprob(reference)`` per sequence and
    margin ``M``, the loss is ``-log sigmoid(beta*(r_w - r_l) - M)``,
    computed as ``logaddexp(0, -z)`` for stability.  The returned
    gradient has the full table shape; only the pair's context plane is
    non-zero.
    """
    if kind not in LOSS_KINDS:
        raise InputError(f"unknown loss kind {kind!r}")
    if beta <= 0.0:
        raise InputError("beta must be positive")
    if kind == "fixed":
        if fixed_margin is None:
            raise InputError("fixed margin loss needs fixed_margin")
        m = float(fixed_margin)
    elif kind == "dmpo":
        m = f_transform(pair.delta)
    else:
        m = 0.0

    c = pair.context
    r_w = logprob(policy, c, pair.winner) - logprob(reference, c, pair.winner)
    r_l = logprob(policy, c, pair.loser) - logprob(reference, c, pair.loser)
    z = beta * (r_w - r_l) - m
    loss = float(np.logaddexp(0.0, -z))

    dz = -float(expit(-z))  # dL/dz
    grad = np.zeros_like(policy.theta)
    grad[c] = dz * beta * (logprob_grad(policy, c, pair.winner) - logprob_grad(policy, c, pair.loser))
    return loss, grad


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class GenContext:
    """A prompt the trainer can sample against."""

    task: TaskKind
    canvas_w: int = DEFAULT_CANVAS_W
    canvas_h: int = DEFAULT_CANVAS_H
    scene: SceneContext | None = None


@dataclass(frozen=True, slots=True)
class TrainConfig:
    steps: int = 200
    lr: float = 1.0
    beta: float = 0.1
    temperature: float = 1.0
    seed: int = 0
    kind: str = "dmpo"
    fixed_margin: float | None = None
    probe_every: int = 0  # 0 disables pass-rate probes
    probe_samples: int = 32
    pass_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise InputError(f"unknown loss kind {self.kind!r}")
        if self.kind == "fixed" and self.fixed_margin is None:
            raise InputError("kind 'fixed' needs fixed_margin")
        if self.steps < 0:
            raise InputError("steps must be non-negative")


@dataclass(frozen=True, slots=True)
class TrainRow:
    """One step of training history."""

    step: int
    mean_loss: float
    mean_delta: float
    skipped: int
    pass_rate: float | None = None


def _score_tokens(
    tokens: tuple[int, ...],
    policy: ToyPolicy,
    gctx: GenContext,
    score_fn: ScoreFn,
) -> float:
    """Decode and score; undecodable sequences are worth nothing."""
    try:
        layout = detokenize(tokens, policy.scheme, gctx.task, gctx.canvas_w, gctx.canvas_h)
    except MalformedTokenStreamError:
        return 0.0
    scene = gctx.scene if gctx.scene is not None else SceneContext()
    return float(score_fn(layout, scene))


def evaluate_pass_rate(
    policy: ToyPolicy,
    score_fn: ScoreFn,
    contexts: Sequence[GenContext],
    n_samples: int,
    pass_threshold: float = 0.5,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
    seed: int | Sequence[int] = 0,
) -> float:
    """Fraction of fresh samples scoring at or above the threshold."""
    if not contexts:
        raise InputError("no contexts to evaluate")
    if n_samples < 1:
        raise InputError("n_samples must be at least 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    passed = total = 0
    for gctx in contexts:
        cid = context_id(gctx.task, gctx.scene)
        for _ in range(n_samples):
            tokens = sample(policy, cid, temperature=temperature, rng=rng)
            if _score_tokens(tokens, policy, gctx, score_fn) >= pass_threshold:
                passed += 1
            total += 1
    return passed / total


def dmpo_train(
    policy: ToyPolicy,
    score_fn: ScoreFn,
    contexts: Sequence[GenContext],
    cfg: TrainConfig,
) -> list[TrainRow]:
    """Run preference training in place and return the step history.

    Each step walks the contexts in order, samples two candidates per
    context, ranks them with ``score_fn``, and applies one SGD update
    per usable pair against the frozen starting policy.  Ties and
    identical samples are skipped; a step with no usable pair at all
    raises :class:`DegenerateFeedbackError` since the scorer is not
    separating anything the policy produces.  Zero steps is a no-op
    that leaves the policy equal to its reference.
    """
    if not contexts:
        raise InputError("no training contexts")
    reference = policy.copy()
    rng = np.random.default_rng(cfg.seed)
    history: list[TrainRow] = []
    for step in range(cfg.steps):
        losses: list[float] = []
        deltas: list[float] = []
        skipped = 0
        for gctx in contexts:
            cid = context_id(gctx.task, gctx.scene)
            tok_a = sample(policy, cid, temperature=cfg.temperature, rng=rng)
            tok_b = sample(policy, cid, temperature=cfg.temperature, rng=rng)
            score_a = _score_tokens(tok_a, policy, gctx, score_fn)
            score_b = _score_tokens(tok_b, policy, gctx, score_fn)
            if tok_a == tok_b or score_a == score_b:
                skipped += 1
                continue
            if score_a > score_b:
                pair = PreferencePair(cid, tok_a, tok_b, score_a, score_b)
            else:
                pair = PreferencePair(cid, tok_b, tok_a, score_b, score_a)
            loss, grad = preference_loss(
                policy,
                reference,
                pair,
                beta=cfg.beta,
                kind=cfg.kind,
                fixed_margin=cfg.fixed_margin,
            )
            policy.theta -= cfg.lr * grad
            losses.append(loss)
            deltas.append(pair.delta)
        if not losses:
            err = DegenerateFeedbackError(
                f"step {step}: no usable preference pairs (all ties or duplicates)"
            )
            # callers that treat exhaustion as convergence can recover the
            # partial record; updates from completed steps are already in
            # the policy
            err.step = step
            err.history = tuple(history)
            raise err
        pass_rate = None
        if cfg.probe_every > 0 and (step + 1) % cfg.probe_every == 0:
            pass_rate = evaluate_pass_rate(
                policy,
                score_fn,
                contexts,
                cfg.probe_samples,
                pass_threshold=cfg.pass_threshold,
                temperature=cfg.temperature,
                seed=[cfg.seed, 7919, step],
            )
        history.append(
            TrainRow(
                step=step,
                mean_loss=float(np.mean(losses)),
                mean_delta=float(np.mean(deltas)),
                skipped=skipped,
                pass_rate=pass_rate,
            )
        )
    return history


def history_to_csv(history: Sequence[TrainRow]) -> str:
    lines = ["step,loss,mean_delta,skips,pass_rate"]
    for row in history:
        rate = "" if row.pass_rate is None else f"{row.pass_rate:.6f}"
        lines.append(
            f"{row.step},{row.mean_loss:.6f},{row.mean_delta:.6f},{row.skipped},{rate}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------

#: (kind, fixed_margin) settings every ablation sweeps.
DEFAULT_ABLATION: tuple[tuple[str, float | None], ...] = (
    ("dpo", None),
    ("fixed", 0.5),
    ("fixed", 1.0),
    ("fixed", 1.5),
    ("fixed", 2.0),
    ("dmpo", None),
)


@dataclass(frozen=True, slots=True)
class AblationResult:
    kind: str
    fixed_margin: float | None
    seed: int
    pass_rate: float
    history: tuple[TrainRow, ...] = field(repr=False, default=())
    #: step at which feedback ran dry, or None if all steps completed
    degenerate_step: int | None = None

    @property
    def setting(self) -> str:
        if self.kind == "fixed":
            return f"fixed({self.fixed_margin:g})"
        return self.kind


def ablation_harness(
    pretrained: ToyPolicy,
    score_fn: ScoreFn,
    contexts: Sequence[GenContext],
    cfg: TrainConfig,
    seeds: Sequence[int] = (0, 1, 2),
    settings: Sequence[tuple[str, float | None]] = DEFAULT_ABLATION,
    eval_samples: int = 64,
) -> list[AblationResult]:
    """Sweep margin settings x seeds from one shared starting policy.

    Every run trains a fresh copy of ``pretrained``; the final pass
    rate is measured with an evaluation stream that depends only on the
    seed, so settings sharing a seed see identical evaluation draws.
    A run whose feedback dries up early is recorded as trained through
    its last completed step rather than aborting the sweep.
    """
    results = []
    for kind, fm in settings:
        for seed in seeds:
            run_policy = pretrained.copy()
            run_cfg = replace(cfg, kind=kind, fixed_margin=fm, seed=seed)
            degenerate_step = None
            try:
                history = tuple(dmpo_train(run_policy, score_fn, contexts, run_cfg))
            except DegenerateFeedbackError as exc:
                history = getattr(exc, "history", ())
                degenerate_step = getattr(exc, "step", None)
            rate = evaluate_pass_rate(
                run_policy,
                score_fn,
                contexts,
                eval_samples,
                pass_threshold=cfg.pass_threshold,
                temperature=cfg.temperature,
                seed=[9176, seed],
            )
            results.append(
                AblationResult(
                    kind=kind,
                    fixed_margin=fm,
                    seed=seed,
                    pass_rate=rate,
                    history=history,
                    degenerate_step=degenerate_step,
                )
            )
    return results


def ablation_to_csv(results: Sequence[AblationResult]) -> str:
    lines = ["setting,seed,pass_rate,degenerate_step"]
    for r in results:
        trunc = "" if r.degenerate_step is None else str(r.degenerate_step)
        lines.append(f"{r.setting},{r.seed},{r.pass_rate:.6f},{trunc}")
    return "\n".join(lines) + "\n"
