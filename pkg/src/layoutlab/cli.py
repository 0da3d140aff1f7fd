"""Batch command line interface.

Subcommands cover the whole pipeline: corpus generation, rule
evaluation, metric tables, rendering, prompt building/parsing, and
preference training.  Every run that owns an output directory drops a
``manifest.json`` recording the command, arguments, seed, and package
version; seeded commands are byte-identical across reruns.

Exit codes: 0 success, 1 for expected tool errors, 2 for anything else.
Set ``LAYOUTLAB_LOG=debug|info|warning|error`` to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, images
from .corpus import (
    CorpusSpec,
    corpus_stats,
    counts_from_strings,
    generate_corpus,
    load_corpus,
    save_corpus,
    scene_for_base,
)
from .errors import DegenerateFeedbackError, InputError, LayoutLabError
from .metrics import metric_report
from .model import dumps_json, layout_to_dict, load_layout_file, task_from_string
from .policy import TokenScheme, ToyPolicy, context_id, nll_pretrain, save_policy, tokenize
from .preference import (
    GenContext,
    TrainConfig,
    ablation_harness,
    ablation_to_csv,
    dmpo_train,
    evaluate_pass_rate,
    history_to_csv,
)
from .prompting import build_instruction, build_prompt, parse_layout, taskspec_from_dict
from .qualify import RuleConfig, accuracy, qualify, score_layout
from .render import dual_branch

_LOG = logging.getLogger("layoutlab")


def _configure_logging() -> None:
    name = os.environ.get("LAYOUTLAB_LOG", "warning").strip().upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _write_manifest(out_dir: Path, args: argparse.Namespace, seed: int | None) -> None:
    recorded = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")
    }
    doc = {
        "command": args.command,
        "args": recorded,
        "seed": seed,
        "version": __version__,
    }
    images.write_text_atomic(out_dir / "manifest.json", dumps_json(doc))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_gen_corpus(args: argparse.Namespace) -> int:
    counts = counts_from_strings(args.count)
    spec = CorpusSpec(counts=counts, positive_ratio=args.ratio, seed=args.seed)
    samples = generate_corpus(spec)
    out = Path(args.out)
    save_corpus(samples, out)
    _write_manifest(out, args, args.seed)
    stats = corpus_stats(samples)
    print(f"wrote {stats['total']} samples to {out}")
    print(dumps_json(stats), end="")
    return 0


def _rule_config(args: argparse.Namespace) -> RuleConfig:
    if getattr(args, "rules", None):
        return RuleConfig.from_file(args.rules)
    return RuleConfig()


def _cmd_qualify(args: argparse.Namespace) -> int:
    path = Path(args.path)
    cfg = _rule_config(args)
    if path.is_dir():
        samples = load_corpus(path)
        predicted = [qualify(s.layout, s.ctx, cfg).label for s in samples]
        actual = [s.label for s in samples]
        agree = accuracy(predicted, actual)
        print(f"{len(samples)} samples, label agreement {agree:.4f}")
        return 0
    layout, ctx = load_layout_file(path)
    verdict = qualify(layout, ctx, cfg)
    if args.json:
        images.write_text_atomic(Path(args.json), dumps_json(verdict.to_dict()))
    if args.report:
        print(verdict.report, end="")
    print(f"{verdict.label} (score {verdict.score:.4f})")
    return 0


def _cmd_metrics(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if path.is_dir():
        samples = load_corpus(path)
        layouts = [s.layout for s in samples]
        ctxs = [s.ctx for s in samples]
    else:
        layout, ctx = load_layout_file(path)
        layouts, ctxs = [layout], [ctx]
    report = metric_report(layouts, ctxs=ctxs)
    table = report.to_table()
    if args.csv:
        images.write_text_atomic(Path(args.csv), table)
        print(f"wrote {args.csv}")
    else:
        print(table, end="")
    return 0


def _cmd_render(args: argparse.Namespace) -> int:
    layout, ctx = load_layout_file(Path(args.layout))
    text, raster = dual_branch(layout, ctx)
    out = Path(args.out)
    if out.suffix.lower() == ".ppm":
        images.save_ppm(out, raster)
    else:
        images.save_png(out, raster)
    if args.geometry:
        body = text if text.endswith("\n") else text + "\n"
        images.write_text_atomic(Path(args.geometry), body)
    print(f"wrote {out}")
    return 0


def _cmd_prompt(args: argparse.Namespace) -> int:
    if args.parse:
        if not args.task:
            raise InputError("--parse needs --task")
        text = Path(args.parse).read_text(encoding="utf-8")
        layout, warnings = parse_layout(
            text, args.task, canvas_w=args.canvas_w, canvas_h=args.canvas_h
        )
        for w in warnings:
            _LOG.warning("parse: %s", w)
        doc = dumps_json(layout_to_dict(layout))
        if args.out:
            images.write_text_atomic(Path(args.out), doc)
            print(f"wrote {args.out} ({len(layout)} elements, {len(warnings)} warnings)")
        else:
            print(doc, end="")
        return 0
    if not args.spec:
        raise InputError("prompt needs either --spec or --parse")
    try:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read task spec {args.spec}: {exc}") from exc
    spec = taskspec_from_dict(doc)
    completion = None
    if args.completion:
        completion, _ = load_layout_file(Path(args.completion))
    instruction = build_instruction(spec)
    print(build_prompt(spec.task, spec.background_ref is not None, instruction, completion))
    return 0


def _train_contexts(args: argparse.Namespace) -> list[GenContext]:
    contexts = []
    for name in args.tasks.split(","):
        task = task_from_string(name)
        scene = scene_for_base(168) if task.background_constrained else None
        contexts.extend([GenContext(task=task, scene=scene)] * args.pairs)
    return contexts


def _cmd_train(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scheme = TokenScheme()

    tasks = [task_from_string(name) for name in args.tasks.split(",")]
    spec = CorpusSpec(
        counts={t: args.corpus_size for t in tasks},
        positive_ratio=args.ratio,
        seed=args.seed,
    )
    token_corpus = []
    for s in generate_corpus(spec):
        if len(s.layout) > scheme.max_elements:
            continue  # a few injections add boxes past the token cap
        token_corpus.append((context_id(s.layout.task, s.ctx), tokenize(s.layout, scheme)))
    policy = ToyPolicy(scheme)
    pre_hist = nll_pretrain(policy, token_corpus, epochs=args.pretrain_epochs)
    _LOG.info("pretrain nll %.4f -> %.4f", pre_hist[0], pre_hist[-1])
    save_policy(policy, out / "pretrained.bin")

    rules = _rule_config(args)

    def score_fn(layout, scene):
        return score_layout(layout, scene, rules)

    contexts = _train_contexts(args)
    cfg = TrainConfig(
        steps=args.steps,
        lr=args.lr,
        beta=args.beta,
        temperature=args.temperature,
        seed=args.seed,
        kind=args.kind,
        fixed_margin=args.fixed_margin,
        probe_every=args.probe_every,
        probe_samples=args.probe_samples,
    )

    if args.ablation:
        seeds = [int(s) for s in args.seeds.split(",")]
        results = ablation_harness(policy, score_fn, contexts, cfg, seeds=seeds)
        images.write_text_atomic(out / "ablation.csv", ablation_to_csv(results))
        by_setting: dict[str, list[float]] = {}
        for r in results:
            by_setting.setdefault(r.setting, []).append(r.pass_rate)
        for setting, rates in by_setting.items():
            print(f"{setting}: mean pass rate {sum(rates) / len(rates):.4f}")
    else:
        before = evaluate_pass_rate(
            policy, score_fn, contexts, args.probe_samples, seed=[9176, args.seed]
        )
        try:
            history = list(dmpo_train(policy, score_fn, contexts, cfg))
            ran = cfg.steps
        except DegenerateFeedbackError as exc:
            # nothing left to rank: keep what training achieved so far
            history = list(getattr(exc, "history", ()))
            ran = len(history)
            print(f"feedback exhausted: {exc}")
        images.write_text_atomic(out / "history.csv", history_to_csv(history))
        save_policy(policy, out / "policy.bin")
        after = evaluate_pass_rate(
            policy, score_fn, contexts, args.probe_samples, seed=[9176, args.seed]
        )
        print(f"pass rate {before:.4f} -> {after:.4f} over {ran} completed steps")
    _write_manifest(out, args, args.seed)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="layoutlab",
        description="Generate, evaluate, render, and train on desk-scale layouts.",
    )
    p.add_argument("--version", action="version", version=f"layoutlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="generate a labeled synthetic corpus")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument(
        "--count",
        action="append",
        required=True,
        metavar="TASK=N",
        help="samples per task, e.g. bfef=100 (repeatable)",
    )
    g.add_argument("--ratio", type=float, default=0.5, help="positive share (default 0.5)")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gen_corpus)

    q = sub.add_parser("qualify", help="evaluate a layout file or a corpus directory")
    q.add_argument("path", help="layout JSON file, or corpus dir for label agreement")
    q.add_argument("--rules", help="rule config file (key = value lines)")
    q.add_argument("--report", action="store_true", help="print the full four-part report")
    q.add_argument("--json", help="also write the verdict as JSON to this path")
    q.set_defaults(func=_cmd_qualify)

    m = sub.add_parser("metrics", help="metric table for a layout or corpus")
    m.add_argument("path", help="layout JSON file or corpus directory")
    m.add_argument("--csv", help="write the table here instead of stdout")
    m.set_defaults(func=_cmd_metrics)

    r = sub.add_parser("render", help="rasterize a layout")
    r.add_argument("layout", help="layout JSON file")
    r.add_argument("--out", required=True, help="output image (.png or .ppm)")
    r.add_argument("--geometry", help="also write the text branch here")
    r.set_defaults(func=_cmd_render)

    pr = sub.add_parser("prompt", help="build an instruction prompt or parse a completion")
    pr.add_argument("--spec", help="task spec JSON (build mode)")
    pr.add_argument("--completion", help="layout JSON serialized after the prompt")
    pr.add_argument("--parse", metavar="TEXT_FILE", help="parse completion text (parse mode)")
    pr.add_argument("--task", help="task kind for --parse")
    pr.add_argument("--canvas-w", type=int, default=513)
    pr.add_argument("--canvas-h", type=int, default=750)
    pr.add_argument("--out", help="write parsed layout JSON here")
    pr.set_defaults(func=_cmd_prompt)

    t = sub.add_parser("train", help="pretrain the toy generator and run preference training")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--tasks", default="bfef", help="comma-separated task kinds")
    t.add_argument("--corpus-size", type=int, default=120, help="pretraining samples per task")
    t.add_argument("--ratio", type=float, default=0.5, help="positive share of that corpus")
    t.add_argument("--pretrain-epochs", type=int, default=40)
    t.add_argument("--steps", type=int, default=60)
    t.add_argument("--lr", type=float, default=1.0)
    t.add_argument("--beta", type=float, default=0.1)
    t.add_argument("--temperature", type=float, default=1.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--kind", choices=["dpo", "fixed", "dmpo"], default="dmpo")
    t.add_argument("--fixed-margin", type=float, default=None)
    t.add_argument("--pairs", type=int, default=4, help="pairs sampled per context per step")
    t.add_argument("--probe-every", type=int, default=0)
    t.add_argument("--probe-samples", type=int, default=32)
    t.add_argument("--rules", help="rule config file used for scoring")
    t.add_argument("--ablation", action="store_true", help="sweep margin settings x seeds")
    t.add_argument("--seeds", default="0,1,2", help="seeds for --ablation")
    t.set_defaults(func=_cmd_train)
    return p


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except LayoutLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # CLI boundary: anything unexpected is code 2
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
