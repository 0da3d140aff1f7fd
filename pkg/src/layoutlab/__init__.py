"""layoutlab: generate, evaluate, render, and train on desk-scale layouts."""

__version__ = "0.1.0"

from .corpus import (
    CorpusSpec,
    LabeledSample,
    corpus_stats,
    generate_corpus,
    load_corpus,
    save_corpus,
)
from .errors import (
    CorpusFormatError,
    DegenerateFeedbackError,
    InputError,
    InvalidLayoutError,
    LayoutLabError,
    LayoutParseError,
    MalformedTokenStreamError,
    PromptSpecError,
)
from .geometry import BBox, bbox_area, bbox_contains, bbox_iou
from .metrics import (
    MetricReport,
    alignment,
    max_iou,
    metric_report,
    overlap,
    r_com,
    r_occ,
    r_sub,
)
from .model import (
    DEFAULT_CANVAS_H,
    DEFAULT_CANVAS_W,
    KNOWN_CATEGORIES,
    TASK_ORDER,
    Category,
    Element,
    Layout,
    SceneContext,
    TaskKind,
    load_layout_file,
    make_layout,
    save_layout_file,
    task_from_string,
    validate,
)
from .policy import (
    TokenScheme,
    ToyPolicy,
    context_id,
    detokenize,
    load_policy,
    logprob,
    nll_pretrain,
    sample,
    save_policy,
    tokenize,
)
from .preference import (
    DEFAULT_ABLATION,
    GenContext,
    PreferencePair,
    TrainConfig,
    ablation_harness,
    dmpo_train,
    evaluate_pass_rate,
    f_transform,
    preference_loss,
)
from .prompting import (
    TaskSpec,
    build_instruction,
    build_prompt,
    parse_layout,
    serialize_layout,
)
from .qualify import RuleConfig, Verdict, check_rules, confidence, qualify, score_layout
from .render import ColorMap, dual_branch, geometry_prompt, visualize

__all__ = [name for name in dir() if not name.startswith("_")]
