"""Preference losses, gradients, training loop, ablation harness."""

import math

import numpy as np
import pytest

from layoutlab.errors import DegenerateFeedbackError, InputError
from layoutlab.model import TaskKind
from layoutlab.policy import BOS, EOS, SEP, TokenScheme, ToyPolicy
from layoutlab.preference import (
    DEFAULT_ABLATION,
    AblationResult,
    GenContext,
    PreferencePair,
    TrainConfig,
    ablation_harness,
    ablation_to_csv,
    dmpo_train,
    evaluate_pass_rate,
    f_transform,
    history_to_csv,
    margin,
    preference_loss,
)
from oracles import fd_gradient

TINY = TokenScheme(grid=4, max_elements=2, categories=("text", "logo"))


def tiny_pair(context=0, delta=0.6):
    cat = TINY.category_token("text")
    b0, b1 = TINY.bin_token(0), TINY.bin_token(1)
    win = (BOS, cat, b0, b1, b0, b1, SEP, EOS)
    lose = (BOS, EOS)
    return PreferencePair(context, win, lose, 0.2 + delta, 0.2)


def random_policy(seed, n_contexts=2, scale=1.0):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=(n_contexts, TINY.max_slots, TINY.vocab_size)) * scale
    return ToyPolicy(scheme=TINY, n_contexts=n_contexts, theta=theta)


# ---------------------------------------------------------------------------
# margins
# ---------------------------------------------------------------------------


def test_margin_is_plain_subtraction():
    assert margin(0.9, 0.2) == pytest.approx(0.7)
    assert margin(0.5, 0.5) == 0.0
    assert margin(1.0, 0.0) == 1.0
    assert margin(0.2, 0.9) < 0.0  # caller's job to discard


def test_f_transform_values():
    assert f_transform(0.0) == 0.0
    assert f_transform(1.0) == pytest.approx(math.e - 1.0 / math.e, abs=1e-12)
    assert f_transform(1.0) == pytest.approx(2.3504023872876028, abs=1e-12)
    assert f_transform(0.7) == pytest.approx(math.exp(0.7) - math.exp(-0.7), abs=1e-15)


def test_f_transform_strictly_increasing():
    grid = np.linspace(0.0, 1.0, 101)
    vals = [f_transform(d) for d in grid]
    assert all(b > a for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# pairs
# ---------------------------------------------------------------------------


def test_pair_rejects_identical_sequences():
    with pytest.raises(InputError):
        PreferencePair(0, (BOS, EOS), (BOS, EOS), 0.9, 0.1)


def test_pair_rejects_bad_score_gap():
    win, lose = (BOS, EOS), (BOS, SEP, EOS)
    with pytest.raises(InputError):
        PreferencePair(0, win, lose, 0.5, 0.5)
    with pytest.raises(InputError):
        PreferencePair(0, win, lose, 0.2, 0.5)
    with pytest.raises(InputError):
        PreferencePair(0, win, lose, 1.5, 0.2)
    assert PreferencePair(0, win, lose, 1.0, 0.0).delta == 1.0


# ---------------------------------------------------------------------------
# loss values
# ---------------------------------------------------------------------------


def test_loss_at_reference_is_log_two_for_dpo():
    pol = random_policy(0)
    loss, _ = preference_loss(pol, pol.copy(), tiny_pair(), kind="dpo")
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)


def test_loss_at_reference_dmpo_unit_gap():
    pol = random_policy(1)
    pair = tiny_pair(delta=1.0)
    loss, _ = preference_loss(pol, pol.copy(), pair, kind="dmpo")
    # logaddexp(0, f(1)) with identical policies
    assert loss == pytest.approx(2.4414588004566706, abs=1e-12)
    assert loss == pytest.approx(math.log1p(math.exp(f_transform(1.0))), abs=1e-12)


def test_fixed_zero_margin_equals_dpo():
    pol = random_policy(2)
    ref = random_policy(3)
    pair = tiny_pair(delta=0.4)
    l_dpo, g_dpo = preference_loss(pol, ref, pair, kind="dpo")
    l_fix, g_fix = preference_loss(pol, ref, pair, kind="fixed", fixed_margin=0.0)
    assert l_dpo == l_fix
    assert np.array_equal(g_dpo, g_fix)


def test_fixed_margin_matching_f_delta_equals_dmpo():
    pol = random_policy(4)
    ref = random_policy(5)
    pair = tiny_pair(delta=0.55)
    l_dm, g_dm = preference_loss(pol, ref, pair, kind="dmpo")
    l_fx, g_fx = preference_loss(
        pol, ref, pair, kind="fixed", fixed_margin=f_transform(0.55)
    )
    assert l_dm == l_fx
    assert np.array_equal(g_dm, g_fx)


def test_loss_increases_with_delta():
    pol = random_policy(6)
    ref = random_policy(7)
    losses = []
    for delta in np.linspace(0.05, 1.0, 40):
        loss, _ = preference_loss(pol, ref, tiny_pair(delta=float(delta)), kind="dmpo")
        losses.append(loss)
    assert all(b > a for a, b in zip(losses, losses[1:]))


def test_loss_validation():
    pol = random_policy(8)
    pair = tiny_pair()
    with pytest.raises(InputError):
        preference_loss(pol, pol, pair, kind="rlhf")
    with pytest.raises(InputError):
        preference_loss(pol, pol, pair, kind="fixed")
    with pytest.raises(InputError):
        preference_loss(pol, pol, pair, beta=0.0)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def test_gradient_confined_to_pair_context():
    pol = random_policy(9, n_contexts=3)
    _, grad = preference_loss(pol, random_policy(10, n_contexts=3), tiny_pair(context=1))
    assert grad.shape == pol.theta.shape
    assert not grad[0].any()
    assert not grad[2].any()
    assert grad[1].any()


@pytest.mark.parametrize(
    "kind,fm,beta",
    [("dpo", None, 0.1), ("fixed", 1.3, 0.5), ("dmpo", None, 0.1), ("dmpo", None, 2.0)],
)
def test_gradient_matches_finite_differences(kind, fm, beta):
    ref = random_policy(11)
    pair = tiny_pair(context=1, delta=0.45)
    for seed in range(5):
        pol = random_policy(20 + seed)
        _, grad = preference_loss(pol, ref, pair, beta=beta, kind=kind, fixed_margin=fm)

        def loss_of(theta):
            probe = ToyPolicy(scheme=TINY, n_contexts=2, theta=theta)
            val, _ = preference_loss(probe, ref, pair, beta=beta, kind=kind, fixed_margin=fm)
            return val

        coords = [(1, s, v) for s in range(8) for v in range(TINY.vocab_size)]
        fd = fd_gradient(loss_of, pol.theta.copy(), coords)
        scale = max(np.abs(fd).max(), 1e-12)
        assert np.abs(grad - fd).max() / scale < 1e-5


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def decode_reward(layout, scene):
    # anything that decoded is fine; richer layouts are better
    return 1.0 if layout.elements else 0.5


def test_train_config_validation():
    with pytest.raises(InputError):
        TrainConfig(kind="nope")
    with pytest.raises(InputError):
        TrainConfig(kind="fixed")
    with pytest.raises(InputError):
        TrainConfig(steps=-1)
    TrainConfig(steps=0)  # zero steps is a legal no-op
    TrainConfig(kind="fixed", fixed_margin=1.0)


def test_zero_steps_leaves_policy_at_reference():
    pol = random_policy(30, n_contexts=1)
    before = pol.theta.copy()
    ctxs = [GenContext(task=TaskKind.BFEF, canvas_w=100, canvas_h=100)]
    history = dmpo_train(pol, decode_reward, ctxs, TrainConfig(steps=0))
    assert history == []
    assert np.array_equal(pol.theta, before)


def test_constant_scorer_is_degenerate_at_step_zero():
    pol = ToyPolicy(scheme=TINY, n_contexts=1)
    ctxs = [GenContext(task=TaskKind.BFEF, canvas_w=100, canvas_h=100)] * 4
    cfg = TrainConfig(steps=10, seed=5)
    with pytest.raises(DegenerateFeedbackError) as exc:
        dmpo_train(pol, lambda lay, scene: 0.7, ctxs, cfg)
    assert exc.value.step == 0
    assert exc.value.history == ()


def test_training_raises_grammatical_pass_rate():
    ctxs = [GenContext(task=TaskKind.BFEF, canvas_w=100, canvas_h=100)] * 16
    for seed in (0, 1, 2):
        pol = ToyPolicy(scheme=TINY, n_contexts=1)
        before = evaluate_pass_rate(pol, decode_reward, ctxs, 64, seed=[9176, seed])
        cfg = TrainConfig(steps=60, lr=1.0, beta=0.1, seed=seed, kind="dmpo")
        try:
            dmpo_train(pol, decode_reward, ctxs, cfg)
        except DegenerateFeedbackError:
            pass  # scorer stopped separating samples: converged early
        after = evaluate_pass_rate(pol, decode_reward, ctxs, 64, seed=[9176, seed])
        assert after > before


def test_history_rows_and_probes():
    pol = ToyPolicy(scheme=TINY, n_contexts=1)
    ctxs = [GenContext(task=TaskKind.BFEF, canvas_w=100, canvas_h=100)] * 8
    cfg = TrainConfig(steps=6, seed=1, probe_every=3, probe_samples=8)
    history = dmpo_train(pol, decode_reward, ctxs, cfg)
    assert [row.step for row in history] == list(range(6))
    for row in history:
        assert row.mean_loss >= 0.0
        assert 0.0 < row.mean_delta <= 1.0
        assert 0 <= row.skipped <= len(ctxs)
        if (row.step + 1) % 3 == 0:
            assert 0.0 <= row.pass_rate <= 1.0
        else:
            assert row.pass_rate is None


def test_training_is_seed_deterministic():
    ctxs = [GenContext(task=TaskKind.BFEF, canvas_w=100, canvas_h=100)] * 4
    cfg = TrainConfig(steps=15, seed=7)

    def run():
        pol = ToyPolicy(scheme=TINY, n_contexts=1)
        try:
            history = tuple(dmpo_train(pol, decode_reward, ctxs, cfg))
            stopped = None
        except DegenerateFeedbackError as exc:
            history, stopped = exc.history, exc.step
        return pol.theta, history, stopped

    theta_a, hist_a, stop_a = run()
    theta_b, hist_b, stop_b = run()
    assert np.array_equal(theta_a, theta_b)
    assert hist_a == hist_b
    assert stop_a == stop_b


def test_history_to_csv_shape():
    pol = ToyPolicy(scheme=TINY, n_contexts=1)
    ctxs = [GenContext(task=TaskKind.BFEF, canvas_w=100, canvas_h=100)] * 8
    history = dmpo_train(pol, decode_reward, ctxs, TrainConfig(steps=4, seed=1, probe_every=2))
    text = history_to_csv(history)
    lines = text.splitlines()
    assert lines[0] == "step,loss,mean_delta,skips,pass_rate"
    assert len(lines) == 5
    assert text.endswith("\n")
    first = lines[1].split(",")
    assert first[0] == "0" and first[4] == ""  # no probe on step 0
    assert lines[2].split(",")[4] != ""


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def test_evaluate_pass_rate_deterministic_and_thresholded():
    pol = random_policy(40, n_contexts=1)
    ctxs = [GenContext(task=TaskKind.BFEF, canvas_w=100, canvas_h=100)]
    a = evaluate_pass_rate(pol, decode_reward, ctxs, 50, seed=3)
    b = evaluate_pass_rate(pol, decode_reward, ctxs, 50, seed=3)
    assert a == b
    # every decodable sample scores >= 0.5, so threshold 0.5 counts them all
    loose = evaluate_pass_rate(pol, decode_reward, ctxs, 50, seed=3, pass_threshold=0.5)
    strict = evaluate_pass_rate(pol, decode_reward, ctxs, 50, seed=3, pass_threshold=0.9)
    assert loose >= strict


def test_evaluate_pass_rate_validation():
    pol = random_policy(41, n_contexts=1)
    ctxs = [GenContext(task=TaskKind.BFEF, canvas_w=100, canvas_h=100)]
    with pytest.raises(InputError):
        evaluate_pass_rate(pol, decode_reward, [], 10)
    with pytest.raises(InputError):
        evaluate_pass_rate(pol, decode_reward, ctxs, 0)


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------


def test_default_ablation_settings():
    assert DEFAULT_ABLATION == (
        ("dpo", None),
        ("fixed", 0.5),
        ("fixed", 1.0),
        ("fixed", 1.5),
        ("fixed", 2.0),
        ("dmpo", None),
    )
    assert AblationResult("fixed", 0.5, 0, 0.0).setting == "fixed(0.5)"
    assert AblationResult("dmpo", None, 0, 0.0).setting == "dmpo"


def test_ablation_harness_sweeps_settings_by_seed():
    pre = ToyPolicy(scheme=TINY, n_contexts=1)
    ctxs = [GenContext(task=TaskKind.BFEF, canvas_w=100, canvas_h=100)] * 4
    cfg = TrainConfig(steps=5)
    results = ablation_harness(
        pre, decode_reward, ctxs, cfg, seeds=(0, 1), eval_samples=16
    )
    assert len(results) == 12
    assert [r.setting for r in results[:2]] == ["dpo", "dpo"]
    assert {r.seed for r in results} == {0, 1}
    for r in results:
        # a run either finishes every step or records where feedback dried up
        if r.degenerate_step is None:
            assert len(r.history) == cfg.steps
        else:
            assert len(r.history) == r.degenerate_step
        assert 0.0 <= r.pass_rate <= 1.0
    # the shared starting policy must not have been trained in place
    assert not pre.theta.any()


def test_ablation_records_degenerate_runs():
    pre = ToyPolicy(scheme=TINY, n_contexts=1)
    ctxs = [GenContext(task=TaskKind.BFEF, canvas_w=100, canvas_h=100)] * 2
    results = ablation_harness(
        pre,
        lambda lay, scene: 0.3,
        ctxs,
        TrainConfig(steps=5),
        seeds=(0,),
        settings=(("dpo", None),),
        eval_samples=8,
    )
    assert len(results) == 1
    assert results[0].degenerate_step == 0
    assert results[0].history == ()


def test_ablation_to_csv_shape():
    rows = [
        AblationResult("dpo", None, 0, 0.5),
        AblationResult("fixed", 1.5, 2, 0.25, degenerate_step=3),
    ]
    text = ablation_to_csv(rows)
    lines = text.splitlines()
    assert lines[0] == "setting,seed,pass_rate,degenerate_step"
    assert lines[1] == "dpo,0,0.500000,"
    assert lines[2] == "fixed(1.5),2,0.250000,3"
