"""Scorer identities, oracles, and dataset-level scoring."""

import numpy as np
import pytest

from helpers import smooth_random_point
from icaval.corpus import Dataset, Example, GenConfig, generate_synthetic_sft
from icaval.embed import build_index, embed_example, knn
from icaval.model import LossSpec, ModelConfig, init_params, loss_and_grad, nll_loss
from icaval.score import (
    ICA,
    ORACLE_ONE_STEP,
    OracleBudgetError,
    ScorerContext,
    ica_score,
    oneshot_score,
    oracle_one_step_gain,
    oracle_retrain,
    rho_score,
    score_dataset,
    score_example,
)
from icaval.trainloop import TrainConfig


def small_noise_sets(n_train=16, n_holdout=8, seed=0, noise=0.5):
    gen = GenConfig(scenario="noise", n_train=n_train, n_holdout=n_holdout, n_test=4,
                    noise_rate=noise)
    return generate_synthetic_sft(gen, seed=seed)


def test_ica_empty_demos_exactly_zero():
    rng = np.random.default_rng(0)
    for trial in range(100):
        cfg = ModelConfig(vocab=16, dim=8, layers=1, heads=2, ctx_len=64, seed=trial)
        params = smooth_random_point(cfg, scale=float(rng.uniform(0.5, 4.0)))
        x = tuple(rng.integers(0, 16, size=rng.integers(1, 6)))
        y = tuple(rng.integers(0, 16, size=rng.integers(1, 6)))
        ex = Example(kind="sft", prompt=x, response=y)
        assert ica_score(params, ex, []) == 0.0


def test_ica_layerless_zero_dataset_wide():
    cfg = ModelConfig(vocab=32, dim=8, layers=0, heads=1, ctx_len=128, seed=2)
    params = init_params(cfg)
    train, holdout, _ = small_noise_sets()
    index = build_index(holdout, cfg.vocab)
    for ex in train:
        demos = knn(index, embed_example(ex, cfg.vocab), k=3)
        assert demos
        assert ica_score(params, ex, demos, match_positions=True) == 0.0


def test_ica_pref_layerless_zero():
    cfg = ModelConfig(vocab=32, dim=8, layers=0, heads=1, ctx_len=128, seed=2)
    params = init_params(cfg)
    gen = GenConfig(scenario="noise", kind="pref", n_train=8, n_holdout=6, n_test=2, noise_rate=0.5)
    from icaval.corpus import generate_synthetic_pref

    train, holdout, _ = generate_synthetic_pref(gen, seed=1)
    index = build_index(holdout, cfg.vocab)
    spec = LossSpec("simpo", beta=2.0, gamma=0.3)
    for ex in train:
        demos = knn(index, embed_example(ex, cfg.vocab), k=2)
        assert ica_score(params, ex, demos, spec, match_positions=True) == 0.0


def test_rho_identical_params_zero_and_antisymmetric():
    cfg = ModelConfig(vocab=16, dim=8, layers=1, heads=2, ctx_len=64, seed=3)
    a = smooth_random_point(cfg, scale=1.0)
    b = smooth_random_point(ModelConfig(vocab=16, dim=8, layers=1, heads=2, ctx_len=64, seed=4))
    ex = Example(kind="sft", prompt=(1, 2, 3), response=(3, 2, 1))
    assert rho_score(a, a, ex) == 0.0
    assert rho_score(a, b, ex) == -rho_score(b, a, ex)
    assert abs(rho_score(a, b, ex) - (nll_loss(a, ex.prompt, ex.response)
                                      - nll_loss(b, ex.prompt, ex.response))) < 1e-12


def test_oneshot_layerless_zero():
    cfg = ModelConfig(vocab=32, dim=8, layers=0, heads=1, ctx_len=128, seed=5)
    params = init_params(cfg)
    train, holdout, _ = small_noise_sets()
    assert oneshot_score(params, train[0], holdout, match_positions=True) == 0.0


def test_oneshot_matches_per_example_average():
    from icaval.model import loss_with_context

    cfg = ModelConfig(vocab=32, dim=16, layers=1, heads=2, ctx_len=128, seed=6)
    params = smooth_random_point(cfg, scale=1.0)
    train, holdout, _ = small_noise_sets()
    cand = train[0]
    plains, conds = [], []
    for ho in holdout:
        p, c = loss_with_context(params, LossSpec(), ho, [cand])
        plains.append(p)
        conds.append(c)
    expect = float(np.mean(plains) - np.mean(conds))
    assert abs(oneshot_score(params, cand, holdout) - expect) < 1e-12


def test_oracle_one_step_zero_lr():
    cfg = ModelConfig(vocab=32, dim=16, layers=1, heads=2, ctx_len=64, seed=7)
    params = smooth_random_point(cfg, scale=1.0)
    train, holdout, _ = small_noise_sets()
    assert oracle_one_step_gain(params, train[0], holdout, lr=0.0) == 0.0


def test_oracle_one_step_is_pure():
    cfg = ModelConfig(vocab=32, dim=16, layers=1, heads=2, ctx_len=64, seed=7)
    params = smooth_random_point(cfg, scale=1.0)
    before = params.copy()
    train, holdout, _ = small_noise_sets()
    oracle_one_step_gain(params, train[0], holdout, lr=1e-2)
    assert params.allclose(before)


def test_oracle_one_step_slope_matches_gradient_dot():
    cfg = ModelConfig(vocab=32, dim=16, layers=1, heads=2, ctx_len=64, seed=8)
    params = smooth_random_point(cfg, scale=1.0)
    train, holdout, _ = small_noise_sets()
    spec = LossSpec()
    _, g_ex = loss_and_grad(params, spec, train[0])
    dots = 0.0
    for ho in holdout:
        _, g_ho = loss_and_grad(params, spec, ho)
        dots += sum(float(np.sum(g_ho[k] * g_ex[k])) for k in g_ex) / len(holdout)
    lr = 1e-4
    gain = oracle_one_step_gain(params, train[0], holdout, lr=lr)
    assert abs(gain / lr - dots) <= 0.10 * abs(dots)


def test_oracle_retrain_budget_refusal():
    cfg = ModelConfig(vocab=32, dim=8, layers=0, heads=1, ctx_len=64, seed=9)
    params = init_params(cfg)
    gen = GenConfig(scenario="noise", n_train=64, n_holdout=4, n_test=4, noise_rate=0.0)
    train, holdout, _ = generate_synthetic_sft(gen, seed=1)
    with pytest.raises(OracleBudgetError):
        oracle_retrain(train, train[0], holdout, params, TrainConfig(steps=1, batch_size=1))


def test_oracle_retrain_deterministic_and_handles_duplicates():
    cfg = ModelConfig(vocab=32, dim=16, layers=1, heads=2, ctx_len=64, seed=10)
    params = init_params(cfg)
    train, holdout, _ = small_noise_sets(n_train=6, n_holdout=4, noise=0.0)
    tcfg = TrainConfig(steps=10, batch_size=2, scorer=None, seed=3)
    base = Dataset(train.kind, list(train.examples[:4]))
    a = oracle_retrain(base, train[0], holdout, params, tcfg)
    b = oracle_retrain(base, train[0], holdout, params, tcfg)
    assert a == b
    assert np.isfinite(a)


def test_score_dataset_covers_all_and_matches_single_calls():
    cfg = ModelConfig(vocab=32, dim=16, layers=1, heads=2, ctx_len=128, seed=11)
    params = smooth_random_point(cfg, scale=1.0)
    train, holdout, _ = small_noise_sets()
    index = build_index(holdout, cfg.vocab)
    ctx = ScorerContext()
    table = score_dataset(params, train, holdout, ICA, k=3, index=index, ctx=ctx, step=5)
    assert len(table) == len(train)
    assert np.all(table.computed_at_step == 5)
    for i, ex in enumerate(train):
        single = score_example(ICA, params, ex, holdout, index, 3, ctx)
        assert table.scores[i] == single
    again = score_dataset(params, train, holdout, ICA, k=3, index=index, ctx=ctx, step=5)
    assert np.array_equal(table.scores, again.scores)


def test_score_dataset_missing_aux_checkpoints():
    cfg = ModelConfig(vocab=32, dim=8, layers=0, heads=1, ctx_len=64, seed=12)
    params = init_params(cfg)
    train, holdout, _ = small_noise_sets(n_train=4, n_holdout=4)
    with pytest.raises(ValueError, match="reference"):
        score_dataset(params, train, holdout, "rho", 3, None, ScorerContext())
    with pytest.raises(ValueError, match="initial"):
        score_dataset(params, train, holdout, "one_shot", 3, None, ScorerContext())


def test_oracle_one_step_duplicated_holdout_example_positive_gain():
    cfg = ModelConfig(vocab=32, dim=16, layers=2, heads=2, ctx_len=64, seed=13)
    params = init_params(cfg)
    _, holdout, _ = small_noise_sets(n_holdout=8)
    candidate = holdout[0]
    gain = oracle_one_step_gain(params, candidate, holdout, lr=1e-2)
    assert gain > 0.0
