from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import max_rel_err, residual_cnn, small_cnn
from gennape import nn
from gennape.encoder import GraphBatch, node_features
from gennape.errors import InsufficientSamples, MismatchedLengths
from gennape.families import generate
from gennape.fcm import FcmModel, fcm_fit, single_cluster
from gennape.metrics import kendall_tau, mae, srcc
from gennape.predictor import (
    TrainConfig,
    ensemble_predict,
    fine_tune,
    fit_transform_stats,
    gennape_combine,
    inverse_transform,
    kt_softmax_weights,
    pairwise_score,
    rank_normalize,
    select_samples,
    train_baseline_gnn,
    train_heads,
    train_pairwise,
    transform_label,
    weighted_sum,
)
from gennape.predictor.baseline import init_baseline
from gennape.predictor.ensemble import init_ensemble
from gennape.predictor.pairwise import init_pairwise, pair_targets, sample_pairs
from gennape.predictor.transform import TransformStats, prune_mask


def _param_gradcheck(loss_of, arrays, keys, rng, samples=6, h=1e-6):
    params = nn.to_parameters(arrays)
    loss_of(params).backward()
    for key in keys:
        p = params[key]
        idx = [tuple(int(rng.integers(0, d)) for d in p.shape) for _ in range(samples)]
        num = []
        for i in idx:
            orig = p.data[i]
            vals = []
            for step in (h, -h):
                p.data[i] = orig + step
                vals.append(loss_of(nn.to_parameters(nn.to_arrays(params))).item())
            p.data[i] = orig
            num.append((vals[0] - vals[1]) / (2 * h))
        ana = np.array([p.grad[i] for i in idx])
        assert max_rel_err(ana, np.array(num), floor=1e-7) < 1e-4, key


# --------------------------------------------------------------------------- transform


def test_transform_examples():
    stats = TransformStats(40.0, 2.0)
    assert transform_label(90.0, 9.0, stats) == pytest.approx((45.0 - 40.0) / 2.0, abs=1e-12)
    assert transform_label(90.0, 0.0, stats) == pytest.approx((90.0 - 40.0) / 2.0, abs=1e-12)
    plain = TransformStats(90.0, 1.0, use_flops=False)
    assert transform_label(91.0, 5.0, plain) == pytest.approx(1.0)


def test_transform_round_trip(rng):
    acc = rng.uniform(0, 100, 1000)
    flops = rng.uniform(0, 50, 1000)
    stats = fit_transform_stats(acc, flops)
    y = transform_label(acc, flops, stats)
    assert abs(np.mean(y)) < 1e-9 and abs(np.std(y) - 1.0) < 1e-9
    assert np.max(np.abs(inverse_transform(y, flops, stats) - acc)) < 1e-9
    with pytest.raises(ValueError):
        TransformStats(0.0, 0.0)


def test_prune_mask():
    np.testing.assert_array_equal(prune_mask([0.5, 0.8, 0.93]), [False, True, True])


# --------------------------------------------------------------------------- ensemble


def test_weighted_sum_examples():
    assert weighted_sum(np.array([0.0, 1.0]), np.array([0.25, 0.75])) == 0.75
    assert weighted_sum(np.array([2.5, 2.5, 2.5]), np.array([0.2, 0.3, 0.5])) == pytest.approx(2.5, abs=1e-15)


def test_zero_weight_heads_do_not_matter(rng):
    # two clusters; a point sitting on centroid 0 has membership (1, 0)
    fcm = FcmModel(np.array([[0.0, 0.0], [5.0, 5.0]]), 2.0)
    model = init_ensemble(fcm, 2, seed=0, hidden=8, hidden_layers=2)
    x = np.array([0.0, 0.0])
    before = ensemble_predict(x, model)
    other = model.copy()
    for k, v in other.arrays.items():
        v[1] = rng.normal(size=v[1].shape)
    assert ensemble_predict(x, other) == before


def test_single_cluster_equals_plain_head(rng):
    x = rng.normal(size=(40, 5))
    y = rng.normal(size=40)
    cfg = TrainConfig(epochs=3, lr=1e-3, batch_size=8)
    gated = train_heads(x, y, single_cluster(5), cfg, hidden=16, hidden_layers=2)
    plain = train_heads(x, y, None, cfg, hidden=16, hidden_layers=2)
    np.testing.assert_array_equal(gated.predict(x), plain.predict(x))
    np.testing.assert_array_equal(gated.predict(x), gated.head_outputs(x)[0])


def test_ensemble_gradient(rng):
    x = rng.normal(size=(10, 4))
    fcm = fcm_fit(x, 3, 2.0)
    model = init_ensemble(fcm, 4, hidden=6, hidden_layers=2)
    y = rng.normal(size=10)
    u = fcm.membership(x)
    _param_gradcheck(lambda p: model.loss_tensor(x, u, y, p), model.arrays, list(model.arrays), rng)


def test_ensemble_determinism(rng):
    x = rng.normal(size=(30, 4))
    y = rng.normal(size=30)
    fcm = fcm_fit(x, 2, 2.0)
    cfg = TrainConfig(epochs=2, lr=1e-3, batch_size=8, seed=4)
    a = train_heads(x, y, fcm, cfg, hidden=16, hidden_layers=2)
    b = train_heads(x, y, fcm, cfg, hidden=16, hidden_layers=2)
    for k in a.arrays:
        np.testing.assert_array_equal(a.arrays[k], b.arrays[k])


def test_ensemble_overfits_small_set(rng):
    x = rng.normal(size=(32, 33))
    acc = rng.uniform(88.0, 95.0, 32)
    flops = rng.uniform(0.5, 20.0, 32)
    stats = fit_transform_stats(acc, flops)
    fcm = fcm_fit(x, 2, 2.0)
    model = train_heads(x, transform_label(acc, flops, stats), fcm, TrainConfig(epochs=400, lr=1e-3, batch_size=32))
    assert mae(inverse_transform(model.predict(x), flops, stats), acc) < 0.1


# --------------------------------------------------------------------------- pairwise


def test_pair_sampling():
    y = np.array([1.0, 2.0, 2.0])
    pairs = sample_pairs(y, None)
    assert len(pairs) == 6 and np.all(pairs[:, 0] != pairs[:, 1])
    np.testing.assert_array_equal(pair_targets(y, np.array([[0, 1], [1, 0], [1, 2]])), [-1, 1, 0])
    big = sample_pairs(np.arange(300.0), np.random.default_rng(0))
    assert len(big) == 64 * 300 and np.all(big[:, 0] != big[:, 1])
    partner = sample_pairs(np.arange(10.0), np.random.default_rng(0), "partner")
    np.testing.assert_array_equal(partner[:, 0], np.arange(10))


def test_pairwise_antisymmetry(rng):
    x = rng.normal(size=(12, 6))
    model = init_pairwise(fcm_fit(x, 3, 2.0), 6, hidden=16, hidden_layers=2)
    for _ in range(50):
        a, b = x[rng.integers(12)], x[rng.integers(12)]
        assert pairwise_score(a, b, model) == -pairwise_score(b, a, model)
    assert pairwise_score(x[0], x[0], model) == 0.0


def test_pairwise_gradient(rng):
    x = rng.normal(size=(8, 4))
    model = init_pairwise(fcm_fit(x, 2, 2.0), 4, hidden=6, hidden_layers=2)
    y = rng.normal(size=8)
    pairs = sample_pairs(y, None)
    t = pair_targets(y, pairs)
    _param_gradcheck(lambda p: model.loss_tensor(x, pairs, t, p), model.arrays, list(model.arrays), rng)


def test_pairwise_learns_total_order(rng):
    w = rng.normal(size=8)
    x = rng.normal(size=(300, 8))
    y = x @ w
    train, test = np.arange(200), np.arange(200, 300)
    model = train_pairwise(x[train], y[train], None, TrainConfig(epochs=3, lr=1e-3, batch_size=64), hidden=64, hidden_layers=2)
    pairs = sample_pairs(y[test], np.random.default_rng(1))
    lat = model.latents(x[test])
    correct = [np.sign(model.logit_from_latents(lat[i], lat[j])) == np.sign(y[test][i] - y[test][j]) for i, j in pairs]
    assert np.mean(correct) > 0.9
    assert srcc(model.rank_scores(x[test]), y[test]) > 0.9


# --------------------------------------------------------------------------- baseline


def test_baseline_gradient(rng):
    graphs = [small_cnn("a"), residual_cnn("b")]
    model = init_baseline(0, node_dim=6, layers=2)
    batch = GraphBatch.from_graphs(graphs, [node_features(g) for g in graphs])
    y = np.array([0.3, -0.2])
    from gennape import autodiff as ad

    keys = ["embed.w", "embed.b", "gnn0.self", "gnn1.in", "gnn0.out", "gnn1.b", "reg.w0", "reg.w3"]
    _param_gradcheck(lambda p: ad.tmean(ad.square(model.forward(batch, p) - y)), model.arrays, keys, rng)


def test_baseline_overfits_and_is_deterministic():
    graphs = generate("nb101_like", 16, 3)
    acc = np.linspace(90.0, 94.0, 16)
    stats = fit_transform_stats(acc, np.zeros(16), use_flops=False)
    y = transform_label(acc, np.zeros(16), stats)
    cfg = TrainConfig(epochs=300, lr=2e-3, batch_size=16)
    model = train_baseline_gnn(graphs, y, cfg)
    assert mae(inverse_transform(model.predict(graphs), np.zeros(16), stats), acc) < 0.2
    short = TrainConfig(epochs=2, lr=1e-3, batch_size=8)
    a, b = train_baseline_gnn(graphs, y, short), train_baseline_gnn(graphs, y, short)
    for k in a.arrays:
        np.testing.assert_array_equal(a.arrays[k], b.arrays[k])


# --------------------------------------------------------------------------- fine-tuning


def test_fine_tune_snapshot_semantics(rng):
    x = rng.normal(size=(20, 4))
    y = rng.normal(size=20)
    model = train_heads(x, y, None, TrainConfig(epochs=1, lr=1e-3, batch_size=8), hidden=8, hidden_layers=2)
    frozen = {k: v.copy() for k, v in model.arrays.items()}
    tuned = fine_tune(model, x[:5], y[:5], TrainConfig(epochs=3, lr=1e-2, batch_size=1))
    for k in frozen:
        np.testing.assert_array_equal(model.arrays[k], frozen[k])
    assert not np.array_equal(tuned.predict(x), model.predict(x))
    same = fine_tune(model, x[:5], y[:5], TrainConfig(epochs=0, lr=1e-2, batch_size=1))
    np.testing.assert_array_equal(same.predict(x), model.predict(x))


def test_fine_tune_errors(rng):
    x = rng.normal(size=(4, 3))
    model = init_ensemble(None, 3, hidden=4, hidden_layers=1)
    with pytest.raises(InsufficientSamples):
        fine_tune(model, x[:0], [])
    pw = init_pairwise(None, 3, hidden=4, hidden_layers=1)
    with pytest.raises(InsufficientSamples):
        fine_tune(pw, x[:1], [1.0])
    tuned = fine_tune(pw, x, [1.0, 2.0, 3.0, 4.0], TrainConfig(epochs=2, lr=1e-3, batch_size=1))
    assert not np.array_equal(tuned.arrays["cmp.w"], pw.arrays["cmp.w"])


def test_sample_selection_is_shared():
    a = select_samples(500, 3)
    assert len(a) == 50 and len(set(a)) == 50 and np.all(np.diff(a) > 0)
    np.testing.assert_array_equal(a, select_samples(500, 3))
    assert not np.array_equal(a, select_samples(500, 4))
    assert len(select_samples(10, 0)) == 10


# --------------------------------------------------------------------------- combine


def test_rank_normalize():
    np.testing.assert_allclose(rank_normalize([3.0, 1.0, 2.0]), [1.0, 0.0, 0.5])
    np.testing.assert_allclose(rank_normalize([1.0, 1.0]), [0.5, 0.5])
    np.testing.assert_allclose(rank_normalize([7.0]), [0.5])


def test_reversed_constituents_tie():
    combined, w = gennape_combine([[1, 2, 3, 4], [4, 3, 2, 1]])
    np.testing.assert_allclose(combined, 0.5)
    np.testing.assert_allclose(w, [0.5, 0.5])


def test_kt_softmax_example():
    w = kt_softmax_weights([0.5, 0.0])
    np.testing.assert_allclose(w, [math.exp(0.5) / (math.exp(0.5) + 1), 1 / (math.exp(0.5) + 1)], atol=1e-12)
    assert w[0] == pytest.approx(0.6225, abs=1e-4) and w[1] == pytest.approx(0.3775, abs=1e-4)


def test_identical_constituents_keep_ranking(rng):
    s = rng.normal(size=30)
    combined, w = gennape_combine([s] * 6)
    np.testing.assert_allclose(w, 1 / 6)
    assert kendall_tau(combined, s) == 1.0


def test_fine_tuned_weights_follow_kendall(rng):
    y = rng.normal(size=40)
    good, noise = y + 0.1 * rng.normal(size=40), rng.normal(size=40)
    idx = np.arange(0, 40, 2)
    _, w = gennape_combine([good, noise, np.ones(40)], "fine_tuned", idx, y[idx])
    kts = [kendall_tau(good[idx], y[idx]), kendall_tau(noise[idx], y[idx]), 0.0]
    np.testing.assert_allclose(w, kt_softmax_weights(kts))
    assert w[0] > w[1]


def test_combine_invariant_to_monotone_transform(rng):
    scores = [rng.normal(size=25) for _ in range(6)]
    base, _ = gennape_combine(scores)
    changed = list(scores)
    changed[2] = np.exp(3 * scores[2]) + 5
    again, _ = gennape_combine(changed)
    np.testing.assert_array_equal(np.argsort(base, kind="stable"), np.argsort(again, kind="stable"))


def test_combine_errors():
    with pytest.raises(MismatchedLengths):
        gennape_combine([[1, 2, 3], [1, 2]])
    with pytest.raises(ValueError):
        gennape_combine([[1, 2]], "bogus")
    with pytest.raises(ValueError):
        gennape_combine([[1, 2]], "fine_tuned")
