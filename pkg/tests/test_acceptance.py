"""Acceptance criteria 1-9; each test records one PASS/FAIL line (see conftest)."""

from __future__ import annotations

import itertools
import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from conftest import max_rel_err, numeric_grad, record_acceptance
from gennape import autodiff as ad
from gennape.cli import main
from gennape.encoder import EncoderConfig, cl_loss, cl_loss_tensor, train_encoder
from gennape.experiment import TransferConfig, run_transfer
from gennape.families import build_dataset, default_oracle, generate
from gennape.fcm import EPSILON, FcmModel, fcm_fit, fcm_membership, fit_reducer, memberships
from gennape.graph import NodeAttrs, OpKind, build_graph, compute_flops, deserialize, serialize, shape
from gennape.metrics import kendall_tau, ndcg_at_k, relevance, srcc
from gennape.pipeline import ModelSizes, degenerate_fcm, train_predictor
from gennape.predictor import TrainConfig, TransformStats, fit_transform_stats, gennape_combine, kt_softmax_weights
from gennape.predictor.transform import inverse_transform, raw_target, transform_label
from gennape.search import SearchConfig, local_search
from gennape.spectral import alpha_matrix, laplacian_from_adjacency, normalized_laplacian, signature_distance, symmetric_eigvals

FIXTURES = Path(__file__).parent / "fixtures"


# --------------------------------------------------------------------------- 1


def _direct_membership(x, centroids, m):
    d = np.linalg.norm(centroids - x, axis=1)
    return np.array([1.0 / sum((d[i] / d[k]) ** (2.0 / (m - 1.0)) for k in range(len(d))) for i in range(len(d))])


def test_criterion_1_fcm_fidelity():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        c, dim = int(rng.integers(2, 8)), int(rng.integers(1, 6))
        m = float(rng.uniform(1.1, 5.0))
        centroids = rng.normal(size=(c, dim))
        x = rng.normal(size=dim)
        worst = max(worst, float(np.max(np.abs(memberships(x, centroids, m)[0] - _direct_membership(x, centroids, m)))))
    hand = fcm_membership(np.array([0.0]), FcmModel(np.array([[1.0], [-2.0]]), 2.0)).tolist()
    model = fcm_fit(rng.normal(size=(300, 4)), 5, 2.0, seed=0)
    hist = np.array(model.objective_history)
    # rounding at the fixed point can move the objective by a few ulps
    rise = float(np.max(np.diff(hist) / hist[:-1]))
    monotone = rise <= 1e-12
    stopped = model.n_iter < model.max_iters and model.eps == EPSILON == 1e-9
    ok = worst <= 1e-12 and hand == [0.8, 0.2] and monotone and stopped
    record_acceptance(
        1, ok,
        f"max |U - direct| = {worst:.2e} (tol 1e-12); hand case {hand}; objective non-increasing over "
        f"{len(hist)} half-steps: {monotone} (largest relative rise {max(rise, 0.0):.1e}, tol 1e-12); stopped after {model.n_iter} iterations at eps={model.eps:g}",
    )
    assert ok


# --------------------------------------------------------------------------- 2


def test_criterion_2_transform_fidelity():
    rng = np.random.default_rng(2)
    acc = rng.uniform(0.0, 100.0, 1000)
    flops = rng.uniform(0.0, 100.0, 1000)
    stats = fit_transform_stats(acc, flops)
    err = float(np.max(np.abs(inverse_transform(transform_label(acc, flops, stats), flops, stats) - acc)))
    raw = float(raw_target(90.0, 9.0))
    ok = err <= 1e-9 and raw == 45.0
    record_acceptance(2, ok, f"round-trip max error {err:.2e} (tol 1e-9); raw(A=90, F=9) = {raw!r}")
    assert ok


# --------------------------------------------------------------------------- 3


def test_criterion_3_contrastive_loss_fidelity():
    rng = np.random.default_rng(3)
    z1 = rng.normal(size=(2, 4))
    z1 /= np.linalg.norm(z1, axis=1, keepdims=True)
    single, _ = cl_loss(z1, alpha_matrix(rng.uniform(0, 2, (2, 21))), 0.05)
    same = np.tile([0.6, 0.8, 0.0, 0.0], (4, 1))
    coincide, _ = cl_loss(same, alpha_matrix(rng.uniform(0, 2, (4, 21))), 0.05)
    z = rng.normal(size=(6, 4))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    alphas = alpha_matrix(rng.uniform(0, 2, (6, 21)))
    _, grad = cl_loss(z, alphas, 0.05)
    num = numeric_grad(lambda: cl_loss_tensor(ad.Tensor(z), alphas, 0.05).item(), z, h=1e-5)
    rel = max_rel_err(grad, num)
    ok = single == 0.0 and abs(coincide - 4 * math.log(3)) <= 1e-12 and rel < 1e-4
    record_acceptance(
        3, ok, f"N=1 loss {single!r}; coincident 2N=4 loss {coincide:.6f} vs 4 log 3 = {4 * math.log(3):.6f}; "
        f"gradient relative error {rel:.2e} (tol 1e-4)",
    )
    assert ok


# --------------------------------------------------------------------------- 4


def _path3():
    s = shape(2, 2, 2)
    nodes = [NodeAttrs(OpKind.INPUT, s, s), NodeAttrs(OpKind.RELU, s, s), NodeAttrs(OpKind.OUTPUT, s, s)]
    return build_graph(nodes, [(0, 1), (1, 2)])


def test_criterion_4_spectral_correctness():
    worst, count = 0.0, 0
    for n in range(1, 6):
        pairs = list(itertools.combinations(range(n), 2))
        for mask in range(1 << len(pairs)):
            a = np.zeros((n, n))
            for bit, (i, j) in enumerate(pairs):
                if mask >> bit & 1:
                    a[i, j] = a[j, i] = 1.0
            lap = laplacian_from_adjacency(a)
            worst = max(worst, float(np.max(np.abs(symmetric_eigvals(lap) - np.linalg.eigvalsh(lap)))))
            count += 1
    p3 = symmetric_eigvals(normalized_laplacian(_path3()))
    p3_ok = bool(np.max(np.abs(p3 - [0.0, 1.0, 2.0])) <= 1e-14)
    rng = np.random.default_rng(4)
    sigs = np.sort(rng.uniform(0, 2, (600, 21)), axis=1)
    metric_ok = True
    for t in range(200):
        a, b, c = sigs[3 * t : 3 * t + 3]
        dab, dba, dac, dbc = signature_distance(a, b), signature_distance(b, a), signature_distance(a, c), signature_distance(b, c)
        metric_ok &= dab == dba and signature_distance(a, a) == 0.0 and dac <= dab + dbc + 1e-12 and dab >= 0
    ok = worst <= 1e-8 and p3_ok and metric_ok
    record_acceptance(
        4, ok, f"{count} graphs with n <= 5, max eigenvalue error {worst:.2e} (tol 1e-8); "
        f"P3 spectrum {np.round(p3, 15).tolist()}; pseudo-metric on 200 triples: {metric_ok}",
    )
    assert ok


# --------------------------------------------------------------------------- 5


def _brute_srcc(p, y):
    def ranks(x):
        return [1 + sum(v < a for v in x) + (sum(v == a for v in x) - 1) / 2 for a in x]

    rp, ry = ranks(p), ranks(y)
    mp, my = sum(rp) / len(rp), sum(ry) / len(ry)
    cov = sum((a - mp) * (b - my) for a, b in zip(rp, ry))
    return cov / math.sqrt(sum((a - mp) ** 2 for a in rp) * sum((b - my) ** 2 for b in ry))


def _brute_tau(p, y):
    s = tp = ty = 0
    n = len(p)
    for i, j in itertools.combinations(range(n), 2):
        a, b = np.sign(p[i] - p[j]), np.sign(y[i] - y[j])
        s += a * b
        tp += a == 0
        ty += b == 0
    n0 = n * (n - 1) // 2
    return s / math.sqrt((n0 - tp) * (n0 - ty))


def test_criterion_5_metric_oracles():
    worst = 0.0
    for n in range(2, 7):
        base = list(range(n))
        for perm in itertools.permutations(base):
            worst = max(worst, abs(srcc(perm, base) - _brute_srcc(perm, base)), abs(kendall_tau(perm, base) - _brute_tau(perm, base)))
    rng = np.random.default_rng(5)
    worst_tied, done = 0.0, 0
    while done < 200:
        n = int(rng.integers(2, 51))
        p, y = rng.integers(0, max(2, n // 3), n).tolist(), rng.integers(0, max(2, n // 4), n).tolist()
        if len(set(p)) < 2 or len(set(y)) < 2:
            continue
        worst_tied = max(worst_tied, abs(srcc(p, y) - _brute_srcc(p, y)), abs(kendall_tau(p, y) - _brute_tau(p, y)))
        done += 1
    nd = ndcg_at_k([0.0, 1.0], [1.0, 0.0], 2)
    rel = relevance(rng.uniform(91.11, 93.44, 100))
    # "exactly" is read as agreement to the last couple of ulps of double precision
    ok = worst <= 1e-15 and worst_tied <= 1e-12 and abs(nd - 1 / math.log2(3)) <= 1e-9 and rel.min() == 0.0 and rel.max() == 20.0
    record_acceptance(
        5, ok, f"permutations n<=6 max deviation {worst:.1e}; 200 tied lists max deviation {worst_tied:.1e}; "
        f"reversed NDCG@2 = {nd:.5f}; relevance range [{rel.min()}, {rel.max()}]",
    )
    assert ok


# --------------------------------------------------------------------------- 6


def test_criterion_6_ensemble_algebra():
    rng = np.random.default_rng(6)
    graphs = generate("nb101_like", 40, 6)
    acc = np.array([0.85 + 0.1 * rng.random() for _ in graphs])
    cfg = EncoderConfig(embed_dim=16, branch_dim=8, proj_dim=4, epochs=1, batch_size=20)
    encoder, _ = train_encoder(graphs, cfg)
    heads = TrainConfig(epochs=3, lr=1e-3, batch_size=8)
    sizes = ModelSizes(head_hidden=16, head_layers=2)
    plain = train_predictor("cl+t", graphs, acc, encoder, None, heads, sizes)
    gated = train_predictor("cl+fcm+t", graphs, acc, encoder, degenerate_fcm(plain.reducer), heads, sizes)
    equal = bool(np.array_equal(plain.predict(graphs), gated.predict(graphs)))
    scores = [rng.normal(size=50) for _ in range(6)]
    base, _ = gennape_combine(scores)
    invariant = True
    for i in range(6):
        changed = list(scores)
        changed[i] = np.exp(2.0 * scores[i]) * 7.0 - 3.0
        again, _ = gennape_combine(changed)
        invariant &= bool(np.array_equal(base, again))
    w = kt_softmax_weights([0.5, 0.0])
    w_ok = abs(w[0] - 0.6225) <= 1e-4 and abs(w[1] - 0.3775) <= 1e-4
    ok = equal and invariant and w_ok
    record_acceptance(
        6, ok, f"C=1 CL+FCM+T == CL+T bitwise: {equal}; combine invariant under monotone rescaling: {invariant}; "
        f"KT-softmax weights ({w[0]:.4f}, {w[1]:.4f})",
    )
    assert ok


# --------------------------------------------------------------------------- 7


def test_criterion_7_synthetic_transfer():
    fx = json.loads((FIXTURES / "transfer_calibration.json").read_text())
    cfg = TransferConfig(
        encoder=EncoderConfig(epochs=fx["encoder_epochs"]),
        sizes=ModelSizes(head_hidden=fx["head_hidden"], head_layers=fx["head_layers"]),
    )
    res = run_transfer(cfg)
    total = sum(res.timings.values())
    wins = sum(r["fine_tuned"] >= r["zero_shot"] for r in res.per_seed)
    drift = max(
        [abs(res.zero_shot_srcc - fx["zero_shot_srcc"])]
        + [abs(r["fine_tuned"] - f) for r, f in zip(res.per_seed, fx["fine_tuned_per_seed"])]
    )
    ok = (
        res.zero_shot_srcc >= fx["zero_shot_threshold"]
        and res.fine_tuned_mean >= fx["fine_tuned_threshold"]
        and wins >= 4
        and total <= 30 * 60
    )
    record_acceptance(
        7, ok,
        f"zero-shot SRCC {res.zero_shot_srcc:.4f} (>= {fx['zero_shot_threshold']}); fine-tuned mean "
        f"{res.fine_tuned_mean:.4f} (>= {fx['fine_tuned_threshold']}); per seed "
        f"{[round(r['fine_tuned'], 4) for r in res.per_seed]}; fine-tuned >= zero-shot in {wins}/5 seeds; "
        f"runtime {total / 60:.1f} min; drift from frozen run {drift:.2e}",
    )
    # regression fixture: the calibrated run is deterministic on a given platform
    assert drift <= fx["regression_tolerance"]
    assert ok


# --------------------------------------------------------------------------- 8


@pytest.fixture(scope="module")
def search_predictor():
    records = build_dataset("nb101_like", 200, default_oracle("nb101_like"), 8)
    graphs = [r.graph for r in records]
    encoder, _ = train_encoder(graphs, EncoderConfig(epochs=2))
    return train_predictor(
        "cl+t", graphs, [r.accuracy for r in records], encoder, None,
        TrainConfig(epochs=10, lr=1e-3), ModelSizes(head_hidden=64, head_layers=2),
    )


def test_criterion_8_search_behavior(search_predictor):
    seeds = generate("hiaml_like", 5, 8)
    rows, ok = [], True
    for s, seed_cg in enumerate(seeds):
        cfg = SearchConfig(iterations=3, top_k=4, mutations_per_parent=6, flops_budget=compute_flops(seed_cg), seed=s)
        res = local_search(seed_cg, search_predictor.predict, cfg)
        again = local_search(seed_cg, search_predictor.predict, cfg)
        seed_score = res.trajectory[0]["score"]
        valid = all(deserialize(serialize(c.graph)) == c.graph for c in res.frontier)
        good = (
            res.best.flops <= compute_flops(seed_cg)
            and res.best.predicted >= seed_score
            and valid
            and res.trajectory == again.trajectory
        )
        ok &= good
        rows.append(f"{seed_score:.3f}->{res.best.predicted:.3f}@{res.best.flops / compute_flops(seed_cg):.2f}xF")
    record_acceptance(8, ok, f"5 seeds (score seed->best @ FLOPs ratio): {', '.join(rows)}")
    assert ok


# --------------------------------------------------------------------------- 9


def test_criterion_9_manifest_replay(tmp_path):
    d = tmp_path
    p = lambda name: str(d / name)
    small = ["--head-hidden", "16", "--head-layers", "2", "--pair-hidden", "16", "--pair-layers", "2"]
    steps = [
        (p("all.jsonl"), ["gen", "--family", "nb101_like", "--n", "50", "--seed", "2", "--out", p("all.jsonl")], []),
        (p("s.train.jsonl"), ["split", "--data", p("all.jsonl"), "--seed", "1", "--out-prefix", p("s")], [p("s.val.jsonl"), p("s.test.jsonl")]),
        (p("tgt.jsonl"), ["gen", "--family", "twopath_like", "--n", "25", "--seed", "3", "--out", p("tgt.jsonl")], []),
        (p("enc.gnpe"), ["train-encoder", "--data", p("s.train.jsonl"), "--out", p("enc.gnpe"), "--epochs", "1", "--batch-size", "20"], [p("enc.gnpe.log.json")]),
        (p("emb.gnpe"), ["embed", "--encoder", p("enc.gnpe"), "--data", p("tgt.jsonl"), "--out", p("emb.gnpe")], []),
        (p("fcm.gnpe"), ["cluster", "--encoder", p("enc.gnpe"), "--data", p("s.train.jsonl"), "--out", p("fcm.gnpe"), "--C", "3"], []),
        (p("grid.gnpe"), ["cluster", "--encoder", p("enc.gnpe"), "--data", p("s.train.jsonl"), "--out", p("grid.gnpe"), "--grid",
                          "--val", p("s.val.jsonl"), "--grid-c", "2", "3", "--grid-m", "2.0", "3.0", "--head-epochs", "1", *small], []),
    ]
    variants = {"cl+fcm+t": "a", "cl+t": "b", "pairwise+fcm": "c", "pairwise": "d", "baseline-gnn": "e"}
    for variant, tag in variants.items():
        steps.append((p(f"{tag}.gnpe"), ["train-predictor", "--variant", variant, "--data", p("s.train.jsonl"), "--encoder", p("enc.gnpe"),
                                        "--fcm", p("fcm.gnpe"), "--out", p(f"{tag}.gnpe"), "--epochs", "2", "--lr", "1e-3", *small], []))
    steps += [
        (p("ft.gnpe"), ["fine-tune", "--model", p("a.gnpe"), "--data", p("tgt.jsonl"), "--out", p("ft.gnpe"), "--samples", "5", "--epochs", "2"], [p("ft.gnpe.samples.json")]),
        (p("rep.json"), ["evaluate", "--model", p("a.gnpe"), "--data", p("tgt.jsonl"), "--out", p("rep.json"), "--seeds", "2", "--ft-samples", "5",
                         "--ft-epochs", "2", "--ndcg-k", "5"], []),
        (p("traj.jsonl"), ["search", "--model", p("b.gnpe"), "--seed-data", p("tgt.jsonl"), "--out", p("traj.jsonl"), "--iterations", "2",
                           "--top-k", "2", "--mutations", "3", "--budget", "seed"], [p("traj.jsonl.best.json")]),
        (p("g.json"), ["gennape", "--models", *[p(f"{t}.gnpe") for t in "abcde"], "flops", "--data", p("tgt.jsonl"), "--out", p("g.json"),
                       "--mode", "fine_tuned", "--ft-samples", "8", "--ndcg-k", "5"], []),
    ]
    for _, argv, _ in steps:
        assert main(["--quiet", *argv]) == 0, argv[0]
    mismatched = []
    for primary, argv, extras in steps:
        outputs = [primary, *extras]
        saved = {o: Path(o).read_bytes() for o in outputs}
        for o in outputs:
            shutil.move(o, o + ".first")
        rc = main(["--quiet", "replay", primary + ".manifest.json"])
        same = rc == 0 and all(Path(o).read_bytes() == saved[o] for o in outputs)
        if not same:
            mismatched.append(argv[0])
    ok = not mismatched
    record_acceptance(
        9, ok, f"{len(steps)} subcommand runs replayed from manifests; byte-identical outputs: "
        f"{len(steps) - len(mismatched)}/{len(steps)}{' mismatched: ' + ', '.join(mismatched) if mismatched else ''}",
    )
    assert ok
