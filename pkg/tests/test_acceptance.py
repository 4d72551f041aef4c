"""Acceptance suite: one test per criterion, each printing a PASS line.

Criteria 1-6 run by default.  Criterion 7 needs the real multi-graph benchmark
data under $GRAPHFILL_DATA_ROOT (hours-long, reference only) and criterion 8
runs when GRAPHFILL_RUN_OPTIONAL=1 (ten desk-scale trainings).
"""

import math
import os
from pathlib import Path

import numpy as np
import pytest
import torch

import graphfill as gf
from graphfill import baselines, evaluation, training
from graphfill.data import derive_seed
from graphfill.generator import compose_imputation
from graphfill.layers import (
    GCNLayer,
    LEConvScore,
    Mixer,
    feature_mix,
    graph_pool,
    graph_unpool,
    node_mix,
)

from conftest import t
from numdiff import autograd_gradient, fd_gradient, fd_param_gradient, relative_error

torch.set_num_threads(1)

SYNTH = dict(num_graphs=200, num_nodes=20, num_features=8, seed=42)
ROOT_SEED = 1000
TRIALS = 5


@pytest.fixture(scope="module")
def synthetic_dataset():
    return gf.make_synthetic_dataset(
        SYNTH["num_graphs"], SYNTH["num_nodes"], SYNTH["num_features"], SYNTH["seed"]
    )


def acceptance_trainer():
    d, n_max = SYNTH["num_features"], SYNTH["num_nodes"]
    gen_cfg = gf.GeneratorConfig(
        paths="dual",
        alpha_init=0.5,
        graph_path=gf.GraphPathConfig(in_features=d, hidden_dim=128, n_max=n_max, depth=1),
        mlp_path=gf.MlpPathConfig(in_features=d, hidden_dim=128, n_max=n_max, depth=1),
    )
    critic_cfg = gf.CriticConfig(in_features=d, hidden_dim=32, n_max=n_max, hops=2)
    return {
        "gen_cfg": gen_cfg,
        "critic_cfg": critic_cfg,
        "loss_cfg": training.LossConfig(lambda_r=100.0),
        "ttur_cfg": training.TTURConfig(lr_d=4e-4, lr_g=1e-3),
        "epochs": 240,
        "batch_size": 128,
        "patience": 50,
    }


_model_cache: dict[tuple[float, int], evaluation.TrialResult] = {}


def model_trial(graphs, rate: float, trial: int, rate_index: int) -> evaluation.TrialResult:
    key = (rate, trial)
    if key not in _model_cache:
        seed = derive_seed(ROOT_SEED, rate_index, trial)
        _model_cache[key] = evaluation.run_trial(
            graphs, "synthetic", "dual_path_gan", rate, seed, trainer=acceptance_trainer()
        )
    return _model_cache[key]


# ---------------------------------------------------------------------------
# Criterion 1: property suite
# ---------------------------------------------------------------------------

def test_criterion_1_property_suite():
    rng = np.random.default_rng(0)

    # pool size law ceil(N * 0.5^h) for N in [1, 64], h in [0, 4]
    for n in range(1, 65):
        a = np.zeros((n, n))
        x = rng.normal(size=(n, 2))
        scorer = LEConvScore(2).double()
        cur_x, cur_a = t(x), t(a)
        size = n
        for h in range(5):
            assert cur_x.shape[0] == size
            res = graph_pool(cur_x, cur_a, 0.5, scorer)
            size = math.ceil(size * 0.5)
            assert res.pooled_features.shape[0] == size
            cur_x, cur_a = res.pooled_features.detach(), res.pooled_adjacency

    # unpool/slice inverse bit-exactness
    for _ in range(20):
        k, L, d = rng.integers(1, 6), 9, 4
        idx = torch.tensor(sorted(rng.choice(L, size=int(k), replace=False).tolist()))
        x_small = t(rng.normal(size=(int(k), d)))
        restored = graph_unpool(x_small, idx, L)[idx]
        assert torch.equal(restored, x_small)

    # observed entries preserved through compose_imputation and both baselines
    for _ in range(10):
        x = rng.normal(size=(7, 5))
        r = (rng.random((7, 5)) > 0.4).astype(float)
        xt = rng.normal(size=(7, 5))
        assert np.array_equal(compose_imputation(x, r, xt) * r, x * r)
        assert np.array_equal(baselines.mean_impute(x, r) * r, x * r)
        assert np.array_equal(baselines.knn_impute(x, r) * r, x * r)

    # GCN permutation equivariance within 1e-9
    layer = GCNLayer(3, 3).double()
    for _ in range(5):
        n = int(rng.integers(3, 10))
        a = (rng.random((n, n)) < 0.4).astype(float)
        a = np.triu(a, 1)
        a = a + a.T
        x = rng.normal(size=(n, 3))
        perm = rng.permutation(n)
        p = np.eye(n)[perm]
        out = layer(t(x), t(a)).detach().numpy()
        out_p = layer(t(p @ x), t(p @ a @ p.T)).detach().numpy()
        assert np.abs(out_p - p @ out).max() < 1e-9

    # convex-combination endpoint identities at clamped alpha in {0, 1}
    cfg = gf.GeneratorConfig(
        paths="dual",
        graph_path=gf.GraphPathConfig(in_features=3, hidden_dim=6, n_max=5, depth=1),
        mlp_path=gf.MlpPathConfig(in_features=3, hidden_dim=6, n_max=5, depth=1),
    )
    model = gf.DualPathGenerator(cfg).double()
    x = t(rng.normal(size=(5, 3)))
    r = t((rng.random((5, 3)) > 0.3).astype(float))
    adj = t(np.zeros((5, 5)))
    x_in = torch.cat([x * r, r], dim=-1)
    with torch.no_grad():
        model.alpha_raw.fill_(9.0)
    assert torch.equal(model(x, r, adj).detach(), model.mlp_path(x_in).detach())
    with torch.no_grad():
        model.alpha_raw.fill_(-9.0)
    assert torch.equal(model(x, r, adj).detach(), model.graph_path(x_in, adj).detach())

    # mask and split determinism per seed
    assert np.array_equal(gf.sample_mask(30, 8, 0.3, 5), gf.sample_mask(30, 8, 0.3, 5))
    assert gf.split_dataset(100, seed=9) == gf.split_dataset(100, seed=9)

    print("[criterion 1] PASS: property suite")


# ---------------------------------------------------------------------------
# Criterion 2: gradient suite
# ---------------------------------------------------------------------------

def test_criterion_2_gradient_suite():
    rng = np.random.default_rng(1)
    n, d = 5, 3
    a = (rng.random((n, n)) < 0.5).astype(float)
    a = np.triu(a, 1)
    adj = t(a + a.T)
    x0 = t(rng.normal(size=(n, d)))
    probe = t(rng.normal(size=(n, d)))

    layer = GCNLayer(d, d).double()
    fn = lambda x: (layer(x, adj) * probe).sum()
    assert relative_error(autograd_gradient(fn, x0), fd_gradient(fn, x0)) < 1e-4

    scorer = LEConvScore(d).double()
    fn = lambda x: (scorer(x, adj) * probe[:, 0]).sum()
    assert relative_error(autograd_gradient(fn, x0), fd_gradient(fn, x0)) < 1e-4

    mixer_n = Mixer(n, n, n).double()
    fn = lambda x: (node_mix(x, t(np.ones(n)), mixer_n) * probe).sum()
    assert relative_error(autograd_gradient(fn, x0), fd_gradient(fn, x0)) < 1e-4

    mixer_f = Mixer(d, 2 * d, d).double()
    fn = lambda x: (feature_mix(x, mixer_f) * probe).sum()
    assert relative_error(autograd_gradient(fn, x0), fd_gradient(fn, x0)) < 1e-4

    # full generator, parameter subset
    cfg = gf.GeneratorConfig(
        paths="dual",
        graph_path=gf.GraphPathConfig(in_features=2, hidden_dim=4, n_max=4, depth=1),
        mlp_path=gf.MlpPathConfig(in_features=2, hidden_dim=4, n_max=4, depth=1),
    )
    model = gf.DualPathGenerator(cfg).double()
    xg = t(rng.normal(size=(4, 2)))
    rg = t((rng.random((4, 2)) > 0.4).astype(float))
    ag = t(np.zeros((4, 4)))
    target = t(rng.normal(size=(4, 2)))

    def gen_loss():
        return ((model(xg, rg, ag) - target) ** 2).sum()

    checked = 0
    for name, param in model.named_parameters():
        if param.numel() > 8:
            continue
        gen_loss().backward()
        auto = param.grad.detach().clone()
        model.zero_grad()
        assert relative_error(auto, fd_param_gradient(gen_loss, param)) < 1e-3, name
        checked += 1
    assert checked >= 4

    # critic_value gradient wrt input features
    critic = gf.SubgraphCritic(
        gf.CriticConfig(in_features=d, hidden_dim=4, n_max=n, hops=1)
    ).double()
    fn = lambda x: critic.value(x, adj)
    assert relative_error(autograd_gradient(fn, x0), fd_gradient(fn, x0)) < 1e-4

    # gradient-penalty analytic cases
    class UnitGradientCritic:
        def __call__(self, x, _adj):
            return (x / math.sqrt(x.numel())).sum()

    class ConstantCritic:
        def __call__(self, x, _adj):
            return torch.tensor(1.5, dtype=x.dtype)

    real, fake = x0, t(rng.normal(size=(n, d)))
    gp0 = float(training.gradient_penalty(UnitGradientCritic(), real, fake, adj, eps=0.6))
    assert abs(gp0) <= 1e-8
    gp1 = float(training.gradient_penalty(ConstantCritic(), real, fake, adj, eps=0.6))
    assert abs(gp1 - 1.0) <= 1e-8

    print("[criterion 2] PASS: gradient suite")


# ---------------------------------------------------------------------------
# Criterion 3: loss oracles
# ---------------------------------------------------------------------------

def test_criterion_3_loss_oracles():
    rng = np.random.default_rng(2)
    feats, tildes, masks, adjs = [], [], [], []
    for n in (5, 7, 4):
        a = (rng.random((n, n)) < 0.5).astype(float)
        a = np.triu(a, 1)
        adjs.append(a + a.T)
        feats.append(rng.normal(size=(n, 3)))
        tildes.append(rng.normal(size=(n, 3)))
        masks.append((rng.random((n, 3)) > 0.4).astype(float))
    critic = gf.SubgraphCritic(
        gf.CriticConfig(in_features=3, hidden_dim=5, n_max=7, hops=1)
    ).double()
    cfg = training.LossConfig(lambda_r=10.0, lambda_gp=10.0)

    from graphfill.layers import pad_graph_batch

    x, adj, n_valid = pad_graph_batch(feats, adjs, 7)
    xt, _, _ = pad_graph_batch(tildes, adjs, 7)
    r = torch.ones_like(x)
    for b, m in enumerate(masks):
        r[b, : m.shape[0]] = t(m)
    fakes = compose_imputation(x, r, xt)
    eps = np.array([0.15, 0.6, 0.85])

    # reconstruction oracle
    sq = count = 0.0
    for b in range(3):
        resid = (feats[b] - tildes[b]) * (1 - masks[b])
        sq += float((resid**2).sum())
        count += float((1 - masks[b]).sum())
    recon_expected = math.sqrt(sq / count)
    recon_got = float(training.reconstruction_loss(x, xt, r).detach())
    assert abs(recon_got - recon_expected) < 1e-10

    # critic loss oracle
    w_terms, gp_terms, adv_terms = [], [], []
    for b in range(3):
        xb, ab = t(feats[b]), t(adjs[b])
        fb = t(masks[b]) * t(feats[b]) + (1 - t(masks[b])) * t(tildes[b])
        w_terms.append(float(critic.value(fb, ab).detach() - critic.value(xb, ab).detach()))
        x_hat = (eps[b] * xb + (1 - eps[b]) * fb).detach().requires_grad_(True)
        g = torch.autograd.grad(critic.value(x_hat, ab), x_hat)[0]
        gp_terms.append((float(g.norm()) - 1.0) ** 2)
        adv_terms.append(float(critic.value(fb, ab).detach()))
    critic_expected = np.mean(w_terms) + 10.0 * np.mean(gp_terms)
    critic_got = float(
        training.critic_loss(critic, x, fakes, adj, cfg, eps=t(eps), n_valid=n_valid).detach()
    )
    assert abs(critic_got - critic_expected) < 1e-10

    # generator loss oracle
    gen_expected = -np.mean(adv_terms) + 10.0 * recon_expected
    gen_got = float(
        training.generator_loss(critic, x, r, xt, adj, cfg, n_valid=n_valid).detach()
    )
    assert abs(gen_got - gen_expected) < 1e-10

    # constant critic pins the loss at exactly lambda_gp = 10
    class ConstantCritic:
        def __call__(self, xx, _adj):
            return torch.tensor(2.25, dtype=xx.dtype)

    pinned = training.critic_loss(ConstantCritic(), x, fakes, adj, cfg, eps=t(eps))
    assert float(pinned) == 10.0

    print("[criterion 3] PASS: loss oracles")


# ---------------------------------------------------------------------------
# Criterion 4: baseline oracles
# ---------------------------------------------------------------------------

def test_criterion_4_baseline_oracles():
    x = np.array(
        [
            [1.0, 2.0, 3.0],
            [1.5, 2.5, 2.0],
            [4.0, 0.0, 1.0],
            [4.2, 0.3, 0.5],
            [1.1, 2.1, 9.0],
        ]
    )
    r = np.array(
        [
            [1.0, 1.0, 0.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
            [1.0, 1.0, 1.0],
        ]
    )
    n, d, k = 5, 3, 2

    # mean: brute-force loop oracle
    expected_mean = x * r
    for j in range(d):
        vals = [x[i, j] for i in range(n) if r[i, j] == 1]
        mu = float(np.mean(vals))
        for i in range(n):
            if r[i, j] == 0:
                expected_mean[i, j] = mu
    got_mean = baselines.mean_impute(x, r)
    assert np.array_equal(got_mean, expected_mean)
    assert np.array_equal(baselines.mean_impute(got_mean, r), got_mean)  # idempotent

    # knn: brute-force loop oracle (distance over common dims, scaled by D/|common|)
    means = baselines.fit_feature_means([x], [r])
    expected_knn = x * r
    for i in range(n):
        dists = []
        for u in range(n):
            if u == i:
                continue
            common = [j for j in range(d) if r[i, j] == 1 and r[u, j] == 1]
            if not common:
                continue
            sq = sum((x[i, j] - x[u, j]) ** 2 for j in common)
            dists.append((math.sqrt(sq * d / len(common)), u))
        dists.sort()
        neighbors = [u for _, u in dists[:k]]
        for j in range(d):
            if r[i, j] == 1:
                continue
            vals = [x[u, j] for u in neighbors if r[u, j] == 1]
            expected_knn[i, j] = float(np.mean(vals)) if vals else means[j]
    got_knn = baselines.knn_impute(x, r, gf.KnnConfig(k=k))
    assert np.array_equal(got_knn, expected_knn)

    print("[criterion 4] PASS: baseline oracles")


# ---------------------------------------------------------------------------
# Criterion 5: desk-scale end-to-end
# ---------------------------------------------------------------------------

def test_criterion_5_end_to_end_beats_baselines(synthetic_dataset):
    graphs = synthetic_dataset
    model_rmses, mean_rmses, knn_rmses = [], [], []
    for trial in range(TRIALS):
        seed = derive_seed(ROOT_SEED, 0, trial)
        res = model_trial(graphs, 0.1, trial, rate_index=0)
        mean_res = evaluation.run_trial(graphs, "synthetic", "mean", 0.1, seed)
        knn_res = evaluation.run_trial(graphs, "synthetic", "knn", 0.1, seed)
        model_rmses.append(res.rmse)
        mean_rmses.append(mean_res.rmse)
        knn_rmses.append(knn_res.rmse)
        assert res.rmse <= 0.9 * mean_res.rmse, (
            f"trial {trial}: model {res.rmse:.4f} vs 0.9*mean {0.9 * mean_res.rmse:.4f}"
        )
    assert np.mean(model_rmses) <= np.mean(knn_rmses), (
        f"model mean {np.mean(model_rmses):.4f} vs knn mean {np.mean(knn_rmses):.4f}"
    )
    print(
        f"[criterion 5] PASS: model {np.mean(model_rmses):.4f} "
        f"vs mean {np.mean(mean_rmses):.4f} / knn {np.mean(knn_rmses):.4f} over {TRIALS} seeds"
    )


# ---------------------------------------------------------------------------
# Criterion 6: directional missing-rate sweep
# ---------------------------------------------------------------------------

def test_criterion_6_alpha_direction_and_structure_only(synthetic_dataset):
    graphs = synthetic_dataset
    low = [model_trial(graphs, 0.1, trial, rate_index=0) for trial in range(3)]
    high = [model_trial(graphs, 0.9, trial, rate_index=1) for trial in range(3)]
    alpha_low = float(np.mean([r.final_alpha for r in low]))
    alpha_high = float(np.mean([r.final_alpha for r in high]))
    assert alpha_low > alpha_high, f"alpha at 0.1 = {alpha_low:.3f} vs 0.9 = {alpha_high:.3f}"

    full = model_trial(graphs, 1.0, 0, rate_index=2)
    seed = derive_seed(ROOT_SEED, 2, 0)
    zero = evaluation.run_trial(graphs, "synthetic", "zero", 1.0, seed)
    assert math.isfinite(full.rmse)
    assert full.rmse < zero.rmse, f"model {full.rmse:.4f} vs zeros {zero.rmse:.4f}"
    print(
        f"[criterion 6] PASS: alpha {alpha_low:.3f}@0.1 > {alpha_high:.3f}@0.9; "
        f"rate-1.0 rmse {full.rmse:.4f} < zeros {zero.rmse:.4f}"
    )


# ---------------------------------------------------------------------------
# Criterion 7 (optional): paper-scale reference on real data
# ---------------------------------------------------------------------------

def _enzymes_dir():
    root = os.environ.get("GRAPHFILL_DATA_ROOT")
    if not root:
        return None
    path = Path(root) / "ENZYMES"
    return path if path.is_dir() else None


@pytest.mark.paper_scale
@pytest.mark.skipif(
    _enzymes_dir() is None,
    reason="paper-scale reference needs ENZYMES under $GRAPHFILL_DATA_ROOT",
)
def test_criterion_7_enzymes_reference():
    graphs = gf.load_tudataset(_enzymes_dir())
    assert len(graphs) == 600 and graphs[0].num_features == 18
    d = graphs[0].num_features
    n_max = max(g.num_nodes for g in graphs)
    trainer = {
        "gen_cfg": gf.GeneratorConfig(
            paths="dual",
            alpha_init=0.5,
            graph_path=gf.GraphPathConfig(in_features=d, hidden_dim=256, n_max=n_max, depth=2),
            mlp_path=gf.MlpPathConfig(in_features=d, hidden_dim=256, n_max=n_max, depth=2),
        ),
        "critic_cfg": gf.CriticConfig(in_features=d, hidden_dim=256, n_max=n_max, hops=2),
        "loss_cfg": training.LossConfig(lambda_r=100.0),
        "ttur_cfg": training.TTURConfig(lr_d=4e-4, lr_g=1e-3),
        "epochs": 300,
        "batch_size": 128,
        "patience": 50,
    }
    rmses = []
    for trial in range(TRIALS):
        seed = derive_seed(ROOT_SEED, 7, trial)
        res = evaluation.run_trial(
            graphs, "ENZYMES", "dual_path_gan", 0.1, seed, trainer=trainer
        )
        rmses.append(res.rmse)
    mean_rmse = float(np.mean(rmses))
    # published reference points: KNN 0.0350 (bound), this method 0.0193 (target)
    assert mean_rmse < 0.0350, f"ENZYMES mean rmse {mean_rmse:.4f} not below 0.0350"
    print(
        f"[criterion 7] PASS: ENZYMES rmse {mean_rmse:.4f} < 0.0350 "
        f"(reference target 0.0193)"
    )


# ---------------------------------------------------------------------------
# Criterion 8 (optional): discriminator granularity ordering
# ---------------------------------------------------------------------------

@pytest.mark.skipif(
    os.environ.get("GRAPHFILL_RUN_OPTIONAL") != "1",
    reason="ablation-shape check runs with GRAPHFILL_RUN_OPTIONAL=1 (ten trainings)",
)
def test_criterion_8_subgraph_beats_graph_critic(synthetic_dataset):
    graphs = synthetic_dataset

    def rmses_for(mode):
        trainer = acceptance_trainer()
        trainer["critic_cfg"] = gf.CriticConfig(
            in_features=SYNTH["num_features"],
            hidden_dim=32,
            n_max=SYNTH["num_nodes"],
            hops=2,
            mode=mode,
        )
        out = []
        for trial in range(TRIALS):
            seed = derive_seed(ROOT_SEED, 8, trial)
            out.append(
                evaluation.run_trial(
                    graphs, "synthetic", "dual_path_gan", 0.1, seed, trainer=trainer
                ).rmse
            )
        return out

    subgraph = rmses_for("subgraph")
    graph_level = rmses_for("graph")
    assert np.mean(subgraph) <= np.mean(graph_level), (
        f"2-hop mean {np.mean(subgraph):.4f} vs graph-level {np.mean(graph_level):.4f}"
    )
    print(
        f"[criterion 8] PASS: 2-hop critic {np.mean(subgraph):.4f} "
        f"<= graph critic {np.mean(graph_level):.4f} over {TRIALS} seeds"
    )
