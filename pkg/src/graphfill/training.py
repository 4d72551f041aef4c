"""Losses, gradient penalty, and the adversarial training loop.

The trainer works in normalized feature units.  Training graphs are fully
observed, so each optimization step samples fresh simulated masks to give the
reconstruction term known targets; validation masks are fixed per run.  All
randomness flows from one counter-based generator stored on the train state,
which makes checkpoint resume reproduce the next step bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .data import (
    _STREAM_TRAIN,
    _STREAM_VAL_MASK,
    DatasetSplit,
    Graph,
    NormStats,
    bernoulli_mask,
    fit_norm_stats,
    make_rng,
)
from .discriminator import CriticConfig, SubgraphCritic
from .generator import (
    DualPathGenerator,
    GeneratorConfig,
    GraphPathConfig,
    MlpPathConfig,
    compose_imputation,
)
from .layers import pad_graph_batch

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Losses became non-finite; carries the offending step diagnostics."""


@dataclass
class LossConfig:
    lambda_r: float = 10.0
    lambda_gp: float = 10.0
    recon_norm: str = "l2"  # or "l1"

    def __post_init__(self):
        if self.lambda_r <= 0:
            raise ValueError("lambda_r must be > 0")
        if self.lambda_gp <= 0:
            raise ValueError("lambda_gp must be > 0")
        if self.recon_norm not in ("l1", "l2"):
            raise ValueError(f"unknown recon_norm '{self.recon_norm}'")


@dataclass
class TTURConfig:
    lr_d: float = 0.04
    lr_g: float = 0.001
    optimizer: str = "adam"  # or "sgd"
    d_steps_per_g: int = 1

    def __post_init__(self):
        if self.lr_d <= 0 or self.lr_g <= 0:
            raise ValueError("learning rates must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer '{self.optimizer}'")
        if self.d_steps_per_g < 0:
            raise ValueError("d_steps_per_g must be >= 0")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def reconstruction_loss(x: Tensor, x_tilde: Tensor, r: Tensor, norm: str = "l2") -> Tensor:
    """Residual over missing entries: root-mean-square for L2, mean absolute
    for L1.  Returns 0 when nothing is missing."""
    if x.shape != x_tilde.shape or x.shape != r.shape:
        raise ValueError("reconstruction_loss shapes must match")
    miss = 1.0 - r
    count = miss.sum()
    if count == 0:
        return x.new_zeros(())
    resid = (x - x_tilde) * miss
    if norm == "l2":
        return torch.sqrt((resid * resid).sum() / count)
    return resid.abs().sum() / count


def _critic_values(critic, x: Tensor, adjacency: Tensor, n_valid=None) -> Tensor:
    """Per-graph scalar critic values; accepts a SubgraphCritic or a callable."""
    if hasattr(critic, "value"):
        return critic.value(x, adjacency, n_valid)
    return critic(x, adjacency)


def gradient_penalty(
    critic,
    x_real: Tensor,
    x_fake: Tensor,
    adjacency: Tensor,
    rng: np.random.Generator | None = None,
    *,
    eps: Tensor | float | None = None,
    n_valid=None,
) -> Tensor:
    """(||grad_x critic_value(x_hat)||_2 - 1)^2 at x_hat = eps*real + (1-eps)*fake.

    One eps per graph, U(0,1) by default.  The returned tensor stays in the
    autograd graph so the penalty trains the critic through second-order
    gradients.
    """
    if x_real.shape != x_fake.shape:
        raise ValueError("real/fake shapes must match")
    batched = x_real.dim() == 3
    b = x_real.shape[0] if batched else 1
    if eps is None:
        if rng is None:
            raise ValueError("provide either rng or eps")
        eps = torch.as_tensor(rng.random(b), dtype=x_real.dtype)
    else:
        eps = torch.as_tensor(eps, dtype=x_real.dtype).reshape(-1)
        if eps.numel() == 1 and b > 1:
            eps = eps.expand(b)
    e = eps.view(b, 1, 1) if batched else eps.reshape(())
    x_hat = (e * x_real + (1.0 - e) * x_fake).detach().requires_grad_(True)
    values = _critic_values(critic, x_hat, adjacency, n_valid)
    if values.requires_grad:
        grads = torch.autograd.grad(
            values.sum(), x_hat, create_graph=True, allow_unused=True
        )[0]
    else:
        grads = None  # constant critic: zero gradient everywhere
    if grads is None:
        grads = torch.zeros_like(x_hat)
    if batched:
        norms = grads.reshape(b, -1).norm(dim=1)
        return (norms - 1.0) ** 2
    return (grads.norm() - 1.0) ** 2


def critic_loss(
    critic,
    x_real: Tensor,
    x_fake: Tensor,
    adjacency: Tensor,
    loss_cfg: LossConfig,
    rng: np.random.Generator | None = None,
    *,
    eps=None,
    n_valid=None,
) -> Tensor:
    """mean[ D(fake) - D(real) ] + lambda_gp * mean gradient penalty."""
    v_fake = _critic_values(critic, x_fake, adjacency, n_valid)
    v_real = _critic_values(critic, x_real, adjacency, n_valid)
    gp = gradient_penalty(critic, x_real, x_fake, adjacency, rng, eps=eps, n_valid=n_valid)
    return (v_fake - v_real).mean() + loss_cfg.lambda_gp * gp.mean()


def generator_loss(
    critic,
    x: Tensor,
    r: Tensor,
    x_tilde: Tensor,
    adjacency: Tensor,
    loss_cfg: LossConfig,
    n_valid=None,
) -> Tensor:
    """-mean D(composite fake) + lambda_r * reconstruction loss.

    The gradient penalty trains only the critic and is absent here.
    """
    fake = compose_imputation(x, r, x_tilde)
    adv = -_critic_values(critic, fake, adjacency, n_valid).mean()
    rec = reconstruction_loss(x, x_tilde, r, loss_cfg.recon_norm)
    return adv + loss_cfg.lambda_r * rec


# ---------------------------------------------------------------------------
# Train state
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    generator: DualPathGenerator
    critic: SubgraphCritic
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    rng: np.random.Generator
    gen_cfg: GeneratorConfig
    critic_cfg: CriticConfig
    loss_cfg: LossConfig
    ttur_cfg: TTURConfig
    norm_stats: NormStats
    split: DatasetSplit
    seed: int
    missing_rate: float
    val_missing_rate: float
    batch_size: int
    patience: int
    adversarial: bool
    n_max: int
    features: list[np.ndarray]
    adjacencies: list[np.ndarray]
    val_masks: dict[int, np.ndarray]
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    best_val_rmse: float = math.inf
    best_epoch: int = -1
    best_generator_state: dict | None = None
    epochs_since_best: int = 0
    _best_module: DualPathGenerator | None = None

    @property
    def alpha(self) -> float:
        return float(self.generator.alpha().detach())

    def best_generator(self) -> DualPathGenerator:
        if self._best_module is None:
            module = DualPathGenerator(self.gen_cfg).double()
            module.load_state_dict(self.best_generator_state)
            module.eval()
            self._best_module = module
        return self._best_module

    def _invalidate_best(self):
        self._best_module = None


def _snapshot(module: torch.nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def _build_optimizer(params, cfg: TTURConfig, lr: float) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=lr)
    return torch.optim.SGD(params, lr=lr)


def init_train_state(
    graphs: list[Graph],
    split: DatasetSplit,
    gen_cfg: GeneratorConfig,
    critic_cfg: CriticConfig,
    loss_cfg: LossConfig,
    ttur_cfg: TTURConfig,
    *,
    seed: int,
    missing_rate: float,
    val_missing_rate: float | None = None,
    batch_size: int = 128,
    patience: int = 50,
    adversarial: bool = True,
) -> TrainState:
    if not split.train_ids:
        raise ValueError("training split is empty")
    if not 0.0 <= missing_rate <= 1.0:
        raise ValueError(f"missing_rate must be in [0, 1], got {missing_rate}")
    d = graphs[0].num_features
    if gen_cfg.in_features != d:
        raise ValueError(f"generator built for {gen_cfg.in_features} features, data has {d}")
    n_max = gen_cfg.n_max
    if max(g.num_nodes for g in graphs) > n_max:
        raise ValueError("a graph exceeds the configured n_max")
    val_rate = missing_rate if val_missing_rate is None else val_missing_rate

    stats = fit_norm_stats([graphs[i] for i in split.train_ids])
    features = [stats.transform(g.node_features) for g in graphs]
    adjacencies = [g.dense_adjacency() for g in graphs]

    torch.manual_seed(int(np.uint32(seed)) + 7)
    generator = DualPathGenerator(gen_cfg).double()
    critic = SubgraphCritic(critic_cfg).double()
    opt_g = _build_optimizer(generator.parameters(), ttur_cfg, ttur_cfg.lr_g)
    opt_d = _build_optimizer(critic.parameters(), ttur_cfg, ttur_cfg.lr_d)

    val_masks = {
        vid: bernoulli_mask(
            graphs[vid].num_nodes, d, val_rate, make_rng(seed, _STREAM_VAL_MASK, vid)
        )
        for vid in split.val_ids
    }

    state = TrainState(
        generator=generator,
        critic=critic,
        opt_g=opt_g,
        opt_d=opt_d,
        rng=make_rng(seed, _STREAM_TRAIN),
        gen_cfg=gen_cfg,
        critic_cfg=critic_cfg,
        loss_cfg=loss_cfg,
        ttur_cfg=ttur_cfg,
        norm_stats=stats,
        split=split,
        seed=seed,
        missing_rate=missing_rate,
        val_missing_rate=val_rate,
        batch_size=batch_size,
        patience=patience,
        adversarial=adversarial,
        n_max=n_max,
        features=features,
        adjacencies=adjacencies,
        val_masks=val_masks,
    )
    state.best_generator_state = _snapshot(generator)
    return state


def _critic_input(state: TrainState, matrix: Tensor, r: Tensor) -> Tensor:
    if state.critic_cfg.condition_on_mask:
        return torch.cat([matrix, r], dim=-1)
    return matrix


def _validation_rmse(state: TrainState) -> float:
    if not state.split.val_ids:
        return math.nan
    sq_sum, count = 0.0, 0.0
    state.generator.eval()
    with torch.no_grad():
        for vid in state.split.val_ids:
            x = torch.as_tensor(state.features[vid])
            adj = torch.as_tensor(state.adjacencies[vid])
            r = torch.as_tensor(state.val_masks[vid])
            x_t = state.generator(x, r, adj)
            resid = (x - x_t) * (1.0 - r)
            sq_sum += float((resid * resid).sum())
            count += float((1.0 - r).sum())
    state.generator.train()
    if count == 0:
        return math.nan
    return math.sqrt(sq_sum / count)


def _fresh_masks(state: TrainState, ids: list[int], x: Tensor) -> Tensor:
    """Per-step training masks; padding rows are flagged observed so they never
    enter the reconstruction support."""
    r = torch.ones_like(x)
    d = x.shape[-1]
    for k, gid in enumerate(ids):
        n = state.features[gid].shape[0]
        r[k, :n] = torch.as_tensor(
            bernoulli_mask(n, d, state.missing_rate, state.rng), dtype=x.dtype
        )
    return r


def run_training(state: TrainState, epochs: int, log_path: str | Path | None = None) -> TrainState:
    """Advance the adversarial loop by ``epochs`` epochs (early stop on patience)."""
    log_fh = open(log_path, "a") if log_path else None
    try:
        for _ in range(epochs):
            order = [int(i) for i in state.rng.permutation(state.split.train_ids)]
            stats = {"d_loss": [], "g_loss": [], "recon": [], "gp": []}
            for lo in range(0, len(order), state.batch_size):
                ids = order[lo : lo + state.batch_size]
                x, adj, n_valid = pad_graph_batch(
                    [state.features[i] for i in ids],
                    [state.adjacencies[i] for i in ids],
                    state.n_max,
                )
                r = _fresh_masks(state, ids, x)
                d_loss_val = gp_val = 0.0
                if state.adversarial:
                    for _ in range(state.ttur_cfg.d_steps_per_g):
                        with torch.no_grad():
                            x_t = state.generator(x, r, adj, n_valid)
                        fake = compose_imputation(x, r, x_t)
                        real_in = _critic_input(state, x, r)
                        fake_in = _critic_input(state, fake, r)
                        if not state.critic_cfg.judge_composite:
                            fake_in = _critic_input(state, x_t, r)
                        v_fake = state.critic.value(fake_in, adj, n_valid)
                        v_real = state.critic.value(real_in, adj, n_valid)
                        eps = torch.as_tensor(state.rng.random(x.shape[0]), dtype=x.dtype)
                        gp = gradient_penalty(
                            state.critic, real_in, fake_in, adj, eps=eps, n_valid=n_valid
                        )
                        d_loss = (v_fake - v_real).mean() + state.loss_cfg.lambda_gp * gp.mean()
                        state.opt_d.zero_grad()
                        d_loss.backward()
                        state.opt_d.step()
                        d_loss_val = float(d_loss.detach())
                        gp_val = float(gp.detach().mean())

                x_t = state.generator(x, r, adj, n_valid)
                rec = reconstruction_loss(x, x_t, r, state.loss_cfg.recon_norm)
                if state.adversarial:
                    fake = compose_imputation(x, r, x_t)
                    fake_in = fake if state.critic_cfg.judge_composite else x_t
                    fake_in = _critic_input(state, fake_in, r)
                    adv = -state.critic.value(fake_in, adj, n_valid).mean()
                    g_loss = adv + state.loss_cfg.lambda_r * rec
                else:
                    g_loss = rec
                state.opt_g.zero_grad()
                g_loss.backward()
                state.opt_g.step()

                g_loss_val = float(g_loss.detach())
                rec_val = float(rec.detach())
                if not all(map(math.isfinite, (d_loss_val, g_loss_val, rec_val))):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {state.epoch}: "
                        f"d_loss={d_loss_val} g_loss={g_loss_val} recon={rec_val}"
                    )
                stats["d_loss"].append(d_loss_val)
                stats["g_loss"].append(g_loss_val)
                stats["recon"].append(rec_val)
                stats["gp"].append(gp_val)

            state.epoch += 1
            val_rmse = _validation_rmse(state)
            record = {
                "epoch": state.epoch,
                "d_loss": float(np.mean(stats["d_loss"])),
                "g_loss": float(np.mean(stats["g_loss"])),
                "recon": float(np.mean(stats["recon"])),
                "gp": float(np.mean(stats["gp"])),
                "alpha": state.alpha,
                "val_rmse": val_rmse,
            }
            state.history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()

            improved = math.isnan(val_rmse) or val_rmse < state.best_val_rmse
            if improved:
                if not math.isnan(val_rmse):
                    state.best_val_rmse = val_rmse
                state.best_epoch = state.epoch
                state.best_generator_state = _snapshot(state.generator)
                state._invalidate_best()
                state.epochs_since_best = 0
            else:
                state.epochs_since_best += 1
                if state.epochs_since_best >= state.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    return state


def train(
    graphs: list[Graph],
    split: DatasetSplit,
    gen_cfg: GeneratorConfig,
    critic_cfg: CriticConfig,
    loss_cfg: LossConfig,
    ttur_cfg: TTURConfig,
    *,
    epochs: int,
    seed: int,
    missing_rate: float,
    val_missing_rate: float | None = None,
    batch_size: int = 128,
    patience: int = 50,
    adversarial: bool = True,
    log_path: str | Path | None = None,
) -> TrainState:
    state = init_train_state(
        graphs,
        split,
        gen_cfg,
        critic_cfg,
        loss_cfg,
        ttur_cfg,
        seed=seed,
        missing_rate=missing_rate,
        val_missing_rate=val_missing_rate,
        batch_size=batch_size,
        patience=patience,
        adversarial=adversarial,
    )
    return run_training(state, epochs, log_path=log_path)


def impute(state: TrainState, graph: Graph, mask: np.ndarray) -> np.ndarray:
    """Impute one graph with the best-validation generator, in original units.

    Observed entries are returned verbatim.
    """
    if graph.num_features != state.gen_cfg.in_features:
        raise ValueError(
            f"graph has {graph.num_features} features, model expects "
            f"{state.gen_cfg.in_features}"
        )
    if graph.num_nodes > state.n_max:
        raise ValueError(f"graph has {graph.num_nodes} nodes, model built for <= {state.n_max}")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != graph.node_features.shape:
        raise ValueError("mask shape does not match graph features")
    x_raw = graph.node_features
    x_norm = torch.as_tensor(state.norm_stats.transform(x_raw))
    r = torch.as_tensor(mask)
    adj = torch.as_tensor(graph.dense_adjacency())
    module = state.best_generator()
    with torch.no_grad():
        x_t = module(x_norm, r, adj)
    x_t_raw = state.norm_stats.inverse(x_t.numpy())
    return compose_imputation(x_raw, mask, x_t_raw)


def impute_normalized(state: TrainState, graph: Graph, mask: np.ndarray) -> np.ndarray:
    """Composite imputation in normalized units (for metric computation)."""
    x_norm = torch.as_tensor(state.norm_stats.transform(graph.node_features))
    r = torch.as_tensor(np.asarray(mask, dtype=np.float64))
    adj = torch.as_tensor(graph.dense_adjacency())
    module = state.best_generator()
    with torch.no_grad():
        x_t = module(x_norm, r, adj)
    return compose_imputation(x_norm.numpy(), np.asarray(mask, dtype=np.float64), x_t.numpy())


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def _gen_cfg_to_dict(cfg: GeneratorConfig) -> dict:
    return {
        "paths": cfg.paths,
        "alpha_init": cfg.alpha_init,
        "graph_path": asdict(cfg.graph_path) if cfg.graph_path else None,
        "mlp_path": asdict(cfg.mlp_path) if cfg.mlp_path else None,
    }


def _gen_cfg_from_dict(d: dict) -> GeneratorConfig:
    return GeneratorConfig(
        paths=d["paths"],
        alpha_init=d["alpha_init"],
        graph_path=GraphPathConfig(**d["graph_path"]) if d["graph_path"] else None,
        mlp_path=MlpPathConfig(**d["mlp_path"]) if d["mlp_path"] else None,
    )


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "gen_cfg": _gen_cfg_to_dict(state.gen_cfg),
        "critic_cfg": asdict(state.critic_cfg),
        "loss_cfg": asdict(state.loss_cfg),
        "ttur_cfg": asdict(state.ttur_cfg),
        "generator": state.generator.state_dict(),
        "critic": state.critic.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "rng_state": state.rng.bit_generator.state,
        "epoch": state.epoch,
        "history": state.history,
        "best_val_rmse": state.best_val_rmse,
        "best_epoch": state.best_epoch,
        "best_generator_state": state.best_generator_state,
        "epochs_since_best": state.epochs_since_best,
        "norm_min": state.norm_stats.per_feature_min,
        "norm_max": state.norm_stats.per_feature_max,
        "split": {
            "train_ids": state.split.train_ids,
            "val_ids": state.split.val_ids,
            "test_ids": state.split.test_ids,
            "seed": state.split.seed,
        },
        "seed": state.seed,
        "missing_rate": state.missing_rate,
        "val_missing_rate": state.val_missing_rate,
        "batch_size": state.batch_size,
        "patience": state.patience,
        "adversarial": state.adversarial,
        "val_masks": state.val_masks,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path, graphs: list[Graph]) -> TrainState:
    """Rebuild a TrainState from a checkpoint plus the original dataset."""
    payload = torch.load(path, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    gen_cfg = _gen_cfg_from_dict(payload["gen_cfg"])
    critic_cfg = CriticConfig(**payload["critic_cfg"])
    loss_cfg = LossConfig(**payload["loss_cfg"])
    ttur_cfg = TTURConfig(**payload["ttur_cfg"])

    generator = DualPathGenerator(gen_cfg).double()
    generator.load_state_dict(payload["generator"])
    critic = SubgraphCritic(critic_cfg).double()
    critic.load_state_dict(payload["critic"])
    opt_g = _build_optimizer(generator.parameters(), ttur_cfg, ttur_cfg.lr_g)
    opt_g.load_state_dict(payload["opt_g"])
    opt_d = _build_optimizer(critic.parameters(), ttur_cfg, ttur_cfg.lr_d)
    opt_d.load_state_dict(payload["opt_d"])
    rng = make_rng(payload["seed"], _STREAM_TRAIN)
    rng.bit_generator.state = payload["rng_state"]

    stats = NormStats(payload["norm_min"], payload["norm_max"])
    split = DatasetSplit(**payload["split"])
    state = TrainState(
        generator=generator,
        critic=critic,
        opt_g=opt_g,
        opt_d=opt_d,
        rng=rng,
        gen_cfg=gen_cfg,
        critic_cfg=critic_cfg,
        loss_cfg=loss_cfg,
        ttur_cfg=ttur_cfg,
        norm_stats=stats,
        split=split,
        seed=payload["seed"],
        missing_rate=payload["missing_rate"],
        val_missing_rate=payload["val_missing_rate"],
        batch_size=payload["batch_size"],
        patience=payload["patience"],
        adversarial=payload["adversarial"],
        n_max=gen_cfg.n_max,
        features=[stats.transform(g.node_features) for g in graphs],
        adjacencies=[g.dense_adjacency() for g in graphs],
        val_masks=payload["val_masks"],
        epoch=payload["epoch"],
        history=payload["history"],
        best_val_rmse=payload["best_val_rmse"],
        best_epoch=payload["best_epoch"],
        best_generator_state=payload["best_generator_state"],
        epochs_since_best=payload["epochs_since_best"],
    )
    return state
