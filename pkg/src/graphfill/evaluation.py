"""Masked-entry RMSE, downstream classification, missing-rate sweeps, reports.

RMSE is computed in normalized feature units (the raw-unit value is reported
alongside for transparency).  Sweep trials are independent: each gets a fresh
split and fresh masks derived from the root seed.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import baselines, training
from .data import (
    DatasetSplit,
    Graph,
    apply_norm_stats,
    bernoulli_mask,
    derive_seed,
    fit_norm_stats,
    make_rng,
    split_dataset,
)
from .layers import GCNLayer, pad_graph_batch, valid_mask

MODEL_METHOD = "dual_path_gan"
BASELINE_METHODS = ("mean", "knn", "zero")


def rmse(x_true: np.ndarray, x_imputed: np.ndarray, r: np.ndarray) -> float:
    """Root mean squared error over missing entries (r == 0)."""
    x_true = np.asarray(x_true, dtype=np.float64)
    x_imputed = np.asarray(x_imputed, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if x_true.shape != x_imputed.shape or x_true.shape != r.shape:
        raise ValueError("rmse inputs must share one shape")
    miss = r == 0
    if not miss.any():
        raise ValueError("rmse is undefined without missing entries")
    resid = (x_true - x_imputed)[miss]
    return float(np.sqrt(np.mean(resid * resid)))


def pooled_rmse(
    truths: list[np.ndarray], imputations: list[np.ndarray], masks: list[np.ndarray]
) -> float:
    """RMSE pooled over the missing entries of several matrices."""
    sq, count = 0.0, 0
    for x, xi, r in zip(truths, imputations, masks):
        miss = np.asarray(r) == 0
        resid = (np.asarray(x) - np.asarray(xi))[miss]
        sq += float((resid * resid).sum())
        count += int(miss.sum())
    if count == 0:
        raise ValueError("rmse is undefined without missing entries")
    return math.sqrt(sq / count)


@dataclass
class TrialResult:
    method: str
    dataset: str
    missing_rate: float
    seed: int
    rmse: float
    rmse_raw: float = math.nan
    final_alpha: float | None = None
    wall_time_s: float = 0.0

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("rmse must be >= 0")


@dataclass
class SweepReport:
    results: list[TrialResult]
    trials_per_group: int

    def rates(self) -> list[float]:
        return sorted({t.missing_rate for t in self.results})

    def group(self, rate: float) -> list[TrialResult]:
        rows = [t for t in self.results if t.missing_rate == rate]
        if len(rows) != self.trials_per_group:
            raise ValueError(
                f"rate {rate} has {len(rows)} trials, expected {self.trials_per_group}"
            )
        return rows

    def aggregate(self) -> dict[float, tuple[float, float]]:
        out = {}
        for rate in self.rates():
            vals = np.array([t.rmse for t in self.group(rate)])
            out[rate] = (float(vals.mean()), float(vals.std()))
        return out

    def mean_alpha(self, rate: float) -> float:
        vals = [t.final_alpha for t in self.group(rate) if t.final_alpha is not None]
        if not vals:
            raise ValueError(f"no recorded alpha values at rate {rate}")
        return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Downstream classification
# ---------------------------------------------------------------------------

class _GraphClassifier(nn.Module):
    """2-layer GCN with mean-pool readout."""

    def __init__(self, in_dim: int, hidden: int, num_classes: int):
        super().__init__()
        self.conv1 = GCNLayer(in_dim, hidden)
        self.conv2 = GCNLayer(hidden, hidden)
        self.out = nn.Linear(hidden, num_classes)

    def forward(self, x, adj, n_valid):
        vm = valid_mask(n_valid, x.shape[1]).to(x.dtype)
        h = torch.relu(self.conv1(x, adj)) * vm.unsqueeze(-1)
        h = torch.relu(self.conv2(h, adj)) * vm.unsqueeze(-1)
        pooled = h.sum(dim=1) / n_valid.to(h.dtype).unsqueeze(-1)
        return self.out(pooled)


def downstream_accuracy(
    imputed_graphs: list[Graph],
    labels: list[int],
    split: DatasetSplit,
    seed: int,
    *,
    hidden: int = 64,
    epochs: int = 200,
) -> float:
    """Train a graph classifier on imputed train graphs, report test accuracy."""
    label_arr = np.asarray(labels)
    classes = sorted(set(int(v) for v in label_arr))
    if len(classes) < 2:
        raise ValueError("downstream classification needs at least two classes")
    remap = {c: i for i, c in enumerate(classes)}
    y = torch.tensor([remap[int(v)] for v in label_arr], dtype=torch.long)

    feats = [g.node_features for g in imputed_graphs]
    adjs = [g.dense_adjacency() for g in imputed_graphs]
    n_max = max(g.num_nodes for g in imputed_graphs)
    x, adj, n_valid = pad_graph_batch(feats, adjs, n_max)

    torch.manual_seed(seed)
    model = _GraphClassifier(x.shape[-1], hidden, len(classes)).double()
    opt = torch.optim.Adam(model.parameters(), lr=0.01)
    loss_fn = nn.CrossEntropyLoss()
    tr = torch.tensor(split.train_ids, dtype=torch.long)
    te = torch.tensor(split.test_ids, dtype=torch.long)
    for _ in range(epochs):
        opt.zero_grad()
        logits = model(x[tr], adj[tr], n_valid[tr])
        loss = loss_fn(logits, y[tr])
        loss.backward()
        opt.step()
    with torch.no_grad():
        pred = model(x[te], adj[te], n_valid[te]).argmax(dim=1)
    return float((pred == y[te]).double().mean())


# ---------------------------------------------------------------------------
# Sweep harness
# ---------------------------------------------------------------------------

_STREAM_TRIAL_MASK = 11


def run_trial(
    graphs: list[Graph],
    dataset_name: str,
    method: str,
    missing_rate: float,
    trial_seed: int,
    *,
    trainer: dict | None = None,
    knn_cfg: baselines.KnnConfig | None = None,
) -> TrialResult:
    """One train+eval run: fresh split, fresh test masks, one RMSE number."""
    t0 = time.perf_counter()
    split = split_dataset(len(graphs), seed=trial_seed)
    stats = fit_norm_stats([graphs[i] for i in split.train_ids])
    normed = apply_norm_stats(graphs, stats)
    masks = {
        tid: bernoulli_mask(
            graphs[tid].num_nodes,
            graphs[tid].num_features,
            missing_rate,
            make_rng(trial_seed, _STREAM_TRIAL_MASK, tid),
        )
        for tid in split.test_ids
    }

    final_alpha = None
    if method == MODEL_METHOD:
        if trainer is None:
            raise ValueError("model trials need trainer settings")
        state = training.train(
            graphs,
            split,
            trainer["gen_cfg"],
            trainer["critic_cfg"],
            trainer.get("loss_cfg") or training.LossConfig(),
            trainer.get("ttur_cfg") or training.TTURConfig(),
            epochs=trainer["epochs"],
            seed=trial_seed,
            missing_rate=missing_rate,
            batch_size=trainer.get("batch_size", 128),
            patience=trainer.get("patience", 50),
            adversarial=trainer.get("adversarial", True),
        )
        imputed_norm = [
            training.impute_normalized(state, graphs[tid], masks[tid]) for tid in split.test_ids
        ]
        imputed_raw = [training.impute(state, graphs[tid], masks[tid]) for tid in split.test_ids]
        if state.gen_cfg.paths == "dual":
            final_alpha = state.alpha
    elif method in ("mean", "knn"):
        train_mats = [normed[i].node_features for i in split.train_ids]
        train_masks = [np.ones_like(m) for m in train_mats]
        means = baselines.fit_feature_means(train_mats, train_masks)
        imputed_norm, imputed_raw = [], []
        for tid in split.test_ids:
            xn, r = normed[tid].node_features, masks[tid]
            if method == "mean":
                xi = baselines.mean_impute(xn, r, means)
            else:
                xi = baselines.knn_impute(xn, r, knn_cfg, feature_means=means)
            imputed_norm.append(xi)
            imputed_raw.append(stats.inverse(xi) * (1 - r) + graphs[tid].node_features * r)
    elif method == "zero":
        imputed_norm = [normed[tid].node_features * masks[tid] for tid in split.test_ids]
        imputed_raw = [graphs[tid].node_features * masks[tid] for tid in split.test_ids]
    else:
        raise ValueError(f"unknown method '{method}'")

    truth_norm = [normed[tid].node_features for tid in split.test_ids]
    truth_raw = [graphs[tid].node_features for tid in split.test_ids]
    mask_list = [masks[tid] for tid in split.test_ids]
    return TrialResult(
        method=method,
        dataset=dataset_name,
        missing_rate=missing_rate,
        seed=trial_seed,
        rmse=pooled_rmse(truth_norm, imputed_norm, mask_list),
        rmse_raw=pooled_rmse(truth_raw, imputed_raw, mask_list),
        final_alpha=final_alpha,
        wall_time_s=time.perf_counter() - t0,
    )


def run_sweep(
    graphs: list[Graph],
    dataset_name: str,
    method: str,
    rates: list[float],
    trials: int,
    seed: int,
    *,
    trainer: dict | None = None,
    knn_cfg: baselines.KnnConfig | None = None,
    out_dir: str | Path | None = None,
) -> SweepReport:
    """rates x trials grid of independent runs; partial results are persisted
    as they complete when out_dir is given."""
    if not rates:
        raise ValueError("rates must be nonempty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    results: list[TrialResult] = []
    partial_path = Path(out_dir) / "results.csv" if out_dir else None
    try:
        for ri, rate in enumerate(rates):
            for t in range(trials):
                trial_seed = derive_seed(seed, ri, t)
                result = run_trial(
                    graphs,
                    dataset_name,
                    method,
                    rate,
                    trial_seed,
                    trainer=trainer,
                    knn_cfg=knn_cfg,
                )
                results.append(result)
                if partial_path:
                    write_results_csv(partial_path, results)
    except Exception:
        if partial_path and results:
            write_results_csv(partial_path, results)
        raise
    return SweepReport(results=results, trials_per_group=trials)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

CSV_HEADER = [
    "method",
    "dataset",
    "missing_rate",
    "seed",
    "rmse_norm",
    "rmse_raw",
    "alpha_final",
    "wall_time_s",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_results_csv(path: str | Path, results: list[TrialResult]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for t in results:
            writer.writerow(
                [
                    t.method,
                    t.dataset,
                    _fmt(t.missing_rate),
                    t.seed,
                    _fmt(t.rmse),
                    _fmt(t.rmse_raw),
                    _fmt(t.final_alpha),
                    _fmt(t.wall_time_s),
                ]
            )


def write_summary_csv(path: str | Path, results: list[TrialResult]) -> None:
    groups: dict[tuple[str, str, float], list[TrialResult]] = {}
    for t in results:
        groups.setdefault((t.method, t.dataset, t.missing_rate), []).append(t)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "dataset", "missing_rate", "trials", "rmse_mean", "rmse_std",
             "alpha_mean"]
        )
        for (method, dataset, rate), rows in sorted(groups.items()):
            vals = np.array([t.rmse for t in rows])
            alphas = [t.final_alpha for t in rows if t.final_alpha is not None]
            writer.writerow(
                [
                    method,
                    dataset,
                    _fmt(rate),
                    len(rows),
                    _fmt(float(vals.mean())),
                    _fmt(float(vals.std())),
                    _fmt(float(np.mean(alphas)) if alphas else None),
                ]
            )


def emit_report(results: list[TrialResult], out_dir: str | Path) -> dict[str, Path]:
    """Write the raw-results CSV, the aggregate CSV, and the rate sweep plot."""
    if not results:
        raise ValueError("no results to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "results": out / "results.csv",
            "summary": out / "summary.csv",
            "plot": out / "sweep.svg",
        }
        write_results_csv(paths["results"], results)
        write_summary_csv(paths["summary"], results)
        _plot_sweep(paths["plot"], results)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return paths


def _plot_sweep(path: Path, results: list[TrialResult]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    methods = sorted({t.method for t in results})
    for method in methods:
        rows = [t for t in results if t.method == method]
        rates = sorted({t.missing_rate for t in rows})
        means = [np.mean([t.rmse for t in rows if t.missing_rate == r]) for r in rates]
        ax.plot(rates, means, marker="o", label=method)
    ax.set_xlabel("missing rate")
    ax.set_ylabel("RMSE (normalized)")
    alphas = [t for t in results if t.final_alpha is not None]
    if alphas:
        ax2 = ax.twinx()
        rates = sorted({t.missing_rate for t in alphas})
        means = [
            np.mean([t.final_alpha for t in alphas if t.missing_rate == r]) for r in rates
        ]
        ax2.plot(rates, means, marker="s", linestyle="--", color="gray", label="final alpha")
        ax2.set_ylabel("final alpha")
        ax2.set_ylim(0, 1)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
