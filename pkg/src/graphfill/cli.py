"""Command-line entry point: train, impute, eval, sweep, ablate.

Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, training
from .config import (
    ABLATION_AXES,
    DEFAULT_SWEEP_RATES,
    ConfigError,
    RunConfig,
    build_model_configs,
    dump_resolved_config,
    effective_batch_size,
    load_graphs,
    load_run_config,
)
from .data import DatasetSplit, export_matrix_csv, sample_mask, save_matrices, split_dataset
from .evaluation import MODEL_METHOD


def _parse_rates(values: list[str] | None) -> list[float] | None:
    if not values:
        return None
    rates = []
    for v in values:
        for tok in v.split(","):
            if tok:
                rates.append(float(tok))
    return rates


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphfill", description="Graph feature imputation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")

    p_train = sub.add_parser("train", help="train the adversarial imputer")
    common(p_train)

    p_impute = sub.add_parser("impute", help="impute a dataset with a trained checkpoint")
    common(p_impute)
    p_impute.add_argument("--checkpoint", required=True)
    p_impute.add_argument("--rate", type=float, default=None, help="mask rate (default config)")

    p_eval = sub.add_parser("eval", help="evaluate one method at one missing rate")
    common(p_eval)
    p_eval.add_argument(
        "--method",
        default=MODEL_METHOD,
        choices=(MODEL_METHOD, "mean", "knn", "zero"),
    )
    p_eval.add_argument("--rate", type=float, default=None)

    p_sweep = sub.add_parser("sweep", help="missing-rate sweep")
    common(p_sweep)
    p_sweep.add_argument("--rate", action="append", default=None, help="rate(s), repeatable")
    p_sweep.add_argument("--method", default=MODEL_METHOD)
    p_sweep.add_argument("--parallel", type=int, default=1)

    p_ablate = sub.add_parser("ablate", help="run one ablation axis")
    common(p_ablate)
    p_ablate.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    return parser


def _load(args) -> tuple[RunConfig, list, str]:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    graphs, name = load_graphs(cfg.dataset)
    return cfg, graphs, name


def _make_split(cfg: RunConfig, graphs) -> DatasetSplit:
    if len(graphs) >= 3:
        return split_dataset(len(graphs), seed=cfg.seed)
    # single-graph dataset: the one graph is train, val and test at once
    ids = list(range(len(graphs)))
    return DatasetSplit(train_ids=ids, val_ids=[], test_ids=ids, seed=cfg.seed)


def _trainer_settings(cfg: RunConfig, graphs) -> dict:
    n_max = max(g.num_nodes for g in graphs)
    gen_cfg, critic_cfg = build_model_configs(
        cfg, graphs[0].num_features, n_max, single_graph=len(graphs) == 1
    )
    return {
        "gen_cfg": gen_cfg,
        "critic_cfg": critic_cfg,
        "loss_cfg": cfg.loss,
        "ttur_cfg": cfg.ttur,
        "epochs": cfg.epochs,
        "batch_size": effective_batch_size(cfg, graphs),
        "patience": cfg.patience,
        "adversarial": True,
    }


def cmd_train(args) -> int:
    cfg, graphs, _ = _load(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_resolved_config(cfg, out / "resolved_config.yaml")
    split = _make_split(cfg, graphs)
    settings = _trainer_settings(cfg, graphs)
    state = training.train(
        graphs,
        split,
        settings["gen_cfg"],
        settings["critic_cfg"],
        settings["loss_cfg"],
        settings["ttur_cfg"],
        epochs=cfg.epochs,
        seed=cfg.seed,
        missing_rate=cfg.missing_rate,
        batch_size=settings["batch_size"],
        patience=cfg.patience,
        log_path=out / "train_log.jsonl",
    )
    training.save_checkpoint(state, out / "checkpoint.pt")
    last = state.history[-1] if state.history else {}
    print(
        f"trained {state.epoch} epochs; best val_rmse={state.best_val_rmse:.6g} "
        f"(epoch {state.best_epoch}); final alpha={state.alpha:.4f}"
    )
    if last:
        print(f"last epoch: {last}")
    print(f"checkpoint: {out / 'checkpoint.pt'}")
    return 0


def cmd_impute(args) -> int:
    cfg, graphs, _ = _load(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = training.load_checkpoint(args.checkpoint, graphs)
    rate = cfg.missing_rate if args.rate is None else args.rate
    bundles = {}
    for i, g in enumerate(graphs):
        mask = sample_mask(g.num_nodes, g.num_features, rate, seed_for_graph(cfg.seed, i))
        imputed = training.impute(state, g, mask)
        bundles[f"imputed_{i:04d}"] = imputed
        bundles[f"mask_{i:04d}"] = mask
        export_matrix_csv(out / f"imputed_{i:04d}.csv", imputed)
    save_matrices(out / "imputed.npz", **bundles)
    print(f"imputed {len(graphs)} graphs at rate {rate} -> {out / 'imputed.npz'}")
    return 0


def seed_for_graph(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, 0xA5, index]).generate_state(1)[0])


def cmd_eval(args) -> int:
    cfg, graphs, name = _load(args)
    out = Path(cfg.out_dir)
    rate = cfg.missing_rate if args.rate is None else args.rate
    trainer = _trainer_settings(cfg, graphs) if args.method == MODEL_METHOD else None
    report = evaluation.run_sweep(
        graphs,
        name,
        args.method,
        [rate],
        cfg.trials,
        cfg.seed,
        trainer=trainer,
        knn_cfg=cfg.knn,
        out_dir=out,
    )
    evaluation.emit_report(report.results, out)
    mean, std = report.aggregate()[rate]
    print(f"{args.method} on {name} at rate {rate}: rmse {mean:.6g} +- {std:.6g} "
          f"({cfg.trials} trials)")
    return 0


def _sweep_worker(payload):
    graphs, name, method, rate, trial_seed, trainer, knn_cfg = payload
    return evaluation.run_trial(
        graphs, name, method, rate, trial_seed, trainer=trainer, knn_cfg=knn_cfg
    )


def cmd_sweep(args) -> int:
    cfg, graphs, name = _load(args)
    out = Path(cfg.out_dir)
    rates = _parse_rates(args.rate) or list(DEFAULT_SWEEP_RATES)
    trainer = _trainer_settings(cfg, graphs) if args.method == MODEL_METHOD else None
    if args.parallel > 1:
        jobs = []
        from .data import derive_seed

        for ri, rate in enumerate(rates):
            for t in range(cfg.trials):
                jobs.append(
                    (graphs, name, args.method, rate, derive_seed(cfg.seed, ri, t), trainer,
                     cfg.knn)
                )
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_sweep_worker, jobs))
        report = evaluation.SweepReport(results=results, trials_per_group=cfg.trials)
        evaluation.write_results_csv(out / "results.csv", results)
    else:
        report = evaluation.run_sweep(
            graphs,
            name,
            args.method,
            rates,
            cfg.trials,
            cfg.seed,
            trainer=trainer,
            knn_cfg=cfg.knn,
            out_dir=out,
        )
    evaluation.emit_report(report.results, out)
    for rate, (mean, std) in report.aggregate().items():
        print(f"rate {rate}: rmse {mean:.6g} +- {std:.6g}")
    return 0


def _ablation_config(cfg: RunConfig, axis: str, variant: str) -> RunConfig:
    out = dataclasses.replace(cfg)
    out.model = dataclasses.replace(cfg.model)
    out.loss = dataclasses.replace(cfg.loss)
    if axis == "path":
        out.model.paths = variant
    elif axis == "skip":
        out.model.use_skips = variant == "with_skips"
    elif axis == "norm":
        out.loss.recon_norm = variant
    elif axis == "hops":
        if variant == "graph":
            out.model.disc_mode = "graph"
            out.model.disc_hops = 2
        else:
            out.model.disc_mode = "subgraph"
            out.model.disc_hops = int(variant)
    return out


def cmd_ablate(args) -> int:
    cfg, graphs, name = _load(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    all_results = []
    for variant in ABLATION_AXES[args.axis]:
        vcfg = _ablation_config(cfg, args.axis, variant)
        trainer = _trainer_settings(vcfg, graphs)
        if args.axis == "gan":
            trainer["adversarial"] = variant == "adversarial"
        report = evaluation.run_sweep(
            graphs,
            name,
            MODEL_METHOD,
            [cfg.missing_rate],
            cfg.trials,
            cfg.seed,
            trainer=trainer,
            knn_cfg=cfg.knn,
        )
        mean, std = report.aggregate()[cfg.missing_rate]
        rows.append((variant, mean, std))
        for r in report.results:
            r.method = f"{MODEL_METHOD}[{args.axis}={variant}]"
        all_results.extend(report.results)
        print(f"{args.axis}={variant}: rmse {mean:.6g} +- {std:.6g}")
    import csv as _csv

    with open(out / f"ablation_{args.axis}.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["variant", "rmse_mean", "rmse_std"])
        for variant, mean, std in rows:
            writer.writerow([variant, format(mean, ".10g"), format(std, ".10g")])
    evaluation.write_results_csv(out / "ablation_trials.csv", all_results)
    return 0


COMMANDS = {
    "train": cmd_train,
    "impute": cmd_impute,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = 2
    except training.TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        code = 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        code = 4
    if argv is None:
        sys.exit(code)
    return code
