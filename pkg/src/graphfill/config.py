"""Run configuration: one YAML file drives every command.

Hyperparameters are validated against the standard grids (hidden size, lambda_r,
generator learning rate, alpha init); out-of-grid values need the explicit
``allow_nonstandard: true`` override.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .baselines import KnnConfig
from .data import Graph, load_single_graph, load_tudataset, make_synthetic_dataset
from .discriminator import CriticConfig
from .generator import GeneratorConfig, GraphPathConfig, MlpPathConfig
from .training import LossConfig, TTURConfig

DATA_ROOT_ENV = "GRAPHFILL_DATA_ROOT"

HIDDEN_GRID = (128, 256, 512, 1024)
LAMBDA_R_GRID = (1.0, 10.0, 100.0)
LR_G_GRID = (0.01, 0.001, 0.0001)
ALPHA_INIT_GRID = (0.5, 0.7, 0.9)

DEFAULT_SWEEP_RATES = (0.1, 0.3, 0.5, 0.7, 0.99, 1.0)

ABLATION_AXES = {
    "path": ("dual", "graph", "mlp"),
    "skip": ("with_skips", "no_skips"),
    "gan": ("adversarial", "reconstruction_only"),
    "norm": ("l1", "l2"),
    "hops": ("0", "1", "2", "3", "graph"),
}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # tudataset | single | synthetic
    path: str | None = None
    name: str = "synthetic"
    num_graphs: int = 200
    num_nodes: int = 20
    num_features: int = 8
    synth_seed: int = 7

    def __post_init__(self):
        if self.kind not in ("tudataset", "single", "synthetic"):
            raise ConfigError(f"dataset.kind must be tudataset/single/synthetic, got '{self.kind}'")
        if self.kind != "synthetic" and not self.path:
            raise ConfigError(f"dataset.kind '{self.kind}' requires dataset.path")


@dataclass
class ModelConfig:
    paths: str = "dual"
    hidden_dim: int = 256
    depth: int = 2
    alpha_init: float = 0.5
    pool_ratio: float = 0.5
    leaky_slope: float = 0.2
    use_node_mix: bool = True
    use_skips: bool = True
    skip_merge: str = "concat"
    node_mix_hidden: int | None = None
    disc_hidden_dim: int = 256
    disc_hops: int = 2
    disc_mode: str = "subgraph"
    disc_use_node_mix: bool = True
    disc_condition_on_mask: bool = False
    disc_judge_composite: bool = True


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    ttur: TTURConfig = field(default_factory=TTURConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    missing_rate: float = 0.1
    trials: int = 5
    seed: int = 0
    epochs: int = 100
    batch_size: int = 128
    patience: int = 50
    out_dir: str = "runs/latest"
    allow_nonstandard: bool = False

    def validate_grids(self) -> None:
        if self.allow_nonstandard:
            return
        problems = []
        if self.model.hidden_dim not in HIDDEN_GRID:
            problems.append(f"model.hidden_dim={self.model.hidden_dim} not in {HIDDEN_GRID}")
        if self.model.disc_hidden_dim not in HIDDEN_GRID:
            problems.append(
                f"model.disc_hidden_dim={self.model.disc_hidden_dim} not in {HIDDEN_GRID}"
            )
        if float(self.loss.lambda_r) not in LAMBDA_R_GRID:
            problems.append(f"loss.lambda_r={self.loss.lambda_r} not in {LAMBDA_R_GRID}")
        if float(self.ttur.lr_g) not in LR_G_GRID:
            problems.append(f"ttur.lr_g={self.ttur.lr_g} not in {LR_G_GRID}")
        if float(self.model.alpha_init) not in ALPHA_INIT_GRID:
            problems.append(f"model.alpha_init={self.model.alpha_init} not in {ALPHA_INIT_GRID}")
        if problems:
            raise ConfigError(
                "out-of-grid hyperparameters (set allow_nonstandard: true to override): "
                + "; ".join(problems)
            )


def _build_section(cls, mapping: dict, section: str):
    import dataclasses

    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    try:
        return cls(**mapping)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{section}' section: {exc}") from exc


def run_config_from_mapping(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping at the top level")
    raw = dict(raw)
    sections = {
        "dataset": DatasetConfig,
        "model": ModelConfig,
        "loss": LossConfig,
        "ttur": TTURConfig,
        "knn": KnnConfig,
    }
    kwargs = {}
    for key, cls in sections.items():
        if key in raw:
            sub = raw.pop(key)
            if not isinstance(sub, dict):
                raise ConfigError(f"'{key}' section must be a mapping")
            kwargs[key] = _build_section(cls, sub, key)
    cfg = _build_section(RunConfig, {**raw, **kwargs}, "top level")
    cfg.validate_grids()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    return run_config_from_mapping(raw or {})


def dump_resolved_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(asdict(cfg), sort_keys=True))


def resolve_dataset_path(path: str) -> Path:
    p = Path(path)
    if not p.is_absolute():
        root = os.environ.get(DATA_ROOT_ENV)
        if root:
            p = Path(root) / p
    return p


def load_graphs(cfg: DatasetConfig) -> tuple[list[Graph], str]:
    if cfg.kind == "synthetic":
        graphs = make_synthetic_dataset(
            cfg.num_graphs, cfg.num_nodes, cfg.num_features, cfg.synth_seed, with_labels=True
        )
        return graphs, cfg.name
    path = resolve_dataset_path(cfg.path)
    if cfg.kind == "tudataset":
        return load_tudataset(path), cfg.name
    return [load_single_graph(path)], cfg.name


def effective_batch_size(cfg: RunConfig, graphs: list[Graph]) -> int:
    """Large-graph datasets fall back to batch size 2."""
    mean_nodes = sum(g.num_nodes for g in graphs) / len(graphs)
    if mean_nodes > 1000 and cfg.batch_size > 2:
        return 2
    return cfg.batch_size


def build_model_configs(
    cfg: RunConfig, num_features: int, n_max: int, *, single_graph: bool = False
) -> tuple[GeneratorConfig, CriticConfig]:
    """Instantiate generator/critic configs for a concrete dataset shape.

    Single-graph datasets drop the MLP path (alpha pinned to 0) and use the
    node-level critic.
    """
    m = cfg.model
    paths = "graph" if single_graph else m.paths
    graph_path = None
    if paths in ("dual", "graph"):
        graph_path = GraphPathConfig(
            in_features=num_features,
            hidden_dim=m.hidden_dim,
            n_max=n_max,
            depth=m.depth,
            pool_ratio=m.pool_ratio,
            leaky_slope=m.leaky_slope,
            use_node_mix=m.use_node_mix,
            use_skips=m.use_skips,
            skip_merge=m.skip_merge,
            node_mix_hidden=m.node_mix_hidden,
        )
    mlp_path = None
    if paths in ("dual", "mlp"):
        mlp_path = MlpPathConfig(
            in_features=num_features,
            hidden_dim=m.hidden_dim,
            n_max=n_max,
            depth=m.depth,
            leaky_slope=m.leaky_slope,
            use_skips=m.use_skips,
        )
    gen_cfg = GeneratorConfig(
        paths=paths, alpha_init=m.alpha_init, graph_path=graph_path, mlp_path=mlp_path
    )
    critic_cfg = CriticConfig(
        in_features=num_features,
        hidden_dim=m.disc_hidden_dim,
        n_max=n_max,
        hops=0 if single_graph else m.disc_hops,
        mode="subgraph" if single_graph else m.disc_mode,
        pool_ratio=m.pool_ratio,
        leaky_slope=m.leaky_slope,
        use_node_mix=m.disc_use_node_mix,
        condition_on_mask=m.disc_condition_on_mask,
        judge_composite=m.disc_judge_composite,
    )
    return gen_cfg, critic_cfg
