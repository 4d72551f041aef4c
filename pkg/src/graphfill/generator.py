"""Dual-path imputation generator: a graph U-Net path, an MLP U-Net path, and
an alpha-weighted convex combination of the two.

Both paths receive the masked feature matrix concatenated with the mask along
the feature axis (2D input channels), so the network can tell observed zeros
from missing entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .layers import (
    GCNLayer,
    LEConvScore,
    Mixer,
    _as_batch,
    full_valid,
    graph_pool,
    graph_unpool,
    mask_rows,
    node_mix,
    pool_size,
    restrict_adjacency,
    valid_mask,
)


@dataclass
class GraphPathConfig:
    in_features: int
    hidden_dim: int
    n_max: int
    depth: int = 2
    pool_ratio: float = 0.5
    leaky_slope: float = 0.2
    convs_per_level: int = 1
    use_node_mix: bool = True
    use_skips: bool = True
    skip_merge: str = "concat"  # or "add"
    share_node_mix: bool = False
    augment_pooled_adjacency: bool = False
    node_mix_hidden: int | None = None

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0.0 < self.pool_ratio <= 1.0:
            raise ValueError("pool_ratio must be in (0, 1]")
        if self.skip_merge not in ("concat", "add"):
            raise ValueError(f"unknown skip_merge '{self.skip_merge}'")
        if self.convs_per_level < 1:
            raise ValueError("convs_per_level must be >= 1")


@dataclass
class MlpPathConfig:
    in_features: int
    hidden_dim: int
    n_max: int
    depth: int = 2
    node_bottleneck: int = 1
    leaky_slope: float = 0.2
    use_skips: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 1 <= self.node_bottleneck <= self.n_max:
            raise ValueError("node_bottleneck must be in [1, n_max]")

    def node_sizes(self) -> list[int]:
        """Node-axis widths per level: halved each level, floored at the bottleneck."""
        sizes = [self.n_max]
        for _ in range(self.depth):
            sizes.append(max(self.node_bottleneck, pool_size(sizes[-1], 0.5)))
        return sizes


@dataclass
class GeneratorConfig:
    paths: str = "dual"  # dual | graph | mlp
    alpha_init: float = 0.5
    graph_path: GraphPathConfig | None = None
    mlp_path: MlpPathConfig | None = None

    def __post_init__(self):
        if self.paths not in ("dual", "graph", "mlp"):
            raise ValueError(f"unknown paths mode '{self.paths}'")
        if self.paths in ("dual", "graph") and self.graph_path is None:
            raise ValueError("graph_path config required")
        if self.paths in ("dual", "mlp") and self.mlp_path is None:
            raise ValueError("mlp_path config required")

    @property
    def in_features(self) -> int:
        cfg = self.graph_path or self.mlp_path
        return cfg.in_features

    @property
    def n_max(self) -> int:
        cfg = self.graph_path or self.mlp_path
        return cfg.n_max


class GraphUnetPath(nn.Module):
    """Encoder of (GCN -> node-mix -> pool) levels mirrored by a decoder of
    (unpool -> skip merge -> GCN -> node-mix) levels; pooling indices are
    reused by the matching unpool."""

    def __init__(self, cfg: GraphPathConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_dim
        mix_hidden = cfg.node_mix_hidden or cfg.n_max

        def make_convs(first_in):
            dims = [first_in] + [h] * cfg.convs_per_level
            return nn.ModuleList(GCNLayer(dims[i], dims[i + 1]) for i in range(cfg.convs_per_level))

        self.enc_convs = nn.ModuleList(
            nn.ModuleList(make_convs(2 * cfg.in_features if l == 0 else h))
            for l in range(cfg.depth)
        )
        self.dec_convs = nn.ModuleList(
            nn.ModuleList(make_convs(h)) for _ in range(cfg.depth)
        )
        self.scorers = nn.ModuleList(LEConvScore(h) for _ in range(cfg.depth))
        if cfg.use_node_mix:
            if cfg.share_node_mix:
                shared = Mixer(cfg.n_max, mix_hidden, cfg.n_max, cfg.leaky_slope)
                self.enc_mix = nn.ModuleList(shared for _ in range(cfg.depth))
                self.dec_mix = nn.ModuleList(shared for _ in range(cfg.depth))
            else:
                self.enc_mix = nn.ModuleList(
                    Mixer(cfg.n_max, mix_hidden, cfg.n_max, cfg.leaky_slope)
                    for _ in range(cfg.depth)
                )
                self.dec_mix = nn.ModuleList(
                    Mixer(cfg.n_max, mix_hidden, cfg.n_max, cfg.leaky_slope)
                    for _ in range(cfg.depth)
                )
        if cfg.use_skips and cfg.skip_merge == "concat":
            self.merges = nn.ModuleList(nn.Linear(2 * h, h) for _ in range(cfg.depth))
        self.head = nn.Linear(h, cfg.in_features)

    def _node_mix_padded(self, x: Tensor, n_valid: Tensor, mixer: Mixer) -> Tensor:
        b, k, h = x.shape
        n_max = self.cfg.n_max
        if k < n_max:
            x = torch.cat([x, x.new_zeros(b, n_max - k, h)], dim=1)
        out = node_mix(x, valid_mask(n_valid, n_max).to(x.dtype), mixer)
        return out[:, :k]

    def forward(self, x_in: Tensor, adjacency: Tensor, n_valid: Tensor | None = None) -> Tensor:
        cfg = self.cfg
        (x, adj), squeeze = _as_batch(x_in, adjacency)
        if n_valid is None:
            n_valid = full_valid(x.shape[0], x.shape[1], device=x.device)
        act = nn.functional.leaky_relu

        skips = []
        for level in range(cfg.depth):
            for conv in self.enc_convs[level]:
                x = act(conv(x, adj), cfg.leaky_slope)
                x = mask_rows(x, n_valid)
            if cfg.use_node_mix:
                x = self._node_mix_padded(x, n_valid, self.enc_mix[level])
            skips.append((x, adj, n_valid))
            pooled = graph_pool(x, adj, cfg.pool_ratio, self.scorers[level], n_valid)
            pooled_adj = pooled.pooled_adjacency
            if cfg.augment_pooled_adjacency:
                two_hop = ((adj + adj @ adj) > 0).to(adj.dtype)
                two_hop = two_hop * (1.0 - torch.eye(adj.shape[-1], dtype=adj.dtype))
                pooled_adj = restrict_adjacency(two_hop, pooled.idx)
                keep = pooled.slot_mask.to(adj.dtype)
                pooled_adj = pooled_adj * keep.unsqueeze(-1) * keep.unsqueeze(-2)
            skips[-1] += (pooled.idx, pooled.slot_mask)
            x, adj, n_valid = pooled.pooled_features, pooled_adj, pooled.n_valid

        for level in reversed(range(cfg.depth)):
            skip_x, skip_adj, skip_valid, idx, slot_mask = skips[level]
            x = graph_unpool(x, idx, skip_x.shape[1], slot_mask)
            if cfg.use_skips:
                if cfg.skip_merge == "concat":
                    x = self.merges[level](torch.cat([x, skip_x], dim=-1))
                else:
                    x = x + skip_x
            for conv in self.dec_convs[level]:
                x = act(conv(x, skip_adj), cfg.leaky_slope)
                x = mask_rows(x, skip_valid)
            if cfg.use_node_mix:
                x = self._node_mix_padded(x, skip_valid, self.dec_mix[level])
            adj, n_valid = skip_adj, skip_valid

        out = mask_rows(self.head(x), n_valid)
        return out[0] if squeeze else out


class MlpUnetPath(nn.Module):
    """Feature-mix / node-mix U-Net on the padded node grid; adjacency-free.

    The encoder's node-mix layers compress the node axis level by level, the
    decoder's expand it back; skip connections add same-shape encoder
    activations into the decoder.
    """

    def __init__(self, cfg: MlpPathConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_dim
        sizes = cfg.node_sizes()
        self.sizes = sizes
        self.enc_feature_mix = nn.ModuleList(
            Mixer(2 * cfg.in_features if l == 0 else h, h, h, cfg.leaky_slope)
            for l in range(cfg.depth)
        )
        self.enc_node_mix = nn.ModuleList(
            Mixer(sizes[l], sizes[l], sizes[l + 1], cfg.leaky_slope)
            for l in range(cfg.depth)
        )
        self.dec_node_mix = nn.ModuleList(
            Mixer(sizes[l + 1], sizes[l + 1], sizes[l], cfg.leaky_slope)
            for l in range(cfg.depth)
        )
        self.dec_feature_mix = nn.ModuleList(
            Mixer(h, h, h, cfg.leaky_slope) for _ in range(cfg.depth)
        )
        self.head = nn.Linear(h, cfg.in_features)

    def forward(self, x_in: Tensor, n_valid: Tensor | None = None) -> Tensor:
        cfg = self.cfg
        (x,), squeeze = _as_batch(x_in)
        if x.shape[1] != cfg.n_max:
            raise ValueError(f"expected padded input of {cfg.n_max} rows, got {x.shape[1]}")
        if n_valid is None:
            n_valid = full_valid(x.shape[0], cfg.n_max, device=x.device)
        vm = valid_mask(n_valid, cfg.n_max).to(x.dtype)
        ones = torch.ones_like(vm)

        x = x * vm.unsqueeze(-1)
        skips = []
        for level in range(cfg.depth):
            x = self.enc_feature_mix[level](x)
            if self.sizes[level] == cfg.n_max:
                x = x * vm.unsqueeze(-1)  # rows are still node-aligned here
            skips.append(x)
            x = node_mix(x, ones[:, : self.sizes[level]], self.enc_node_mix[level])
        for level in reversed(range(cfg.depth)):
            x = node_mix(x, ones[:, : self.sizes[level + 1]], self.dec_node_mix[level])
            if cfg.use_skips:
                x = x + skips[level]
            x = self.dec_feature_mix[level](x)
        out = self.head(x) * vm.unsqueeze(-1)
        return out[0] if squeeze else out


class DualPathGenerator(nn.Module):
    """alpha * mlp_path + (1 - alpha) * graph_path, alpha clamped to [0, 1]."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.graph_path = GraphUnetPath(cfg.graph_path) if cfg.paths in ("dual", "graph") else None
        self.mlp_path = MlpUnetPath(cfg.mlp_path) if cfg.paths in ("dual", "mlp") else None
        if cfg.paths == "dual":
            self.alpha_raw = nn.Parameter(torch.tensor(float(cfg.alpha_init)))
        else:
            self.alpha_raw = None

    def alpha(self) -> Tensor:
        if self.cfg.paths == "graph":
            return torch.tensor(0.0)
        if self.cfg.paths == "mlp":
            return torch.tensor(1.0)
        return self.alpha_raw.clamp(0.0, 1.0)

    def forward(
        self,
        x: Tensor,
        r: Tensor,
        adjacency: Tensor,
        n_valid: Tensor | None = None,
    ) -> Tensor:
        if x.shape != r.shape:
            raise ValueError(f"features {tuple(x.shape)} vs mask {tuple(r.shape)}")
        x_in = torch.cat([x * r, r], dim=-1)
        if self.cfg.paths == "graph":
            return self.graph_path(x_in, adjacency, n_valid)
        (xb,), squeeze = _as_batch(x_in)
        n_max = self.cfg.n_max
        if xb.shape[1] > n_max:
            raise ValueError(f"graph with {xb.shape[1]} nodes exceeds n_max={n_max}")
        if n_valid is None:
            n_valid = full_valid(xb.shape[0], xb.shape[1], device=xb.device)
        pad = n_max - xb.shape[1]
        x_pad = torch.cat([xb, xb.new_zeros(xb.shape[0], pad, xb.shape[-1])], dim=1)
        mlp_out = self.mlp_path(x_pad, n_valid)[:, : xb.shape[1]]
        if squeeze:
            mlp_out = mlp_out[0]
        if self.cfg.paths == "mlp":
            return mlp_out
        graph_out = self.graph_path(x_in, adjacency, n_valid if not squeeze else None)
        a = self.alpha()
        return a * mlp_out + (1.0 - a) * graph_out


def generator_forward(
    x: Tensor, r: Tensor, adjacency: Tensor, model: DualPathGenerator, n_valid: Tensor | None = None
) -> Tensor:
    return model(x, r, adjacency, n_valid)


def compose_imputation(x, r, x_tilde):
    """Keep observed entries, take generated values at missing ones."""
    if x.shape != r.shape or x.shape != x_tilde.shape:
        raise ValueError(
            f"shape mismatch: x {tuple(x.shape)}, r {tuple(r.shape)}, "
            f"x_tilde {tuple(x_tilde.shape)}"
        )
    return r * x + (1 - r) * x_tilde
