"""Hop-configurable subgraph critic.

Scores are per-pooled-node fidelity values: with ``hops`` pooling layers each
at ratio 0.5, a graph of N nodes yields ceil(N * 0.5^hops) scores.  hops=0 is
the node-level critic (one GCN + node-mix block, no pooling); ``graph`` mode
appends a fully connected scalar head to the 2-hop critic.
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
    mask_rows,
    node_mix,
    valid_mask,
)


@dataclass
class CriticConfig:
    in_features: int
    hidden_dim: int
    n_max: int
    hops: int = 2
    mode: str = "subgraph"  # or "graph"
    pool_ratio: float = 0.5
    leaky_slope: float = 0.2
    use_node_mix: bool = True
    condition_on_mask: bool = False
    judge_composite: bool = True
    node_mix_hidden: int | None = None

    def __post_init__(self):
        if self.hops < 0:
            raise ValueError("hops must be >= 0")
        if self.mode not in ("subgraph", "graph"):
            raise ValueError(f"unknown critic mode '{self.mode}'")
        if self.mode == "graph" and self.hops != 2:
            raise ValueError("graph mode is defined as a scalar head on the 2-hop critic")

    @property
    def input_dim(self) -> int:
        return 2 * self.in_features if self.condition_on_mask else self.in_features


class SubgraphCritic(nn.Module):
    def __init__(self, cfg: CriticConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_dim
        mix_hidden = cfg.node_mix_hidden or cfg.n_max
        num_blocks = max(cfg.hops, 1)
        self.convs = nn.ModuleList(
            GCNLayer(cfg.input_dim if b == 0 else h, h) for b in range(num_blocks)
        )
        if cfg.use_node_mix:
            self.mixers = nn.ModuleList(
                Mixer(cfg.n_max, mix_hidden, cfg.n_max, cfg.leaky_slope)
                for _ in range(num_blocks)
            )
        self.scorers = nn.ModuleList(LEConvScore(h) for _ in range(cfg.hops))
        self.score_head = nn.Linear(h, 1)
        if cfg.mode == "graph":
            self.graph_head = nn.Linear(1, 1)

    def _node_mix_padded(self, x: Tensor, n_valid: Tensor, mixer: Mixer) -> Tensor:
        b, k, h = x.shape
        n_max = self.cfg.n_max
        if k < n_max:
            x = torch.cat([x, x.new_zeros(b, n_max - k, h)], dim=1)
        out = node_mix(x, valid_mask(n_valid, n_max).to(x.dtype), mixer)
        return out[:, :k]

    def subgraph_scores(
        self, x: Tensor, adjacency: Tensor, n_valid: Tensor | None = None
    ) -> tuple[Tensor, Tensor]:
        """Per-subgraph fidelity scores plus the valid-slot mask."""
        cfg = self.cfg
        (xb, adj), squeeze = _as_batch(x, adjacency)
        if n_valid is None:
            n_valid = full_valid(xb.shape[0], xb.shape[1], device=xb.device)
        act = nn.functional.leaky_relu
        h = xb
        for b in range(len(self.convs)):
            h = act(self.convs[b](h, adj), cfg.leaky_slope)
            h = mask_rows(h, n_valid)
            if cfg.use_node_mix:
                h = self._node_mix_padded(h, n_valid, self.mixers[b])
            if b < cfg.hops:
                pooled = graph_pool(h, adj, cfg.pool_ratio, self.scorers[b], n_valid)
                h, adj, n_valid = pooled.pooled_features, pooled.pooled_adjacency, pooled.n_valid
        scores = self.score_head(h).squeeze(-1)
        slot = valid_mask(n_valid, scores.shape[1]).to(scores.dtype)
        scores = scores * slot
        if squeeze:
            return scores[0], slot[0]
        return scores, slot

    def forward(self, x: Tensor, adjacency: Tensor, n_valid: Tensor | None = None):
        if self.cfg.mode == "graph":
            return self.graph_score(x, adjacency, n_valid)
        return self.subgraph_scores(x, adjacency, n_valid)[0]

    def graph_score(self, x: Tensor, adjacency: Tensor, n_valid: Tensor | None = None) -> Tensor:
        scores, slot = self.subgraph_scores(x, adjacency, n_valid)
        squeeze = scores.dim() == 1
        if squeeze:
            scores, slot = scores.unsqueeze(0), slot.unsqueeze(0)
        mean = (scores * slot).sum(-1) / slot.sum(-1)
        out = self.graph_head(mean.unsqueeze(-1)).squeeze(-1)
        return out[0] if squeeze else out

    def value(self, x: Tensor, adjacency: Tensor, n_valid: Tensor | None = None) -> Tensor:
        """One scalar per graph: mean of subgraph scores, or the graph head."""
        if self.cfg.mode == "graph":
            return self.graph_score(x, adjacency, n_valid)
        scores, slot = self.subgraph_scores(x, adjacency, n_valid)
        squeeze = scores.dim() == 1
        if squeeze:
            scores, slot = scores.unsqueeze(0), slot.unsqueeze(0)
        out = (scores * slot).sum(-1) / slot.sum(-1)
        return out[0] if squeeze else out


def subgraph_disc_forward(
    x: Tensor, adjacency: Tensor, critic: SubgraphCritic, n_valid: Tensor | None = None
) -> Tensor:
    return critic.subgraph_scores(x, adjacency, n_valid)[0]


def graph_disc_forward(
    x: Tensor, adjacency: Tensor, critic: SubgraphCritic, n_valid: Tensor | None = None
) -> Tensor:
    if critic.cfg.mode != "graph":
        raise ValueError("critic was not built in graph mode")
    return critic.graph_score(x, adjacency, n_valid)


def critic_value(scores: Tensor) -> Tensor:
    """Arithmetic mean of a nonempty score vector."""
    if scores.numel() == 0:
        raise ValueError("cannot reduce an empty score vector")
    return scores.mean()
