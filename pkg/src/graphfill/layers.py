"""Differentiable graph primitives: GCN, LEConv scoring, top-k pool/unpool, mixers.

Every operation accepts either a single graph (``x`` of shape (N, D),
adjacency (N, N)) or a padded batch ((B, N, D) / (B, N, N)).  Batches carry a
``n_valid`` vector of real node counts; valid rows always form a prefix of the
padded axis, and padded rows are kept at zero so they cannot leak through any
layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

_NEG_FILL = torch.finfo(torch.float64).min / 4


def _as_batch(*tensors: Tensor) -> tuple[list[Tensor], bool]:
    """Promote (N, ...) tensors to (1, N, ...); remember whether to squeeze."""
    squeeze = tensors[0].dim() == 2
    return [t.unsqueeze(0) if squeeze else t for t in tensors], squeeze


def full_valid(batch: int, n: int, device=None) -> Tensor:
    return torch.full((batch,), n, dtype=torch.long, device=device)


def valid_mask(n_valid: Tensor, n: int) -> Tensor:
    """(B,) node counts -> (B, N) float mask with a leading block of ones."""
    ar = torch.arange(n, device=n_valid.device)
    return (ar.unsqueeze(0) < n_valid.unsqueeze(1)).to(torch.get_default_dtype())


def mask_rows(x: Tensor, n_valid: Tensor | None) -> Tensor:
    if n_valid is None:
        return x
    return x * valid_mask(n_valid, x.shape[-2]).to(x.dtype).unsqueeze(-1)


def pad_graph_batch(
    feature_mats: list[np.ndarray],
    adj_mats: list[np.ndarray],
    n_max: int | None = None,
    dtype: torch.dtype = torch.float64,
) -> tuple[Tensor, Tensor, Tensor]:
    """Stack variable-size graphs into (B, n_max, D), (B, n_max, n_max), (B,)."""
    sizes = [x.shape[0] for x in feature_mats]
    if n_max is None:
        n_max = max(sizes)
    if max(sizes) > n_max:
        raise ValueError(f"graph with {max(sizes)} nodes exceeds n_max={n_max}")
    b, d = len(feature_mats), feature_mats[0].shape[1]
    x = torch.zeros(b, n_max, d, dtype=dtype)
    adj = torch.zeros(b, n_max, n_max, dtype=dtype)
    for k, (feat, a) in enumerate(zip(feature_mats, adj_mats)):
        n = sizes[k]
        x[k, :n] = torch.as_tensor(feat, dtype=dtype)
        adj[k, :n, :n] = torch.as_tensor(a, dtype=dtype)
    return x, adj, torch.tensor(sizes, dtype=torch.long)


# ---------------------------------------------------------------------------
# Graph convolution
# ---------------------------------------------------------------------------

def normalize_adjacency(adj: Tensor) -> Tensor:
    """Symmetric GCN normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}."""
    n = adj.shape[-1]
    eye = torch.eye(n, dtype=adj.dtype, device=adj.device)
    a_hat = adj + eye
    inv_sqrt = a_hat.sum(-1).rsqrt()
    return a_hat * inv_sqrt.unsqueeze(-1) * inv_sqrt.unsqueeze(-2)


class GCNLayer(nn.Module):
    """x -> D^{-1/2}(A+I)D^{-1/2} x W + b."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim)

    def forward(self, x: Tensor, adj: Tensor) -> Tensor:
        if x.shape[:-1] != adj.shape[:-1]:
            raise ValueError(f"features {tuple(x.shape)} vs adjacency {tuple(adj.shape)}")
        return self.linear(normalize_adjacency(adj) @ x)


def gcn_forward(x: Tensor, adjacency: Tensor, layer: GCNLayer) -> Tensor:
    return layer(x, adjacency)


# ---------------------------------------------------------------------------
# LEConv scoring + top-k pooling
# ---------------------------------------------------------------------------

class LEConvScore(nn.Module):
    """Local-extrema retention score per node (pre-tanh, identity activation).

    y_i = x_i w_self + sum_{j in N(i)} (x_i w_src - x_j w_dst), each projection
    carrying its own bias.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.lin_self = nn.Linear(dim, 1)
        self.lin_src = nn.Linear(dim, 1)
        self.lin_dst = nn.Linear(dim, 1)

    def forward(self, x: Tensor, adj: Tensor) -> Tensor:
        deg = adj.sum(-1, keepdim=True)
        y = self.lin_self(x) + deg * self.lin_src(x) - adj @ self.lin_dst(x)
        return y.squeeze(-1)


def leconv_score(x: Tensor, adjacency: Tensor, scorer: LEConvScore) -> Tensor:
    return scorer(x, adjacency)


def pool_size(n: int, ratio: float) -> int:
    return int(math.ceil(ratio * n))


def topk_select(scores: Tensor, ratio: float) -> Tensor:
    """Indices of the ceil(ratio*N) largest scores, ties to the lower index,
    returned sorted ascending."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if scores.dim() != 1 or scores.numel() < 1:
        raise ValueError("scores must be a non-empty vector")
    k = pool_size(scores.numel(), ratio)
    order = torch.argsort(scores, descending=True, stable=True)
    return torch.sort(order[:k]).values


def _topk_batch(
    scores: Tensor, n_valid: Tensor, ratio: float
) -> tuple[Tensor, Tensor, Tensor]:
    """Batched top-k keeping per-graph k = ceil(ratio * n_valid).

    Returns (idx (B, K) ascending, new n_valid (B,), slot mask (B, K)).  Slots
    beyond a graph's k are fillers pointing at arbitrary leftover rows; callers
    zero them out.
    """
    b, n = scores.shape
    masked = scores.masked_fill(valid_mask(n_valid, n).to(torch.bool).logical_not(), _NEG_FILL)
    order = torch.argsort(masked, dim=1, descending=True, stable=True)
    k_b = torch.ceil(ratio * n_valid.to(scores.dtype)).long().clamp(min=1)
    k_max = int(k_b.max())
    sel = order[:, :k_max]
    slot_ok = torch.arange(k_max, device=scores.device).unsqueeze(0) < k_b.unsqueeze(1)
    # ascending node order for kept slots, fillers pushed to the back
    sort_key = sel + (~slot_ok).long() * (n + 1)
    reorder = torch.argsort(sort_key, dim=1)
    idx = torch.gather(sel, 1, reorder)
    slot_ok = torch.gather(slot_ok, 1, reorder)
    return idx, k_b, slot_ok


def restrict_adjacency(adj: Tensor, idx: Tensor) -> Tensor:
    """A[idx, idx] for batched (B, N, N) adjacency and (B, K) indices."""
    k = idx.shape[1]
    rows = torch.gather(adj, 1, idx.unsqueeze(-1).expand(-1, -1, adj.shape[-1]))
    return torch.gather(rows, 2, idx.unsqueeze(1).expand(-1, k, -1))


@dataclass
class PoolResult:
    pooled_features: Tensor
    pooled_adjacency: Tensor
    idx: Tensor
    scores: Tensor
    n_valid: Tensor | None = None
    slot_mask: Tensor | None = None


def graph_pool(
    x: Tensor,
    adjacency: Tensor,
    ratio: float,
    scorer: LEConvScore,
    n_valid: Tensor | None = None,
) -> PoolResult:
    """Gated top-k pooling: keep (X * tanh(y)) and A restricted to the kept rows."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    (xb, adjb), squeeze = _as_batch(x, adjacency)
    if n_valid is None:
        n_valid = full_valid(xb.shape[0], xb.shape[1], device=xb.device)
    scores = scorer(xb, adjb)
    idx, new_valid, slot_ok = _topk_batch(scores, n_valid, ratio)
    gated = xb * torch.tanh(scores).unsqueeze(-1)
    pooled_x = torch.gather(gated, 1, idx.unsqueeze(-1).expand(-1, -1, xb.shape[-1]))
    pooled_adj = restrict_adjacency(adjb, idx)
    keep = slot_ok.to(xb.dtype)
    pooled_x = pooled_x * keep.unsqueeze(-1)
    pooled_adj = pooled_adj * keep.unsqueeze(-1) * keep.unsqueeze(-2)
    if squeeze:
        return PoolResult(pooled_x[0], pooled_adj[0], idx[0], scores[0])
    return PoolResult(pooled_x, pooled_adj, idx, scores, new_valid, slot_ok)


def graph_unpool(
    x_small: Tensor,
    idx: Tensor,
    original_size: int,
    slot_mask: Tensor | None = None,
) -> Tensor:
    """Scatter pooled rows back to their original indices in a zero matrix."""
    (xb, idxb), squeeze = _as_batch(x_small, idx.unsqueeze(-1))
    idxb = idxb.squeeze(-1)
    if squeeze:
        flat = idxb[0]
        if int(flat.max()) >= original_size or int(flat.min()) < 0:
            raise ValueError("unpool index out of range")
        if flat.numel() > 1 and not bool((flat[1:] > flat[:-1]).all()):
            raise ValueError("unpool indices must be strictly increasing")
    if slot_mask is not None:
        xb = xb * slot_mask.to(xb.dtype).unsqueeze(-1)
    out = xb.new_zeros(xb.shape[0], original_size, xb.shape[-1])
    out = out.scatter(1, idxb.unsqueeze(-1).expand(-1, -1, xb.shape[-1]), xb)
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# Mixer blocks
# ---------------------------------------------------------------------------

class Mixer(nn.Module):
    """Two fully connected layers with a LeakyReLU between them."""

    def __init__(self, dim_in: int, dim_hidden: int, dim_out: int, leaky_slope: float = 0.2):
        super().__init__()
        self.fc1 = nn.Linear(dim_in, dim_hidden)
        self.fc2 = nn.Linear(dim_hidden, dim_out)
        self.leaky_slope = leaky_slope

    def forward(self, v: Tensor) -> Tensor:
        return self.fc2(F.leaky_relu(self.fc1(v), self.leaky_slope))


def feature_mix(x: Tensor, mixer: Mixer) -> Tensor:
    """Each node's feature row through the mixer; params shared across rows."""
    return mixer(x)


def node_mix(x_pad: Tensor, node_valid: Tensor, mixer: Mixer) -> Tensor:
    """Each feature channel's node column through the mixer; invalid rows are
    zeroed going in, and zeroed again on the way out when shapes allow."""
    if x_pad.shape[-2] != mixer.fc1.in_features:
        raise ValueError(
            f"node axis {x_pad.shape[-2]} does not match mixer input "
            f"{mixer.fc1.in_features}"
        )
    vm = node_valid.to(x_pad.dtype)
    if vm.dim() == x_pad.dim() - 1:
        vm = vm.unsqueeze(-1)
    out = mixer((x_pad * vm).transpose(-2, -1)).transpose(-2, -1)
    if out.shape[-2] == x_pad.shape[-2]:
        out = out * vm
    return out
