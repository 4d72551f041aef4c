"""Graph/mask data model: dataset parsers, normalization, mask sampling, splits.

Masks follow one convention everywhere: a mask is a dense float matrix of the
same shape as the feature matrix, with 1.0 at observed entries and 0.0 at
missing ones.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DataFormatError(ValueError):
    """A dataset directory does not match the expected on-disk layout."""


# Stream tags so every consumer of the root seed draws from a distinct,
# collision-free Philox stream.
_STREAM_MASK = 1
_STREAM_SPLIT = 2
_STREAM_SYNTH = 3
_STREAM_TRAIN = 4
_STREAM_VAL_MASK = 5


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator derived from a root seed and a stream tag."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def derive_seed(seed: int, *stream: int) -> int:
    """Deterministically derive a child seed (for sub-runs such as sweep trials)."""
    return int(np.random.SeedSequence([seed, *stream]).generate_state(1)[0])


@dataclass
class Graph:
    """One attributed graph: dense features, sparse symmetric adjacency.

    The adjacency stores no self-loops; GCN normalization adds them on the fly.
    """

    node_features: np.ndarray
    adjacency: sp.csr_matrix
    graph_label: int | None = None
    node_labels: np.ndarray | None = None

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        if self.node_features.ndim != 2:
            raise ValueError("node_features must be 2-D (nodes x features)")
        n = self.node_features.shape[0]
        if self.adjacency.shape != (n, n):
            raise ValueError(
                f"adjacency shape {self.adjacency.shape} does not match {n} nodes"
            )

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_features(self) -> int:
        return self.node_features.shape[1]

    def dense_adjacency(self) -> np.ndarray:
        return np.asarray(self.adjacency.todense(), dtype=np.float64)

    def validate(self) -> None:
        if not np.isfinite(self.node_features).all():
            raise ValueError("node_features contain non-finite entries")
        if (self.adjacency != self.adjacency.T).nnz != 0:
            raise ValueError("adjacency is not symmetric")
        if self.adjacency.diagonal().any():
            raise ValueError("adjacency stores self-loops")

    def with_features(self, features: np.ndarray) -> "Graph":
        return Graph(features, self.adjacency, self.graph_label, self.node_labels)


def graph_from_edges(
    num_nodes: int,
    edges: list[tuple[int, int]],
    features: np.ndarray,
    graph_label: int | None = None,
    node_labels: np.ndarray | None = None,
) -> Graph:
    """Build a Graph from an edge list, symmetrizing and dropping self-loops."""
    rows, cols = [], []
    for i, j in edges:
        if i == j:
            continue
        rows.extend((i, j))
        cols.extend((j, i))
    data = np.ones(len(rows), dtype=np.float64)
    adj = sp.csr_matrix((data, (rows, cols)), shape=(num_nodes, num_nodes))
    adj.data[:] = 1.0  # collapse duplicate edges
    adj.sum_duplicates()
    adj.data[:] = 1.0
    return Graph(features, adj, graph_label, node_labels)


# ---------------------------------------------------------------------------
# Dataset parsers
# ---------------------------------------------------------------------------

def _find_prefixed(directory: Path, suffix: str) -> Path:
    hits = sorted(directory.glob(f"*{suffix}"))
    if not hits:
        raise DataFormatError(f"missing required file '*{suffix}' in {directory}")
    return hits[0]


def load_tudataset(directory: str | Path) -> list[Graph]:
    """Parse the flat-file multi-graph layout into a list of Graphs.

    Expected files (shared name prefix): ``<name>_A.txt`` edge pairs "i, j"
    (1-indexed), ``<name>_graph_indicator.txt`` one graph id per node,
    ``<name>_node_attributes.txt`` comma-separated reals per node, and
    ``<name>_graph_labels.txt`` one integer per graph.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataFormatError(f"dataset directory not found: {directory}")
    edges_path = _find_prefixed(directory, "_A.txt")
    indicator_path = _find_prefixed(directory, "_graph_indicator.txt")
    attrs_path = _find_prefixed(directory, "_node_attributes.txt")
    labels_path = _find_prefixed(directory, "_graph_labels.txt")

    indicator = []
    for lineno, line in enumerate(indicator_path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            indicator.append(int(line))
        except ValueError as exc:
            raise DataFormatError(
                f"{indicator_path.name}:{lineno}: expected an integer graph id"
            ) from exc
    num_nodes_total = len(indicator)
    indicator = np.asarray(indicator, dtype=np.int64)
    if indicator.min(initial=1) < 1:
        raise DataFormatError(f"{indicator_path.name}: graph ids must be 1-indexed")
    num_graphs = int(indicator.max(initial=0))

    rows = []
    width = None
    for lineno, line in enumerate(attrs_path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError as exc:
            raise DataFormatError(
                f"{attrs_path.name}:{lineno}: could not parse attribute row"
            ) from exc
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataFormatError(
                f"{attrs_path.name}:{lineno}: ragged row, expected {width} values "
                f"got {len(row)}"
            )
        rows.append(row)
    if len(rows) != num_nodes_total:
        raise DataFormatError(
            f"{attrs_path.name}: {len(rows)} attribute rows for {num_nodes_total} nodes"
        )
    features = np.asarray(rows, dtype=np.float64)

    labels = []
    for lineno, line in enumerate(labels_path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            labels.append(int(float(line)))
        except ValueError as exc:
            raise DataFormatError(
                f"{labels_path.name}:{lineno}: expected an integer graph label"
            ) from exc
    if len(labels) != num_graphs:
        raise DataFormatError(
            f"{labels_path.name}: {len(labels)} labels for {num_graphs} graphs"
        )

    # global node id -> (graph id, local node id), preserving file order
    local_index = np.zeros(num_nodes_total, dtype=np.int64)
    counts = np.zeros(num_graphs + 1, dtype=np.int64)
    for node, gid in enumerate(indicator):
        local_index[node] = counts[gid]
        counts[gid] += 1

    edge_lists: list[list[tuple[int, int]]] = [[] for _ in range(num_graphs)]
    for lineno, line in enumerate(edges_path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise DataFormatError(f"{edges_path.name}:{lineno}: expected 'i, j' pair")
        try:
            a, b = int(parts[0]) - 1, int(parts[1]) - 1
        except ValueError as exc:
            raise DataFormatError(
                f"{edges_path.name}:{lineno}: non-integer endpoint"
            ) from exc
        if not (0 <= a < num_nodes_total and 0 <= b < num_nodes_total):
            raise DataFormatError(f"{edges_path.name}:{lineno}: endpoint out of range")
        if indicator[a] != indicator[b]:
            raise DataFormatError(
                f"{edges_path.name}:{lineno}: edge crosses graph boundary"
            )
        gid = int(indicator[a]) - 1
        edge_lists[gid].append((int(local_index[a]), int(local_index[b])))

    graphs = []
    for gid in range(num_graphs):
        members = indicator == gid + 1
        graphs.append(
            graph_from_edges(
                int(members.sum()),
                edge_lists[gid],
                features[members],
                graph_label=labels[gid],
            )
        )
    return graphs


def load_single_graph(directory: str | Path) -> Graph:
    """Parse a citation-network layout into one Graph.

    Expected files: ``<name>.content`` with whitespace-separated rows
    ``node_id f_1 ... f_D label`` and ``<name>.cites`` with ``src dst`` edge
    rows referring to node ids from the content file.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataFormatError(f"dataset directory not found: {directory}")
    content_path = _find_prefixed(directory, ".content")
    cites_path = _find_prefixed(directory, ".cites")

    ids: list[str] = []
    feature_rows: list[list[float]] = []
    raw_labels: list[str] = []
    width = None
    for lineno, line in enumerate(content_path.read_text().splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 3:
            raise DataFormatError(
                f"{content_path.name}:{lineno}: expected id, features, label"
            )
        node_id, *feats, label = parts
        try:
            row = [float(tok) for tok in feats]
        except ValueError as exc:
            raise DataFormatError(
                f"{content_path.name}:{lineno}: could not parse feature row"
            ) from exc
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataFormatError(
                f"{content_path.name}:{lineno}: ragged row, expected {width} features"
            )
        ids.append(node_id)
        feature_rows.append(row)
        raw_labels.append(label)

    index = {node_id: k for k, node_id in enumerate(ids)}
    if len(index) != len(ids):
        raise DataFormatError(f"{content_path.name}: duplicate node ids")
    label_values = sorted(set(raw_labels))
    label_map = {v: k for k, v in enumerate(label_values)}
    node_labels = np.asarray([label_map[v] for v in raw_labels], dtype=np.int64)

    edges = []
    for lineno, line in enumerate(cites_path.read_text().splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise DataFormatError(f"{cites_path.name}:{lineno}: expected 'src dst'")
        src, dst = parts
        if src not in index or dst not in index:
            raise DataFormatError(
                f"{cites_path.name}:{lineno}: edge endpoint not in content file"
            )
        edges.append((index[src], index[dst]))

    return graph_from_edges(
        len(ids),
        edges,
        np.asarray(feature_rows, dtype=np.float64),
        node_labels=node_labels,
    )


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    """Per-feature min/max for dataset-wide [0, 1] scaling.

    Degenerate dimensions (max == min) are mapped to 0 and inverted back to
    their recorded minimum, so transform -> inverse is exact.
    """

    per_feature_min: np.ndarray
    per_feature_max: np.ndarray

    def __post_init__(self):
        if (self.per_feature_max < self.per_feature_min).any():
            raise ValueError("per-feature max must be >= min")

    @property
    def span(self) -> np.ndarray:
        span = self.per_feature_max - self.per_feature_min
        return np.where(span > 0, span, 1.0)

    @property
    def degenerate(self) -> np.ndarray:
        return self.per_feature_max == self.per_feature_min

    def transform(self, x: np.ndarray) -> np.ndarray:
        out = (x - self.per_feature_min) / self.span
        out[:, self.degenerate] = 0.0
        return out

    def inverse(self, x: np.ndarray) -> np.ndarray:
        out = x * self.span + self.per_feature_min
        out[:, self.degenerate] = self.per_feature_min[self.degenerate]
        return out


def fit_norm_stats(graphs: list[Graph], masks: list[np.ndarray] | None = None) -> NormStats:
    """Fit per-feature min/max over (optionally masked) entries of all graphs."""
    if not graphs:
        raise ValueError("need at least one graph to fit normalization stats")
    d = graphs[0].num_features
    lo = np.full(d, np.inf)
    hi = np.full(d, -np.inf)
    for k, g in enumerate(graphs):
        x = g.node_features
        if not np.isfinite(x).all():
            raise ValueError(f"graph {k} has non-finite features")
        if masks is not None:
            obs = masks[k] > 0
            for j in range(d):
                col = x[obs[:, j], j]
                if col.size:
                    lo[j] = min(lo[j], col.min())
                    hi[j] = max(hi[j], col.max())
        else:
            lo = np.minimum(lo, x.min(axis=0))
            hi = np.maximum(hi, x.max(axis=0))
    # dimensions never observed: pin to [0, 0] so they normalize to zero
    unseen = ~np.isfinite(lo)
    lo[unseen] = 0.0
    hi[unseen] = 0.0
    return NormStats(lo, hi)


def normalize_features(graphs: list[Graph]) -> tuple[list[Graph], NormStats]:
    """Min-max scale every feature dimension to [0, 1] using dataset-wide stats."""
    stats = fit_norm_stats(graphs)
    return [g.with_features(stats.transform(g.node_features)) for g in graphs], stats


def apply_norm_stats(graphs: list[Graph], stats: NormStats) -> list[Graph]:
    return [g.with_features(stats.transform(g.node_features)) for g in graphs]


# ---------------------------------------------------------------------------
# Masks and splits
# ---------------------------------------------------------------------------

def bernoulli_mask(n: int, d: int, missing_rate: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= missing_rate <= 1.0:
        raise ValueError(f"missing_rate must be in [0, 1], got {missing_rate}")
    return (rng.random((n, d)) >= missing_rate).astype(np.float64)


def sample_mask(n: int, d: int, missing_rate: float, rng_seed: int) -> np.ndarray:
    """I.i.d. Bernoulli observation mask; a pure function of its arguments."""
    return bernoulli_mask(n, d, missing_rate, make_rng(rng_seed, _STREAM_MASK))


def apply_mask(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Zero-fill missing entries: observed entries copied, missing set to 0."""
    x = np.asarray(x)
    r = np.asarray(r)
    if x.shape != r.shape:
        raise ValueError(f"shape mismatch: features {x.shape} vs mask {r.shape}")
    if not np.isin(r, (0.0, 1.0)).all():
        raise ValueError("mask entries must be 0 or 1")
    return x * r


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: list[int]
    val_ids: list[int]
    test_ids: list[int]
    seed: int


def split_dataset(
    num_graphs: int,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> DatasetSplit:
    """Shuffled disjoint train/val/test cover; remainder after rounding to train."""
    if num_graphs < 3:
        raise ValueError(f"need at least 3 graphs to split, got {num_graphs}")
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive values, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    n_val = int(math.floor(ratios[1] * num_graphs + 0.5))
    n_test = int(math.floor(ratios[2] * num_graphs + 0.5))
    n_train = num_graphs - n_val - n_test
    if n_train <= 0:
        raise ValueError("rounded split leaves no training graphs")
    perm = make_rng(seed, _STREAM_SPLIT).permutation(num_graphs)
    return DatasetSplit(
        train_ids=sorted(int(i) for i in perm[:n_train]),
        val_ids=sorted(int(i) for i in perm[n_train : n_train + n_val]),
        test_ids=sorted(int(i) for i in perm[n_train + n_val :]),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def make_synthetic_dataset(
    num_graphs: int,
    num_nodes: int,
    num_features: int,
    seed: int,
    *,
    latent_rank: int = 2,
    smoothing_steps: int = 3,
    edge_prob: float = 0.25,
    noise: float = 0.02,
    with_labels: bool = False,
) -> list[Graph]:
    """Random connected graphs whose features are smoothed low-rank signals.

    Per graph, ``latent_rank`` independent signals are smoothed over the graph
    and mixed into channels by one dataset-wide matrix, so features are
    correlated both across neighborhoods and across channels.
    """
    rng = make_rng(seed, _STREAM_SYNTH)
    mixing = rng.normal(size=(latent_rank, num_features))
    graphs = []
    for _ in range(num_graphs):
        order = rng.permutation(num_nodes)
        edges = [(int(order[i]), int(order[i + 1])) for i in range(num_nodes - 1)]
        extra = rng.random((num_nodes, num_nodes)) < edge_prob
        for i in range(num_nodes):
            for j in range(i + 1, num_nodes):
                if extra[i, j]:
                    edges.append((i, j))
        adj = np.zeros((num_nodes, num_nodes))
        for i, j in edges:
            if i != j:
                adj[i, j] = adj[j, i] = 1.0
        a_hat = adj + np.eye(num_nodes)
        inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
        a_hat = a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]
        latent = rng.normal(size=(num_nodes, latent_rank))
        for _ in range(smoothing_steps):
            latent = a_hat @ latent
        features = latent @ mixing + noise * rng.normal(size=(num_nodes, num_features))
        label = int(latent[:, 0].mean() > 0) if with_labels else None
        graphs.append(graph_from_edges(num_nodes, edges, features, graph_label=label))
    return graphs


# ---------------------------------------------------------------------------
# Matrix persistence
# ---------------------------------------------------------------------------

_CONTAINER_VERSION = 1


def save_matrices(path: str | Path, **arrays: np.ndarray) -> None:
    """Persist named dense matrices in a self-describing binary container."""
    np.savez(path, __container_version__=np.int64(_CONTAINER_VERSION), **arrays)


def load_matrices(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(path) as bundle:
        out = {k: bundle[k] for k in bundle.files if k != "__container_version__"}
    return out


def export_matrix_csv(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(matrix):
            writer.writerow([format(v, ".17g") for v in row])
