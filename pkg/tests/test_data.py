import numpy as np
import pytest

import graphfill as gf
from graphfill.data import (
    DataFormatError,
    export_matrix_csv,
    fit_norm_stats,
    load_matrices,
    save_matrices,
)

TRIANGLE_PLUS_PATH = {
    # graph 1: 3-node triangle (nodes 1-3), graph 2: 2-node path (nodes 4-5)
    "tiny_A.txt": "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n",
    "tiny_graph_indicator.txt": "1\n1\n1\n2\n2\n",
    "tiny_node_attributes.txt": "0.1, 1.0\n0.2, 2.0\n0.3, 3.0\n0.4, 4.0\n0.5, 5.0\n",
    "tiny_graph_labels.txt": "1\n2\n",
}


def write_tudataset(directory, files=TRIANGLE_PLUS_PATH):
    directory.mkdir(exist_ok=True)
    for name, body in files.items():
        (directory / name).write_text(body)
    return directory


def test_load_tudataset_fixture(tmp_path):
    graphs = gf.load_tudataset(write_tudataset(tmp_path / "tiny"))
    assert len(graphs) == 2
    tri, path = graphs
    assert tri.num_nodes == 3 and path.num_nodes == 2
    assert list(np.asarray(tri.adjacency.sum(axis=1)).ravel()) == [2, 2, 2]
    assert list(np.asarray(path.adjacency.sum(axis=1)).ravel()) == [1, 1]
    # node order preserved from the file
    np.testing.assert_allclose(tri.node_features[:, 0], [0.1, 0.2, 0.3])
    assert tri.graph_label == 1 and path.graph_label == 2
    for g in graphs:
        g.validate()


def test_load_tudataset_missing_file(tmp_path):
    files = dict(TRIANGLE_PLUS_PATH)
    del files["tiny_node_attributes.txt"]
    with pytest.raises(DataFormatError, match="node_attributes"):
        gf.load_tudataset(write_tudataset(tmp_path / "tiny", files))


def test_load_tudataset_ragged_row(tmp_path):
    files = dict(TRIANGLE_PLUS_PATH)
    files["tiny_node_attributes.txt"] = "0.1, 1.0\n0.2\n0.3, 3.0\n0.4, 4.0\n0.5, 5.0\n"
    with pytest.raises(DataFormatError, match=":2"):
        gf.load_tudataset(write_tudataset(tmp_path / "tiny", files))


CITATION_FIXTURE = {
    "toy.content": (
        "n1 0.0 1.0 0.5 classA\n"
        "n2 1.0 0.0 0.5 classB\n"
        "n3 0.5 0.5 0.5 classA\n"
        "n4 0.2 0.8 0.1 classB\n"
    ),
    "toy.cites": "n1 n2\nn2 n3\nn3 n4\n",
}


def test_load_single_graph_fixture(tmp_path):
    d = tmp_path / "toy"
    d.mkdir()
    for name, body in CITATION_FIXTURE.items():
        (d / name).write_text(body)
    g = gf.load_single_graph(d)
    assert g.num_nodes == 4 and g.num_features == 3
    g.validate()
    dense = g.dense_adjacency()
    np.testing.assert_array_equal(dense, dense.T)
    assert dense.sum() == 6  # 3 undirected edges
    assert sorted(set(g.node_labels.tolist())) == [0, 1]


def test_load_single_graph_dangling_edge(tmp_path):
    d = tmp_path / "toy"
    d.mkdir()
    (d / "toy.content").write_text(CITATION_FIXTURE["toy.content"])
    (d / "toy.cites").write_text("n1 n9\n")
    with pytest.raises(DataFormatError, match="endpoint"):
        gf.load_single_graph(d)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def _graph_with(features):
    import scipy.sparse as sp

    n = features.shape[0]
    return gf.Graph(np.asarray(features, dtype=float), sp.csr_matrix((n, n)))


def test_normalize_constant_dimension_maps_to_zero():
    g = _graph_with(np.array([[5.0, 1.0], [5.0, 3.0]]))
    normed, stats = gf.normalize_features([g])
    np.testing.assert_array_equal(normed[0].node_features[:, 0], [0.0, 0.0])


def test_normalize_minmax_endpoints():
    g = _graph_with(np.array([[0.0], [10.0]]))
    normed, _ = gf.normalize_features([g])
    np.testing.assert_allclose(normed[0].node_features.ravel(), [0.0, 1.0])


def test_normalize_roundtrip_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(scale=30.0, size=(17, 5))
    x[:, 2] = -4.25  # degenerate dimension
    g = _graph_with(x)
    normed, stats = gf.normalize_features([g])
    back = stats.inverse(normed[0].node_features)
    assert np.abs(back - x).max() < 1e-9


def test_normalize_rejects_non_finite():
    g = _graph_with(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValueError, match="non-finite"):
        gf.normalize_features([g])


def test_fit_norm_stats_on_observed_entries_only():
    g = _graph_with(np.array([[0.0, 100.0], [1.0, 2.0]]))
    mask = np.array([[1.0, 0.0], [1.0, 1.0]])
    stats = fit_norm_stats([g], [mask])
    assert stats.per_feature_max[1] == 2.0  # the masked 100.0 is ignored


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------

def test_sample_mask_boundaries():
    assert gf.sample_mask(4, 3, 0.0, 0).all()
    assert not gf.sample_mask(4, 3, 1.0, 0).any()


def test_sample_mask_concentration():
    m = gf.sample_mask(100, 100, 0.3, 123)
    zero_fraction = 1.0 - m.mean()
    assert abs(zero_fraction - 0.3) < 0.02


def test_sample_mask_pure_function_of_args():
    a = gf.sample_mask(20, 7, 0.4, 99)
    b = gf.sample_mask(20, 7, 0.4, 99)
    np.testing.assert_array_equal(a, b)
    c = gf.sample_mask(20, 7, 0.4, 100)
    assert not np.array_equal(a, c)


def test_sample_mask_rejects_bad_rate():
    with pytest.raises(ValueError):
        gf.sample_mask(3, 3, 1.5, 0)


def test_apply_mask_cases():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(gf.apply_mask(x, np.ones_like(x)), x)
    np.testing.assert_array_equal(gf.apply_mask(x, np.zeros_like(x)), np.zeros_like(x))
    r = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(gf.apply_mask(x, r), [[1.0, 0.0], [0.0, 4.0]])
    with pytest.raises(ValueError):
        gf.apply_mask(x, np.ones((3, 2)))


def test_apply_mask_never_touches_observed():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(8, 6))
    r = (rng.random((8, 6)) > 0.5).astype(float)
    np.testing.assert_array_equal(gf.apply_mask(x, r) * r, x * r)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def test_split_sizes_600():
    s = gf.split_dataset(600, seed=1)
    assert (len(s.train_ids), len(s.val_ids), len(s.test_ids)) == (420, 60, 120)


def test_split_sizes_10():
    s = gf.split_dataset(10, seed=1)
    assert (len(s.train_ids), len(s.val_ids), len(s.test_ids)) == (7, 1, 2)


def test_split_deterministic_and_partition():
    a = gf.split_dataset(57, seed=4)
    b = gf.split_dataset(57, seed=4)
    assert a == b
    all_ids = sorted(a.train_ids + a.val_ids + a.test_ids)
    assert all_ids == list(range(57))


def test_split_rejects_bad_ratios():
    with pytest.raises(ValueError):
        gf.split_dataset(10, ratios=(0.7, 0.0, 0.3), seed=0)
    with pytest.raises(ValueError):
        gf.split_dataset(10, ratios=(0.5, 0.2, 0.2), seed=0)
    with pytest.raises(ValueError):
        gf.split_dataset(2, seed=0)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _benchmark_dir(name):
    import os
    from pathlib import Path

    root = os.environ.get("GRAPHFILL_DATA_ROOT")
    if not root:
        return None
    path = Path(root) / name
    return path if path.is_dir() else None


@pytest.mark.paper_scale
@pytest.mark.skipif(_benchmark_dir("ENZYMES") is None, reason="needs ENZYMES dataset")
def test_load_enzymes_shape():
    graphs = gf.load_tudataset(_benchmark_dir("ENZYMES"))
    assert len(graphs) == 600
    assert all(g.num_features == 18 for g in graphs)


@pytest.mark.paper_scale
@pytest.mark.skipif(_benchmark_dir("QM9") is None, reason="needs QM9 dataset")
def test_load_qm9_shape():
    graphs = gf.load_tudataset(_benchmark_dir("QM9"))
    assert len(graphs) == 1290
    assert all(g.num_features == 16 for g in graphs)


@pytest.mark.paper_scale
@pytest.mark.skipif(_benchmark_dir("Cora") is None, reason="needs Cora dataset")
def test_load_cora_shape():
    g = gf.load_single_graph(_benchmark_dir("Cora"))
    assert g.num_nodes == 2485
    assert g.num_features == 1433


@pytest.mark.paper_scale
@pytest.mark.skipif(_benchmark_dir("CiteSeer") is None, reason="needs CiteSeer dataset")
def test_load_citeseer_shape():
    g = gf.load_single_graph(_benchmark_dir("CiteSeer"))
    assert g.num_features == 3703


def test_matrix_container_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 3))
    m = (rng.random((4, 3)) > 0.2).astype(float)
    save_matrices(tmp_path / "bundle.npz", imputed=a, mask=m)
    loaded = load_matrices(tmp_path / "bundle.npz")
    np.testing.assert_array_equal(loaded["imputed"], a)
    np.testing.assert_array_equal(loaded["mask"], m)

    export_matrix_csv(tmp_path / "a.csv", a)
    parsed = np.loadtxt(tmp_path / "a.csv", delimiter=",")
    np.testing.assert_array_equal(parsed, a)
