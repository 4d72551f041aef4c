import numpy as np
import pytest
import torch

import graphfill as gf


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def t(a, requires_grad=False):
    return torch.as_tensor(np.asarray(a), dtype=torch.float64).requires_grad_(requires_grad)


@pytest.fixture
def triangle_graph():
    """3-node triangle with simple features."""
    feats = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    return gf.Graph(feats, _adj([[0, 1], [1, 2], [0, 2]], 3))


@pytest.fixture
def path_graph():
    """2-node path."""
    feats = np.array([[0.5, -1.0], [2.0, 0.25]])
    return gf.Graph(feats, _adj([[0, 1]], 2))


def _adj(edges, n):
    import scipy.sparse as sp

    dense = np.zeros((n, n))
    for i, j in edges:
        dense[i, j] = dense[j, i] = 1.0
    return sp.csr_matrix(dense)


def random_graph_tensors(rng, n, d):
    """Random symmetric adjacency (no self-loops) plus features, as tensors."""
    a = (rng.random((n, n)) < 0.5).astype(float)
    a = np.triu(a, 1)
    a = a + a.T
    x = rng.normal(size=(n, d))
    return t(x), t(a)
