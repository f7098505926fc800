import numpy as np
import pytest
import scipy.sparse as sp

from netcate.graphdata import (NetworkedDataset, SparseGraph, community_labels,
                               generate_bow_covariates, generate_sbm_graph)
from netcate.topicsim import SimConfig, simulate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_sim():
    """Simulated K=3 dataset on a 60-node SBM, shared across tests."""
    graph = generate_sbm_graph(60, 3, 0.2, 0.02, seed=3)
    x = generate_bow_covariates(community_labels(60, 3), vocab_size=40, n_topics=4,
                                doc_length=30, seed=3)
    cfg = SimConfig(K=3, T=4, k1=10, k2=1.0, C=5, seed=3, lda_sweeps=50)
    return simulate(x, graph, cfg)


@pytest.fixture
def two_node_dataset():
    g = SparseGraph.from_pairs(2, [(0, 1)])
    x = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 2.0]]))
    mu = np.array([[1.0, 2.0], [3.0, 5.0]])
    return NetworkedDataset(g, x, np.array([0, 1]), np.array([1.5, 4.0]), mu,
                            noise=np.array([0.5, -1.0]))
