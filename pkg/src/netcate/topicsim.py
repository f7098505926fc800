"""Semi-synthetic treatments and potential outcomes from topics and the network.

Pipeline (:func:`simulate`): fit a collapsed-Gibbs LDA on the covariates, pick
K topic centroids (index 0 is the population mean, the rest are topic
distributions of randomly drawn units), score every unit against every centroid
through itself and its one-hop neighbours, draw treatments from a softmax over
those scores and build scaled potential outcomes with shared unit-level noise.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from itertools import combinations

import numba
import numpy as np
import scipy.sparse as sp

from .graphdata import DatasetError, NetworkedDataset

log = logging.getLogger(__name__)

# independent RNG streams per pipeline stage
_STREAM_LDA, _STREAM_CENTROIDS, _STREAM_ASSIGN, _STREAM_NOISE = range(4)


@dataclass(frozen=True)
class SimConfig:
    K: int = 4
    T: int = 50
    k1: float = 10.0
    k2: float = 0.5
    C: float = 5.0
    noise_std: float = 1.0
    seed: int = 0
    lda_sweeps: int = 200
    dirichlet_alpha: float | None = None  # None -> 50 / T
    dirichlet_beta: float = 0.01

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("k1 and k2 must be non-negative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.lda_sweeps < 0:
            raise ValueError("lda_sweeps must be non-negative")

    @property
    def alpha(self):
        return 50.0 / self.T if self.dirichlet_alpha is None else self.dirichlet_alpha

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


@dataclass
class TopicModelState:
    T: int
    doc_topic_counts: np.ndarray  # (N, T)
    topic_word_counts: np.ndarray  # (T, p)
    assignments: np.ndarray  # topic of each token
    token_docs: np.ndarray
    token_words: np.ndarray
    dirichlet_alpha: float
    dirichlet_beta: float

    @property
    def n_units(self):
        return self.doc_topic_counts.shape[0]

    def distributions(self):
        """All unit topic distributions as an (N, T) matrix."""
        a = self.dirichlet_alpha
        counts = self.doc_topic_counts.astype(np.float64)
        tokens = counts.sum(axis=1, keepdims=True)
        return (counts + a) / (tokens + self.T * a)


def _corpus_tokens(x):
    x = sp.csr_matrix(x)
    if x.nnz and x.data.min() < 0:
        raise ValueError("covariates must be non-negative")
    counts = np.rint(x.data).astype(np.int64)
    rows = np.repeat(np.arange(x.shape[0]), np.diff(x.indptr))
    docs = np.repeat(rows, counts)
    words = np.repeat(x.indices.astype(np.int64), counts)
    return docs, words


@numba.njit(cache=True)
def _gibbs_sweep(docs, words, z, ndt, ntw, nt, alpha, beta, vbeta, uniforms):
    T = ndt.shape[1]
    p = np.empty(T)
    for n in range(docs.shape[0]):
        d, w, k = docs[n], words[n], z[n]
        ndt[d, k] -= 1
        ntw[k, w] -= 1
        nt[k] -= 1
        total = 0.0
        for j in range(T):
            total += (ndt[d, j] + alpha) * (ntw[j, w] + beta) / (nt[j] + vbeta)
            p[j] = total
        target = uniforms[n] * total
        k = T - 1
        for j in range(T):
            if target < p[j]:
                k = j
                break
        z[n] = k
        ndt[d, k] += 1
        ntw[k, w] += 1
        nt[k] += 1


def fit_lda(x, cfg):
    """Collapsed Gibbs LDA with ``cfg.T`` topics for ``cfg.lda_sweeps`` sweeps.

    Covariate values are rounded to integer token counts.
    """
    if cfg.T < 1:
        raise ValueError("T must be >= 1")
    docs, words = _corpus_tokens(x)
    if len(docs) == 0:
        raise ValueError("empty corpus: no tokens to fit")
    n_docs, vocab = x.shape
    T = cfg.T
    rng = _rng(cfg.seed, _STREAM_LDA)
    z = rng.integers(0, T, size=len(docs))
    ndt = np.zeros((n_docs, T), dtype=np.int64)
    ntw = np.zeros((T, vocab), dtype=np.int64)
    np.add.at(ndt, (docs, z), 1)
    np.add.at(ntw, (z, words), 1)
    nt = ntw.sum(axis=1)
    alpha, beta = cfg.alpha, cfg.dirichlet_beta
    for _ in range(cfg.lda_sweeps):
        _gibbs_sweep(docs, words, z, ndt, ntw, nt, alpha, beta, vocab * beta,
                     rng.random(len(docs)))
    return TopicModelState(T, ndt, ntw, z, docs, words, alpha, beta)


def topic_distribution(state, unit):
    """Smoothed doc-topic proportions (count + alpha) / (tokens + T * alpha)."""
    if not 0 <= unit < state.n_units:
        raise IndexError(f"unit {unit} out of range")
    counts = state.doc_topic_counts[unit].astype(np.float64)
    a = state.dirichlet_alpha
    return (counts + a) / (counts.sum() + state.T * a)


@dataclass
class CentroidSet:
    centroids: np.ndarray  # (K, T); row 0 is the population mean
    provenance: np.ndarray  # units behind rows 1..K-1


def select_centroids(state_or_z, cfg):
    """Centroid 0 is the mean topic distribution; 1..K-1 come from distinct random units."""
    z = state_or_z.distributions() if isinstance(state_or_z, TopicModelState) else np.asarray(state_or_z)
    n = z.shape[0]
    if n < cfg.K - 1:
        raise ValueError(f"need at least K-1={cfg.K - 1} units, have {n}")
    rng = _rng(cfg.seed, _STREAM_CENTROIDS)
    chosen = rng.choice(n, size=cfg.K - 1, replace=False)
    centroids = np.vstack([z.mean(axis=0, keepdims=True), z[chosen]])
    return CentroidSet(centroids, chosen)


def unscaled_outcomes(z, centroids, graph, cfg):
    """Scores k1 * <z_i, c_a> + k2 * sum over neighbours j of <z_j, c_a>."""
    z = np.asarray(z, dtype=np.float64)
    c = centroids.centroids if isinstance(centroids, CentroidSet) else np.asarray(centroids)
    if z.shape[0] != graph.n_units or z.shape[1] != c.shape[1]:
        raise ValueError(f"shape mismatch: z {z.shape}, centroids {c.shape}, {graph.n_units} units")
    sim = z @ c.T
    return cfg.k1 * sim + cfg.k2 * (graph.adjacency() @ sim)


def assign_treatments(p, cfg):
    """Softmax treatment probabilities per unit and one categorical draw each."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("scores contain NaN or infinity")
    probs = softmax_rows(p)
    rng = _rng(cfg.seed, _STREAM_ASSIGN)
    u = rng.random(p.shape[0])
    cdf = np.cumsum(probs, axis=1)
    treatments = np.minimum((cdf <= u[:, None]).sum(axis=1), p.shape[1] - 1)
    return treatments, probs


def softmax_rows(p):
    shifted = p - p.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def potential_outcomes(p, cfg):
    """Expected outcomes C*p_0 (control) and C*(p_0 + p_t), plus per-unit noise."""
    p = np.asarray(p, dtype=np.float64)
    mu = cfg.C * (p[:, :1] + p)
    mu[:, 0] = cfg.C * p[:, 0]
    noise = _rng(cfg.seed, _STREAM_NOISE).normal(0.0, cfg.noise_std, size=p.shape[0])
    if cfg.noise_std == 0:
        noise = np.zeros(p.shape[0])
    return mu, noise


def simulate(x, graph, cfg, state=None):
    """End-to-end generation of a :class:`NetworkedDataset`.

    ``state`` lets callers reuse an LDA fit (it only depends on x, T and seed).
    """
    if state is None:
        state = fit_lda(x, cfg)
    z = state.distributions()
    cents = select_centroids(z, cfg)
    p = unscaled_outcomes(z, cents, graph, cfg)
    t, probs = assign_treatments(p, cfg)
    mu, noise = potential_outcomes(p, cfg)
    y = mu[np.arange(len(t)), t] + noise
    return NetworkedDataset(graph, x, t, y, mu, sim_provenance=cfg.to_dict(), seed=cfg.seed,
                            noise=noise,
                            extras={"scores": p, "probs": probs, "centroids": cents,
                                    "topics": z})


def avg_pairwise_ate(mu):
    mu = np.asarray(mu)
    K = mu.shape[1]
    return float(np.mean([abs(np.mean(mu[:, a] - mu[:, b]))
                          for a, b in combinations(range(K), 2)]))


def summarize(ds):
    """Table-1 style record: N, edges, covariate count, avg-pairwise-ate."""
    if ds.expected_outcomes is None:
        raise DatasetError("dataset has no ground-truth outcomes")
    counts = np.bincount(ds.treatments, minlength=ds.K)
    return {"n_units": ds.n_units, "n_edges": ds.graph.n_edges, "p": ds.p, "K": ds.K,
            "avg_pairwise_ate": avg_pairwise_ate(ds.expected_outcomes),
            "treatment_counts": counts.tolist()}
