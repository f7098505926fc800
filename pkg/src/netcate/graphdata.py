"""Networked observational datasets: in-memory model, directory format, generators.

Directory layout (UTF-8, LF line endings)::

    edges.tsv         "u<TAB>v" per line, 0-based, each undirected edge once
    features.txt      header "N p NNZ", then "row col value" triplets
    units.csv         unit,treatment,y_factual
    ground_truth.csv  unit,mu_0,...,mu_{K-1}
    meta.json         {"n_units", "p", "K", "sim", "seed"}
    noise.csv         optional: unit,noise (realized outcome noise)

Floats are written with ``repr`` so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

REQUIRED_FILES = ("edges.tsv", "features.txt", "units.csv", "ground_truth.csv", "meta.json")


class DatasetError(ValueError):
    """Malformed dataset directory or inconsistent dataset contents."""


@dataclass(frozen=True)
class SparseGraph:
    """Undirected simple graph; ``edges`` is an (E, 2) int array with u < v, sorted."""

    n_units: int
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size:
            if e.min() < 0 or e.max() >= self.n_units:
                raise DatasetError("edge index out of range")
            if np.any(e[:, 0] >= e[:, 1]):
                raise DatasetError("edges must be stored once with u < v (no self-loops)")
            if len(np.unique(e, axis=0)) != len(e):
                raise DatasetError("duplicate edges")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @classmethod
    def from_pairs(cls, n_units, pairs):
        """Canonicalize arbitrary (u, v) pairs: symmetrize, drop loops and duplicates."""
        e = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n_units):
            raise DatasetError("edge index out of range")
        lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
        keep = lo != hi
        e = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
        return cls(int(n_units), e)

    @property
    def n_edges(self):
        return len(self.edges)

    def adjacency(self):
        """Symmetric CSR adjacency with zero diagonal."""
        n = self.n_units
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u))
        a = sp.coo_matrix((data, (np.r_[u, v], np.r_[v, u])), shape=(n, n))
        return a.tocsr()

    def neighbors(self, i):
        a = self.adjacency()
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def degrees(self):
        return np.bincount(self.edges.ravel(), minlength=self.n_units)


@dataclass(frozen=True, eq=False)
class NetworkedDataset:
    graph: SparseGraph
    covariates: sp.csr_matrix
    treatments: np.ndarray
    factual_outcomes: np.ndarray
    expected_outcomes: np.ndarray
    sim_provenance: Optional[dict] = None
    seed: Optional[int] = None
    noise: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        x = sp.csr_matrix(self.covariates, dtype=np.float64)
        t = np.asarray(self.treatments, dtype=np.int64)
        y = np.asarray(self.factual_outcomes, dtype=np.float64)
        mu = np.asarray(self.expected_outcomes, dtype=np.float64)
        n = self.graph.n_units
        if x.shape[0] != n:
            raise DatasetError(f"covariates have {x.shape[0]} rows, graph has {n} units")
        if x.nnz and x.data.min() < 0:
            raise DatasetError("covariates must be non-negative")
        if mu.ndim != 2 or mu.shape[0] != n:
            raise DatasetError(f"expected_outcomes must be ({n}, K), got {mu.shape}")
        K = mu.shape[1]
        if K < 2:
            raise DatasetError("need K >= 2 treatments")
        if t.shape != (n,) or y.shape != (n,):
            raise DatasetError("treatments and factual outcomes must have length n_units")
        if t.size and (t.min() < 0 or t.max() >= K):
            raise DatasetError(f"treatment index outside 0..{K - 1}")
        if self.noise is not None:
            eps = np.asarray(self.noise, dtype=np.float64)
            if not np.allclose(y, mu[np.arange(n), t] + eps, rtol=0, atol=1e-9):
                raise DatasetError("factual outcomes disagree with expected outcomes + noise")
            eps.setflags(write=False)
            object.__setattr__(self, "noise", eps)
        for arr in (t, y, mu):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "treatments", t)
        object.__setattr__(self, "factual_outcomes", y)
        object.__setattr__(self, "expected_outcomes", mu)

    @property
    def n_units(self):
        return self.graph.n_units

    @property
    def p(self):
        return self.covariates.shape[1]

    @property
    def K(self):
        return self.expected_outcomes.shape[1]


# -- directory format ------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def save_dataset(ds, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for u, v in ds.graph.edges:
            fh.write(f"{u}\t{v}\n")
    x = ds.covariates.tocoo()
    order = np.lexsort((x.col, x.row))
    with open(d / "features.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{x.shape[0]} {x.shape[1]} {x.nnz}\n")
        for k in order:
            fh.write(f"{x.row[k]} {x.col[k]} {_fmt(x.data[k])}\n")
    with open(d / "units.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("unit,treatment,y_factual\n")
        for i, (t, y) in enumerate(zip(ds.treatments, ds.factual_outcomes)):
            fh.write(f"{i},{t},{_fmt(y)}\n")
    with open(d / "ground_truth.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("unit," + ",".join(f"mu_{k}" for k in range(ds.K)) + "\n")
        for i, row in enumerate(ds.expected_outcomes):
            fh.write(f"{i}," + ",".join(_fmt(v) for v in row) + "\n")
    noise_path = d / "noise.csv"
    if ds.noise is not None:
        with open(noise_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("unit,noise\n")
            for i, e in enumerate(ds.noise):
                fh.write(f"{i},{_fmt(e)}\n")
    elif noise_path.exists():
        noise_path.unlink()
    meta = {"n_units": ds.n_units, "p": ds.p, "K": ds.K,
            "sim": ds.sim_provenance, "seed": ds.seed}
    with open(d / "meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_csv(path, header_prefix):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != header_prefix:
        raise DatasetError(f"{path.name}: missing header")
    return rows[0], rows[1:]


def load_dataset(directory):
    """Load and validate a dataset directory (see module docstring)."""
    d = Path(directory)
    for name in REQUIRED_FILES:
        if not (d / name).is_file():
            raise DatasetError(f"missing file {name} in {d}")
    try:
        with open(d / "meta.json", encoding="utf-8") as fh:
            meta = json.load(fh)
        n, p, K = int(meta["n_units"]), int(meta["p"]), int(meta["K"])

        pairs = []
        with open(d / "edges.tsv", encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if parts:
                    if len(parts) != 2:
                        raise DatasetError(f"edges.tsv: bad line {line!r}")
                    pairs.append((int(parts[0]), int(parts[1])))
        graph = SparseGraph.from_pairs(n, np.array(pairs, dtype=np.int64).reshape(-1, 2))

        with open(d / "features.txt", encoding="utf-8") as fh:
            head = fh.readline().split()
            if len(head) != 3:
                raise DatasetError("features.txt: header must be 'N p NNZ'")
            fn, fp, nnz = (int(h) for h in head)
            if fn != n or fp != p:
                raise DatasetError("features.txt header disagrees with meta.json")
            trip = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
        if len(trip) != nnz:
            raise DatasetError(f"features.txt: expected {nnz} triplets, found {len(trip)}")
        rows, cols = trip[:, 0].astype(np.int64), trip[:, 1].astype(np.int64)
        if nnz and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= p):
            raise DatasetError("features.txt: index out of range")
        x = sp.csr_matrix((trip[:, 2], (rows, cols)), shape=(n, p))

        _, unit_rows = _read_csv(d / "units.csv", "unit")
        if len(unit_rows) != n:
            raise DatasetError(f"units.csv: expected {n} rows")
        t = np.empty(n, dtype=np.int64)
        y = np.empty(n)
        for r in unit_rows:
            i = int(r[0])
            if not 0 <= i < n:
                raise DatasetError("units.csv: unit index out of range")
            t[i], y[i] = int(r[1]), float(r[2])
        if t.max() >= K or t.min() < 0:
            raise DatasetError(f"units.csv: treatment index outside 0..{K - 1}")

        head, gt_rows = _read_csv(d / "ground_truth.csv", "unit")
        if len(head) != K + 1:
            raise DatasetError(f"ground_truth.csv: expected {K} outcome columns")
        mu = np.empty((n, K))
        for r in gt_rows:
            i = int(r[0])
            if not 0 <= i < n:
                raise DatasetError("ground_truth.csv: unit index out of range")
            mu[i] = [float(v) for v in r[1:]]
        if len(gt_rows) != n:
            raise DatasetError(f"ground_truth.csv: expected {n} rows")

        noise = None
        if (d / "noise.csv").is_file():
            _, nrows = _read_csv(d / "noise.csv", "unit")
            noise = np.empty(n)
            for r in nrows:
                noise[int(r[0])] = float(r[1])
    except (KeyError, IndexError) as exc:
        raise DatasetError(f"malformed dataset in {d}: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"non-numeric field in {d}: {exc}") from exc

    return NetworkedDataset(graph, x, t, y, mu, sim_provenance=meta.get("sim"),
                            seed=meta.get("seed"), noise=noise)


def load_mat_network(path):
    """Read a BlogCatalog/Flickr style ``.mat`` file into (graph, covariates).

    The file must hold a sparse ``Network`` adjacency and an ``Attributes``
    covariate matrix (the layout these benchmarks are commonly shipped in).
    """
    from scipy.io import loadmat

    m = loadmat(os.fspath(path))
    for key in ("Network", "Attributes"):
        if key not in m:
            raise DatasetError(f"{path}: no {key!r} variable")
    a = sp.coo_matrix(m["Network"])
    graph = SparseGraph.from_pairs(a.shape[0], np.stack([a.row, a.col], axis=1))
    x = sp.csr_matrix(m["Attributes"], dtype=np.float64)
    return graph, x


# -- generators ------------------------------------------------------------

def community_labels(n, communities):
    """Balanced contiguous block labels 0..communities-1."""
    sizes = np.full(communities, n // communities)
    sizes[: n % communities] += 1
    return np.repeat(np.arange(communities), sizes)


def generate_sbm_graph(n, communities, p_in, p_out, seed):
    """Stochastic block model on balanced contiguous communities."""
    if communities < 1:
        raise ValueError("communities must be >= 1")
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ValueError("require 0 <= p_out <= p_in <= 1")
    rng = np.random.default_rng(seed)
    labels = community_labels(n, communities)
    u, v = np.triu_indices(n, k=1)
    prob = np.where(labels[u] == labels[v], p_in, p_out)
    keep = rng.random(len(u)) < prob
    return SparseGraph(int(n), np.stack([u[keep], v[keep]], axis=1))


def generate_bow_covariates(labels, vocab_size=200, n_topics=10, doc_length=60,
                            community_concentration=5.0, seed=0):
    """Bag-of-words counts from an LDA-style generative model.

    Each community gets its own Dirichlet topic profile, so units that are
    connected tend to write about similar topics.
    """
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    n = len(labels)
    n_comm = int(labels.max()) + 1 if n else 0
    topic_word = rng.dirichlet(np.full(vocab_size, 0.1), size=n_topics)
    cdf = np.cumsum(topic_word, axis=1)
    cdf[:, -1] = 1.0
    profiles = rng.dirichlet(np.full(n_topics, 0.5), size=n_comm)
    rows, cols, vals = [], [], []
    for i in range(n):
        theta = rng.dirichlet(community_concentration * profiles[labels[i]] + 0.05)
        length = max(1, rng.poisson(doc_length))
        topics = rng.choice(n_topics, size=length, p=theta)
        words = np.argmax(cdf[topics] > rng.random(length)[:, None], axis=1)
        ids, counts = np.unique(words, return_counts=True)
        rows.append(np.full(len(ids), i))
        cols.append(ids)
        vals.append(counts.astype(np.float64))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, vocab_size))
