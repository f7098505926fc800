"""GCN and fully-connected representation trunks with K outcome heads.

Parameters are a flat ``dict`` name -> ndarray. Forward functions accept
either plain arrays (returns arrays) or a :class:`~netcate.numkernel.Tape`
via ``tape=`` (returns Vars and registers the parameters for backward).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import numkernel as nk
from .balance import BalanceConfig

REPRESENTATIONS = ("graph-conv", "fully-connected")


@dataclass(frozen=True)
class ModelConfig:
    n_features: int
    K: int
    representation: str = "graph-conv"
    rep_layers: tuple = (25, 25, 25)
    head_layers: tuple = (10, 10)
    propagation: str = "normalized"  # or "raw" for literal (A + I)
    seed: int = 0

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"representation must be one of {REPRESENTATIONS}")
        if self.propagation not in ("normalized", "raw"):
            raise ValueError("propagation must be 'normalized' or 'raw'")
        if self.K < 2:
            raise ValueError("K must be >= 2")
        object.__setattr__(self, "rep_layers", tuple(int(w) for w in self.rep_layers))
        object.__setattr__(self, "head_layers", tuple(int(w) for w in self.head_layers))
        if not self.rep_layers or min(self.rep_layers + self.head_layers + (self.n_features,)) < 1:
            raise ValueError("layer widths must be >= 1 and at least one representation layer")

    @property
    def d(self):
        return self.rep_layers[-1]

    def to_dict(self):
        d = asdict(self)
        d["rep_layers"] = list(self.rep_layers)
        d["head_layers"] = list(self.head_layers)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# name -> (representation, balance kind)
MODELS = {
    "gcn-wass": ("graph-conv", "wasserstein"),
    "gcn-mmd": ("graph-conv", "mmd"),
    "tarnet": ("fully-connected", "none"),
    "cfrnet-wass": ("fully-connected", "wasserstein"),
    "cfrnet-mmd": ("fully-connected", "mmd"),
}


def preset(name, n_features, K, seed=0, alpha=1.0, beta=0.5, **balance_kw):
    """ModelConfig and BalanceConfig for one of the five named estimators.

    GCN models: 3 graph layers of 25, heads 2 x 10. Baselines: 2 dense
    layers of 25, heads 2 x 25. TARNet carries no balance term.
    """
    if name not in MODELS:
        raise KeyError(f"unknown model {name!r}; valid: {', '.join(MODELS)}")
    rep, kind = MODELS[name]
    if rep == "graph-conv":
        mcfg = ModelConfig(n_features, K, rep, (25, 25, 25), (10, 10), seed=seed)
    else:
        mcfg = ModelConfig(n_features, K, rep, (25, 25), (25, 25), seed=seed)
    if kind == "none":
        beta = 0.0
    return mcfg, BalanceConfig(kind=kind, alpha=alpha, beta=beta, **balance_kw)


def _layer_shapes(cfg):
    shapes = []
    widths = (cfg.n_features,) + cfg.rep_layers
    for l in range(len(cfg.rep_layers)):
        shapes.append((f"rep{l}.W", (widths[l], widths[l + 1])))
        shapes.append((f"rep{l}.b", (1, widths[l + 1])))
    hw = (cfg.d,) + cfg.head_layers + (1,)
    for t in range(cfg.K):
        for l in range(len(hw) - 1):
            tag = f"head{t}.{l}" if l < len(hw) - 2 else f"head{t}.out"
            shapes.append((f"{tag}.W", (hw[l], hw[l + 1])))
            shapes.append((f"{tag}.b", (1, hw[l + 1])))
    return shapes


def init_params(cfg):
    """Glorot-uniform weights, zero biases; deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in _layer_shapes(cfg):
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            s = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-s, s, size=shape)
    return params


def weight_names(params):
    return [k for k in params if k.endswith(".W")]


@lru_cache(maxsize=16)
def _propagator_cached(n, edges_bytes, mode):
    edges = np.frombuffer(edges_bytes, dtype=np.int64).reshape(-1, 2)
    u, v = edges[:, 0], edges[:, 1]
    a = sp.coo_matrix((np.ones(2 * len(u)), (np.r_[u, v], np.r_[v, u])), shape=(n, n)).tocsr()
    a_hat = a + sp.identity(n, format="csr")
    if mode == "normalized":
        inv_sqrt = 1.0 / np.sqrt(np.asarray(a_hat.sum(axis=1)).ravel())
        d = sp.diags(inv_sqrt)
        a_hat = d @ a_hat @ d
    return sp.csr_matrix(a_hat)


def propagator(graph, mode="normalized"):
    """D^-1/2 (A + I) D^-1/2, or the literal A + I when ``mode == "raw"``."""
    return _propagator_cached(graph.n_units, graph.edges.tobytes(), mode)


def _bind(params, tape):
    out = {}
    for k, v in params.items():
        if isinstance(v, nk.Var):
            out[k] = v
        elif k in tape.params:
            out[k] = tape.params[k]
        else:
            out[k] = tape.param(v, k)
    return out


def forward_representation(params, cfg, x, graph=None, propagate=None, *, tape=None):
    """Shared representation: ELU after every layer; graph mode multiplies by the propagator."""
    if propagate is None:
        propagate = cfg.representation == "graph-conv"
    own = tape is None
    tape = tape or nk.Tape()
    pv = _bind(params, tape)
    x = sp.csr_matrix(x, dtype=np.float64)
    if x.shape[1] != cfg.n_features:
        raise ValueError(f"covariates have {x.shape[1]} columns, model expects {cfg.n_features}")
    a_hat = None
    if propagate:
        if graph is None or graph.n_units != x.shape[0]:
            raise ValueError("graph-conv representation needs a graph matching the covariates")
        a_hat = propagator(graph, cfg.propagation)
    h = None
    for l in range(len(cfg.rep_layers)):
        w, b = pv[f"rep{l}.W"], pv[f"rep{l}.b"]
        hw = nk.spmm(x, w) if h is None else h @ w
        if a_hat is not None:
            hw = nk.spmm(a_hat, hw)
        h = nk.elu(hw + b)
    return h.value if own else h


def forward_heads(params, cfg, phi, *, tape=None):
    """(N, K) predicted outcomes, one column per treatment head."""
    own = tape is None and not isinstance(phi, nk.Var)
    if tape is None:
        tape = phi.tape if isinstance(phi, nk.Var) else nk.Tape()
    pv = _bind(params, tape)
    phi = nk._lift(phi, tape)
    if phi.value.shape[1] != cfg.d:
        raise ValueError(f"representation width {phi.value.shape[1]} != {cfg.d}")
    cols = []
    for t in range(cfg.K):
        h = phi
        for l in range(len(cfg.head_layers)):
            h = nk.elu(nk.affine(h, pv[f"head{t}.{l}.W"], pv[f"head{t}.{l}.b"]))
        cols.append(nk.affine(h, pv[f"head{t}.out.W"], pv[f"head{t}.out.b"]))
    out = nk.hstack(cols)
    return out.value if own else out


def predict(params, cfg, x, graph=None):
    """Potential-outcome predictions (N, K) as a plain array."""
    return forward_heads(params, cfg, forward_representation(params, cfg, x, graph))


def predict_ite(yhat, a, b):
    """Estimated effect of treatment a relative to b for every unit."""
    yhat = np.asarray(yhat)
    K = yhat.shape[1]
    if not (0 <= a < K and 0 <= b < K):
        raise IndexError(f"treatments must be in 0..{K - 1}")
    return yhat[:, a] - yhat[:, b]


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path, params, cfg, **meta):
    """``.npz`` archive: one array per parameter plus a JSON ``__meta__`` string."""
    info = {"model_config": cfg.to_dict(), **meta}
    arrays = {k: np.asarray(v) for k, v in params.items()}
    arrays["__meta__"] = np.array(json.dumps(info, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        info = json.loads(str(z["__meta__"]))
        cfg = ModelConfig.from_dict(info.pop("model_config"))
        params = {k: z[k] for k in z.files if k != "__meta__"}
    expected = dict(_layer_shapes(cfg))
    if set(expected) != set(params) or any(params[k].shape != s for k, s in expected.items()):
        raise ValueError(f"{path}: parameters do not match the stored model config")
    ordered = {k: params[k] for k, _ in _layer_shapes(cfg)}
    return ordered, cfg, info
