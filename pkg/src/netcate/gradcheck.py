"""Central finite-difference checks of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .graphdata import SparseGraph, generate_sbm_graph
from .model import MODELS, init_params, preset
from .trainer import objective


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    n_checked: int

    def ok(self, tolerance):
        return self.max_rel_error <= tolerance


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_function(fn, params, name="fn", floor=1e-8):
    """Compare ``fn``'s tape gradients with central differences, per entry.

    ``fn(vars, tape)`` must return a scalar Var given a dict of parameter Vars.
    Step size is 1e-4 * max(1, |theta|).
    """
    tape = nk.Tape()
    pv = {k: tape.param(v, k) for k, v in params.items()}
    grads = tape.backward(fn(pv, tape))

    def value_at(p):
        t = nk.Tape()
        return float(fn({k: t.param(v, k) for k, v in p.items()}, t).value)

    worst = (0.0, "", ())
    count = 0
    for key, base in params.items():
        for idx in np.ndindex(base.shape):
            h = 1e-4 * max(1.0, abs(base[idx]))
            plus = {**params, key: base.copy()}
            minus = {**params, key: base.copy()}
            plus[key][idx] += h
            minus[key][idx] -= h
            numeric = (value_at(plus) - value_at(minus)) / (2 * h)
            err = relative_error(float(grads[key][idx]), numeric, floor)
            count += 1
            if err > worst[0] or not worst[1]:
                worst = (err, key, idx)
    return GradCheckResult(name, worst[0], worst[1], worst[2], count)


def random_instance(seed=0, n=20, K=3, p=6, communities=2):
    """Small dense-feature SBM instance with every treatment present."""
    rng = np.random.default_rng(seed)
    graph = generate_sbm_graph(n, communities, 0.3, 0.05, seed)
    if graph.n_edges == 0:
        graph = SparseGraph.from_pairs(n, [(i, i + 1) for i in range(n - 1)])
    x = rng.poisson(1.5, size=(n, p)).astype(np.float64)
    t = np.arange(n) % K
    rng.shuffle(t)
    y = rng.normal(size=n)
    return graph, x, t, y


def check_models(seed=0, n=20, K=3, d=5, p=6, models=tuple(MODELS), l2_weight=0.01):
    """Finite-difference check of the full training objective for each named model."""
    import scipy.sparse as sp

    graph, x, t, y = random_instance(seed, n, K, p)
    xs = sp.csr_matrix(x)
    idx = np.arange(n)
    results = []
    for name in models:
        mcfg, bcfg = preset(name, p, K, seed=seed)
        # shrink to the requested width
        mcfg = type(mcfg)(p, K, mcfg.representation, (d,) * len(mcfg.rep_layers), (4, 4), seed=seed)
        params = init_params(mcfg)
        rng = np.random.default_rng([seed, 1])
        params = {k: (v + 0.1 * rng.normal(size=v.shape) if k.endswith(".b") else v)
                  for k, v in params.items()}

        def fn(pv, tape, mcfg=mcfg, bcfg=bcfg):
            return objective(pv, mcfg, bcfg, xs, graph, t, y, idx, l2_weight, tape)[0]

        results.append(check_function(fn, params, name))
    return results
