"""Representation-balance losses for K treatment groups.

All losses take and return :class:`~netcate.numkernel.Var` objects so they can
be differentiated; plain arrays are accepted and wrapped on a fresh tape.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Union

import numpy as np

from . import numkernel as nk

log = logging.getLogger(__name__)

KINDS = ("wasserstein", "mmd", "none")


@dataclass(frozen=True)
class BalanceConfig:
    """IPM choice and loss weights.

    ``rbf_bandwidth`` is ``"median"`` or a fixed sigma. ``sinkhorn_epsilon`` is
    an absolute regularization if given, else ``epsilon_median_factor`` times
    the median cost entry.
    """

    kind: str = "wasserstein"
    mmd_kernel: str = "rbf"
    rbf_bandwidth: Union[str, float] = "median"
    sinkhorn_epsilon: float | None = None
    epsilon_median_factor: float = 0.1
    sinkhorn_iters: int = 10
    alpha: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.mmd_kernel not in ("rbf", "linear"):
            raise ValueError("mmd_kernel must be 'rbf' or 'linear'")
        if self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn_iters must be >= 1")
        if self.sinkhorn_epsilon is not None and self.sinkhorn_epsilon <= 0:
            raise ValueError("sinkhorn_epsilon must be > 0")
        if self.epsilon_median_factor <= 0:
            raise ValueError("epsilon_median_factor must be > 0")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self):
        return asdict(self)


def _vars(*xs):
    tape = nk._tape_of(*xs) or nk.Tape()
    return [nk._lift(x, tape) for x in xs]


def _check_groups(sa, sb):
    if sa.value.shape[0] < 1 or sb.value.shape[0] < 1:
        raise ValueError("empty group")
    if sa.value.shape[1] != sb.value.shape[1]:
        raise ValueError("groups have different representation widths")


def mse_loss(pred, target):
    pred, target = _vars(pred, target)
    if pred.value.size == 0:
        raise ValueError("empty input")
    if pred.value.shape != target.value.shape:
        raise ValueError(f"shape mismatch {pred.value.shape} vs {target.value.shape}")
    return nk.mean_all(nk.square(pred - target))


def _median_bandwidth(pooled):
    """Median squared distance over distinct pairs of pooled rows (None if undefined)."""
    n = pooled.value.shape[0]
    if n < 2:
        return None
    iu, ju = np.triu_indices(n, k=1)
    med = nk.median(nk.gather(nk.pairwise_sqdist(pooled, pooled), iu, ju))
    return med if med.value > 0 else None


def mmd(sa, sb, cfg: BalanceConfig):
    """Biased (V-statistic) squared MMD between the row sets ``sa`` and ``sb``.

    RBF kernel exp(-|x-y|^2 / (2 sigma^2)); with ``rbf_bandwidth="median"``
    sigma^2 is the median squared pairwise distance of the pooled sample.
    """
    sa, sb = _vars(sa, sb)
    _check_groups(sa, sb)
    if cfg.mmd_kernel == "linear":
        kaa, kbb, kab = sa @ sa.T, sb @ sb.T, sa @ sb.T
    else:
        if cfg.rbf_bandwidth == "median":
            sigma2 = _median_bandwidth(nk.vstack([sa, sb]))
            if sigma2 is None:
                sigma2 = 1.0
        else:
            sigma2 = float(cfg.rbf_bandwidth) ** 2
        inv = -0.5 / sigma2 if not isinstance(sigma2, nk.Var) else nk.div(-0.5, sigma2)
        kaa = nk.exp(nk.pairwise_sqdist(sa, sa) * inv)
        kbb = nk.exp(nk.pairwise_sqdist(sb, sb) * inv)
        kab = nk.exp(nk.pairwise_sqdist(sa, sb) * inv)
    return nk.mean_all(kaa) + nk.mean_all(kbb) - 2.0 * nk.mean_all(kab)


def _sinkhorn_oriented(cost, eps, n_iter):
    m, n = cost.value.shape
    log_a = np.full((m, 1), -np.log(m))
    log_b = np.full((1, n), -np.log(n))
    scaled = cost / eps  # (m, n)
    g = cost.tape.constant(np.zeros((1, n)))
    f = None
    for _ in range(n_iter):
        f = (log_a - nk.logsumexp(g - scaled, axis=1))  # dual potentials / eps
        g = (log_b - nk.logsumexp(f - scaled, axis=0))
    plan = nk.exp(f + g - scaled)
    return nk.sum_all(plan * cost)


def wasserstein(sa, sb, cfg: BalanceConfig):
    """Entropic OT cost between uniform empirical measures, Euclidean ground cost.

    Runs a fixed number of log-domain Sinkhorn iterations and averages both
    orientations, which makes the estimate exactly symmetric.
    """
    sa, sb = _vars(sa, sb)
    _check_groups(sa, sb)
    cost = nk.pairwise_dist(sa, sb)
    if cfg.sinkhorn_epsilon is not None:
        eps = float(cfg.sinkhorn_epsilon)
    else:
        med = nk.median(cost)
        if med.value <= 0:
            eps = cfg.epsilon_median_factor
        else:
            eps = nk.mul(med, cfg.epsilon_median_factor)
    forward = _sinkhorn_oriented(cost, eps, cfg.sinkhorn_iters)
    backward = _sinkhorn_oriented(nk.transpose(cost), eps, cfg.sinkhorn_iters)
    return 0.5 * (forward + backward)


def ipm(sa, sb, cfg: BalanceConfig):
    if cfg.kind == "wasserstein":
        return wasserstein(sa, sb, cfg)
    if cfg.kind == "mmd":
        return mmd(sa, sb, cfg)
    raise ValueError("balance kind 'none' has no IPM")


def pairwise_representation_loss(phi, treatments, K, cfg: BalanceConfig):
    """Average IPM over all treatment pairs whose groups are both present."""
    (phi,) = _vars(phi)
    t = np.asarray(treatments)
    if cfg.kind == "none":
        return phi.tape.constant(0.0)
    groups = {a: np.flatnonzero(t == a) for a in range(K)}
    present = [a for a in range(K) if len(groups[a])]
    if len(present) < 2:
        log.warning("fewer than two non-empty treatment groups; representation loss is 0")
        return phi.tape.constant(0.0)
    rows = {a: nk.take_rows(phi, groups[a]) for a in present}
    total = None
    n_pairs = 0
    for b, a in combinations(present, 2):
        term = ipm(rows[a], rows[b], cfg)
        total = term if total is None else total + term
        n_pairs += 1
    return total / float(n_pairs)


def total_loss(pred_factual, y, phi, treatments, K, cfg: BalanceConfig):
    """alpha * factual MSE + beta * pairwise representation loss."""
    pred_factual, y, phi = _vars(pred_factual, y, phi)
    l1 = mse_loss(pred_factual, y)
    if cfg.beta == 0 or cfg.kind == "none":
        return cfg.alpha * l1
    return cfg.alpha * l1 + cfg.beta * pairwise_representation_loss(phi, treatments, K, cfg)
