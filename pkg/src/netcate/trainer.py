"""Mini-batch training of the CATE models.

Each step runs the representation over the full graph (graph models need
every neighbour), then restricts the factual loss and the balance loss to the
units in the batch. Outcomes are standardized on the training units during
optimization and the scaling is folded back into the output layers at the end,
so the returned parameters predict outcomes on the original scale.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numkernel as nk
from .balance import mse_loss, pairwise_representation_loss
from .model import forward_heads, forward_representation, init_params, weight_names

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("epoch", "l1_train", "l2_train", "total_train", "l1_val", "stop_flag")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 0.5
    learning_rate: float = 0.01
    batch_size: int = 512
    l2_weight: float = 0.01
    max_epochs: int = 300
    patience: int = 30
    val_fraction: float = 0.1
    optimizer: str = "adam"
    momentum: float = 0.9
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    standardize_outcomes: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ValueError("optimizer must be 'adam' or 'sgd-momentum'")

    def to_dict(self):
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    initial: dict = field(default_factory=dict)
    best_epoch: int = 0
    wall_time: float = 0.0

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for row in self.epochs:
                w.writerow([row["epoch"]] + [repr(float(row[k])) for k in REPORT_COLUMNS[1:5]]
                           + [int(row["stop_flag"])])


def make_batches(n, batch_size, seed, epoch):
    """Seeded per-epoch shuffle of range(n) cut into consecutive chunks."""
    if n < 1:
        raise ValueError("n must be >= 1")
    perm = np.random.default_rng([int(seed), int(epoch)]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def split_units(n, val_fraction, seed):
    perm = np.random.default_rng([int(seed), 7919]).permutation(n)
    n_val = int(np.ceil(val_fraction * n)) if val_fraction > 0 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def objective(params, mcfg, bcfg, x, graph, treatments, y, idx, l2_weight, tape):
    """alpha * MSE + beta * L2 + l2_weight * sum of squared weights on units ``idx``.

    Returns (total, l1, l2) Vars recorded on ``tape``.
    """
    idx = np.asarray(idx)
    if mcfg.representation == "graph-conv":
        phi = nk.take_rows(forward_representation(params, mcfg, x, graph, tape=tape), idx)
    else:
        phi = forward_representation(params, mcfg, x[idx], tape=tape)
    yhat = forward_heads(params, mcfg, phi, tape=tape)
    t = np.asarray(treatments)[idx]
    l1 = mse_loss(nk.pick(yhat, t), np.asarray(y)[idx][:, None])
    total = bcfg.alpha * l1
    if bcfg.kind != "none" and bcfg.beta != 0:
        l2 = pairwise_representation_loss(phi, t, mcfg.K, bcfg)
        total = total + bcfg.beta * l2
    else:
        l2 = tape.constant(0.0)
    if l2_weight:
        pv = tape.params
        penalty = None
        for name in weight_names(params):
            sq = nk.sum_all(nk.square(pv[name]))
            penalty = sq if penalty is None else penalty + sq
        total = total + l2_weight * penalty
    return total, l1, l2


class _Adam:
    def __init__(self, params, lr, betas, eps):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1, c2 = 1 - self.b1 ** self.t, 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class _Momentum:
    def __init__(self, params, lr, momentum):
        self.lr, self.mu = lr, momentum
        self.buf = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        for k, g in grads.items():
            self.buf[k] = self.mu * self.buf[k] + g
            params[k] = params[k] - self.lr * self.buf[k]


def _evaluate(params, mcfg, bcfg, x, graph, t, y, idx, l2_weight):
    tape = nk.Tape()
    total, l1, l2 = objective(params, mcfg, bcfg, x, graph, t, y, idx, l2_weight, tape)
    return float(total.value), float(l1.value), float(l2.value)


def _val_mse(params, mcfg, x, graph, t, y, idx):
    if mcfg.representation == "graph-conv":
        phi = forward_representation(params, mcfg, x, graph)[idx]
    else:
        phi = forward_representation(params, mcfg, x[idx])
    yhat = forward_heads(params, mcfg, phi)
    return float(np.mean((yhat[np.arange(len(idx)), t[idx]] - y[idx]) ** 2))


def _fold_scaling(params, K, scale, shift):
    out = dict(params)
    for k in range(K):
        out[f"head{k}.out.W"] = params[f"head{k}.out.W"] * scale
        out[f"head{k}.out.b"] = params[f"head{k}.out.b"] * scale + shift
    return out


def train(ds, mcfg, bcfg, tcfg):
    """Fit the model; returns (params, TrainReport) at the best validation epoch."""
    if ds.K != mcfg.K:
        raise ValueError(f"dataset has K={ds.K}, model expects K={mcfg.K}")
    if ds.p != mcfg.n_features:
        raise ValueError(f"dataset has {ds.p} covariates, model expects {mcfg.n_features}")
    start = time.perf_counter()
    bcfg = replace(bcfg, alpha=tcfg.alpha, beta=tcfg.beta if bcfg.kind != "none" else 0.0)
    x, graph, t = ds.covariates, ds.graph, ds.treatments
    train_idx, val_idx = split_units(ds.n_units, tcfg.val_fraction, tcfg.seed)
    if tcfg.patience and tcfg.val_fraction > 0 and len(val_idx) == 0:
        raise ValueError("validation split is empty")
    y_raw = ds.factual_outcomes
    if tcfg.standardize_outcomes:
        shift = float(np.mean(y_raw[train_idx]))
        scale = float(np.std(y_raw[train_idx])) or 1.0
    else:
        shift, scale = 0.0, 1.0
    y = (y_raw - shift) / scale

    params = init_params(mcfg)
    if tcfg.optimizer == "adam":
        opt = _Adam(params, tcfg.learning_rate, tcfg.adam_betas, tcfg.adam_eps)
    else:
        opt = _Momentum(params, tcfg.learning_rate, tcfg.momentum)

    report = TrainReport()
    tot, l1, l2 = _evaluate(params, mcfg, bcfg, x, graph, t, y, train_idx, tcfg.l2_weight)
    report.initial = {"total_train": tot, "l1_train": l1, "l2_train": l2}
    use_val = len(val_idx) > 0
    best = (np.inf, 0, dict(params))
    since_best = 0
    for epoch in range(1, tcfg.max_epochs + 1):
        for chunk in make_batches(len(train_idx), tcfg.batch_size, tcfg.seed, epoch):
            tape = nk.Tape()
            total, _, _ = objective(params, mcfg, bcfg, x, graph, t, y, train_idx[chunk],
                                    tcfg.l2_weight, tape)
            if not np.isfinite(total.value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}: {float(total.value)}")
            opt.step(params, tape.backward(total))
        tot, l1, l2 = _evaluate(params, mcfg, bcfg, x, graph, t, y, train_idx, tcfg.l2_weight)
        if not np.isfinite(tot):
            raise TrainingDiverged(f"non-finite training loss after epoch {epoch}")
        val = _val_mse(params, mcfg, x, graph, t, y, val_idx) if use_val else float("nan")
        monitor = val if use_val else tot
        if monitor < best[0]:
            best = (monitor, epoch, dict(params))
            since_best = 0
        else:
            since_best += 1
        stop = bool(use_val and tcfg.patience and since_best >= tcfg.patience)
        report.epochs.append({"epoch": epoch, "l1_train": l1, "l2_train": l2, "total_train": tot,
                              "l1_val": val, "stop_flag": stop})
        if stop:
            log.info("early stop at epoch %d (best %d)", epoch, best[1])
            break
    if use_val:
        chosen, report.best_epoch = best[2], best[1]
    else:
        chosen, report.best_epoch = dict(params), len(report.epochs)
    report.wall_time = time.perf_counter() - start
    return _fold_scaling(chosen, mcfg.K, scale, shift), report
