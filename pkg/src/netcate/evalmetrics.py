"""Multi-treatment ITE metrics, seed aggregation and results tables."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

RESULT_COLUMNS = ("model", "dataset", "K", "k2", "sqrt_pehe_mean", "sqrt_pehe_std",
                  "ate_mean", "ate_std")


def _check(yhat, mu):
    yhat, mu = np.asarray(yhat, dtype=np.float64), np.asarray(mu, dtype=np.float64)
    if yhat.shape != mu.shape or yhat.ndim != 2:
        raise ValueError(f"shape mismatch: predictions {yhat.shape}, truth {mu.shape}")
    if mu.shape[1] < 2:
        raise ValueError("need K >= 2")
    return yhat, mu


def _pairs(K):
    # (a, b) with a > b
    return [(a, b) for b, a in combinations(range(K), 2)]


def per_pair(yhat, mu):
    """{(a, b): {"pehe_pair": mean squared ITE error, "ate_pair": |ATE error|}} for a > b."""
    yhat, mu = _check(yhat, mu)
    out = {}
    for a, b in _pairs(mu.shape[1]):
        err = (yhat[:, a] - yhat[:, b]) - (mu[:, a] - mu[:, b])
        out[(a, b)] = {"pehe_pair": float(np.mean(err ** 2)),
                       "ate_pair": float(abs(np.mean(yhat[:, a] - yhat[:, b])
                                             - np.mean(mu[:, a] - mu[:, b])))}
    return out


def pehe(yhat, mu):
    """Square root of the pair-averaged PEHE."""
    pp = per_pair(yhat, mu)
    return float(np.sqrt(np.mean([v["pehe_pair"] for v in pp.values()])))


def ate_error(yhat, mu):
    pp = per_pair(yhat, mu)
    return float(np.mean([v["ate_pair"] for v in pp.values()]))


@dataclass
class EvaluationReport:
    sqrt_pehe: float
    ate_error: float
    per_pair: dict
    n_units: int
    K: int
    seed: int | None = None
    mean_pair_root_pehe: float = 0.0
    labels: dict = field(default_factory=dict)


def evaluate(yhat, mu, seed=None, **labels):
    pp = per_pair(yhat, mu)
    pe = np.array([v["pehe_pair"] for v in pp.values()])
    at = np.array([v["ate_pair"] for v in pp.values()])
    n, K = np.shape(mu)
    return EvaluationReport(float(np.sqrt(pe.mean())), float(at.mean()), pp, n, K, seed,
                            float(np.mean(np.sqrt(pe))), labels)


def aggregate(reports):
    """Mean and population standard deviation of each metric across reports."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    if len({r.K for r in reports}) != 1:
        raise ValueError("reports have different K")
    out = {}
    for name in ("sqrt_pehe", "ate_error", "mean_pair_root_pehe"):
        vals = np.sort([getattr(r, name) for r in reports])
        out[name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals, ddof=0))}
    out["n_seeds"] = len(reports)
    return out


# -- results CSV -----------------------------------------------------------

def header_hash(columns):
    return hashlib.sha256(",".join(columns).encode()).hexdigest()[:12]


class SchemaMismatch(RuntimeError):
    pass


class ResultsCSV:
    """Append-only CSV guarded by a hash of its header.

    The first line is ``# schema=<hash>``, the second the column names.
    """

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = tuple(columns)
        self.tag = f"# schema={header_hash(self.columns)}"
        if self.path.exists() and self.path.stat().st_size:
            with open(self.path, encoding="utf-8") as fh:
                first = fh.readline().rstrip("\n")
                second = fh.readline().rstrip("\n")
            if first != self.tag or second != ",".join(self.columns):
                raise SchemaMismatch(f"{self.path}: header does not match expected schema")
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", encoding="utf-8", newline="") as fh:
                fh.write(self.tag + "\n" + ",".join(self.columns) + "\n")

    def rows(self):
        with open(self.path, encoding="utf-8", newline="") as fh:
            fh.readline()
            return list(csv.DictReader(fh))

    def append(self, row):
        with open(self.path, "a", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([_cell(row[c]) for c in self.columns])


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def result_row(model, dataset, K, k2, agg):
    return {"model": model, "dataset": dataset, "K": int(K), "k2": float(k2),
            "sqrt_pehe_mean": agg["sqrt_pehe"]["mean"], "sqrt_pehe_std": agg["sqrt_pehe"]["std"],
            "ate_mean": agg["ate_error"]["mean"], "ate_std": agg["ate_error"]["std"]}


def markdown_table(rows):
    """Render result rows as one markdown table per (dataset, K), k2 across columns."""
    rows = list(rows)
    blocks = []
    groups = {}
    for r in rows:
        groups.setdefault((r["dataset"], int(r["K"])), []).append(r)
    for (dataset, K), rs in sorted(groups.items()):
        k2s = sorted({float(r["k2"]) for r in rs})
        models = list(dict.fromkeys(r["model"] for r in rs))
        head = "| model | " + " | ".join(f"k2={k:g} √ε_PEHE | k2={k:g} ε_ATE" for k in k2s) + " |"
        sep = "|---" * (1 + 2 * len(k2s)) + "|"
        lines = [f"**{dataset}, K={K}**", "", head, sep]
        for m in models:
            cells = []
            for k in k2s:
                hit = [r for r in rs if r["model"] == m and float(r["k2"]) == k]
                if hit:
                    h = hit[-1]
                    cells += [f"{float(h['sqrt_pehe_mean']):.2f} ± {float(h['sqrt_pehe_std']):.2f}",
                              f"{float(h['ate_mean']):.2f} ± {float(h['ate_std']):.2f}"]
                else:
                    cells += ["", ""]
            lines.append(f"| {m} | " + " | ".join(cells) + " |")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
