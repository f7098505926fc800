"""Command line entry point: ``netcate generate|train|evaluate|gradcheck|sweep``.

Settings precedence for ``sweep``: built-in defaults < config file < flags.
Output goes to ``--out`` if given, else ``$NETCATE_OUT``, else ``./netcate_out``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from itertools import product
from pathlib import Path


from .balance import BalanceConfig
from .evalmetrics import (RESULT_COLUMNS, ResultsCSV, aggregate, evaluate, markdown_table,
                          result_row)
from .experiments import build_dataset, parse_sbm_spec, run_cell
from .graphdata import load_dataset, save_dataset
from .gradcheck import check_models
from .model import MODELS, load_checkpoint, predict, preset, save_checkpoint
from .topicsim import SimConfig, summarize
from .trainer import TrainConfig, train

CELL_COLUMNS = ("dataset", "K", "k2", "model", "seed", "sqrt_pehe", "ate", "best_epoch", "epochs")


def default_out():
    return Path(os.environ.get("NETCATE_OUT", "netcate_out"))


def _out(args):
    return Path(args.out) if args.out else default_out()


# -- argument groups -------------------------------------------------------

def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--l2-weight", type=float)
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--val-fraction", type=float)
    g.add_argument("--optimizer", choices=("adam", "sgd-momentum"))
    b = p.add_argument_group("balance")
    b.add_argument("--sinkhorn-iters", type=int)
    b.add_argument("--sinkhorn-epsilon", type=float)
    b.add_argument("--mmd-kernel", choices=("rbf", "linear"))
    b.add_argument("--rbf-bandwidth", help="'median' or a fixed sigma")


def _train_overrides(args):
    names = {f.name for f in fields(TrainConfig)}
    return {k: v for k, v in vars(args).items() if k in names and v is not None and k != "seed"}


def _balance_overrides(args):
    out = {}
    for key in ("sinkhorn_iters", "sinkhorn_epsilon", "mmd_kernel"):
        if getattr(args, key, None) is not None:
            out[key] = getattr(args, key)
    bw = getattr(args, "rbf_bandwidth", None)
    if bw is not None:
        out["rbf_bandwidth"] = bw if bw == "median" else float(bw)
    return out


# -- commands --------------------------------------------------------------

def cmd_generate(args, parser):
    if args.k < 2:
        parser.error("--k must be >= 2")
    sim = SimConfig(K=args.k, T=args.topics, k1=args.k1, k2=args.k2, C=args.C,
                    noise_std=args.noise_std, seed=args.seed, lda_sweeps=args.sweeps)
    if args.mat:
        source = {"mat": args.mat}
    else:
        try:
            source = {"synthetic_sbm": parse_sbm_spec(args.synthetic_sbm or "")}
        except ValueError as exc:
            parser.error(str(exc))
    ds = build_dataset(source, sim)
    out = _out(args)
    save_dataset(ds, out)
    s = summarize(ds)
    print(f"N={s['n_units']} edges={s['n_edges']} p={s['p']} K={s['K']} k2={sim.k2:g} "
          f"avg-pairwise-ate={s['avg_pairwise_ate']:.4f} -> {out}")
    return 0


def cmd_train(args, parser):
    if args.model not in MODELS:
        parser.error(f"unknown model {args.model!r}; valid: {', '.join(MODELS)}")
    ds = load_dataset(args.dataset)
    mcfg, bcfg = preset(args.model, ds.p, ds.K, seed=args.seed, **_balance_overrides(args))
    tcfg = TrainConfig(seed=args.seed, **_train_overrides(args))
    params, report = train(ds, mcfg, bcfg, tcfg)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.model}_seed{args.seed}"
    save_checkpoint(out / f"{stem}.npz", params, mcfg, model=args.model, seed=args.seed,
                    dataset=str(args.dataset))
    report.to_csv(out / f"{stem}_report.csv")
    print(f"{args.model} seed={args.seed} best_epoch={report.best_epoch} "
          f"epochs={len(report.epochs)} -> {out / (stem + '.npz')}")
    return 0


def cmd_evaluate(args, parser):
    ckpts = [Path(c) for c in args.checkpoints]
    missing = [str(c) for c in ckpts if not c.is_file()]
    if missing:
        print(f"missing checkpoint(s): {', '.join(missing)}", file=sys.stderr)
        return 1
    datasets = args.dataset
    if len(datasets) not in (1, len(ckpts)):
        parser.error("give one dataset, or one per checkpoint")
    if len(datasets) == 1:
        datasets = datasets * len(ckpts)
    loaded = {}
    reports, model_names = [], set()
    for ck, dpath in zip(ckpts, datasets):
        if dpath not in loaded:
            loaded[dpath] = load_dataset(dpath)
        ds = loaded[dpath]
        params, mcfg, info = load_checkpoint(ck)
        if mcfg.K != ds.K or mcfg.n_features != ds.p:
            print(f"{ck}: checkpoint does not match dataset {dpath}", file=sys.stderr)
            return 1
        yhat = predict(params, mcfg, ds.covariates, ds.graph)
        rep = evaluate(yhat, ds.expected_outcomes, seed=info.get("seed"))
        reports.append(rep)
        model_names.add(info.get("model", "model"))
        print(f"{ck.name}: sqrt_pehe={rep.sqrt_pehe:.4f} ate={rep.ate_error:.4f}")
    agg = aggregate(reports)
    first = loaded[datasets[0]]
    k2 = (first.sim_provenance or {}).get("k2", float("nan"))
    model = args.model or "+".join(sorted(model_names))
    name = args.name or Path(datasets[0]).resolve().name
    row = result_row(model, name, first.K, k2, agg)
    results = ResultsCSV(args.results or (default_out() / "results.csv"), RESULT_COLUMNS)
    results.append(row)
    print(f"{model}: sqrt_pehe={agg['sqrt_pehe']['mean']:.4f} ± {agg['sqrt_pehe']['std']:.4f} "
          f"ate={agg['ate_error']['mean']:.4f} ± {agg['ate_error']['std']:.4f} "
          f"({agg['n_seeds']} seed(s)) -> {results.path}")
    if args.table:
        print(markdown_table(results.rows()))
    return 0


def cmd_gradcheck(args, parser):
    results = check_models(seed=args.seed, n=args.n, K=args.k, d=args.d)
    worst = max(results, key=lambda r: r.max_rel_error)
    for r in results:
        flag = "ok" if r.ok(args.tolerance) else "FAIL"
        print(f"{r.name:12s} max_rel_error={r.max_rel_error:.3e} worst={r.worst_param}"
              f"{list(r.worst_index)} checked={r.n_checked} {flag}")
    if worst.ok(args.tolerance):
        print(f"PASS max relative error {worst.max_rel_error:.3e} (tolerance {args.tolerance:g})")
        return 0
    print(f"FAIL worst offender {worst.name} {worst.worst_param}{list(worst.worst_index)} "
          f"relative error {worst.max_rel_error:.3e} > {args.tolerance:g}")
    return 1


# -- sweep -----------------------------------------------------------------

def _parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if "," in text:
            return [_parse_value(t) for t in text.split(",")]
        return text


def load_config(path):
    """JSON object, or ``dotted.key = value`` lines (values parsed as JSON when possible)."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return json.loads(text)
    cfg = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        node = cfg
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = _parse_value(val)
    return cfg


def _as_list(v):
    return v if isinstance(v, list) else [v]


def sweep_cells(cfg):
    """Expand a sweep config into (source, SimConfig, model, seed) cells."""
    models = _as_list(cfg.get("models", list(MODELS)))
    unknown = [m for m in models if m not in MODELS]
    if unknown:
        raise ValueError(f"unknown model(s) {unknown}; valid: {', '.join(MODELS)}")
    seeds = _as_list(cfg.get("seeds", []))
    if not seeds or seeds == [None]:
        raise ValueError("seed list is empty")
    sim = dict(cfg.get("sim", {}))
    Ks = _as_list(sim.pop("K", 4))
    k2s = _as_list(sim.pop("k2", 0.5))
    source = cfg.get("dataset", {"synthetic_sbm": {}})
    cells = []
    for K, k2, model, seed in product(Ks, k2s, models, seeds):
        cells.append((source, SimConfig(K=int(K), k2=float(k2), seed=int(seed), **sim),
                      model, int(seed)))
    return cells


def _cell_key(dataset, K, k2, model, seed):
    return (str(dataset), int(K), float(k2), str(model), int(seed))


def _run_cell_job(job):
    source, sim, model, seed, tdict, bdict, ckdir, name = job
    return run_cell(source, sim, model, seed, TrainConfig(**tdict), bdict, ckdir, name)


def cmd_sweep(args, parser):
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        parser.error(f"cannot parse config: {exc}")
    if args.seeds is not None:
        cfg["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
    if args.models is not None:
        cfg["models"] = [m for m in args.models.split(",") if m.strip()]
    train_cfg = dict(cfg.get("train", {}))
    train_cfg.update(_train_overrides(args))
    balance_cfg = dict(cfg.get("balance", {}))
    balance_cfg.update(_balance_overrides(args))
    try:
        cells = sweep_cells(cfg)
        TrainConfig(**train_cfg)
        BalanceConfig(**balance_cfg)
    except (TypeError, ValueError) as exc:
        parser.error(str(exc))
    name = cfg.get("name", "dataset")
    out = Path(args.out) if args.out else Path(cfg["output"]) if "output" in cfg else default_out()
    out.mkdir(parents=True, exist_ok=True)
    log = ResultsCSV(out / "cells.csv", CELL_COLUMNS)
    done = {_cell_key(r["dataset"], r["K"], r["k2"], r["model"], r["seed"]) for r in log.rows()}
    todo = [c for c in cells if _cell_key(name, c[1].K, c[1].k2, c[2], c[3]) not in done]
    print(f"{len(cells)} cells, {len(cells) - len(todo)} already complete, {len(todo)} to run")
    ckdir = str(out / "checkpoints") if args.checkpoints else None
    jobs = [(src, sim, model, seed, train_cfg, balance_cfg, ckdir, name)
            for src, sim, model, seed in todo]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for rec in pool.map(_run_cell_job, jobs):
                log.append(rec)
                print(f"  {rec['model']} K={rec['K']} k2={rec['k2']:g} seed={rec['seed']} "
                      f"sqrt_pehe={rec['sqrt_pehe']:.4f}")
    else:
        for job in jobs:
            rec = _run_cell_job(job)
            log.append(rec)
            print(f"  {rec['model']} K={rec['K']} k2={rec['k2']:g} seed={rec['seed']} "
                  f"sqrt_pehe={rec['sqrt_pehe']:.4f}")
    rows = write_results(log.rows(), out / "results.csv")
    print(f"{len(rows)} result rows -> {out / 'results.csv'}")
    if args.table:
        print(markdown_table(rows))
    return 0


def write_results(cell_rows, path):
    """Aggregate per-seed cell rows into sorted result rows (rewrites ``path``)."""
    from .evalmetrics import EvaluationReport

    groups = {}
    for r in cell_rows:
        key = (r["dataset"], int(r["K"]), float(r["k2"]), r["model"])
        rep = EvaluationReport(float(r["sqrt_pehe"]), float(r["ate"]), {}, 0, int(r["K"]),
                               int(r["seed"]))
        groups.setdefault(key, {})[int(r["seed"])] = rep
    path = Path(path)
    if path.exists():
        path.unlink()
    results = ResultsCSV(path, RESULT_COLUMNS)
    order = {m: i for i, m in enumerate(MODELS)}
    rows = []
    for (dataset, K, k2, model) in sorted(groups, key=lambda k: (k[0], k[1], k[2], order.get(k[3], 99), k[3])):
        reps = [groups[(dataset, K, k2, model)][s] for s in sorted(groups[(dataset, K, k2, model)])]
        row = result_row(model, dataset, K, k2, aggregate(reps))
        results.append(row)
        rows.append(row)
    return rows


# -- parser ----------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="netcate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a semi-synthetic dataset directory")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--synthetic-sbm", metavar="SPEC",
                     help="e.g. n=400,c=4[,p_in=0.05,p_out=0.005,vocab=200,doc_length=60]")
    src.add_argument("--mat", help=".mat file with Network and Attributes variables")
    g.add_argument("--k", type=int, default=4)
    g.add_argument("--k1", type=float, default=10.0)
    g.add_argument("--k2", type=float, default=0.5)
    g.add_argument("--C", type=float, default=5.0)
    g.add_argument("--topics", type=int, default=50)
    g.add_argument("--noise-std", type=float, default=1.0)
    g.add_argument("--sweeps", type=int, default=200, help="LDA Gibbs sweeps")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model on one dataset")
    t.add_argument("--model", required=True, help=f"one of {', '.join(MODELS)}")
    t.add_argument("--dataset", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score checkpoints and append a results row")
    e.add_argument("--dataset", nargs="+", required=True)
    e.add_argument("--checkpoints", nargs="+", required=True)
    e.add_argument("--results")
    e.add_argument("--model")
    e.add_argument("--name", help="dataset label for the results row")
    e.add_argument("--table", action="store_true", help="print all results as markdown")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("gradcheck", help="finite-difference check of all model objectives")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tolerance", type=float, default=1e-3)
    c.add_argument("--n", type=int, default=20)
    c.add_argument("--k", type=int, default=3)
    c.add_argument("--d", type=int, default=5)
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("sweep", help="run a resumable dataset x model x seed grid")
    s.add_argument("config")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--seeds", help="comma-separated, overrides the config")
    s.add_argument("--models", help="comma-separated, overrides the config")
    s.add_argument("--out")
    s.add_argument("--checkpoints", action="store_true", help="keep per-cell checkpoints")
    s.add_argument("--table", action="store_true")
    _add_train_flags(s)
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    return args.func(args, sub)


if __name__ == "__main__":
    sys.exit(main())
