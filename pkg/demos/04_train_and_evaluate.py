"""Train a graph model and a graph-blind baseline on one simulated dataset and score both."""
import time

from netcate.evalmetrics import evaluate
from netcate.experiments import build_dataset
from netcate.model import predict, preset
from netcate.topicsim import SimConfig
from netcate.trainer import TrainConfig, train

sim = SimConfig(K=4, T=10, k2=2.0, seed=1)
ds = build_dataset({"synthetic_sbm": {"n": 400, "c": 4}}, sim)

for name in ("gcn-wass", "cfrnet-wass", "tarnet"):
    start = time.perf_counter()
    mcfg, bcfg = preset(name, ds.p, ds.K, seed=1)
    params, report = train(ds, mcfg, bcfg, TrainConfig(seed=1))
    ev = evaluate(predict(params, mcfg, ds.covariates, ds.graph), ds.expected_outcomes)
    print(f"{name:12s} sqrt PEHE {ev.sqrt_pehe:.3f}  ATE error {ev.ate_error:.3f}  "
          f"best epoch {report.best_epoch}/{len(report.epochs)}  {time.perf_counter() - start:.0f}s")
