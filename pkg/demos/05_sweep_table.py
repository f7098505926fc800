"""A small seed sweep written to a results CSV and rendered as a markdown table.

The same thing is available from the shell as ``netcate sweep``.
"""
import tempfile
from pathlib import Path

from netcate.cli import write_results
from netcate.evalmetrics import markdown_table
from netcate.experiments import run_cell
from netcate.topicsim import SimConfig
from netcate.trainer import TrainConfig

source = {"synthetic_sbm": {"n": 200, "c": 4}}
quick = TrainConfig(max_epochs=60, patience=15)
cells = []
for k2 in (0.5, 2.0):
    for model in ("gcn-mmd", "cfrnet-mmd"):
        for seed in (0, 1):
            rec = run_cell(source, SimConfig(K=3, T=10, k2=k2, seed=seed), model, seed,
                           tcfg=quick, dataset_name="sbm200")
            cells.append(rec)
            print(f"{model} k2={k2} seed={seed}: {rec['sqrt_pehe']:.3f}")

out = Path(tempfile.mkdtemp()) / "results.csv"
print(markdown_table(write_results(cells, out)))
print(f"rows written to {out}")
