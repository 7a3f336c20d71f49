"""
Comparing feature methods with an experiment plan
=================================================

A small version of plans/desk.json: every feature method plus the tail
score variant, three runs per cell, on the bundled AR(1) price file. The
summary prints the median VaR and ES gaps; plot data lands next to the
results. Expect a few minutes on one core (ARMA fits dominate).
300 steps is far from converged, so absolute gaps are large; the ordering
between cells is the point.
"""

import tempfile
from pathlib import Path

from fegan.experiment import emit_plot_data, parse_plan, run_plan

root = Path(__file__).resolve().parent.parent
out = Path(tempfile.mkdtemp(prefix="fegan-demo-"))
plan = parse_plan({
    "data": {"path": str(root / "plans/data/ar1_prices.csv"), "value_column": "close"},
    "base": {"steps": 300},
    "cells": [
        {"feature_method": m, "loss_kind": "wasserstein"}
        for m in ("None", "Historical", "Gbm", "Arma", "Hybrid")
    ] + [{"feature_method": "Historical", "loss_kind": "tail_score",
          "overrides": {"lipschitz": "penalty", "optimizer": "adam", "lr_gen": 1e-4,
                        "lr_critic": 1e-4}}],
    "runs": 3,
    "output_dir": str(out),
})

summary = run_plan(plan)
print(f"{'cell':<24}{'alpha':>6}{'VaR gap':>10}{'ES gap':>10}")
for row in summary:
    print(f"{row['cell']:<24}{row['alpha']:>6}{row['var_median']:>10.5f}{row['es_median']:>10.5f}")

for path in emit_plot_data(out):
    print("wrote", path)
