"""Plan-driven experiment sweeps and the files they produce.

A plan is a JSON document::

    {
      "data": {"path": "vix.csv", "date_column": "date",
               "value_column": "close", "transform": "log_return"},
      "scale": "desk",                      # or "paper"
      "base": {"steps": 2000},              # FeGanConfig overrides for every cell
      "cells": [
        {"feature_method": "None", "loss_kind": "wasserstein"},
        {"feature_method": "Historical", "loss_kind": "tail_score",
         "name": "hist_tail", "overrides": {"lipschitz": "penalty"}}
      ],
      "runs": 10,                           # default 10 desk, 100 at paper scale
      "base_seed": 0,
      "output_dir": "results"
    }

``scale`` picks the base configuration: ``desk`` (3x64 nets, T = C = 10)
or ``paper`` (full sizes). Run ``i`` of every cell uses seed ``base_seed + i``. Relative paths are
resolved against the plan file's directory. Outputs in ``output_dir``:

* ``runs/<run_id>.json``   one RunResult per run (config echo, diffs, traces)
* ``results.csv``          run_id, cell, method, loss_kind, alpha, var_diff,
                           es_diff, steps; byte-identical across re-runs
* ``timings.csv``          run_id, seconds (wall clock, not reproducible)
* ``summary.csv``          per (cell, alpha) order statistics of the diffs
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidPlan, NoResultsFound, TrainingAborted
from .gan import FeGanConfig, RunResult, train
from .ingest import clean, load_csv
from .tsmodels import DEFAULT_GRID, ArmaSpec, select_arma

WORKERS_ENV = "FEGAN_WORKERS"
DEFAULT_RUNS = {"desk": 10, "paper": 100}
SUMMARY_QUANTILES = (0.1, 0.25, 0.75, 0.9)


@dataclass
class Cell:
    feature_method: str
    loss_kind: str
    name: str
    overrides: dict = field(default_factory=dict)


@dataclass
class ExperimentPlan:
    data_path: Path
    date_column: str
    value_column: str
    transform: str
    cells: list
    runs: int = 10
    base_seed: int = 0
    output_dir: Path = Path("results")
    scale: str = "desk"
    base: dict = field(default_factory=dict)

    def config_for(self, cell: Cell, run: int) -> FeGanConfig:
        kw = dict(self.base)
        kw.update(cell.overrides)
        kw.update(feature_method=cell.feature_method, loss_kind=cell.loss_kind,
                  seed=self.base_seed + run)
        if self.scale == "desk":
            return FeGanConfig.desk(**kw)
        return FeGanConfig(**kw)

    def run_id(self, cell: Cell, run: int):
        return f"{cell.name}-run{run:03d}"


def _require(d, key, where):
    if key not in d:
        raise InvalidPlan(f"{where} is missing {key!r}")
    return d[key]


def parse_plan(doc, base_dir=".") -> ExperimentPlan:
    """Validate a plan dictionary and resolve its paths."""
    if not isinstance(doc, dict):
        raise InvalidPlan("plan must be a JSON object")
    base_dir = Path(base_dir)
    data = _require(doc, "data", "plan")
    cells_doc = _require(doc, "cells", "plan")
    if not isinstance(cells_doc, list) or not cells_doc:
        raise InvalidPlan("plan needs at least one cell")
    cells = []
    for i, c in enumerate(cells_doc):
        method = _require(c, "feature_method", f"cell {i}")
        loss = _require(c, "loss_kind", f"cell {i}")
        cells.append(Cell(method, loss, c.get("name", f"{method}_{loss}"), c.get("overrides", {})))
    names = [c.name for c in cells]
    if len(set(names)) != len(names):
        raise InvalidPlan(f"cell names must be unique, got {names}")
    scale = doc.get("scale", "desk")
    if scale not in ("desk", "paper"):
        raise InvalidPlan("scale must be 'desk' or 'paper'")
    runs = int(doc.get("runs", DEFAULT_RUNS[scale]))
    if runs < 1:
        raise InvalidPlan("runs must be at least 1")
    plan = ExperimentPlan(
        data_path=base_dir / _require(data, "path", "data"),
        date_column=data.get("date_column", "date"),
        value_column=data.get("value_column", "value"),
        transform=data.get("transform", "log_return"),
        cells=cells,
        runs=runs,
        base_seed=int(doc.get("base_seed", 0)),
        output_dir=base_dir / doc.get("output_dir", "results"),
        scale=scale,
        base=dict(doc.get("base", {})),
    )
    try:
        for cell in plan.cells:
            plan.config_for(cell, 0)
    except (TypeError, ValueError) as exc:
        raise InvalidPlan(str(exc)) from exc
    return plan


def load_plan(path, **overrides) -> ExperimentPlan:
    """Read a plan file; keyword arguments replace top-level keys."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidPlan(f"cannot read plan {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidPlan(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidPlan("plan must be a JSON object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return parse_plan(doc, path.parent)


def _execute(args):
    config_dict, series, run_id, cell_name = args
    config = FeGanConfig.from_dict(config_dict)
    try:
        _, _, result = train(config, series, run_id=run_id)
    except TrainingAborted as exc:
        result = RunResult(run_id, config.to_dict(), config.config_hash(), {}, 0.0,
                           exc.step, error=str(exc), failed_step=exc.step)
    except Exception as exc:  # a failing run must not take its siblings down
        result = RunResult(run_id, config.to_dict(), config.config_hash(), {}, 0.0, 0,
                           error=f"{type(exc).__name__}: {exc}")
    d = result.to_dict()
    d["cell"] = cell_name
    return d


def summarize(records):
    """Per (cell, alpha) statistics from RunResult dictionaries.

    Failed runs only count towards ``failed``.
    """
    groups = {}
    for rec in records:
        cfg = rec["config"]
        key_base = (rec["cell"], cfg["feature_method"], cfg["loss_kind"])
        alphas = [repr(float(a)) for a in cfg["alphas"]]
        for a in alphas:
            g = groups.setdefault(key_base + (a,), {"var": [], "es": [], "secs": [], "failed": 0})
            if rec.get("error"):
                g["failed"] += 1
                continue
            d = rec["diffs"][a]
            g["var"].append(d["var_diff"])
            g["es"].append(d["es_diff"])
            g["secs"].append(rec.get("seconds", 0.0))
    rows = []
    for (cell, method, loss, a), g in groups.items():
        row = {"cell": cell, "method": method, "loss_kind": loss, "alpha": a,
               "runs": len(g["var"]), "failed": g["failed"]}
        for tag in ("var", "es"):
            vals = np.array(g[tag])
            if vals.size:
                row[f"{tag}_median"] = float(np.median(vals))
                row[f"{tag}_min"] = float(vals.min())
                row[f"{tag}_max"] = float(vals.max())
                for q in SUMMARY_QUANTILES:
                    row[f"{tag}_q{int(q * 100):02d}"] = float(np.quantile(vals, q))
            else:
                for k in ("median", "min", "max") + tuple(f"q{int(q * 100):02d}"
                                                         for q in SUMMARY_QUANTILES):
                    row[f"{tag}_{k}"] = math.nan
        row["mean_seconds"] = float(np.mean(g["secs"])) if g["secs"] else math.nan
        rows.append(row)
    return rows


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


def run_plan(plan: ExperimentPlan, workers=None):
    """Execute every (cell, run) of ``plan`` and write its output files.

    Returns the summary rows (also written to ``summary.csv``). Runs are
    distributed over ``workers`` processes (default: ``$FEGAN_WORKERS`` or 1).
    """
    raw = load_csv(plan.data_path, plan.date_column, plan.value_column)
    series = clean(raw, plan.transform)
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    tasks = [(plan.config_for(cell, i).to_dict(), series, plan.run_id(cell, i), cell.name)
             for cell in plan.cells for i in range(plan.runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_execute, tasks))
    else:
        records = [_execute(t) for t in tasks]

    out = Path(plan.output_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    for rec in records:
        (out / "runs" / f"{rec['run_id']}.json").write_text(
            json.dumps(rec, indent=1, sort_keys=True), encoding="utf-8")

    result_rows, timing_rows = [], []
    for rec in records:
        timing_rows.append([rec["run_id"], _fmt(rec.get("seconds", 0.0))])
        if rec.get("error"):
            continue
        cfg = rec["config"]
        for a, d in rec["diffs"].items():
            result_rows.append([rec["run_id"], rec["cell"], cfg["feature_method"],
                                cfg["loss_kind"], a, _fmt(d["var_diff"]), _fmt(d["es_diff"]),
                                rec["steps"]])
    _write_csv(out / "results.csv", ["run_id", "cell", "method", "loss_kind", "alpha",
                                     "var_diff", "es_diff", "steps"], result_rows)
    _write_csv(out / "timings.csv", ["run_id", "seconds"], timing_rows)

    summary = summarize(records)
    if summary:
        header = list(summary[0])
        _write_csv(out / "summary.csv", header, [[_fmt(r[h]) for h in header] for r in summary])
    return summary


def run_failures(summary):
    return sum(r["failed"] for r in summary)


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------

def _load_records(results_dir):
    files = sorted(Path(results_dir).glob("runs/*.json"))
    if not files:
        raise NoResultsFound(f"no run JSON files under {results_dir}/runs")
    return [json.loads(f.read_text(encoding="utf-8")) for f in files]


def emit_plot_data(results_dir, svg=True):
    """Sorted per-model difference curves, one CSV per (cell, alpha).

    Each CSV has columns ``model_index, var_diff, es_diff`` with both
    difference columns sorted ascending on their own, which is how the
    comparison figures are drawn. With ``svg`` a line chart overlaying all
    cells is written per (alpha, metric). Returns the written paths.
    """
    records = [r for r in _load_records(results_dir) if not r.get("error")]
    curves = {}
    for rec in records:
        for a, d in rec["diffs"].items():
            c = curves.setdefault((rec.get("cell", "cell"), a), {"var": [], "es": []})
            c["var"].append(d["var_diff"])
            c["es"].append(d["es_diff"])
    out = Path(results_dir) / "plots"
    out.mkdir(exist_ok=True)
    written = []
    for (cell, a), c in sorted(curves.items()):
        var = sorted(c["var"])
        es = sorted(c["es"])
        path = out / f"{cell}__alpha{a}.csv"
        _write_csv(path, ["model_index", "var_diff", "es_diff"],
                   [[i + 1, _fmt(v), _fmt(e)] for i, (v, e) in enumerate(zip(var, es))])
        written.append(path)
    if svg:
        for a in sorted({a for _, a in curves}):
            for tag, label in (("var", "VaR difference"), ("es", "ES difference")):
                series = {cell: sorted(c[tag]) for (cell, aa), c in sorted(curves.items())
                          if aa == a}
                path = out / f"{tag}_alpha{a}.svg"
                path.write_text(render_svg(series, f"{label} at alpha={a}", label),
                                encoding="utf-8")
                written.append(path)
    return written


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def render_svg(series, title, ylabel, width=640, height=400):
    """Minimal static line chart: model index on x, value on y."""
    ml, mr, mt, mb = 60, 150, 30, 40
    pw, ph = width - ml - mr, height - mt - mb
    n_max = max((len(v) for v in series.values()), default=1)
    all_vals = [x for v in series.values() for x in v] or [0.0, 1.0]
    lo, hi = min(all_vals), max(all_vals)
    if hi == lo:
        hi = lo + 1.0

    def sx(i):
        return ml + (pw * (i / max(n_max - 1, 1)))

    def sy(v):
        return mt + ph * (1 - (v - lo) / (hi - lo))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             '<rect width="100%" height="100%" fill="white"/>',
             f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
             f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
             f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle" '
             f'font-size="12">model (sorted)</text>',
             f'<text x="14" y="{mt + ph / 2}" font-size="12" transform="rotate(-90 14 '
             f'{mt + ph / 2})" text-anchor="middle">{ylabel}</text>']
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        parts.append(f'<text x="{ml - 6}" y="{sy(v) + 4:.1f}" text-anchor="end" '
                     f'font-size="10">{v:.3g}</text>')
    for j, (name, vals) in enumerate(series.items()):
        color = _PALETTE[j % len(_PALETTE)]
        pts = " ".join(f"{sx(i):.1f},{sy(v):.1f}" for i, v in enumerate(vals))
        if len(vals) == 1:
            parts.append(f'<circle cx="{sx(0):.1f}" cy="{sy(vals[0]):.1f}" r="3" fill="{color}"/>')
        else:
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                         f'points="{pts}"/>')
        ly = mt + 14 * j + 6
        parts.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 34}" y="{ly + 4}" font-size="10">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# ARMA selection on user data
# ---------------------------------------------------------------------------

def select_arma_cmd(data_path, out_path, window=500, step=50, date_column="date",
                    value_column="value", transform="log_return", grid=DEFAULT_GRID):
    """Load, clean, sweep the ARMA grid and write the AIC/BIC table."""
    series = clean(load_csv(data_path, date_column, value_column), transform)
    table, winner = select_arma(series, [ArmaSpec.parse(g) if isinstance(g, str) else g
                                         for g in grid], window, step)
    table.to_csv(out_path)
    return table, winner
