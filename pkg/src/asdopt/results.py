"""Persistence of run results: evaluation histories, summaries and power curves.

Histories are CSV with one row per objective evaluation. Floats are written
with 17 significant digits so that a reload is bit-exact. Summaries are JSON.
Every file is written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import seeding
from .design_space import DesignPoint

HISTORY_COLUMNS = (
    "scenario", "method", "replication", "iteration", "strategy", "r", "eps", "tau",
    "n1", "n2", "k2_hat", "y", "seed", "millis",
)
CURVE_COLUMNS = ("scenario", "method", "strategy", "param", "r", "mean_power", "mc_se", "n")
GRID_METHODS = ("Grid", "GridSmall")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


# --- histories --------------------------------------------------------------


def history_rows(scenario: str, result) -> list:
    rows = []
    for rec in result.history:
        a = rec.allocation
        rows.append({
            "scenario": scenario,
            "method": result.method,
            "replication": result.replication,
            "iteration": rec.iteration,
            "strategy": rec.point.strategy,
            "r": rec.point.r,
            "eps": rec.point.eps,
            "tau": rec.point.tau,
            "n1": a.n_stage1 if a else None,
            "n2": a.n_stage2 if a else None,
            "k2_hat": a.k2_hat if a else None,
            "y": rec.y.value,
            "seed": rec.seed,
            "millis": rec.wall_time * 1000.0,
        })
    return rows


def write_history(path, rows) -> Path:
    return write_atomic(path, _csv_text(HISTORY_COLUMNS, rows))


def read_history(path) -> list:
    """Rows with numeric columns parsed; empty cells become ``None``."""
    ints = {"replication", "iteration", "n1", "n2", "seed"}
    floats = {"r", "eps", "tau", "k2_hat", "y", "millis"}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for k, v in raw.items():
                if v == "":
                    row[k] = None
                elif k in ints:
                    row[k] = int(v)
                elif k in floats:
                    row[k] = float(v)
                else:
                    row[k] = v
            out.append(row)
    return out


# --- summaries --------------------------------------------------------------


def design_id(scenario: str, method: str, replication: int) -> str:
    return f"{scenario}/{method}/{replication}"


def power_stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return {"n": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {
        "n": int(len(v)),
        "mean": float(v.mean()),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "iqr": float(q3 - q1),
        "min": float(v.min()),
        "max": float(v.max()),
    }


def run_entry(scenario: str, result) -> dict:
    entry = {
        "design_id": design_id(scenario, result.method, result.replication),
        "replication": result.replication,
        "run_seed": result.run_seed,
        "chosen": result.chosen.to_dict(),
        "allocation": result.allocation.to_dict() if result.allocation else None,
        "y_valid": [y.value for y in result.y_valid],
        "search_evaluations": result.extras.get("search_evaluations", result.n_evaluations),
        "wall_time": result.wall_time,
    }
    if result.method == "BO":
        entry["surrogate"] = result.extras.get("surrogate")
        entry["surrogate_mean_chosen"] = result.extras.get("surrogate_mean_chosen")
        entry["fallback_iterations"] = result.extras.get("fallback_iterations")
    elif result.method == "BOGrid":
        entry["bo_chosen"] = result.extras.get("bo_chosen")
    else:
        entry["grid_l"] = result.extras.get("l")
        entry["grid_reps"] = result.extras.get("reps")
        entry["naive"] = result.extras.get("naive")
    return entry


def summarize(scenario, results, errors=()) -> dict:
    """Per-method statistics for one scenario; methods without runs are omitted."""
    by_method = defaultdict(list)
    for res in results:
        by_method[res.method].append(res)
    methods = {}
    for method in scenario.methods:
        runs = sorted(by_method.get(method, []), key=lambda r: r.replication)
        if not runs:
            continue
        pooled = [y.value for r in runs for y in r.y_valid]
        walls = [r.wall_time for r in runs]
        evals = sorted({r.extras.get("search_evaluations", r.n_evaluations) for r in runs})
        methods[method] = {
            "runs": len(runs),
            "evaluations": evals[0] if len(evals) == 1 else evals,
            "validated_power": power_stats(pooled),
            "run_means": [float(np.mean([y.value for y in r.y_valid])) for r in runs],
            "wall_time": {"mean": float(np.mean(walls)), "total": float(np.sum(walls))},
            "details": [run_entry(scenario.name, r) for r in runs],
        }
    return {
        "scenario": scenario.to_dict(),
        "seed_derivation": seeding.DERIVATION,
        "methods": methods,
        "errors": list(errors),
    }


def write_summary(path, summary: dict) -> Path:
    return write_atomic(path, json.dumps(summary, indent=2, allow_nan=True) + "\n")


def read_summary(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def find_design(summary: dict, ident: str) -> tuple:
    """Locate ``scenario/method/replication`` in a summary document."""
    for name, block in summary.get("scenarios", {}).items():
        for method, m in block["methods"].items():
            for d in m["details"]:
                if d["design_id"] == ident:
                    return block["scenario"], method, d
    raise KeyError(f"design id {ident!r} not found in summary")


# --- power curves -----------------------------------------------------------


def power_curves(rows) -> list:
    """Mean power against r per strategy from grid history rows.

    For ``eps`` and ``thresh`` only the parameter value whose curve reaches
    the highest mean power is kept; ties go to the smaller parameter.
    """
    cells = defaultdict(list)
    for row in rows:
        if row["method"] not in GRID_METHODS:
            continue
        param = row["eps"] if row["strategy"] == "eps" else row["tau"]
        cells[(row["scenario"], row["method"], row["strategy"], param, row["r"])].append(row["y"])

    stats = {}
    for key, ys in cells.items():
        v = np.asarray(ys, dtype=float)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")
        stats[key] = (float(v.mean()), se, len(v))

    best_param = {}
    for (sc, method, strategy, param, _), (mean, _, _) in stats.items():
        if param is None:
            continue
        k = (sc, method, strategy)
        cur = best_param.get(k)
        if cur is None or mean > cur[0] or (mean == cur[0] and param < cur[1]):
            best_param[k] = (mean, param)

    out = []
    for (sc, method, strategy, param, r), (mean, se, n) in sorted(
        stats.items(), key=lambda kv: tuple("" if x is None else x for x in kv[0])
    ):
        if param is not None and param != best_param[(sc, method, strategy)][1]:
            continue
        out.append({
            "scenario": sc, "method": method, "strategy": strategy, "param": param,
            "r": r, "mean_power": mean, "mc_se": se, "n": n,
        })
    return out


def write_curves(path, curves) -> Path:
    return write_atomic(path, _csv_text(CURVE_COLUMNS, curves))


def read_curves(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            out.append({
                "scenario": raw["scenario"],
                "method": raw["method"],
                "strategy": raw["strategy"],
                "param": float(raw["param"]) if raw["param"] else None,
                "r": float(raw["r"]),
                "mean_power": float(raw["mean_power"]),
                "mc_se": float(raw["mc_se"]),
                "n": int(raw["n"]),
            })
    return out


def curve_points(curves, strategy: str) -> list:
    """``(r, DesignPoint, mean_power, mc_se)`` tuples of one strategy, sorted by r."""
    pts = []
    for c in curves:
        if c["strategy"] != strategy:
            continue
        extra = {}
        if strategy == "eps":
            extra["eps"] = c["param"]
        elif strategy == "thresh":
            extra["tau"] = c["param"]
        pts.append((c["r"], DesignPoint(strategy, c["r"], **extra), c["mean_power"], c["mc_se"]))
    return sorted(pts, key=lambda t: t[0])
