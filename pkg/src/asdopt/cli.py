"""Command-line scenario runner.

Verbs
-----
``run <config>``
    Every configured method for every scenario.
``grid <config>``
    Only the grid methods (``Grid`` and ``GridSmall``).
``validate <summary> <design-id>``
    Fresh re-evaluation of a chosen design, printed as JSON.
``curves <history>``
    Power-curve table from the grid rows of a history file.

Outputs of ``run`` and ``grid`` go to ``history.csv``, ``summary.json`` and
``curves.csv`` in the output directory. Exit status is 0 on success, 1 if any
run failed (other runs still complete and are written) and 2 for invalid
input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import results, seeding
from .config import METHODS, ConfigError, ScenarioConfig, default_workers, load_config
from .design_space import DesignPoint
from .optimizer import Objective, run_bo, run_bo_grid, run_grid

logger = logging.getLogger("asdopt")

METHOD_CODES = {m: i for i, m in enumerate(METHODS)}


@dataclasses.dataclass(frozen=True)
class Task:
    scenario: ScenarioConfig
    kind: str  # "BO" (with its BOGrid snap), "Grid" or "GridSmall"
    index: int

    @property
    def run_seed(self) -> int:
        sc = self.scenario
        return seeding.derive_seed(
            sc.master_seed, seeding.name_code(sc.name), METHOD_CODES[self.kind], self.index
        )


def plan(scenarios, grid_only: bool = False) -> list:
    tasks = []
    for sc in scenarios:
        methods = set(sc.methods)
        if not grid_only and methods & {"BO", "BOGrid"}:
            tasks += [Task(sc, "BO", i) for i in range(sc.replications)]
        for kind in ("Grid", "GridSmall"):
            if kind in methods:
                tasks += [Task(sc, kind, i) for i in range(sc.grid_runs)]
    return tasks


def execute(task: Task) -> tuple:
    """Run one task; returns ``(scenario name, results, error or None)``."""
    sc = task.scenario
    try:
        if task.kind == "BO":
            bo = run_bo(sc, task.run_seed, replication=task.index)
            out = [bo] if "BO" in sc.methods else []
            if "BOGrid" in sc.methods:
                out.append(run_bo_grid(bo, sc))
            return sc.name, out, None
        l = sc.grid_l if task.kind == "Grid" else sc.grid_small_l
        res = run_grid(sc, task.run_seed, l, method=task.kind, replication=task.index)
        return sc.name, [res], None
    except Exception as exc:  # one failed run must not sink the others
        logger.error("%s %s #%d failed: %s", sc.name, task.kind, task.index, exc)
        return sc.name, [], {
            "method": task.kind,
            "replication": task.index,
            "error": f"{type(exc).__name__}: {exc}",
            "traceback": traceback.format_exc(),
        }


def run_tasks(tasks, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [execute(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves task order, so outputs do not depend on scheduling
        return list(pool.map(execute, tasks))


def write_outputs(scenarios, outcomes, output_dir: Path) -> dict:
    by_name = {sc.name: ([], []) for sc in scenarios}
    for name, res, err in outcomes:
        by_name[name][0].extend(res)
        if err is not None:
            by_name[name][1].append(err)

    rows, blocks = [], {}
    for sc in scenarios:
        res, errs = by_name[sc.name]
        res = sorted(res, key=lambda r: (METHOD_CODES[r.method], r.replication))
        for r in res:
            if r.method != "BOGrid":  # BOGrid reuses the BO history
                rows.extend(results.history_rows(sc.name, r))
        blocks[sc.name] = results.summarize(sc, res, errs)

    summary = {"scenarios": blocks}
    results.write_history(output_dir / "history.csv", rows)
    results.write_summary(output_dir / "summary.json", summary)
    curves = results.power_curves(rows)
    if curves:
        results.write_curves(output_dir / "curves.csv", curves)
    return summary


def _apply_overrides(scenarios, args) -> list:
    out = []
    for sc in scenarios:
        kw = {"nsim": args.nsim_override, "master_seed": args.seed}
        if args.output_dir is not None:
            kw["output_dir"] = str(args.output_dir)
        out.append(sc.with_overrides(**kw))
    return out


def cmd_run(args, grid_only: bool = False) -> int:
    try:
        scenarios = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    if not scenarios:
        logger.info("no scenarios configured; nothing to do")
        return 0
    if grid_only:
        scenarios = [
            dataclasses.replace(
                sc, methods=tuple(m for m in sc.methods if m in results.GRID_METHODS) or ("Grid",)
            )
            for sc in scenarios
        ]
    tasks = plan(scenarios, grid_only)
    logger.info("%d scenarios, %d tasks, %d workers", len(scenarios), len(tasks), args.workers)
    outcomes = run_tasks(tasks, args.workers)

    failed = False
    groups = {}
    for sc in scenarios:
        groups.setdefault(sc.output_dir, []).append(sc)
    for out_dir, group in groups.items():
        names = {sc.name for sc in group}
        mine = [o for o in outcomes if o[0] in names]
        summary = write_outputs(group, mine, Path(out_dir))
        failed |= any(b["errors"] for b in summary["scenarios"].values())
        for name, block in summary["scenarios"].items():
            for method, m in block["methods"].items():
                vp = m["validated_power"]
                print(f"{name:<20} {method:<10} runs={m['runs']:<3} evals={m['evaluations']} "
                      f"median={vp['median']:.4f} iqr={vp['iqr']:.4f}")
    return 1 if failed else 0


def cmd_validate(args) -> int:
    try:
        summary = results.read_summary(args.summary)
        sc_dict, method, entry = results.find_design(summary, args.design_id)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sc = ScenarioConfig.from_dict(sc_dict).with_overrides(nsim=args.nsim_override)
    point = DesignPoint.from_dict(entry["chosen"])
    seed = entry["run_seed"] if args.seed is None else args.seed
    reps = args.reps or sc.validation_reps
    obj = Objective(sc, seed)
    values = [obj(point, seeding.stream_seed(seed, "revalidation", j))[0].value for j in range(reps)]
    out = {
        "design_id": args.design_id,
        "method": method,
        "chosen": point.to_dict(),
        "nsim": sc.sim.nsim,
        "values": values,
        "stats": results.power_stats(values),
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_curves(args) -> int:
    try:
        rows = results.read_history(args.history)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    curves = results.power_curves(rows)
    if not curves:
        print("history has no grid rows", file=sys.stderr)
        return 1
    out = args.output or Path(args.history).with_name("curves.csv")
    results.write_curves(out, curves)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asdopt", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--nsim-override", type=int, default=None, help="Monte Carlo iterations per evaluation")

    for verb, help_ in (("run", "run all configured methods"), ("grid", "run grid methods only")):
        sp = sub.add_parser(verb, help=help_)
        sp.add_argument("config", type=Path)
        sp.add_argument("--workers", type=int, default=None,
                        help="worker processes (default from ASDOPT_WORKERS, else 1)")
        sp.add_argument("--output-dir", type=Path, default=None)
        common(sp)

    sp = sub.add_parser("validate", help="re-validate a chosen design from a summary")
    sp.add_argument("summary", type=Path)
    sp.add_argument("design_id", help="scenario/method/replication")
    sp.add_argument("--reps", type=int, default=None)
    common(sp)

    sp = sub.add_parser("curves", help="power curves from a history file")
    sp.add_argument("history", type=Path)
    sp.add_argument("--output", type=Path, default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if hasattr(args, "workers"):
        args.workers = args.workers if args.workers is not None else default_workers()
    if args.verb in ("run", "grid"):
        return cmd_run(args, grid_only=args.verb == "grid")
    if args.verb == "validate":
        return cmd_validate(args)
    return cmd_curves(args)


if __name__ == "__main__":
    sys.exit(main())
