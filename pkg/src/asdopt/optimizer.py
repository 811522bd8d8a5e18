"""Design search: Bayesian optimization, grid search and snapping BO to a grid."""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .acquisition import AcquisitionContext, propose_next
from .allocation import (
    AllocationResult,
    InfeasibleDesignError,
    calibrate_variable_rule,
    stage_sizes_fixed,
)
from .config import ScenarioConfig
from .design_space import FIXED_KAPPA, DesignPoint, encode_many, make_grid, sample_uniform
from .surrogate import JITTERS, fit
from .trial_sim import PowerEstimate, estimate_power

logger = logging.getLogger(__name__)


@dataclass
class EvaluationRecord:
    point: DesignPoint
    y: PowerEstimate
    seed: int
    iteration: int
    wall_time: float
    allocation: AllocationResult | None = None
    replicate: int = 0


@dataclass
class RunResult:
    method: str
    history: list
    chosen: DesignPoint
    y_valid: list
    allocation: AllocationResult | None
    replication: int = 0
    run_seed: int = 0
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def n_evaluations(self) -> int:
        return len(self.history)

    @property
    def valid_values(self) -> np.ndarray:
        return np.array([y.value for y in self.y_valid])


class Objective:
    """Power of a design for one scenario, with cached sample-size calibration.

    Calibration seeds are derived from the design's exact parameters, so the
    cache never changes a returned value.
    """

    def __init__(self, scenario: ScenarioConfig, run_seed: int):
        self.scenario = scenario
        self.run_seed = run_seed
        self.k1 = scenario.effect_set.n_treatments + 1
        self._cache = {}
        self.calls = 0

    def allocate(self, point: DesignPoint) -> AllocationResult:
        sc = self.scenario
        if point.strategy in FIXED_KAPPA:
            return stage_sizes_fixed(point.r, self.k1, FIXED_KAPPA[point.strategy] + 1, sc.n_total)
        key = (point.strategy, point.r, point.param, sc.n_total)
        if key not in self._cache:
            seed = seeding.derive_seed(
                self.run_seed, seeding.STREAMS["calibration"], seeding.float_key(*key)
            )
            self._cache[key] = calibrate_variable_rule(
                point.rule(), sc.effect_set, point.r, sc.n_total, self.k1, sc.sim,
                np.random.default_rng(seed),
                n_candidates=sc.calibration_candidates, reps=sc.calibration_reps,
            )
        return self._cache[key]

    def __call__(self, point: DesignPoint, seed: int) -> tuple:
        self.calls += 1
        sc = self.scenario
        try:
            alloc = self.allocate(point)
        except InfeasibleDesignError as exc:
            logger.debug("infeasible design scored as zero power: %s", exc)
            return PowerEstimate(0.0, sc.sim.nsim), None
        y = estimate_power(
            alloc.n_stage1, alloc.n_stage2, point.rule(), sc.effect_set, sc.sim,
            np.random.default_rng(seed), test=sc.intersection_test,
        )
        return y, alloc

    def record(self, point, seed, iteration, replicate=0) -> EvaluationRecord:
        t0 = time.perf_counter()
        y, alloc = self(point, seed)
        return EvaluationRecord(point, y, seed, iteration, time.perf_counter() - t0, alloc, replicate)


def validate(chosen: DesignPoint, objective: Objective, reps: int = 20, stream: str = "validation") -> list:
    """Fresh-seed re-evaluations of a chosen design."""
    return [
        objective(chosen, seeding.stream_seed(objective.run_seed, stream, j))[0]
        for j in range(reps)
    ]


def _fit_surrogate(X, y, rng, restarts, previous):
    for attempt, extra in enumerate(JITTERS[1:]):
        try:
            return fit(X, y, rng, n_restarts=restarts, init=previous)
        except np.linalg.LinAlgError:
            # duplicate-heavy designs: perturb targets by the next jitter level
            y = y + extra * 10 ** attempt * rng.standard_normal(len(y))
    return None


def run_bo(
    scenario: ScenarioConfig,
    run_seed: int,
    n_init: int | None = None,
    n_iter: int | None = None,
    validation_reps: int | None = None,
    replication: int = 0,
) -> RunResult:
    """Sequential model-based optimization with AEI and surrogate-mean final choice."""
    n_init = scenario.n_init if n_init is None else n_init
    n_iter = scenario.n_iter if n_iter is None else n_iter
    validation_reps = scenario.validation_reps if validation_reps is None else validation_reps
    if n_init < 2 or n_iter < 0:
        raise ValueError(f"need n_init >= 2 and n_iter >= 0, got {n_init}, {n_iter}")
    t0 = time.perf_counter()
    objective = Objective(scenario, run_seed)
    history = [
        objective.record(p, seeding.stream_seed(run_seed, "search", i), i)
        for i, p in enumerate(sample_uniform(n_init, seeding.stream_rng(run_seed, "init")))
    ]

    model = None
    fallbacks = 0
    for it in range(n_iter):
        X = encode_many([h.point for h in history])
        y = np.array([h.y.value for h in history])
        fit_rng = seeding.stream_rng(run_seed, "surrogate", it)
        prop_rng = seeding.stream_rng(run_seed, "proposal", it)
        model = _fit_surrogate(X, y, fit_rng, scenario.gp_restarts, model) or model
        if model is None or len(model.y) != len(y):
            logger.warning("surrogate fit failed at iteration %d; proposing at random", it)
            fallbacks += 1
            model = None
            point = sample_uniform(1, prop_rng)[0]
        else:
            point = propose_next(AcquisitionContext(model, X), prop_rng)
        i = len(history)
        history.append(objective.record(point, seeding.stream_seed(run_seed, "search", i), i))

    X = encode_many([h.point for h in history])
    y = np.array([h.y.value for h in history])
    final = _fit_surrogate(X, y, seeding.stream_rng(run_seed, "surrogate", n_iter), scenario.gp_restarts, model)
    if final is not None:
        mean, _ = final.predict_many(X)
    else:
        mean = y
    chosen_i = int(np.argmax(mean))
    chosen = history[chosen_i].point
    search_calls = objective.calls
    y_valid = validate(chosen, objective, validation_reps)
    return RunResult(
        method="BO",
        history=history,
        chosen=chosen,
        y_valid=y_valid,
        allocation=_safe_allocate(objective, chosen),
        replication=replication,
        run_seed=run_seed,
        wall_time=time.perf_counter() - t0,
        extras={
            "chosen_index": chosen_i,
            "surrogate_mean_chosen": float(mean[chosen_i]),
            "surrogate": final.hyperparameters() if final is not None else None,
            "surrogate_means": [float(m) for m in mean],
            "best_so_far": np.maximum.accumulate(y).tolist(),
            "fallback_iterations": fallbacks,
            "search_evaluations": search_calls,
        },
    )


def _safe_allocate(objective, point):
    try:
        return objective.allocate(point)
    except InfeasibleDesignError:
        return None


def snap_to_grid(p: DesignPoint, grid) -> DesignPoint:
    """Nearest grid point of the same strategy; ties go to the smaller r."""
    same = [g for g in grid if g.strategy == p.strategy]
    if not same:
        raise ValueError(f"grid has no points for strategy {p.strategy!r}")

    def key(g):
        d2 = (g.r - p.r) ** 2
        if p.param is not None:
            d2 += (g.param - p.param) ** 2
        return (d2, g.r, g.param if g.param is not None else 0.0)

    return min(same, key=key)


def run_bo_grid(bo: RunResult, scenario: ScenarioConfig, grid=None, validation_reps: int | None = None) -> RunResult:
    """Re-validate a BO run's choice after snapping it to the grid."""
    t0 = time.perf_counter()
    grid = make_grid(scenario.snap_l) if grid is None else grid
    reps = scenario.validation_reps if validation_reps is None else validation_reps
    objective = Objective(scenario, bo.run_seed)
    chosen = snap_to_grid(bo.chosen, grid)
    y_valid = validate(chosen, objective, reps, stream="snap_validation")
    return RunResult(
        method="BOGrid",
        history=bo.history,
        chosen=chosen,
        y_valid=y_valid,
        allocation=_safe_allocate(objective, chosen),
        replication=bo.replication,
        run_seed=bo.run_seed,
        wall_time=bo.wall_time + time.perf_counter() - t0,
        extras={"bo_chosen": bo.chosen.to_dict(), "search_evaluations": bo.n_evaluations},
    )


def grid_selection(y: np.ndarray) -> tuple:
    """Leave-one-replicate-out selection on a (points, reps) outcome matrix.

    Returns ``(winners, unbiased, naive)``: per replicate the winning point,
    its mean over the other replicates, and its optimistic in-sample value.
    """
    n_points, reps = y.shape
    if reps < 2:
        raise ValueError("leave-one-out selection needs at least 2 replicates")
    winners = np.argmax(y, axis=0)
    totals = y.sum(axis=1)
    unbiased = (totals[winners] - y[winners, np.arange(reps)]) / (reps - 1)
    naive = y[winners, np.arange(reps)]
    return winners, unbiased, naive


def run_grid(
    scenario: ScenarioConfig,
    run_seed: int,
    l: int,
    reps: int | None = None,
    method: str = "Grid",
    replication: int = 0,
) -> RunResult:
    """Evaluate every grid point ``reps`` times and select without optimism."""
    reps = scenario.grid_reps if reps is None else reps
    t0 = time.perf_counter()
    grid = make_grid(l)
    objective = Objective(scenario, run_seed)
    history = []
    y = np.empty((len(grid), reps))
    for i, point in enumerate(grid):
        for j in range(reps):
            it = i * reps + j
            rec = objective.record(point, seeding.stream_seed(run_seed, "search", it), it, replicate=j)
            history.append(rec)
            y[i, j] = rec.y.value
    winners, unbiased, naive = grid_selection(y)
    nsim = scenario.sim.nsim
    y_valid = [PowerEstimate(float(v), nsim * (reps - 1)) for v in unbiased]
    counts = Counter(int(w) for w in winners)
    means = y.mean(axis=1)
    chosen_i = max(counts, key=lambda i: (counts[i], means[i], -i))
    return RunResult(
        method=method,
        history=history,
        chosen=grid[chosen_i],
        y_valid=y_valid,
        allocation=_safe_allocate(objective, grid[chosen_i]),
        replication=replication,
        run_seed=run_seed,
        wall_time=time.perf_counter() - t0,
        extras={
            "l": l,
            "reps": reps,
            "winners": [grid[int(w)].to_dict() for w in winners],
            "naive": [float(v) for v in naive],
            "search_evaluations": objective.calls,
        },
    )
