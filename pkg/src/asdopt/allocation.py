"""Per-stage sample sizes from the stage ratio and the total sample size."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trial_sim import (
    EffectSet,
    Epsilon,
    SimConstants,
    SimulationInputError,
    Threshold,
    draw_stage_statistics,
)

N_CANDIDATES = 40
CALIBRATION_REPS = 1000
# calibrated totals further than this from n_total mean the ratio cannot be met
TOTAL_TOLERANCE = 0.10


class InfeasibleDesignError(ValueError):
    """The stage ratio cannot be met with at least one patient per arm and stage."""


@dataclass(frozen=True)
class AllocationResult:
    n_stage1: int
    n_stage2: int
    k2_hat: float
    achieved_total: float
    flagged: bool = False
    scan: tuple = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "n_stage1": self.n_stage1,
            "n_stage2": self.n_stage2,
            "k2_hat": self.k2_hat,
            "achieved_total": self.achieved_total,
            "flagged": self.flagged,
        }


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _check_ratio(r):
    if not 0.0 < r < 1.0:
        raise SimulationInputError(f"stage ratio r must lie in (0, 1), got {r}")


def stage_sizes_fixed(r: float, k1: int, k2: int, n_total: int) -> AllocationResult:
    """Sizes for rules carrying a fixed number ``k2`` of arms (incl. control) to stage 2."""
    _check_ratio(r)
    if min(k1, k2, n_total) < 1:
        raise SimulationInputError(f"k1, k2, n_total must be >= 1, got {k1}, {k2}, {n_total}")
    denom = k1 * r + k2 * (1.0 - r)
    n1 = round_half_up(n_total * r / denom)
    n2 = round_half_up(n_total * (1.0 - r) / denom)
    if n1 < 1 or n2 < 1:
        raise InfeasibleDesignError(
            f"r={r} gives stage sizes ({n1}, {n2}) for n_total={n_total}"
        )
    return AllocationResult(n1, n2, float(k2), float(k1 * n1 + k2 * n2))


def candidate_stage1_sizes(n_total: int, k1: int, n_candidates: int = N_CANDIDATES) -> np.ndarray:
    lo = math.ceil(0.01 * n_total / k1)
    hi = math.ceil(n_total / k1)
    return np.unique(np.round(np.linspace(lo, hi, n_candidates)).astype(int))


def stage2_size(r: float, n_stage1: int) -> int:
    return max(1, round_half_up((1.0 - r) / r * n_stage1))


def expected_arm_count(
    rule, effects: EffectSet, n_stage1: int, consts: SimConstants, rng, reps: int
) -> float:
    """Mean number of arms in stage 2, control included."""
    draw = draw_stage_statistics(effects, n_stage1, consts.corr, rng, size=reps)
    return 1.0 + float(rule.mask(draw.z_early).sum(axis=1).mean())


def calibrate_variable_rule(
    rule,
    effects: EffectSet,
    r: float,
    n_total: int,
    k1: int,
    consts: SimConstants,
    rng: np.random.Generator,
    n_candidates: int = N_CANDIDATES,
    reps: int = CALIBRATION_REPS,
) -> AllocationResult:
    """Pick the stage-1 size whose expected total is closest to ``n_total``.

    A coarse scan over ``n_candidates`` sizes is followed by a scan of every
    integer between the neighbours of the coarse winner. Every candidate
    regenerates the same stage-1 noise from one seed (common random numbers),
    so the estimated arm count varies smoothly across candidates and the scan
    result does not depend on evaluation order.

    Raises ``InfeasibleDesignError`` when even the best candidate misses
    ``n_total`` by more than ``TOTAL_TOLERANCE`` (relative), which happens
    for ratios so extreme that the smallest candidate already overspends.
    """
    if not isinstance(rule, (Epsilon, Threshold)):
        raise SimulationInputError(f"calibration applies to epsilon/threshold rules, got {rule}")
    _check_ratio(r)
    ratio = (1.0 - r) / r
    entropy = int(rng.integers(2**63))
    scanned = {}

    def scan(values):
        for n1 in values:
            n1 = int(n1)
            if n1 in scanned:
                continue
            child = np.random.default_rng(entropy)
            k2_hat = expected_arm_count(rule, effects, n1, consts, child, reps)
            h = (k1 * n1 + k2_hat * ratio * n1 - n_total) ** 2
            scanned[n1] = (k2_hat, h)

    coarse = candidate_stage1_sizes(n_total, k1, n_candidates)
    scan(coarse)
    best = min(scanned, key=lambda n: (scanned[n][1], n))
    i = int(np.searchsorted(coarse, best))
    lo = coarse[max(i - 1, 0)]
    hi = coarse[min(i + 1, len(coarse) - 1)]
    scan(range(lo, hi + 1))

    best = min(scanned, key=lambda n: (scanned[n][1], n))
    k2_hat = scanned[best][0]
    n2 = stage2_size(r, best)
    achieved = k1 * best + k2_hat * n2
    if abs(achieved - n_total) > TOTAL_TOLERANCE * n_total:
        raise InfeasibleDesignError(
            f"r={r}: best calibrated total {achieved:.1f} is far from n_total={n_total}"
        )
    return AllocationResult(
        n_stage1=best,
        n_stage2=n2,
        k2_hat=k2_hat,
        achieved_total=achieved,
        flagged=k2_hat <= 1.0,
        scan=tuple(sorted((n, k, h) for n, (k, h) in scanned.items())),
    )
