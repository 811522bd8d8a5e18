"""Monte Carlo simulation of a two-stage adaptive seamless design.

Stage 1 randomizes ``K`` experimental arms and a shared control. Arms are
selected for stage 2 from the early-outcome statistics, and the final
analysis combines stagewise p-values with the inverse normal combination
function inside a closed testing procedure.

Test statistics are generated directly (no patient-level data). With a
per-arm sample size ``n`` the statistic of arm ``k`` against control is
``(X_k - X_0) / sqrt(2)`` shifted by ``delta_k * sqrt(n / 2)``, where the
``X`` are per-arm standard normal pairs (early, final) with correlation
``corr``. This yields correlation 1/2 between arms within an outcome,
``corr`` between the early and final statistic of one arm and ``corr / 2``
across arms and outcomes.

The simulator is vectorized over Monte Carlo iterations; every array below
has the iteration as its leading axis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtr, ndtri

P_CLAMP = 1e-15
WEIGHT_TOL = 1e-12


class SimulationInputError(ValueError):
    """Invalid input to the trial simulator."""


@dataclass(frozen=True)
class EffectSet:
    """Standardized effect sizes per arm; index 0 is the control."""

    name: str
    early: tuple
    final: tuple

    def __post_init__(self):
        early = tuple(float(v) for v in self.early)
        final = tuple(float(v) for v in self.final)
        if len(early) != len(final) or len(early) < 2:
            raise SimulationInputError(
                f"effect set {self.name!r}: early and final must have equal length >= 2"
            )
        if not all(math.isfinite(v) for v in early + final):
            raise SimulationInputError(f"effect set {self.name!r}: non-finite effect size")
        if early[0] != 0.0 or final[0] != 0.0:
            raise SimulationInputError(f"effect set {self.name!r}: control effect must be 0")
        object.__setattr__(self, "early", early)
        object.__setattr__(self, "final", final)

    @property
    def n_treatments(self) -> int:
        return len(self.early) - 1

    def to_dict(self) -> dict:
        return {"name": self.name, "early": list(self.early), "final": list(self.final)}


@dataclass(frozen=True)
class SimConstants:
    corr: float = 0.4
    level: float = 0.025
    ptest: tuple = (3, 4)
    nsim: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "ptest", tuple(int(k) for k in self.ptest))
        if not -1.0 <= self.corr <= 1.0:
            raise SimulationInputError(f"corr must lie in [-1, 1], got {self.corr}")
        if not 0.0 < self.level < 1.0:
            raise SimulationInputError(f"level must lie in (0, 1), got {self.level}")
        if not self.ptest or min(self.ptest) < 1:
            raise SimulationInputError(f"ptest must be a non-empty set of indices >= 1: {self.ptest}")
        if int(self.nsim) < 1:
            raise SimulationInputError(f"nsim must be >= 1, got {self.nsim}")

    def check_arms(self, n_treatments: int) -> None:
        if max(self.ptest) > n_treatments:
            raise SimulationInputError(
                f"ptest {self.ptest} refers to arms beyond K={n_treatments}"
            )

    def to_dict(self) -> dict:
        return {"corr": self.corr, "level": self.level, "ptest": list(self.ptest), "nsim": int(self.nsim)}


# --- selection rules ------------------------------------------------------


@dataclass(frozen=True)
class KappaBest:
    kappa: int

    def mask(self, z_early: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z_early)
        if not 1 <= self.kappa <= z.shape[1]:
            raise SimulationInputError(f"kappa={self.kappa} outside 1..{z.shape[1]}")
        # stable sort keeps the lower index first among exact ties
        order = np.argsort(-z, axis=1, kind="stable")[:, : self.kappa]
        out = np.zeros(z.shape, dtype=bool)
        np.put_along_axis(out, order, True, axis=1)
        return out


@dataclass(frozen=True)
class Epsilon:
    eps: float

    def mask(self, z_early: np.ndarray) -> np.ndarray:
        if self.eps < 0:
            raise SimulationInputError(f"epsilon must be >= 0, got {self.eps}")
        z = np.atleast_2d(z_early)
        return z >= z.max(axis=1, keepdims=True) - self.eps


@dataclass(frozen=True)
class Threshold:
    tau: float

    def mask(self, z_early: np.ndarray) -> np.ndarray:
        return np.atleast_2d(z_early) >= self.tau


SelectionRule = Union[KappaBest, Epsilon, Threshold]


def apply_selection(rule: SelectionRule, z_early: Sequence[float]) -> set:
    """Selected treatments (1-based) for a single vector of interim statistics."""
    z = np.asarray(z_early, dtype=float)
    if z.ndim != 1 or not np.all(np.isfinite(z)):
        raise SimulationInputError("z_early must be a finite vector")
    return {int(k) + 1 for k in np.flatnonzero(rule.mask(z)[0])}


# --- statistics -----------------------------------------------------------


@dataclass
class StageOneDraw:
    z_early: np.ndarray
    z_final: np.ndarray
    selected: np.ndarray | None = None


def _check_draw_inputs(n_arm, corr):
    if not n_arm >= 1:
        raise SimulationInputError(f"per-arm sample size must be >= 1, got {n_arm}")
    if abs(corr) > 1:
        raise SimulationInputError(f"|corr| must be <= 1, got {corr}")


def draw_stage_statistics(
    effects: EffectSet, n_arm: float, corr: float, rng: np.random.Generator, size: int = 1
) -> StageOneDraw:
    """Draw ``size`` realizations of the stage-1 early and final statistics.

    Returns arrays of shape ``(size, K)``.
    """
    _check_draw_inputs(n_arm, corr)
    k1 = effects.n_treatments + 1
    base = rng.standard_normal((size, 2, k1))
    early_noise = base[:, 0]
    final_noise = corr * base[:, 0] + math.sqrt(max(0.0, 1.0 - corr * corr)) * base[:, 1]
    scale = math.sqrt(n_arm / 2.0)
    z_early = (early_noise[:, 1:] - early_noise[:, :1]) / math.sqrt(2.0)
    z_final = (final_noise[:, 1:] - final_noise[:, :1]) / math.sqrt(2.0)
    z_early += np.asarray(effects.early[1:]) * scale
    z_final += np.asarray(effects.final[1:]) * scale
    return StageOneDraw(z_early=z_early, z_final=z_final)


def draw_final_statistics(
    effects: EffectSet, n_arm: float, rng: np.random.Generator, size: int = 1
) -> np.ndarray:
    """Final-outcome statistics of all K arms from an independent cohort."""
    _check_draw_inputs(n_arm, 0.0)
    noise = rng.standard_normal((size, effects.n_treatments + 1))
    z = (noise[:, 1:] - noise[:, :1]) / math.sqrt(2.0)
    return z + np.asarray(effects.final[1:]) * math.sqrt(n_arm / 2.0)


def statistics_covariance(n_treatments: int, corr: float) -> np.ndarray:
    """Closed-form covariance of ``(z_early, z_final)`` stacked, 2K x 2K."""
    a = 0.5 * (np.eye(n_treatments) + np.ones((n_treatments, n_treatments)))
    return np.kron(np.array([[1.0, corr], [corr, 1.0]]), a)


# --- intersection tests ---------------------------------------------------


def one_sided_p(z: np.ndarray) -> np.ndarray:
    return ndtr(-np.asarray(z, dtype=float))


def simes_p(p: np.ndarray, member: np.ndarray) -> np.ndarray:
    """Simes p-value over the entries of the last axis flagged in ``member``.

    Broadcasts over leading axes; an empty member set gives p = 1.
    """
    p, member = np.broadcast_arrays(np.asarray(p, dtype=float), member)
    m = member.sum(axis=-1)
    ps = np.sort(np.where(member, p, 2.0), axis=-1)
    i = np.arange(1, p.shape[-1] + 1)
    ratio = np.where(i <= m[..., None], m[..., None] * ps / i, np.inf)
    return np.minimum(ratio.min(axis=-1), 1.0)


@lru_cache(maxsize=None)
def _hermite_nodes(n: int = 64):
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / math.sqrt(2 * math.pi)


def dunnett_max_cdf(c: np.ndarray, m: int, rho: float = 0.5) -> np.ndarray:
    """P(max of m equicorrelated standard normals < c)."""
    c = np.asarray(c, dtype=float)
    if m == 0:
        return np.ones_like(c)
    if m == 1:
        return ndtr(c)
    x, w = _hermite_nodes()
    arg = (c[..., None] + math.sqrt(rho) * x) / math.sqrt(1.0 - rho)
    return np.sum(w * ndtr(arg) ** m, axis=-1)


def dunnett_p(z: np.ndarray, member: np.ndarray) -> np.ndarray:
    """Dunnett p-value, P(max over members >= observed max) under H_J.

    Broadcasts like ``simes_p``.
    """
    z, member = np.broadcast_arrays(np.asarray(z, dtype=float), member)
    m = member.sum(axis=-1)
    zmax = np.max(np.where(member, z, -np.inf), axis=-1)
    out = np.ones(m.shape)
    for size in np.unique(m):
        if size == 0:
            continue
        hit = m == size
        out[hit] = 1.0 - dunnett_max_cdf(zmax[hit], int(size))
    return out


INTERSECTION_TESTS = ("simes", "dunnett")


@lru_cache(maxsize=None)
def intersection_masks(n_treatments: int) -> np.ndarray:
    """All non-empty subsets of {1..K} as a boolean (2^K - 1, K) array."""
    rows = []
    for size in range(1, n_treatments + 1):
        for combo in itertools.combinations(range(n_treatments), size):
            row = np.zeros(n_treatments, dtype=bool)
            row[list(combo)] = True
            rows.append(row)
    return np.array(rows)


def _intersection_p(z, member, test):
    if test == "simes":
        return simes_p(one_sided_p(z), member)
    if test == "dunnett":
        return dunnett_p(z, member)
    raise SimulationInputError(f"unknown intersection test {test!r}")


def closed_test_batch(
    z1_final: np.ndarray,
    z2_final: np.ndarray,
    selected: np.ndarray,
    w1: float,
    w2: float,
    level: float,
    test: str = "simes",
) -> np.ndarray:
    """Vectorized closed test; returns a boolean (nsim, K) rejection array.

    ``z2_final`` holds stage-2 statistics for every arm; entries of arms not
    in ``selected`` are ignored.
    """
    if abs(w1 * w1 + w2 * w2 - 1.0) > WEIGHT_TOL:
        raise SimulationInputError(f"weights must satisfy w1^2 + w2^2 = 1, got {w1}, {w2}")
    z1 = np.atleast_2d(z1_final)
    z2 = np.atleast_2d(z2_final)
    sel = np.atleast_2d(selected)
    masks = intersection_masks(z1.shape[1])  # (J, K)
    p1 = _intersection_p(z1[:, None, :], masks[None], test)
    p2 = _intersection_p(z2[:, None, :], masks[None] & sel[:, None, :], test)
    p1 = np.clip(p1, P_CLAMP, 1 - P_CLAMP)
    p2 = np.clip(p2, P_CLAMP, 1 - P_CLAMP)
    stat = w1 * ndtri(1.0 - p1) + w2 * ndtri(1.0 - p2)
    kept = stat < ndtri(1.0 - level)  # (nsim, J)
    blocked = (kept.astype(np.int64) @ masks.astype(np.int64)) > 0
    return sel & ~blocked


def closed_test(
    z1_final: Sequence[float],
    z2_final: dict,
    selected: set,
    w1: float,
    w2: float,
    level: float,
    test: str = "simes",
) -> set:
    """Closed test for one trial.

    ``z2_final`` maps selected (1-based) arm to its stage-2 statistic.
    Returns the set of rejected elementary hypotheses (1-based).
    """
    z1 = np.asarray(z1_final, dtype=float)
    k = z1.size
    if not set(selected) <= set(range(1, k + 1)):
        raise SimulationInputError(f"selected arms {selected} not within 1..{k}")
    sel = np.zeros(k, dtype=bool)
    z2 = np.zeros(k)
    for arm in selected:
        sel[arm - 1] = True
        z2[arm - 1] = z2_final[arm]
    rej = closed_test_batch(z1[None], z2[None], sel[None], w1, w2, level, test)[0]
    return {int(i) + 1 for i in np.flatnonzero(rej)}


# --- power ----------------------------------------------------------------


@dataclass(frozen=True)
class PowerEstimate:
    value: float
    nsim: int

    @property
    def mc_se(self) -> float:
        p = self.value
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.nsim)


def combination_weights(n_stage1: float, n_stage2: float) -> tuple:
    total = n_stage1 + n_stage2
    return math.sqrt(n_stage1 / total), math.sqrt(n_stage2 / total)


def simulate_trials(
    n_stage1: int,
    n_stage2: int,
    rule: SelectionRule,
    effects: EffectSet,
    consts: SimConstants,
    rng: np.random.Generator,
    test: str = "simes",
) -> tuple:
    """Run ``consts.nsim`` trials; returns (selected, rejected) boolean arrays.

    Random numbers are consumed identically for every rule, so two rules
    evaluated with equal seeds see the same trials.
    """
    if n_stage1 < 1 or n_stage2 < 1:
        raise SimulationInputError(f"stage sizes must be >= 1, got {n_stage1}, {n_stage2}")
    consts.check_arms(effects.n_treatments)
    nsim = int(consts.nsim)
    stage1 = draw_stage_statistics(effects, n_stage1, consts.corr, rng, size=nsim)
    z2 = draw_final_statistics(effects, n_stage2, rng, size=nsim)
    selected = rule.mask(stage1.z_early)
    w1, w2 = combination_weights(n_stage1, n_stage2)
    rejected = closed_test_batch(stage1.z_final, z2, selected, w1, w2, consts.level, test)
    return selected, rejected


def estimate_power(
    n_stage1: int,
    n_stage2: int,
    rule: SelectionRule,
    effects: EffectSet,
    consts: SimConstants,
    rng: np.random.Generator,
    test: str = "simes",
) -> PowerEstimate:
    """Share of simulated trials rejecting at least one hypothesis in ``ptest``."""
    _, rejected = simulate_trials(n_stage1, n_stage2, rule, effects, consts, rng, test)
    cols = [k - 1 for k in consts.ptest]
    hits = rejected[:, cols].any(axis=1)
    return PowerEstimate(value=float(hits.mean()), nsim=int(consts.nsim))
