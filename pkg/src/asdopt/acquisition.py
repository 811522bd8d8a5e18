"""Augmented expected improvement and its maximization over the design space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .design_space import (
    EPS_COL,
    EPS_RANGE,
    R_COL,
    STRATEGIES,
    TAU_COL,
    TAU_RANGE,
    DesignPoint,
    decode,
    encode_many,
    sample_uniform,
)
from .surrogate import GpModel

SD_FLOOR = 1e-12
N_UNIFORM = 2000
FOCUS_ROUNDS = 3
N_FOCUS = 500
FOCUS_SHRINK = 0.25
STARTS_PER_STRATEGY = 3
FOCUS_START = 1.0  # width of the first focus box
R_MARGIN = 1e-9


@dataclass
class AcquisitionContext:
    model: GpModel
    design: np.ndarray  # encoded evaluated points
    c: float = 1.0
    sigma: float | None = None  # noise sd; defaults to sqrt(nugget)

    def __post_init__(self):
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        if len(self.design) == 0:
            raise ValueError("acquisition needs at least one evaluated point")
        if self.c < 0:
            raise ValueError(f"c must be >= 0, got {self.c}")
        if self.sigma is None:
            self.sigma = self.model.noise_sd


def effective_best(ctx: AcquisitionContext) -> tuple:
    """Evaluated point maximizing the pessimistic value mean - c * sd.

    Returns ``(index into ctx.design, posterior mean at that point)``.
    """
    mean, sd = ctx.model.predict_many(ctx.design)
    i = int(np.argmax(mean - ctx.c * sd))
    return i, float(mean[i])


def aei_values(mean, sd, best_mean: float, sigma: float) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    diff = mean - best_mean
    safe = np.where(sd < SD_FLOOR, 1.0, sd)
    u = diff / safe
    ei = diff * ndtr(u) + safe * np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)
    correction = 1.0 - sigma / np.sqrt(sigma * sigma + safe * safe)
    out = np.where(sd < SD_FLOOR, np.maximum(diff, 0.0), ei * correction)
    return np.maximum(out, 0.0)


def aei(ctx: AcquisitionContext, x, best_mean: float | None = None) -> np.ndarray:
    """AEI at one encoded point or each row of a matrix of encoded points."""
    if best_mean is None:
        _, best_mean = effective_best(ctx)
    x = np.asarray(x, dtype=float)
    mean, sd = ctx.model.predict_many(np.atleast_2d(x))
    out = aei_values(mean, sd, best_mean, ctx.sigma)
    return float(out[0]) if x.ndim == 1 else out


def _focus_sample(center: np.ndarray, width: float, n: int, rng) -> np.ndarray:
    """Encoded points of the center's strategy inside a box of relative ``width``."""
    out = np.repeat(center[None, :], n, axis=0)
    r = center[R_COL]
    out[:, R_COL] = rng.uniform(max(r - width / 2, R_MARGIN), min(r + width / 2, 1.0 - R_MARGIN), size=n)
    col = _param_col(center)
    if col is not None:
        lo, hi = EPS_RANGE if col == EPS_COL else TAU_RANGE
        half = width * (hi - lo) / 2
        out[:, col] = rng.uniform(max(center[col] - half, lo), min(center[col] + half, hi), size=n)
    return out


def _param_col(v: np.ndarray):
    strategy = STRATEGIES[int(np.argmax(v[:R_COL]))]
    return {"eps": EPS_COL, "thresh": TAU_COL}.get(strategy)


def propose_next(
    ctx: AcquisitionContext,
    rng: np.random.Generator,
    n_uniform: int = N_UNIFORM,
    focus_rounds: int = FOCUS_ROUNDS,
    n_focus: int = N_FOCUS,
) -> DesignPoint:
    """Random search for the AEI maximizer followed by focus refinement.

    Refinement starts from the best few uniform candidates of every
    strategy, and each round shrinks the box around the current start
    fourfold. The best refined point of each strategy is then polished by
    bounded quasi-Newton ascent. Candidates are always valid designs, so
    inactive slots never take other values.
    """
    _, best_mean = effective_best(ctx)
    candidates = encode_many(sample_uniform(n_uniform, rng))
    values = aei(ctx, candidates, best_mean)
    strategy_of = np.argmax(candidates[:, :R_COL], axis=1)
    best_x, best_value = candidates[int(np.argmax(values))], float(values.max())
    for s in range(len(STRATEGIES)):
        idx = np.flatnonzero(strategy_of == s)
        if len(idx) == 0:
            continue
        # stable sort keeps the first index among ties
        order = idx[np.argsort(-values[idx], kind="stable")[:STARTS_PER_STRATEGY]]
        top_x, top_value = candidates[order[0]], float(values[order[0]])
        for i in order:
            x, value = candidates[i], float(values[i])
            width = FOCUS_START / FOCUS_SHRINK
            for _ in range(focus_rounds):
                width *= FOCUS_SHRINK
                local = _focus_sample(x, width, n_focus, rng)
                local_values = aei(ctx, local, best_mean)
                j = int(np.argmax(local_values))
                if local_values[j] > value:
                    x, value = local[j], float(local_values[j])
            if value > top_value:
                top_x, top_value = x, value
        top_x, top_value = _polish(ctx, top_x, top_value, best_mean)
        if top_value > best_value:
            best_x, best_value = top_x, top_value
    return decode(best_x)


def _polish(ctx, x: np.ndarray, value: float, best_mean: float) -> tuple:
    """Bounded quasi-Newton ascent on the continuous coordinates of one strategy."""
    if value <= 0:
        return x, value
    cols = [R_COL]
    bounds = [(R_MARGIN, 1.0 - R_MARGIN)]
    col = _param_col(x)
    if col is not None:
        cols.append(col)
        bounds.append(EPS_RANGE if col == EPS_COL else TAU_RANGE)
    lower, upper = np.array(bounds).T

    def make(z):
        out = x.copy()
        out[cols] = np.clip(z, lower, upper)
        return out

    # AEI values are small; rescale so gradient tolerances are meaningful
    def negative(z):
        return -float(aei(ctx, make(z), best_mean)) / value

    res = minimize(negative, x[cols], method="L-BFGS-B", bounds=bounds)
    polished = make(res.x)
    polished_value = float(aei(ctx, polished, best_mean))
    if polished_value > value:
        return polished, polished_value
    return x, value
