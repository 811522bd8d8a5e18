"""Hierarchical space of trial designs and its numeric encoding.

A design is a selection strategy, the stage ratio ``r`` and, for the
``eps`` and ``thresh`` strategies only, the rule parameter. The encoding
is six one-hot strategy indicators followed by ``r``, the epsilon slot and
the threshold slot. Inactive slots hold twice the maximum of their active
range so that a Matern kernel barely correlates them with active values.
Inputs are deliberately left unscaled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .trial_sim import Epsilon, KappaBest, Threshold

STRATEGIES = ("1-best", "2-best", "3-best", "all", "eps", "thresh")
FIXED_KAPPA = {"1-best": 1, "2-best": 2, "3-best": 3, "all": 4}
EPS_RANGE = (0.0, 4.0)
TAU_RANGE = (0.0, 10.0)
EPS_INACTIVE = 2 * EPS_RANGE[1]
TAU_INACTIVE = 2 * TAU_RANGE[1]
N_FEATURES = len(STRATEGIES) + 3
R_COL = len(STRATEGIES)
EPS_COL = R_COL + 1
TAU_COL = R_COL + 2


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class DesignPoint:
    strategy: str
    r: float
    eps: Optional[float] = None
    tau: Optional[float] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DesignError(f"unknown strategy {self.strategy!r}")
        if not 0.0 < self.r < 1.0:
            raise DesignError(f"r must lie in (0, 1), got {self.r}")
        if (self.eps is not None) != (self.strategy == "eps"):
            raise DesignError(f"eps is active iff strategy is 'eps': {self}")
        if (self.tau is not None) != (self.strategy == "thresh"):
            raise DesignError(f"tau is active iff strategy is 'thresh': {self}")
        if self.eps is not None and not EPS_RANGE[0] <= self.eps <= EPS_RANGE[1]:
            raise DesignError(f"eps outside {EPS_RANGE}: {self.eps}")
        if self.tau is not None and not TAU_RANGE[0] <= self.tau <= TAU_RANGE[1]:
            raise DesignError(f"tau outside {TAU_RANGE}: {self.tau}")

    def rule(self):
        if self.strategy == "eps":
            return Epsilon(self.eps)
        if self.strategy == "thresh":
            return Threshold(self.tau)
        return KappaBest(FIXED_KAPPA[self.strategy])

    @property
    def param(self) -> Optional[float]:
        return self.eps if self.strategy == "eps" else self.tau

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "r": self.r, "eps": self.eps, "tau": self.tau}

    @classmethod
    def from_dict(cls, d: dict) -> "DesignPoint":
        def opt(v):
            return None if v is None or v == "" else float(v)

        return cls(d["strategy"], float(d["r"]), opt(d.get("eps")), opt(d.get("tau")))


def encode(p: DesignPoint) -> np.ndarray:
    v = np.zeros(N_FEATURES)
    v[STRATEGIES.index(p.strategy)] = 1.0
    v[R_COL] = p.r
    v[EPS_COL] = p.eps if p.eps is not None else EPS_INACTIVE
    v[TAU_COL] = p.tau if p.tau is not None else TAU_INACTIVE
    return v


def encode_many(points) -> np.ndarray:
    return np.array([encode(p) for p in points]).reshape(-1, N_FEATURES)


def decode(v) -> DesignPoint:
    v = np.asarray(v, dtype=float)
    if v.shape != (N_FEATURES,):
        raise DesignError(f"encoded point must have length {N_FEATURES}, got {v.shape}")
    onehot = v[:R_COL]
    if not (np.all((onehot == 0.0) | (onehot == 1.0)) and onehot.sum() == 1.0):
        raise DesignError(f"malformed one-hot block {onehot}")
    strategy = STRATEGIES[int(np.argmax(onehot))]
    eps = float(v[EPS_COL]) if strategy == "eps" else None
    tau = float(v[TAU_COL]) if strategy == "thresh" else None
    if strategy != "eps" and v[EPS_COL] != EPS_INACTIVE:
        raise DesignError(f"inactive eps slot must hold {EPS_INACTIVE}, got {v[EPS_COL]}")
    if strategy != "thresh" and v[TAU_COL] != TAU_INACTIVE:
        raise DesignError(f"inactive tau slot must hold {TAU_INACTIVE}, got {v[TAU_COL]}")
    return DesignPoint(strategy, float(v[R_COL]), eps, tau)


def sample_uniform(n: int, rng: np.random.Generator) -> list:
    if n < 1:
        raise DesignError(f"n must be >= 1, got {n}")
    strategies = rng.integers(len(STRATEGIES), size=n)
    # open interval: uniform() is [0, 1), reject the zero endpoint
    r = 1.0 - rng.uniform(size=n)
    r = np.where(r >= 1.0, 0.5, r)
    u = rng.uniform(size=n)
    out = []
    for s, ri, ui in zip(strategies, r, u):
        name = STRATEGIES[s]
        if name == "eps":
            out.append(DesignPoint(name, float(ri), eps=float(EPS_RANGE[1] * ui)))
        elif name == "thresh":
            out.append(DesignPoint(name, float(ri), tau=float(TAU_RANGE[1] * ui)))
        else:
            out.append(DesignPoint(name, float(ri)))
    return out


def grid_r_values(l: int) -> np.ndarray:
    return np.arange(1, l + 1) / (l + 1)


def make_grid(l: int) -> list:
    """Full-factorial grid with ``l`` values per numeric dimension: 4l + 2l^2 points."""
    if l < 2:
        raise DesignError(f"grid resolution must be >= 2, got {l}")
    rs = grid_r_values(l)
    eps_values = np.linspace(*EPS_RANGE, l)
    tau_values = np.linspace(*TAU_RANGE, l)
    grid = []
    for name in STRATEGIES:
        for r in rs:
            if name == "eps":
                grid.extend(DesignPoint(name, float(r), eps=float(e)) for e in eps_values)
            elif name == "thresh":
                grid.extend(DesignPoint(name, float(r), tau=float(t)) for t in tau_values)
            else:
                grid.append(DesignPoint(name, float(r)))
    return grid
