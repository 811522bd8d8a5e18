"""Kriging surrogate: anisotropic Matern 5/2 kernel, constant mean, nugget.

Hyperparameters (length scales, signal variance, nugget) are fitted by
maximizing the log marginal likelihood with the constant mean profiled out
by generalized least squares. Optimization runs in log space with L-BFGS-B
and an analytic gradient, from several random starting points.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class GpBounds:
    length_scale: tuple = (1e-2, 40.0)
    signal_variance: tuple = (1e-6, 10.0)
    nugget: tuple = (1e-8, 1.0)

    def log_bounds(self, d: int) -> list:
        ls = tuple(math.log(b) for b in self.length_scale)
        return [ls] * d + [
            tuple(math.log(b) for b in self.signal_variance),
            tuple(math.log(b) for b in self.nugget),
        ]


DEFAULT_BOUNDS = GpBounds()


def matern52(X1: np.ndarray, X2: np.ndarray, length_scales, signal_variance: float) -> np.ndarray:
    ls = np.asarray(length_scales, dtype=float)
    rho = cdist(np.asarray(X1, dtype=float) / ls, np.asarray(X2, dtype=float) / ls)
    return signal_variance * (1.0 + SQRT5 * rho + 5.0 / 3.0 * rho * rho) * np.exp(-SQRT5 * rho)


def robust_cholesky(C: np.ndarray):
    """Lower Cholesky factor, escalating diagonal jitter 1e-10 -> 1e-8 -> 1e-6.

    Returns ``(L, jitter)``; raises ``LinAlgError`` when all attempts fail.
    """
    eye = np.eye(C.shape[0])
    for jitter in JITTERS:
        try:
            return cholesky(C + jitter * eye, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("kernel matrix not positive definite after jitter escalation")


@dataclass(frozen=True)
class Posterior:
    mean: float
    sd: float


@dataclass
class GpModel:
    X: np.ndarray
    y: np.ndarray
    length_scales: np.ndarray
    signal_variance: float
    nugget: float
    mean_const: float = 0.0
    degenerate: bool = False
    log_likelihood: float = float("nan")
    jitter: float = 0.0
    chol: np.ndarray = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_hyperparameters(
        cls, X, y, length_scales, signal_variance, nugget, mean_const=None, **kw
    ) -> "GpModel":
        """Condition on data with fixed hyperparameters.

        ``mean_const=None`` uses the generalized least squares estimate.
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        ls = np.asarray(length_scales, dtype=float)
        C = matern52(X, X, ls, signal_variance) + nugget * np.eye(len(y))
        L, jitter = robust_cholesky(C)
        if mean_const is None:
            ones = np.ones(len(y))
            ci_1 = cho_solve((L, True), ones, check_finite=False)
            mean_const = float(ci_1 @ y / (ci_1 @ ones))
        alpha = cho_solve((L, True), y - mean_const, check_finite=False)
        return cls(
            X=X,
            y=y,
            length_scales=ls,
            signal_variance=float(signal_variance),
            nugget=float(nugget),
            mean_const=float(mean_const),
            jitter=jitter,
            chol=L,
            alpha=alpha,
            **kw,
        )

    def predict_many(self, Xs: np.ndarray) -> tuple:
        """Posterior mean and sd of the latent function at each row of ``Xs``."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        k = matern52(Xs, self.X, self.length_scales, self.signal_variance)
        mean = self.mean_const + k @ self.alpha
        v = solve_triangular(self.chol, k.T, lower=True)
        var = self.signal_variance - np.sum(v * v, axis=0)
        return mean, np.sqrt(np.maximum(var, 0.0))

    def predict(self, x) -> Posterior:
        mean, sd = self.predict_many(np.asarray(x, dtype=float)[None, :])
        return Posterior(float(mean[0]), float(sd[0]))

    @property
    def noise_sd(self) -> float:
        return math.sqrt(self.nugget)

    def hyperparameters(self) -> dict:
        return {
            "kernel": "matern5_2",
            "length_scales": [float(v) for v in self.length_scales],
            "signal_variance": self.signal_variance,
            "nugget": self.nugget,
            "mean_const": self.mean_const,
            "log_likelihood": self.log_likelihood,
            "degenerate": self.degenerate,
            "jitter": self.jitter,
            "likelihood": "joint nugget, GLS-profiled constant mean",
        }


class _Likelihood:
    """Negative log marginal likelihood and gradient in log-parameter space."""

    def __init__(self, X, y):
        self.X = X
        self.y = y
        self.n, self.d = X.shape
        diff = X[:, None, :] - X[None, :, :]
        self.sq = np.ascontiguousarray(np.moveaxis(diff * diff, -1, 0))  # (d, n, n)
        self.ones = np.ones(self.n)

    def value_and_grad(self, theta):
        d, n = self.d, self.n
        ls2 = np.exp(2.0 * theta[:d])
        sf2 = math.exp(theta[d])
        nug = math.exp(theta[d + 1])
        rho = np.sqrt(np.einsum("k,kij->ij", 1.0 / ls2, self.sq))
        e = np.exp(-SQRT5 * rho)
        K = sf2 * (1.0 + SQRT5 * rho + 5.0 / 3.0 * rho * rho) * e
        C = K + nug * np.eye(n)
        try:
            L, _ = robust_cholesky(C)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(theta)
        ci_1 = cho_solve((L, True), self.ones, check_finite=False)
        m = ci_1 @ self.y / (ci_1 @ self.ones)
        resid = self.y - m
        alpha = cho_solve((L, True), resid, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        lml = -0.5 * resid @ alpha - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi)
        # mean is profiled: the envelope theorem drops its derivative
        W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n), check_finite=False)
        G = sf2 * (5.0 / 3.0) * (1.0 + SQRT5 * rho) * e
        grad = np.empty_like(theta)
        grad[:d] = 0.5 * np.einsum("ij,kij->k", W * G, self.sq) / ls2
        grad[d] = 0.5 * np.sum(W * K)
        grad[d + 1] = 0.5 * nug * np.trace(W)
        return -lml, -grad

    def log_likelihood(self, theta) -> float:
        return -self.value_and_grad(np.asarray(theta, dtype=float))[0]


def log_marginal_likelihood(X, y, length_scales, signal_variance, nugget) -> float:
    theta = np.concatenate(
        [np.log(length_scales), [math.log(signal_variance), math.log(nugget)]]
    )
    return _Likelihood(np.asarray(X, float), np.asarray(y, float)).log_likelihood(theta)


def log_marginal_likelihood_grad(X, y, theta) -> np.ndarray:
    """Gradient of the log marginal likelihood w.r.t. log hyperparameters."""
    return -_Likelihood(np.asarray(X, float), np.asarray(y, float)).value_and_grad(
        np.asarray(theta, float)
    )[1]


def fit(
    X,
    y,
    rng: np.random.Generator,
    bounds: GpBounds = DEFAULT_BOUNDS,
    n_restarts: int = 5,
    init: GpModel | None = None,
) -> GpModel:
    """Maximum-likelihood Kriging fit.

    ``init`` (e.g. the previous iteration's model) is tried as an extra
    starting point. Constant targets give a flagged fallback model.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(y) < 2:
        raise ValueError(f"need at least 2 paired observations, got X {X.shape}, y {y.shape}")
    d = X.shape[1]
    if np.ptp(y) == 0.0:
        logger.info("constant targets; using the fallback surrogate")
        return GpModel.from_hyperparameters(
            X, y, np.ones(d), bounds.signal_variance[0], bounds.nugget[0],
            mean_const=float(y[0]), degenerate=True,
        )

    lik = _Likelihood(X, y)
    log_bounds = np.array(bounds.log_bounds(d))
    starts = [
        rng.uniform(log_bounds[:, 0], log_bounds[:, 1]) for _ in range(n_restarts)
    ]
    if init is not None and not init.degenerate:
        warm = np.concatenate(
            [np.log(init.length_scales), [math.log(init.signal_variance), math.log(init.nugget)]]
        )
        starts.insert(0, np.clip(warm, log_bounds[:, 0], log_bounds[:, 1]))

    best = None
    for x0 in starts:
        res = minimize(
            lik.value_and_grad, x0, jac=True, method="L-BFGS-B",
            bounds=log_bounds, options={"maxiter": 200},
        )
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None or best.fun >= 1e25:
        raise np.linalg.LinAlgError("no hyperparameter start produced a valid factorization")
    theta = best.x
    return GpModel.from_hyperparameters(
        X, y, np.exp(theta[:d]), math.exp(theta[d]), math.exp(theta[d + 1]),
        log_likelihood=-float(best.fun),
    )
