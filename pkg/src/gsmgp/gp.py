"""Gaussian-process regression on top of a fixed sub-kernel grid.

The covariance is ``C(w) = sum_q w_q K_q + noise_var * I`` with w >= 0, so
the negative log marginal likelihood splits into a data-fit term
``y' C^-1 y`` and a complexity term ``log det C``, both of which are needed
separately by the convex-surrogate machinery:  the data-fit term is convex
in w, the *negated* log-determinant is convex as well, and the likelihood
is their difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import FactorizationError
from .kernel import Dataset, GridSpec, KernelWorkspace, weighted_gram

JITTER_SCALE = 1e-10
_CACHE_LIMIT = 8


def _weighted_cov(weights: np.ndarray, ws: KernelWorkspace) -> np.ndarray:
    C = ws.noise_var * np.eye(ws.n)
    for q in range(ws.Q):
        wq = weights[q]
        if wq != 0.0:
            C += wq * ws.grams[q]
    return C


def cov_factor(weights, ws: KernelWorkspace) -> np.ndarray:
    """Lower Cholesky factor of ``C(weights)`` with a relative jitter of
    ``1e-10 * mean(diag C)`` added up front.

    Factors are cached on the workspace keyed by the weight bytes, so the
    likelihood, its pieces and prediction share one factorization per
    weight vector.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.shape[0] != ws.Q:
        raise ValueError(f"{w.shape[0]} weights for Q={ws.Q}")
    if np.any(w < 0):
        raise ValueError("kernel weights must be non-negative")
    key = w.tobytes()
    hit = ws._factor_cache.get(key)
    if hit is not None:
        return hit
    C = _weighted_cov(w, ws)
    jitter = JITTER_SCALE * float(np.mean(np.diag(C)))
    C[np.diag_indices_from(C)] += jitter
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(
            f"covariance not positive definite (jitter {jitter:g})"
        ) from exc
    if len(ws._factor_cache) >= _CACHE_LIMIT:
        ws._factor_cache.pop(next(iter(ws._factor_cache)))
    ws._factor_cache[key] = L
    return L


def split_g_h(weights, ws: KernelWorkspace, y) -> tuple[float, float]:
    """The two convex pieces of the likelihood at ``weights``:
    ``g = y' C^-1 y`` and ``h = -log det C``.  The likelihood is ``g - h``.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    L = cov_factor(weights, ws)
    t = solve_triangular(L, y, lower=True)
    g = float(t @ t)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return g, -logdet


def nll(weights, ws: KernelWorkspace, y) -> float:
    """Negative log marginal likelihood up to the constant ``n log 2 pi``."""
    g, h = split_g_h(weights, ws, y)
    return g - h


def grad_h(weights, ws: KernelWorkspace) -> np.ndarray:
    """Gradient of ``h = -log det C``: entry q is ``-trace(C^-1 K_q)``.

    Every entry is <= 0 because the sub-kernel Gram matrices are positive
    semidefinite.
    """
    L = cov_factor(weights, ws)
    Cinv = cho_solve((L, True), np.eye(ws.n))
    out = np.empty(ws.Q)
    for q in range(ws.Q):
        out[q] = -float(np.sum(Cinv * ws.grams[q]))
    return out


@dataclass(frozen=True)
class GPModel:
    """A trained model: grid, learned weights, noise level and the training
    data (the workspace is kept for prediction reuse).

    ``product_form`` selects between the per-dimension product sub-kernels
    (default) and the summed-exponent variant; it must match the form the
    workspace Grams were built with.
    """

    grid: GridSpec
    weights: np.ndarray
    noise_var: float
    train: Dataset
    workspace: KernelWorkspace
    product_form: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.shape[0] != self.grid.Q:
            raise ValueError(f"{w.shape[0]} weights for Q={self.grid.Q}")
        if np.any(w < 0):
            raise ValueError("kernel weights must be non-negative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class Posterior:
    """Predictive mean and full covariance at the query points."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64).ravel()
        S = np.asarray(self.cov, dtype=np.float64)
        if S.shape != (m.shape[0], m.shape[0]):
            raise ValueError(f"cov {S.shape} does not match mean length {m.shape[0]}")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", S)


def predict(model: GPModel, Xstar) -> Posterior:
    """Exact GP posterior at ``Xstar`` under the learned weighted kernel.

    With all weights zero the prior covariance vanishes and the posterior
    is identically zero.
    """
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=np.float64))
    if Xstar.shape[1] != model.grid.P:
        raise ValueError(f"query points have {Xstar.shape[1]} dims, grid P={model.grid.P}")
    Kxs = weighted_gram(
        model.train.X, Xstar, model.grid, model.weights,
        product_form=model.product_form,
    )
    Kss = weighted_gram(
        Xstar, Xstar, model.grid, model.weights,
        product_form=model.product_form,
    )
    L = cov_factor(model.weights, model.workspace)
    alpha = cho_solve((L, True), model.train.y)
    mean = Kxs.T @ alpha
    V = solve_triangular(L, Kxs, lower=True)
    cov = Kss - V.T @ V
    cov = 0.5 * (cov + cov.T)
    return Posterior(mean=mean, cov=cov)


def mse(pred, truth) -> float:
    """Mean squared error between two equal-length vectors."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} vs {truth.shape[0]}")
    return float(np.mean((pred - truth) ** 2))
