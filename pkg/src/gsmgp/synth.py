"""Synthetic regression tasks with known spectral content.

Both generators draw train and test targets jointly from one GP so the
test points are genuinely correlated with the training set, and both
return the exact generating recipe in a metadata dict for later audits.
"""

from __future__ import annotations

import math

import numpy as np

from .kernel import Dataset

_TWO_PI_SQ = 2.0 * math.pi**2


def _pairwise_sq_dists(Xa, Xb):
    d = Xa[:, None, :] - Xb[None, :, :]
    return d, np.sum(d * d, axis=2)


def _sample_joint(X, cov, noise_var, rng):
    n = X.shape[0]
    jitter = 1e-10 * float(np.mean(np.diag(cov)))
    for _ in range(6):
        try:
            L = np.linalg.cholesky(cov + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            jitter *= 100.0
    else:
        raise np.linalg.LinAlgError("generator covariance would not factor")
    f = L @ rng.standard_normal(n)
    return f + math.sqrt(noise_var) * rng.standard_normal(n)


def four_mode_2d(
    n: int, noise_var: float = 0.05, seed: int | None = 0, n_test: int = 100
):
    """Lattice GP draw whose spectrum has four equally weighted Gaussian
    modes at the corners ``(+-2, +-2)`` in angular frequency (rad per input
    unit), each with identity angular covariance.

    In the cyclic-frequency convention used everywhere else in this package
    the modes sit at ``(+-1/pi, +-1/pi)`` with per-dimension spectral
    variance ``1/(2 pi)^2``, so the covariance is ``0.5 exp(-|tau|^2 / 2)
    (cos(2 tau . (1, 1)) + cos(2 tau . (-1, 1)))``.  Training inputs are a
    ``sqrt(n) x sqrt(n)`` lattice on ``[-4, 4]^2`` (n must be a perfect
    square) whose spacing resolves the modes comfortably; test inputs are
    uniform over the same square.
    """
    side = math.isqrt(n)
    if side * side != n:
        raise ValueError(f"n={n} is not a perfect square")
    rng = np.random.default_rng(seed)
    axis = np.linspace(-4.0, 4.0, side)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    X_train = np.column_stack([gx.ravel(), gy.ravel()])
    X_test = rng.uniform(-4.0, 4.0, size=(n_test, 2))
    X = np.vstack([X_train, X_test])

    mu_star = 1.0 / math.pi  # 2 rad per unit, in cycles per unit
    v_star = 1.0 / (2.0 * math.pi) ** 2  # unit angular variance, in cycles^2
    d, sq = _pairwise_sq_dists(X, X)
    envelope = 0.5 * np.exp(-_TWO_PI_SQ * v_star * sq)
    cov = envelope * (
        np.cos(2.0 * math.pi * mu_star * (d[:, :, 0] + d[:, :, 1]))
        + np.cos(2.0 * math.pi * mu_star * (-d[:, :, 0] + d[:, :, 1]))
    )
    y = _sample_joint(X, cov, noise_var, rng)
    meta = {
        "kind": "four_mode_2d",
        "modes": [
            [mu_star, mu_star],
            [-mu_star, mu_star],
            [mu_star, -mu_star],
            [-mu_star, -mu_star],
        ],
        "mode_variance": v_star,
        "cycles_per_radian": 1.0 / (2.0 * math.pi),
        "noise_var": noise_var,
        "seed": seed,
    }
    return Dataset(X=X_train, y=y[:n]), Dataset(X=X_test, y=y[n:]), meta


def sparse_1d(
    n: int = 200,
    noise_var: float = 0.05,
    seed: int | None = 0,
    n_test: int = 60,
    Q: int = 20,
    active: tuple = (6, 15),
    amplitudes: tuple = (2.0, 1.0),
    spacing: float = 0.05,
    v_true: float = 1e-3,
):
    """1-D GP draw whose spectrum sits exactly on a uniform frequency grid.

    Training inputs are ``0, spacing, ..., (n-1) spacing``, so the derived
    frequency ceiling is ``1 / (2 spacing)`` and the uniform Q-point grid
    contains the true frequencies ``active/Q`` of the ceiling with weights
    ``amplitudes``.  Test inputs are uniform over the same interval.
    """
    if len(active) != len(amplitudes):
        raise ValueError("one amplitude per active grid index")
    rng = np.random.default_rng(seed)
    X_train = (np.arange(n) * spacing)[:, None]
    X_test = rng.uniform(0.0, (n - 1) * spacing, size=(n_test, 1))
    X = np.vstack([X_train, X_test])
    mu_u = 0.5 / spacing
    mus = [idx / Q * mu_u for idx in active]

    d = X[:, 0][:, None] - X[None, :, 0]
    cov = np.zeros((X.shape[0], X.shape[0]))
    for amp, mu in zip(amplitudes, mus):
        cov += amp * np.exp(-_TWO_PI_SQ * v_true * d * d) * np.cos(2.0 * math.pi * mu * d)
    y = _sample_joint(X, cov, noise_var, rng)
    meta = {
        "kind": "sparse_1d",
        "Q": Q,
        "active_indices": list(active),
        "frequencies": mus,
        "amplitudes": list(amplitudes),
        "grid_variance": v_true,
        "spacing": spacing,
        "noise_var": noise_var,
        "seed": seed,
    }
    return Dataset(X=X_train, y=y[:n]), Dataset(X=X_test, y=y[n:]), meta
