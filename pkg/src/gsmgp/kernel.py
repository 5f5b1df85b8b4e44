"""Grid spectral mixture kernels, their spectral densities and Gram factors.

The central object is a fixed grid of Q frequency/variance pairs per input
dimension.  A kernel is a non-negatively weighted sum of Q sub-kernels; only
the weights are learned, so the covariance is linear in the parameters.

Two stationary families are provided:

* the product-form kernel (``eval_gsmp``), whose sub-kernels factor across
  input dimensions and whose spectral density places ``2**P`` symmetric
  Gaussian modes per sub-kernel;
* the additive-phase variant (``eval_gsm_md``), whose sub-kernels couple the
  dimensions through a single phase term and carry only two modes each.

Both coincide for one-dimensional inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MemoryBudgetError, ZeroSpacingError

# exp(-2 pi^2 v tau^2) shows up everywhere; keep the constant in one place
_TWO_PI_SQ = 2.0 * math.pi**2

DEFAULT_GRID_VARIANCE = 1e-3
DEFAULT_MEM_LIMIT = 2 * 1024**3  # bytes allowed for one family of Gram matrices


@dataclass(frozen=True)
class Dataset:
    """Training or test data: inputs ``X`` of shape (n, P) and targets ``y``.

    Arrays are coerced to float64 and frozen.  Targets may be empty for
    prediction-only inputs, in which case ``y`` has length zero.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError(f"X must be (n, P) with n >= 1, got shape {X.shape}")
        if y.size and y.shape[0] != X.shape[0]:
            raise ValueError(f"y has {y.shape[0]} entries for {X.shape[0]} inputs")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValueError("inputs and targets must be finite")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GridSpec:
    """Fixed sub-kernel grid: frequencies ``mu`` and variances ``var``.

    Both arrays have shape (Q, P).  Frequencies are non-negative; variances
    strictly positive.  ``seed`` records how a random grid was drawn (None
    for deterministic grids).
    """

    mu: np.ndarray
    var: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.var, dtype=np.float64))
        if mu.shape != var.shape:
            raise ValueError(f"mu {mu.shape} and var {var.shape} must match")
        if mu.shape[0] < 1:
            raise ValueError("grid needs at least one sub-kernel")
        if np.any(mu < 0):
            raise ValueError("grid frequencies must be non-negative")
        if np.any(var <= 0):
            raise ValueError("grid variances must be strictly positive")
        mu.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)

    @property
    def Q(self) -> int:
        return self.mu.shape[0]

    @property
    def P(self) -> int:
        return self.mu.shape[1]


def highest_frequency(data: Dataset) -> np.ndarray:
    """Per-dimension frequency ceiling: half the reciprocal of the smallest
    spacing between distinct sorted input values.

    Raises
    ------
    ZeroSpacingError
        if some dimension has fewer than two distinct values.
    """
    out = np.empty(data.P)
    for p in range(data.P):
        distinct = np.unique(data.X[:, p])
        if distinct.size < 2:
            raise ZeroSpacingError(
                f"dimension {p}: need at least two distinct input values"
            )
        out[p] = 0.5 / np.min(np.diff(distinct))
    return out


def build_grid(
    data: Dataset,
    Q: int,
    sampling: str = "uniform",
    v_const: float = DEFAULT_GRID_VARIANCE,
    seed: int | None = None,
    mu_max: float | np.ndarray | None = None,
) -> GridSpec:
    """Construct a Q-point frequency grid from the training inputs.

    ``uniform`` places frequencies at q/Q of the per-dimension ceiling for
    q = 1..Q (zero excluded); ``random`` draws them i.i.d. uniformly from
    [0, ceiling].  ``mu_max`` overrides the data-derived ceiling (scalar or
    one value per dimension), which is how band-limited grids such as a
    positive-quadrant search box are expressed.  All variances are set to
    ``v_const``.
    """
    if Q < 1:
        raise ValueError("Q must be >= 1")
    if v_const <= 0:
        raise ValueError("v_const must be > 0")
    if mu_max is None:
        ceiling = highest_frequency(data)
    else:
        ceiling = np.broadcast_to(np.asarray(mu_max, dtype=np.float64), (data.P,)).copy()
        if np.any(ceiling <= 0):
            raise ValueError("mu_max must be > 0")
    if sampling == "uniform":
        fractions = np.arange(1, Q + 1, dtype=np.float64)[:, None] / Q
        mu = fractions * ceiling[None, :]
        used_seed = None
    elif sampling == "random":
        rng = np.random.default_rng(seed)
        mu = np.empty((Q, data.P))
        for p in range(data.P):
            mu[:, p] = rng.uniform(0.0, ceiling[p], size=Q)
        used_seed = seed
    else:
        raise ValueError(f"unknown sampling mode {sampling!r}")
    var = np.full((Q, data.P), float(v_const))
    return GridSpec(mu=mu, var=var, seed=used_seed)


# ---------------------------------------------------------------------------
# pointwise kernel and spectral-density evaluation


def _check_weights(grid: GridSpec, weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.shape[0] != grid.Q:
        raise ValueError(f"{w.shape[0]} weights for a Q={grid.Q} grid")
    return w


def eval_gsmp(tau, grid: GridSpec, weights) -> float:
    """Product-form kernel at lag ``tau`` (signed, shape (P,))."""
    w = _check_weights(grid, weights)
    tau = np.asarray(tau, dtype=np.float64).ravel()
    if tau.shape[0] != grid.P:
        raise ValueError(f"lag has {tau.shape[0]} entries for P={grid.P}")
    decay = np.exp(-_TWO_PI_SQ * tau[None, :] ** 2 * grid.var)
    phase = np.cos(2.0 * math.pi * tau[None, :] * grid.mu)
    return float(w @ np.prod(decay * phase, axis=1))


def eval_gsm_md(tau, grid: GridSpec, weights) -> float:
    """Additive-phase kernel at lag ``tau``: one phase couples all dims."""
    w = _check_weights(grid, weights)
    tau = np.asarray(tau, dtype=np.float64).ravel()
    if tau.shape[0] != grid.P:
        raise ValueError(f"lag has {tau.shape[0]} entries for P={grid.P}")
    decay = np.exp(-_TWO_PI_SQ * (grid.var @ tau**2))
    phase = np.cos(2.0 * math.pi * (grid.mu @ tau))
    return float(w @ (decay * phase))


def _gauss_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2.0 * math.pi * var)


def spectral_density(omega, grid: GridSpec, weights) -> float:
    """Spectral density of the product-form kernel at frequency ``omega``.

    Each sub-kernel contributes a symmetrised Gaussian pair per dimension,
    multiplied across dimensions and scaled by ``2**-P`` so the density
    integrates to the sum of the weights.
    """
    w = _check_weights(grid, weights)
    omega = np.asarray(omega, dtype=np.float64).ravel()
    if omega.shape[0] != grid.P:
        raise ValueError(f"frequency has {omega.shape[0]} entries for P={grid.P}")
    pair = _gauss_pdf(omega[None, :], grid.mu, grid.var) + _gauss_pdf(
        omega[None, :], -grid.mu, grid.var
    )
    return float(0.5**grid.P * (w @ np.prod(pair, axis=1)))


def gsm_md_spectral_density(omega, grid: GridSpec, weights) -> float:
    """Spectral density of the additive-phase kernel: two mirrored modes
    per sub-kernel, each a product of per-dimension Gaussians."""
    w = _check_weights(grid, weights)
    omega = np.asarray(omega, dtype=np.float64).ravel()
    if omega.shape[0] != grid.P:
        raise ValueError(f"frequency has {omega.shape[0]} entries for P={grid.P}")
    plus = np.prod(_gauss_pdf(omega[None, :], grid.mu, grid.var), axis=1)
    minus = np.prod(_gauss_pdf(omega[None, :], -grid.mu, grid.var), axis=1)
    return float(0.5 * (w @ (plus + minus)))


# ---------------------------------------------------------------------------
# Gram matrices and low-rank factors


def _lag_tables(Xa: np.ndarray, Xb: np.ndarray) -> np.ndarray:
    """Signed per-dimension lags, shape (P, na, nb)."""
    return Xa.T[:, :, None] - Xb.T[:, None, :]


def _sub_gram(lags: np.ndarray, mu_q: np.ndarray, var_q: np.ndarray,
              product_form: bool) -> np.ndarray:
    if product_form:
        out = np.ones(lags.shape[1:])
        for p in range(lags.shape[0]):
            d = lags[p]
            out *= np.exp(-_TWO_PI_SQ * var_q[p] * d * d) * np.cos(
                2.0 * math.pi * mu_q[p] * d
            )
        return out
    decay = np.zeros(lags.shape[1:])
    phase = np.zeros(lags.shape[1:])
    for p in range(lags.shape[0]):
        d = lags[p]
        decay += var_q[p] * d * d
        phase += mu_q[p] * d
    return np.exp(-_TWO_PI_SQ * decay) * np.cos(2.0 * math.pi * phase)


def gram_matrices(
    data: Dataset,
    grid: GridSpec,
    mem_limit: int = DEFAULT_MEM_LIMIT,
    product_form: bool = True,
) -> list[np.ndarray]:
    """All Q sub-kernel Gram matrices on the training inputs.

    Each matrix is symmetric with unit diagonal.  Raises
    ``MemoryBudgetError`` before allocating if ``Q * n^2`` float64 entries
    would exceed ``mem_limit`` bytes.
    """
    if data.P != grid.P:
        raise ValueError(f"data has P={data.P}, grid has P={grid.P}")
    need = grid.Q * data.n * data.n * 8
    if need > mem_limit:
        raise MemoryBudgetError(
            f"{grid.Q} Gram matrices of size {data.n}^2 need {need} bytes, "
            f"limit is {mem_limit}"
        )
    lags = _lag_tables(data.X, data.X)
    grams = []
    for q in range(grid.Q):
        K = _sub_gram(lags, grid.mu[q], grid.var[q], product_form)
        # enforce exact symmetry; the analytic kernel is even in the lag
        K = 0.5 * (K + K.T)
        grams.append(K)
    return grams


def weighted_gram(
    Xa: np.ndarray,
    Xb: np.ndarray,
    grid: GridSpec,
    weights,
    product_form: bool = True,
) -> np.ndarray:
    """Weighted cross-covariance ``sum_q w_q K_q(Xa, Xb)`` without holding
    the per-sub-kernel matrices (streamed over q)."""
    w = _check_weights(grid, weights)
    Xa = np.atleast_2d(np.asarray(Xa, dtype=np.float64))
    Xb = np.atleast_2d(np.asarray(Xb, dtype=np.float64))
    lags = _lag_tables(Xa, Xb)
    out = np.zeros((Xa.shape[0], Xb.shape[0]))
    for q in range(grid.Q):
        if w[q] == 0.0:
            continue
        out += w[q] * _sub_gram(lags, grid.mu[q], grid.var[q], product_form)
    return out


@dataclass(frozen=True)
class LowRank:
    """A factor ``L`` with ``L @ L.T`` approximating one Gram matrix.

    ``method`` records how the factor was actually produced, which matters
    when a pivoted factorization broke down and an eigendecomposition was
    used instead.
    """

    L: np.ndarray
    method: str

    @property
    def rank(self) -> int:
        return self.L.shape[1]


def _pivoted_cholesky(K: np.ndarray, max_rank: int, tol: float):
    """Greedy column (Nystrom) factorization with diagonal pivoting.

    Returns (L, ok).  ``ok`` is False when a pivot went non-positive while
    the residual diagonal was still above tolerance, i.e. the matrix is not
    numerically positive semidefinite at the requested accuracy.
    """
    n = K.shape[0]
    d = np.array(np.diag(K), dtype=np.float64)
    scale = max(d.max(), 1.0)
    L = np.zeros((n, max_rank))
    for r in range(max_rank):
        i = int(np.argmax(d))
        if d[i] <= tol * scale:
            # converged -- unless some residual went materially negative,
            # which means the matrix was not numerically PSD
            return L[:, :r], bool(np.min(d) >= -tol * scale)
        piv = math.sqrt(d[i])
        col = (K[:, i] - L[:, :r] @ L[i, :r]) / piv
        col[i] = piv
        L[:, r] = col
        d -= col * col
        d[i] = 0.0
    return L, bool(np.min(d) >= -tol * scale)


def _eig_factor(K: np.ndarray, max_rank: int, tol: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(K)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    keep = vals > tol * max(vals[0], 1.0)
    keep[max_rank:] = False
    return vecs[:, keep] * np.sqrt(np.clip(vals[keep], 0.0, None))


def lowrank_factor(
    K: np.ndarray,
    method: str = "nystrom",
    rank: int | None = None,
    seed: int | None = None,
    tol: float = 1e-10,
    data: Dataset | None = None,
    grid: GridSpec | None = None,
    q: int | None = None,
) -> LowRank:
    """Factor one Gram matrix as ``L @ L.T``.

    ``nystrom`` uses greedy pivoted Cholesky, stopping at ``rank`` columns
    or when the residual diagonal drops below ``tol`` (relative); if the
    pivot breaks down the factor falls back to a truncated
    eigendecomposition and says so in ``method``.  ``rff`` draws ``rank``
    random trigonometric features from the sub-kernel's spectral density
    and therefore needs the inputs and the grid (``data``, ``grid``, ``q``)
    in addition to the matrix; the approximation is unbiased but Monte
    Carlo, so use generous ranks.
    """
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    if K.shape != (n, n):
        raise ValueError("K must be square")
    r = n if rank is None else int(rank)
    if r < 1:
        raise ValueError("rank must be >= 1")
    if method == "nystrom":
        # an exact factor never needs more than n columns
        L, ok = _pivoted_cholesky(K, min(r, n), tol)
        if ok:
            return LowRank(L=L, method="nystrom")
        return LowRank(L=_eig_factor(K, r, tol), method="nystrom-eig-fallback")
    if method == "rff":
        if data is None or grid is None or q is None:
            raise ValueError("rff factors need data=, grid= and q=")
        rng = np.random.default_rng(seed)
        signs = rng.choice([-1.0, 1.0], size=(r, grid.P))
        freqs = rng.normal(signs * grid.mu[q], np.sqrt(grid.var[q]), size=(r, grid.P))
        phases = rng.uniform(0.0, 2.0 * math.pi, size=r)
        feats = math.sqrt(2.0 / r) * np.cos(
            2.0 * math.pi * data.X @ freqs.T + phases[None, :]
        )
        return LowRank(L=feats, method="rff")
    raise ValueError(f"unknown factor method {method!r}")


@dataclass
class KernelWorkspace:
    """Per-dataset cache of Gram matrices, low-rank factors and noise level.

    Shared read-only by the weight-learning code; ``_factor_cache`` holds a
    few recent Cholesky factors of the weighted covariance keyed by the
    weight vector bytes.
    """

    grams: list[np.ndarray]
    lowrank: list[LowRank]
    noise_var: float
    _factor_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.noise_var <= 0:
            raise ValueError("noise_var must be > 0")
        n = self.grams[0].shape[0]
        for K in self.grams:
            if K.shape != (n, n):
                raise ValueError("all Gram matrices must share one shape")
        if len(self.lowrank) != len(self.grams):
            raise ValueError("one factor per Gram matrix required")

    @property
    def n(self) -> int:
        return self.grams[0].shape[0]

    @property
    def Q(self) -> int:
        return len(self.grams)


def build_workspace(
    data: Dataset,
    grid: GridSpec,
    noise_var: float,
    rank: int | None = None,
    factor_method: str = "nystrom",
    factor_tol: float = 1e-10,
    mem_limit: int = DEFAULT_MEM_LIMIT,
    seed: int = 0,
    product_form: bool = True,
) -> KernelWorkspace:
    """Materialise Gram matrices and their factors for one dataset.

    ``rank`` caps the factor rank (default: min(n, 50), the usual choice
    for strongly banded grids; pass ``rank=data.n`` for exact factors).
    """
    grams = gram_matrices(data, grid, mem_limit=mem_limit, product_form=product_form)
    cap = min(data.n, 50) if rank is None else min(int(rank), data.n)
    factors = []
    for q, K in enumerate(grams):
        factors.append(
            lowrank_factor(
                K,
                method=factor_method,
                rank=cap,
                seed=seed + q,
                tol=factor_tol,
                data=data,
                grid=grid,
                q=q,
            )
        )
    return KernelWorkspace(grams=grams, lowrank=factors, noise_var=float(noise_var))
