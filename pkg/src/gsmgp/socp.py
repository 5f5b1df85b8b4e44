"""Primal-dual interior-point method for second-order cone programs.

Solves the conic pair

    minimize    c'x                 maximize   -h'z - b'y
    subject to  G x + s = h        subject to  G'z + A'y + c = 0
                A x = b                        z in K
                s in K

where ``K`` is a product of a non-negative orthant of dimension ``l`` and
second-order cones of dimensions ``q_1, ..., q_k`` (each cone is
``{(t, u) : |u|_2 <= t}``).

The implementation follows the usual recipe for self-scaled cones:
Nesterov-Todd scaling, a Mehrotra predictor-corrector step, and a single
symmetrised Newton system per direction solved by eliminating the scaled
slack block.  The reduced system

    [ G' W^-2 G   A' ] [dx]   [r1]
    [ A           0  ] [dy] = [r2]

is handled with a Cholesky factorization of ``H = G' W^-2 G`` plus a Schur
complement for the equality block.  ``H`` is assembled per cone block on
its nonzero column support, which keeps the cost proportional to the
square of the block footprint rather than the full variable count.

Everything is deterministic: no randomness, no iteration-order ambiguity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import SolverError


@dataclass(frozen=True)
class ConeDims:
    """Cone sizes: ``l`` non-negative entries followed by second-order
    cones of the listed dimensions (each >= 2)."""

    l: int
    q: tuple[int, ...] = ()

    def __post_init__(self):
        if self.l < 0 or any(d < 2 for d in self.q):
            raise ValueError("need l >= 0 and every second-order cone dim >= 2")
        object.__setattr__(self, "q", tuple(int(d) for d in self.q))

    @property
    def total(self) -> int:
        return self.l + sum(self.q)

    @property
    def degree(self) -> int:
        # barrier degree: each orthant entry counts 1, each cone counts 1
        return self.l + len(self.q)


@dataclass
class ConelpResult:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    status: str  # optimal | max_iter | primal_infeasible | dual_infeasible
    iterations: int
    primal_res: float
    dual_res: float
    gap: float
    rel_gap: float
    iterates: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# cone algebra on stacked vectors


def _soc_slices(dims: ConeDims):
    start = dims.l
    for d in dims.q:
        yield start, start + d
        start += d


def cone_identity(dims: ConeDims) -> np.ndarray:
    e = np.zeros(dims.total)
    e[: dims.l] = 1.0
    for a, _ in _soc_slices(dims):
        e[a] = 1.0
    return e


def min_eig(u: np.ndarray, dims: ConeDims) -> float:
    """Smallest cone eigenvalue: entries on the orthant, ``t - |u|`` on
    each second-order cone.  Positive iff ``u`` is strictly interior."""
    vals = []
    if dims.l:
        vals.append(float(np.min(u[: dims.l])))
    for a, b in _soc_slices(dims):
        vals.append(float(u[a] - np.linalg.norm(u[a + 1 : b])))
    return min(vals) if vals else math.inf


def _jprod(u: np.ndarray, v: np.ndarray, dims: ConeDims) -> np.ndarray:
    """Jordan product ``u o v`` blockwise."""
    out = np.empty(dims.total)
    out[: dims.l] = u[: dims.l] * v[: dims.l]
    for a, b in _soc_slices(dims):
        u0, ub = u[a], u[a + 1 : b]
        v0, vb = v[a], v[a + 1 : b]
        out[a] = u0 * v0 + ub @ vb
        out[a + 1 : b] = u0 * vb + v0 * ub
    return out


def _jsolve(lam: np.ndarray, d: np.ndarray, dims: ConeDims) -> np.ndarray:
    """Solve ``lam o u = d`` for ``u`` (lam strictly interior)."""
    out = np.empty(dims.total)
    out[: dims.l] = d[: dims.l] / lam[: dims.l]
    for a, b in _soc_slices(dims):
        l0, lb = lam[a], lam[a + 1 : b]
        d0, db = d[a], d[a + 1 : b]
        det = l0 * l0 - lb @ lb
        u0 = (l0 * d0 - lb @ db) / det
        out[a] = u0
        out[a + 1 : b] = (db - u0 * lb) / l0
    return out


def max_step(u: np.ndarray, du: np.ndarray, dims: ConeDims) -> float:
    """Largest alpha with ``u + alpha du`` still in the cone (inf if
    unbounded).  ``u`` must be strictly interior."""
    alpha = math.inf
    if dims.l:
        neg = du[: dims.l] < 0
        if np.any(neg):
            alpha = float(np.min(-u[: dims.l][neg] / du[: dims.l][neg]))
    for a, b in _soc_slices(dims):
        u0, ub = u[a], u[a + 1 : b]
        d0, db = du[a], du[a + 1 : b]
        aa = d0 * d0 - db @ db
        bb = u0 * d0 - ub @ db
        cc = u0 * u0 - ub @ ub
        root = math.inf
        if aa < 0.0:
            # opens downward: exactly one positive crossing
            disc = bb * bb - aa * cc
            root = (-bb - math.sqrt(max(disc, 0.0))) / aa
        elif aa > 0.0:
            if bb < 0.0:
                disc = bb * bb - aa * cc
                if disc >= 0.0:
                    root = (-bb - math.sqrt(disc)) / aa
        else:
            if bb < 0.0:
                root = -cc / (2.0 * bb)
        if d0 < 0.0:
            root = min(root, -u0 / d0)
        if root >= 0.0:
            alpha = min(alpha, root)
    return alpha


class _Scaling:
    """Nesterov-Todd scaling point for (s, z): per-orthant multipliers and,
    per second-order cone, the hyperbolic Householder representation
    ``W = eta (2 v v' - J)`` with ``v' J v = 1``."""

    def __init__(self, s: np.ndarray, z: np.ndarray, dims: ConeDims):
        self.dims = dims
        self.w_lp = np.sqrt(s[: dims.l] / z[: dims.l]) if dims.l else np.empty(0)
        self.eta = []
        self.v = []
        for a, b in _soc_slices(dims):
            sb, zb = s[a:b], z[a:b]
            # the hyperbolic norms are positive for interior points; the
            # floor only guards against roundoff at extreme accuracy
            a_s = math.sqrt(max(sb[0] ** 2 - sb[1:] @ sb[1:], 1e-300))
            a_z = math.sqrt(max(zb[0] ** 2 - zb[1:] @ zb[1:], 1e-300))
            s_hat = sb / a_s
            z_hat = zb / a_z
            gamma = math.sqrt((1.0 + s_hat @ z_hat) / 2.0)
            wbar = np.empty(b - a)
            wbar[0] = (s_hat[0] + z_hat[0]) / (2.0 * gamma)
            wbar[1:] = (s_hat[1:] - z_hat[1:]) / (2.0 * gamma)
            v = wbar.copy()
            v[0] += 1.0
            v /= math.sqrt(2.0 * (wbar[0] + 1.0))
            self.eta.append(math.sqrt(a_s / a_z))
            self.v.append(v)

    # J u negates the barred part
    @staticmethod
    def _jref(u):
        out = -u
        out[0] = u[0]
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        """W u."""
        dims = self.dims
        out = np.empty(dims.total)
        out[: dims.l] = self.w_lp * u[: dims.l]
        for k, (a, b) in enumerate(_soc_slices(dims)):
            v = self.v[k]
            blk = u[a:b]
            out[a:b] = self.eta[k] * (2.0 * v * (v @ blk) - self._jref(blk))
        return out

    def apply_inv(self, u: np.ndarray) -> np.ndarray:
        """W^-1 u  (W is symmetric, so this is also W^-T u)."""
        dims = self.dims
        out = np.empty(dims.total)
        out[: dims.l] = u[: dims.l] / self.w_lp
        for k, (a, b) in enumerate(_soc_slices(dims)):
            v = self.v[k]
            blk = u[a:b]
            jv = self._jref(v.copy())
            jblk = self._jref(blk)
            out[a:b] = (2.0 * jv * (jv @ u[a:b]) - jblk) / self.eta[k]
        return out

    def apply_inv2(self, u: np.ndarray) -> np.ndarray:
        """W^-2 u."""
        return self.apply_inv(self.apply_inv(u))


# ---------------------------------------------------------------------------
# KKT system


class _KKT:
    """Factor-and-solve for the reduced Newton system at one scaling.

    Supports for each cone block (nonzero columns of the corresponding G
    rows) are computed once; each refactorization then only touches those
    columns.
    """

    def __init__(self, G: np.ndarray, A: np.ndarray, dims: ConeDims):
        self.G = G
        self.A = A
        self.dims = dims
        self.n = G.shape[1]
        lp = G[: dims.l]
        self.lp_cols = [np.flatnonzero(row) for row in lp]
        self.soc_blocks = []
        for a, b in _soc_slices(dims):
            blk = G[a:b]
            cols = np.flatnonzero(np.any(blk != 0.0, axis=0))
            self.soc_blocks.append((a, b, cols, np.ascontiguousarray(blk[:, cols])))

    def factor(self, scal: _Scaling):
        n = self.n
        H = np.zeros((n, n))
        dims = self.dims
        for i, cols in enumerate(self.lp_cols):
            if cols.size == 0:
                continue
            g = self.G[i, cols]
            H[np.ix_(cols, cols)] += np.outer(g, g) / (scal.w_lp[i] ** 2)
        for k, (a, b, cols, Gsub) in enumerate(self.soc_blocks):
            if cols.size == 0:
                continue
            v = scal.v[k]
            jgsub = -Gsub.copy()
            jgsub[0] = Gsub[0]
            jv = _Scaling._jref(v.copy())
            U = (2.0 * np.outer(jv, jv @ Gsub) - jgsub) / scal.eta[k]
            H[np.ix_(cols, cols)] += U.T @ U
        self.scal = scal
        base = max(float(np.trace(H)) / n, 1.0)
        reg = 0.0
        for _ in range(4):
            try:
                self.H_fac = cho_factor(
                    H + reg * np.eye(n) if reg else H, lower=True, check_finite=False
                )
                break
            except np.linalg.LinAlgError:
                reg = base * 1e-12 if reg == 0.0 else reg * 1e4
        else:
            raise SolverError("scaled normal matrix could not be factored")
        if self.A.shape[0]:
            self.Y = cho_solve(self.H_fac, self.A.T, check_finite=False)
            S = self.A @ self.Y
            sreg = 0.0
            sbase = max(float(np.trace(S)) / max(S.shape[0], 1), 1.0)
            for _ in range(4):
                try:
                    self.S_fac = cho_factor(
                        S + sreg * np.eye(S.shape[0]) if sreg else S,
                        lower=True,
                        check_finite=False,
                    )
                    break
                except np.linalg.LinAlgError:
                    sreg = sbase * 1e-12 if sreg == 0.0 else sreg * 1e4
            else:
                raise SolverError("equality Schur complement could not be factored")

    def _solve_once(self, bx, by, bz):
        r1 = bx + self.G.T @ self.scal.apply_inv2(bz)
        u = cho_solve(self.H_fac, r1, check_finite=False)
        if self.A.shape[0]:
            dy = cho_solve(self.S_fac, self.A @ u - by, check_finite=False)
            dx = u - self.Y @ dy
        else:
            dy = np.empty(0)
            dx = u
        dz = self.scal.apply_inv2(self.G @ dx - bz)
        return dx, dy, dz

    def solve(self, bx, by, bz):
        """Solve the reduced system with one round of iterative refinement
        (the scaled normal matrix gets stiff near convergence)."""
        dx, dy, dz = self._solve_once(bx, by, bz)
        rx = bx - (self.A.T @ dy if self.A.shape[0] else 0.0) - self.G.T @ dz
        ry = by - (self.A @ dx if self.A.shape[0] else np.empty(0))
        # residual of the third block: G dx - W^2 dz = bz
        rz = bz - self.G @ dx + self.scal.apply(self.scal.apply(dz))
        ex, ey, ez = self._solve_once(rx, ry, rz)
        return dx + ex, dy + ey, dz + ez


# ---------------------------------------------------------------------------
# main loop


def solve_conelp(
    c,
    G,
    h,
    dims: ConeDims,
    A=None,
    b=None,
    tol: float = 1e-8,
    feastol: float | None = None,
    max_iter: int = 200,
    record_iterates: bool = False,
) -> ConelpResult:
    """Solve the standard-form cone LP.  See the module docstring.

    ``status`` is ``optimal`` when the (absolute or relative)
    complementarity gap is below ``tol`` and the relative primal/dual
    residuals are below ``feastol`` (default ``max(100 tol, 1e-7)``; the
    dual residual of the eliminated system floors near 1e-8 of the
    objective scale, so demanding ``tol`` there would push iterates into
    breakdown).  Certified infeasibility is reported through
    ``primal_infeasible`` / ``dual_infeasible``; otherwise ``max_iter``
    with the best iterate seen.
    """
    c = np.asarray(c, dtype=np.float64).ravel()
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    h = np.asarray(h, dtype=np.float64).ravel()
    n = c.shape[0]
    m = G.shape[0]
    if G.shape[1] != n or h.shape[0] != m or m != dims.total:
        raise SolverError("inconsistent problem dimensions")
    if A is None:
        A = np.zeros((0, n))
        b = np.zeros(0)
    else:
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        b = np.asarray(b, dtype=np.float64).ravel()
        if A.shape[1] != n or b.shape[0] != A.shape[0]:
            raise SolverError("inconsistent equality-constraint dimensions")
    if m == 0:
        raise SolverError("the cone block must be non-empty")
    if feastol is None:
        feastol = max(100.0 * tol, 1e-7)

    e = cone_identity(dims)
    nu = dims.degree
    kkt = _KKT(G, A, dims)

    # --- initial point: two solves with identity scaling, then shift the
    # cone variables strictly inside
    ident = _Scaling(e.copy(), e.copy(), dims)
    kkt.factor(ident)
    x, _, _ = kkt.solve(np.zeros(n), b.copy(), h.copy())
    shat = h - G @ x
    alpha_p = min_eig(shat, dims)
    s = shat if alpha_p > 0 else shat + (1.0 - alpha_p) * e
    xt, y, zhat = kkt.solve(-c, np.zeros(A.shape[0]), np.zeros(m))
    alpha_d = min_eig(zhat, dims)
    z = zhat.copy() if alpha_d > 0 else zhat + (1.0 - alpha_d) * e

    norm_b = max(1.0, float(np.linalg.norm(b)))
    norm_h = max(1.0, float(np.linalg.norm(h)))
    norm_c = max(1.0, float(np.linalg.norm(c)))

    status = "max_iter"
    iterates = []
    pres = dres = gap = relgap = math.inf
    best = None  # (merit, x, y, s, z, pres, dres, gap, relgap)
    iters_done = 0
    for it in range(max_iter):
        iters_done = it
        rx = A.T @ y + G.T @ z + c if A.shape[0] else G.T @ z + c
        ry = A @ x - b if A.shape[0] else np.empty(0)
        rz = G @ x + s - h
        pcost = float(c @ x)
        gap = float(s @ z)
        relgap = gap / max(1.0, abs(pcost))
        pres = max(
            float(np.linalg.norm(ry)) / norm_b if ry.size else 0.0,
            float(np.linalg.norm(rz)) / norm_h,
        )
        dres = float(np.linalg.norm(rx)) / norm_c
        if not all(map(math.isfinite, (pcost, gap, pres, dres))):
            break
        if record_iterates:
            iterates.append(x.copy())
        merit = max(pres, dres, relgap)
        if best is None or merit < best[0]:
            best = (merit, x.copy(), y.copy(), s.copy(), z.copy(),
                    pres, dres, gap, relgap)
        if pres <= feastol and dres <= feastol and (gap <= tol or relgap <= tol):
            status = "optimal"
            break
        # infeasibility certificates
        hz_by = float(h @ z) + float(b @ y)
        if hz_by < 0.0:
            cert = float(np.linalg.norm(A.T @ y + G.T @ z if A.shape[0] else G.T @ z))
            if cert / (-hz_by) <= tol:
                status = "primal_infeasible"
                break
        if pcost < 0.0:
            du = max(
                float(np.linalg.norm(A @ x)) if A.shape[0] else 0.0,
                float(np.linalg.norm(G @ x + s)),
            )
            if du / (-pcost) <= tol:
                status = "dual_infeasible"
                break
        # numerical boundary contact: further steps only corrupt the iterate
        if min_eig(s, dims) <= 0.0 or min_eig(z, dims) <= 0.0:
            break

        scal = _Scaling(s, z, dims)
        lam = scal.apply(z)
        kkt.factor(scal)
        mu = gap / nu

        # predictor (affine) direction
        dxa, dya, dza = kkt.solve(-rx, -ry, -rz + s)
        dsa = -rz - G @ dxa
        step_s = max_step(s, dsa, dims)
        step_z = max_step(z, dza, dims)
        alpha_aff = min(1.0, step_s, step_z)
        sigma = (1.0 - alpha_aff) ** 3

        # corrector: second-order term in the scaled space
        ws_a = scal.apply_inv(dsa)
        wz_a = scal.apply(dza)
        d = _jprod(lam, lam, dims) + _jprod(ws_a, wz_a, dims) - sigma * mu * e
        rhs_z = -(1.0 - sigma) * rz + scal.apply(_jsolve(lam, d, dims))
        dx, dy, dz = kkt.solve(-(1.0 - sigma) * rx, -(1.0 - sigma) * ry, rhs_z)
        ds = -(1.0 - sigma) * rz - G @ dx
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(ds))
                and np.all(np.isfinite(dz))):
            break

        alpha = min(1.0, 0.99 * min(max_step(s, ds, dims), max_step(z, dz, dims)))
        if alpha <= 1e-13:
            break  # stalled; report best iterate as max_iter
        x += alpha * dx
        y += alpha * dy
        s += alpha * ds
        z += alpha * dz
    else:
        iters_done = max_iter

    if status in ("max_iter",) and best is not None:
        _, x, y, s, z, pres, dres, gap, relgap = best

    return ConelpResult(
        x=x,
        y=y,
        s=s,
        z=z,
        status=status,
        iterations=iters_done,
        primal_res=pres,
        dual_res=dres,
        gap=gap,
        rel_gap=relgap,
        iterates=iterates,
    )
