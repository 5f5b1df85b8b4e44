"""Cone-program models for the per-block weight subproblems.

One surrogate block subproblem minimises

    y' C(theta)^-1 y  -  grad' theta        over theta >= 0,

with ``C(theta) = M + sum_j theta_j K_j`` and ``M`` the frozen remainder of
the covariance.  Writing ``K_j = L_j L_j'`` and ``M = F F'``, the
matrix-fractional term turns into a sum of epigraph variables

    minimize  sum z  -  grad' theta
    s.t.      y = F w_0 + sum_j L_j w_j
              |w_0|^2 <= z_0
              |w_j|^2 <= theta_j z_j          (rotated cones)
              theta >= 0, z >= 0,

which is exact for any factor choice.  The consensus variant adds the
scaled dual term and a proximal distance epigraph.

The model here is declarative: variables, a linear objective, rotated
cones whose legs are affine terms, dense equality rows, and a set of
non-negative variables.  ``solve`` lowers it to the standard-form solver
(each rotated cone ``u v >= |m|^2`` becomes the second-order cone
``|(u - v, 2m)| <= u + v``) and extracts the block weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gp
from .errors import ConicBuildError
from .kernel import KernelWorkspace
from .socp import ConeDims, solve_conelp


@dataclass(frozen=True)
class LinTerm:
    """An affine term ``scale * x[index] + offset``; ``index=None`` makes
    it the constant ``offset``."""

    index: int | None
    scale: float = 1.0
    offset: float = 0.0

    def describe(self) -> str:
        if self.index is None:
            return f"{self.offset:g}"
        body = f"{self.scale:g}*x{self.index}" if self.scale != 1.0 else f"x{self.index}"
        return f"{body}+{self.offset:g}" if self.offset else body


@dataclass(frozen=True)
class RotatedCone:
    """``u * v >= |members|^2`` with ``u, v >= 0`` implied."""

    u: LinTerm
    v: LinTerm
    members: tuple[LinTerm, ...]


@dataclass
class ConeProgram:
    """A small declarative SOCP: minimise ``objective @ x + offset``."""

    n_vars: int
    objective: np.ndarray
    cones: list[RotatedCone]
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    nonneg: np.ndarray
    theta_index: np.ndarray  # positions of the block weights inside x
    offset: float = 0.0

    def __post_init__(self):
        if self.objective.shape[0] != self.n_vars:
            raise ConicBuildError("objective length does not match variable count")
        if self.eq_matrix.shape != (self.eq_rhs.shape[0], self.n_vars):
            raise ConicBuildError("equality block shape mismatch")

    def dump_text(self) -> str:
        """Plain-text rendering for debugging: one line per structural
        element, stable ordering."""
        lines = [f"cone-program vars={self.n_vars} offset={self.offset:g}"]
        obj = " ".join(f"{v:g}" for v in self.objective)
        lines.append(f"minimize {obj}")
        lines.append("nonneg " + " ".join(f"x{i}" for i in self.nonneg))
        for k, cone in enumerate(self.cones):
            mem = ", ".join(t.describe() for t in cone.members)
            lines.append(
                f"cone{k}: ({cone.u.describe()}) * ({cone.v.describe()}) >= |[{mem}]|^2"
            )
        for r in range(self.eq_rhs.shape[0]):
            row = self.eq_matrix[r]
            nz = np.flatnonzero(row)
            body = " + ".join(f"{row[i]:g}*x{i}" for i in nz) or "0"
            lines.append(f"eq{r}: {body} = {self.eq_rhs[r]:g}")
        return "\n".join(lines)


@dataclass(frozen=True)
class KktResiduals:
    primal: float
    dual: float
    gap: float


@dataclass
class ConeSolution:
    """Result of one block solve.  ``objective_value`` is the cone-program
    objective (the surrogate value up to the constants dropped by the
    builder, which are carried in ``ConeProgram.offset``)."""

    theta_block: np.ndarray
    objective_value: float
    status: str  # optimal | max_iter | infeasible
    kkt: KktResiduals
    x: np.ndarray
    iterations: int
    status_detail: str = ""
    iterates: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# builders


def _frozen_factor(M: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ConicBuildError("frozen covariance part is not positive definite") from exc


def _assemble(
    F: np.ndarray,
    factors: list[np.ndarray],
    grad_block: np.ndarray,
    y: np.ndarray,
    dual_block: np.ndarray | None = None,
    rho=None,
    anchor_block: np.ndarray | None = None,
    offset: float = 0.0,
) -> ConeProgram:
    """Shared assembly for the plain and the consensus block programs.

    Variable layout: ``[theta (b) | z (b+1) | w_0 (n) | w_1 ... w_b | v?]``
    where ``v`` (the proximal epigraph) exists only in the consensus case.
    ``rho`` may be a scalar or a per-coordinate vector; the proximal term
    is ``(1/2) sum_j rho_j (theta_j - anchor_j)^2`` either way.
    """
    n = y.shape[0]
    b = len(factors)
    ranks = [L.shape[1] for L in factors]
    prox = dual_block is not None
    n_vars = b + (b + 1) + n + sum(ranks) + (1 if prox else 0)
    if prox:
        rho_vec = np.asarray(rho, dtype=np.float64).ravel()
        if rho_vec.size == 1:
            rho_vec = np.full(b, rho_vec[0])
        if rho_vec.shape[0] != b:
            raise ConicBuildError(f"rho has {rho_vec.shape[0]} entries for block size {b}")

    pos_theta = np.arange(b)
    pos_z = b + np.arange(b + 1)  # z_0 first, then z_1..z_b
    pos_w0 = 2 * b + 1 + np.arange(n)
    pos_w = []
    at = 2 * b + 1 + n
    for r in ranks:
        pos_w.append(np.arange(at, at + r))
        at += r
    pos_v = at if prox else None

    c = np.zeros(n_vars)
    c[pos_z] = 1.0
    c[pos_theta] = -grad_block
    if prox:
        c[pos_theta] += dual_block
        c[pos_v] = 0.5

    cones = [
        RotatedCone(
            u=LinTerm(int(pos_z[0])),
            v=LinTerm(None, offset=1.0),
            members=tuple(LinTerm(int(i)) for i in pos_w0),
        )
    ]
    for j in range(b):
        cones.append(
            RotatedCone(
                u=LinTerm(int(pos_theta[j])),
                v=LinTerm(int(pos_z[j + 1])),
                members=tuple(LinTerm(int(i)) for i in pos_w[j]),
            )
        )
    if prox:
        root = np.sqrt(rho_vec)
        cones.append(
            RotatedCone(
                u=LinTerm(pos_v),
                v=LinTerm(None, offset=1.0),
                members=tuple(
                    LinTerm(
                        int(pos_theta[j]),
                        float(root[j]),
                        -float(root[j] * anchor_block[j]),
                    )
                    for j in range(b)
                ),
            )
        )

    eq = np.zeros((n, n_vars))
    eq[:, pos_w0] = F
    for j in range(b):
        eq[:, pos_w[j]] = factors[j]
    rhs = np.asarray(y, dtype=np.float64).copy()

    nonneg = np.concatenate([pos_theta, pos_z, [pos_v] if prox else []]).astype(int)

    return ConeProgram(
        n_vars=n_vars,
        objective=c,
        cones=cones,
        eq_matrix=eq,
        eq_rhs=rhs,
        nonneg=nonneg,
        theta_index=pos_theta,
        offset=offset,
    )


def build_block_socp(
    block_index: int,
    w_frozen,
    ws: KernelWorkspace,
    grad_h_block,
    y,
    partition,
    objective_offset: float = 0.0,
) -> ConeProgram:
    """Cone program for one weight block with every other block frozen at
    ``w_frozen``.  ``grad_h_block`` is the log-det gradient restricted to
    the block; the dropped constants of the surrogate may be carried in
    ``objective_offset`` for later recombination."""
    w_frozen = np.asarray(w_frozen, dtype=np.float64).ravel()
    block = partition.blocks[block_index]
    grad_block = np.asarray(grad_h_block, dtype=np.float64).ravel()
    if grad_block.shape[0] != block.shape[0]:
        raise ConicBuildError("gradient slice does not match the block size")
    if ws.noise_var <= 0:
        raise ConicBuildError("noise variance must be positive")
    inside = np.zeros(ws.Q, dtype=bool)
    inside[block] = True
    M = ws.noise_var * np.eye(ws.n)
    for q in range(ws.Q):
        if not inside[q] and w_frozen[q] != 0.0:
            M += w_frozen[q] * ws.grams[q]
    F = _frozen_factor(M)
    factors = [ws.lowrank[q].L for q in block]
    return _assemble(F, factors, grad_block, np.asarray(y, dtype=np.float64).ravel(),
                     offset=objective_offset)


def build_local_socp(
    agent: int,
    block_index: int,
    zeta_frozen,
    theta_global_block,
    dual_block,
    rho,
    ws: KernelWorkspace,
    y,
    partition,
    objective_offset: float = 0.0,
) -> ConeProgram:
    """Consensus variant of the block program for one agent: adds the
    scaled-dual linear term and the proximal epigraph ``v >= sum_j rho_j
    (zeta_j - theta_j)^2`` (``rho`` scalar or per-coordinate).  The log-det
    gradient is taken at ``zeta_frozen`` on this agent's data."""
    if np.any(np.asarray(rho) <= 0):
        raise ConicBuildError(f"agent {agent}: rho must be positive")
    zeta_frozen = np.asarray(zeta_frozen, dtype=np.float64).ravel()
    block = partition.blocks[block_index]
    grad_block = gp.grad_h(zeta_frozen, ws)[block]
    inside = np.zeros(ws.Q, dtype=bool)
    inside[block] = True
    M = ws.noise_var * np.eye(ws.n)
    for q in range(ws.Q):
        if not inside[q] and zeta_frozen[q] != 0.0:
            M += zeta_frozen[q] * ws.grams[q]
    F = _frozen_factor(M)
    factors = [ws.lowrank[q].L for q in block]
    return _assemble(
        F,
        factors,
        grad_block,
        np.asarray(y, dtype=np.float64).ravel(),
        dual_block=np.asarray(dual_block, dtype=np.float64).ravel(),
        rho=rho,
        anchor_block=np.asarray(theta_global_block, dtype=np.float64).ravel(),
        offset=objective_offset,
    )


# ---------------------------------------------------------------------------
# lowering and solve


def _lower(prog: ConeProgram):
    """Rewrite the declarative model in solver standard form."""
    l = prog.nonneg.shape[0]
    soc_dims = [2 + len(c.members) for c in prog.cones]
    m = l + sum(soc_dims)
    G = np.zeros((m, prog.n_vars))
    h = np.zeros(m)
    for r, idx in enumerate(prog.nonneg):
        G[r, idx] = -1.0
    row = l
    for cone in prog.cones:
        u, v = cone.u, cone.v
        # s_0 = u + v, s_1 = u - v, s_k = 2 * member_k
        for term, sign in ((u, 1.0), (v, 1.0)):
            if term.index is not None:
                G[row, term.index] -= sign * term.scale
            h[row] += sign * term.offset
        row += 1
        for term, sign in ((u, 1.0), (v, -1.0)):
            if term.index is not None:
                G[row, term.index] -= sign * term.scale
            h[row] += sign * term.offset
        row += 1
        for term in cone.members:
            if term.index is not None:
                G[row, term.index] = -2.0 * term.scale
            h[row] = 2.0 * term.offset
            row += 1
    dims = ConeDims(l=l, q=tuple(soc_dims))
    return G, h, dims


_STATUS_MAP = {
    "optimal": "optimal",
    "max_iter": "max_iter",
    "primal_infeasible": "infeasible",
    "dual_infeasible": "infeasible",
}


def solve(
    prog: ConeProgram,
    tol: float = 1e-8,
    max_iter: int = 200,
    record_iterates: bool = False,
) -> ConeSolution:
    """Lower the model and run the interior-point solver."""
    G, h, dims = _lower(prog)
    res = solve_conelp(
        prog.objective,
        G,
        h,
        dims,
        A=prog.eq_matrix,
        b=prog.eq_rhs,
        tol=tol,
        max_iter=max_iter,
        record_iterates=record_iterates,
    )
    theta = res.x[prog.theta_index].copy()
    if res.status == "optimal":
        # interior iterates sit a hair inside the cone; snap measurement noise
        theta[theta < 0] = 0.0
    return ConeSolution(
        theta_block=theta,
        objective_value=float(prog.objective @ res.x),
        status=_STATUS_MAP[res.status],
        kkt=KktResiduals(primal=res.primal_res, dual=res.dual_res, gap=res.gap),
        x=res.x,
        iterations=res.iterations,
        status_detail=res.status,
        iterates=res.iterates,
    )
