"""Consensus weight learning across data-splitting agents.

Each of N agents holds a shard of the training data and a local copy
``zeta_j`` of the kernel weights; a hub maintains the shared iterate
``theta``.  One round runs

1. hub: ``theta = proj_+( sum_j (rho_j zeta_j + lam_j) / sum_j rho_j )``
   (the plain mean of ``zeta_j + lam_j / rho_j`` when all penalties agree),
   broadcast;
2. agent j: one (or a few) Jacobi surrogate sweeps on the augmented local
   objective ``l_j(zeta) + lam_j'(zeta - theta) + 1/2 |zeta -
   theta|^2_{rho_j}``, started *from the received consensus point*, then
   report ``zeta_j``;
3. both ends of every link: ``lam_j += rho_j (zeta_j - theta)``.

With quantization (see :func:`gsmgp.quant.qd2sca`) the broadcast and the
reports cross the wire as lattice indices, and step 3 deliberately uses
only those decoded lattice values, so the hub's mirror of every multiplier
stays bit-identical to the agent's copy without any extra traffic.

The penalty follows a deterministic geometric continuation ramp by
default (``rho_t = rho_init * growth^t`` capped at ``rho_max``): the
likelihood's curvature across weight coordinates spans several orders of
magnitude, so the consensus multipliers on the stiff coordinates are huge
and only become reachable once the penalty has grown past that curvature;
ramping sweeps the whole spectrum in a few dozen rounds and, being a pure
function of the round index, is reproduced bit-exactly on both ends of
every link for free.  Per-coordinate residual balancing (grow ``rho``
where the primal residual dominates, shrink where the dual residual does)
is available as ``penalty_mode="balance"``.  The multipliers themselves
are kept when the penalty changes.  Stopping follows the usual
absolute/relative residual thresholds for consensus problems.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import conic, gp
from .errors import ConfigError
from .kernel import (
    DEFAULT_MEM_LIMIT,
    Dataset,
    GridSpec,
    KernelWorkspace,
    build_workspace,
)
from .quant import Quantizer, quantize_vector
from .sca import BlockPartition, _polish_block
from .simnet import Message, SimNet

HUB = "hub"
_HUB_STREAM = 2**31 - 1  # role id for the hub's quantizer stream


@dataclass
class ConsensusSettings:
    """Knobs for the consensus run; defaults mirror the reference setup."""

    noise_var: float = 1e-2
    inner_iters: int = 1
    max_outer: int = 50
    eps_abs: float = 1e-4
    eps_rel: float = 1e-3
    rho_init: float = 1e-10
    penalty_mode: str = "schedule"  # "schedule" or "balance"
    penalty_growth: float = 2.0
    rho_max: float = 1e6
    balance_mu: float = 10.0
    balance_kappa: float = 2.0
    adapt: bool = True
    balance_every: int = 1
    balance_freeze: int | None = None
    solver_tol: float = 1e-8
    solver_max_iter: int = 200
    polish: bool = True
    partition_scheme: str = "contiguous"
    partition_seed: int | None = None
    rank: int | None = None
    factor_method: str = "nystrom"
    factor_tol: float = 1e-10
    mem_limit: int = DEFAULT_MEM_LIMIT
    quant_seed: int = 0
    stop_on_residuals: bool = True


@dataclass
class AgentState:
    """One agent's private state (the hub never sees ``ws`` or ``data``)."""

    id: str
    data: Dataset
    ws: KernelWorkspace
    zeta: np.ndarray
    lam: np.ndarray
    rho: np.ndarray  # per-coordinate penalty vector (scalar accepted)
    tx_bits: int = 0


@dataclass
class ConsensusTrace:
    theta: list = field(default_factory=list)
    zeta: list = field(default_factory=list)  # per round: reported copies
    primal_res: list = field(default_factory=list)  # max_j |zeta_j - theta|
    dual_res: list = field(default_factory=list)
    nll_sum: list = field(default_factory=list)
    aug_lagrangian: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    projection_active: list = field(default_factory=list)
    unit_time: list = field(default_factory=list)
    uplink_bits: list = field(default_factory=list)
    downlink_bits: list = field(default_factory=list)
    converged: bool = False
    final_zeta: list = field(default_factory=list)
    net: SimNet | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(
                "iteration,primal_res,dual_res,nll_sum,aug_lagrangian,"
                "rho_mean,projection_active,unit_time,uplink_bits,downlink_bits\n"
            )
            for t in range(len(self.primal_res)):
                f.write(
                    f"{t},{self.primal_res[t]!r},{self.dual_res[t]!r},"
                    f"{self.nll_sum[t]!r},{self.aug_lagrangian[t]!r},"
                    f"{float(np.mean(self.rho[t]))!r},"
                    f"{int(self.projection_active[t])},{self.unit_time[t]!r},"
                    f"{self.uplink_bits[t]},{self.downlink_bits[t]}\n"
                )


def partition_data(
    full: Dataset, N: int, scheme: str = "contiguous", seed: int | None = None
) -> list[Dataset]:
    """Split a dataset into N shards with sizes differing by at most one.

    ``contiguous`` keeps runs of consecutive rows, ``strided`` deals rows
    round-robin, ``random`` shuffles with ``seed`` first.
    """
    if not 1 <= N <= full.n:
        raise ConfigError(f"need 1 <= N <= n={full.n}, got N={N}")
    order = np.arange(full.n)
    if scheme == "contiguous":
        chunks = np.array_split(order, N)
    elif scheme == "strided":
        chunks = [order[j::N] for j in range(N)]
    elif scheme == "random":
        rng = np.random.default_rng(seed)
        perm = rng.permutation(order)
        chunks = [np.sort(c) for c in np.array_split(perm, N)]
    else:
        raise ConfigError(f"unknown partition scheme {scheme!r}")
    return [Dataset(X=full.X[c], y=full.y[c]) for c in chunks]


def consensus_update(zetas, lams, rhos) -> np.ndarray:
    """Hub step: penalty-weighted average of the shifted local copies,
    projected onto the non-negative orthant.

    With one shared penalty this is the plain mean of ``zeta_j +
    lam_j / rho_j``; heterogeneous (per-agent or per-coordinate) penalties
    weight each term by its ``rho_j`` so that the step still minimises the
    quadratic consensus coupling exactly.
    """
    theta, _ = _consensus_raw(zetas, lams, rhos)
    return theta


def _consensus_raw(zetas, lams, rhos):
    num = np.zeros_like(np.asarray(zetas[0], dtype=np.float64))
    den = np.zeros_like(num)
    for z, l, r in zip(zetas, lams, rhos):
        r = np.broadcast_to(np.asarray(r, dtype=np.float64), num.shape)
        num = num + r * np.asarray(z, dtype=np.float64) + np.asarray(l, dtype=np.float64)
        den = den + r
    raw = num / den
    clipped = bool(np.any(raw < 0.0))
    return np.clip(raw, 0.0, None), clipped


def dual_update(agent: AgentState, theta_new, zeta_report=None) -> np.ndarray:
    """Multiplier step ``lam + rho (zeta - theta)``.  ``zeta_report``
    overrides the agent's local copy when the update must run on the
    transmitted (quantized) values."""
    zeta = agent.zeta if zeta_report is None else zeta_report
    return agent.lam + agent.rho * (np.asarray(zeta) - np.asarray(theta_new))


def adapt_rho(rho, primal_res, dual_res, mu: float = 10.0, kappa: float = 2.0):
    """Residual balancing: grow ``rho`` by ``kappa`` when the primal
    residual exceeds ``mu`` times the dual one, shrink when the reverse
    holds, leave it alone otherwise.  Applied elementwise when the inputs
    are per-coordinate vectors."""
    rho_a = np.asarray(rho, dtype=np.float64)
    p = np.asarray(primal_res, dtype=np.float64)
    d = np.asarray(dual_res, dtype=np.float64)
    out = np.where(p > mu * d, rho_a * kappa, np.where(d > mu * p, rho_a / kappa, rho_a))
    if rho_a.ndim == 0:
        return float(out)
    return out


def local_update(
    agent: AgentState,
    theta_new: np.ndarray,
    partition: BlockPartition,
    settings: ConsensusSettings,
) -> np.ndarray:
    """Agent step: ``inner_iters`` Jacobi surrogate sweeps on the augmented
    local objective, started from the consensus point ``theta_new``."""
    y = agent.data.y
    ws = agent.ws
    zeta = np.asarray(theta_new, dtype=np.float64).copy()
    for _ in range(settings.inner_iters):
        C_full = ws.noise_var * np.eye(ws.n)
        for q in range(ws.Q):
            if zeta[q] != 0.0:
                C_full += zeta[q] * ws.grams[q]
        grad_full = gp.grad_h(zeta, ws)
        new_zeta = zeta.copy()
        for i, block in enumerate(partition.blocks):
            M = C_full.copy()
            for q in block:
                if zeta[q] != 0.0:
                    M -= zeta[q] * ws.grams[q]
            F = conic._frozen_factor(M)
            factors = [ws.lowrank[q].L for q in block]
            rho_block = np.asarray(agent.rho, dtype=np.float64)
            if rho_block.ndim:
                rho_block = rho_block[block]
            prog = conic._assemble(
                F,
                factors,
                grad_full[block],
                y,
                dual_block=agent.lam[block],
                rho=rho_block,
                anchor_block=np.asarray(theta_new, dtype=np.float64)[block],
            )
            sol = conic.solve(
                prog, tol=settings.solver_tol, max_iter=settings.solver_max_iter
            )
            vals = sol.theta_block
            if settings.polish:
                vals = _polish_block(
                    vals,
                    [ws.grams[q] for q in block],
                    M,
                    agent.lam[block] - grad_full[block],
                    y,
                    rho=rho_block,
                    anchor=np.asarray(theta_new, dtype=np.float64)[block],
                )
            new_zeta[block] = vals
        zeta = new_zeta
    return zeta


def run_consensus(
    full: Dataset,
    grid: GridSpec,
    N: int,
    s: int,
    settings: ConsensusSettings,
    delta: float | None = None,
) -> tuple[np.ndarray, ConsensusTrace]:
    """Shared engine: plain consensus when ``delta`` is None, quantized
    transmission otherwise.  Returns the hub iterate and the full trace
    (including the network object for bit audits)."""
    shards = partition_data(
        full, N, scheme=settings.partition_scheme, seed=settings.partition_seed
    )
    Q = grid.Q
    partition = BlockPartition.make(Q, s)
    agent_ids = [f"agent{j}" for j in range(N)]
    net = SimNet(HUB, agent_ids)
    agents = []
    for j, shard in enumerate(shards):
        ws = build_workspace(
            shard,
            grid,
            settings.noise_var,
            rank=settings.rank,
            factor_method=settings.factor_method,
            factor_tol=settings.factor_tol,
            mem_limit=settings.mem_limit,
        )
        agents.append(
            AgentState(
                id=agent_ids[j],
                data=shard,
                ws=ws,
                zeta=np.zeros(Q),
                lam=np.zeros(Q),
                rho=np.full(Q, settings.rho_init),
            )
        )

    # hub-side mirrors, rebuilt exclusively from what crossed the wire
    hub_zeta = [np.zeros(Q) for _ in range(N)]
    hub_lam = [np.zeros(Q) for _ in range(N)]
    hub_rho = [np.full(Q, settings.rho_init) for _ in range(N)]
    theta = np.zeros(Q)
    theta_used_prev = np.zeros(Q)
    trace = ConsensusTrace(net=net)

    if settings.penalty_mode not in ("schedule", "balance"):
        raise ConfigError(f"unknown penalty_mode {settings.penalty_mode!r}")

    for t in range(settings.max_outer):
        rnd = t + 1
        if settings.penalty_mode == "schedule":
            # deterministic continuation ramp, identical at hub and agents
            rho_t = min(
                settings.rho_init * settings.penalty_growth**t, settings.rho_max
            )
            for j in range(N):
                hub_rho[j] = np.full(Q, rho_t)
                agents[j].rho = np.full(Q, rho_t)
        theta, clipped = _consensus_raw(hub_zeta, hub_lam, hub_rho)
        if delta is None:
            down_payload = theta
            theta_used = theta
        else:
            qz = Quantizer(
                delta,
                np.random.default_rng(
                    np.random.SeedSequence([settings.quant_seed, _HUB_STREAM, t])
                ),
            )
            down_payload = quantize_vector(theta, qz)
            theta_used = down_payload.values()
        for aid in agent_ids:
            net.send(
                Message(
                    kind="theta_down", sender=HUB, receiver=aid,
                    payload=down_payload, round=rnd,
                )
            )

        unit_secs = 0.0
        reports = []
        for j, agent in enumerate(agents):
            inbox = net.poll(agent.id, rnd)
            payload = inbox[0].payload
            theta_rx = payload if isinstance(payload, np.ndarray) else payload.values()
            t0 = time.perf_counter()
            zeta_new = local_update(agent, theta_rx, partition, settings)
            unit_secs = max(unit_secs, time.perf_counter() - t0)
            agent.zeta = zeta_new
            if delta is None:
                up_payload = zeta_new
                zeta_report = zeta_new
            else:
                qz = Quantizer(
                    delta,
                    np.random.default_rng(
                        np.random.SeedSequence([settings.quant_seed, j, t])
                    ),
                )
                up_payload = quantize_vector(zeta_new, qz)
                zeta_report = up_payload.values()
            net.send(
                Message(
                    kind="zeta_up", sender=agent.id, receiver=HUB,
                    payload=up_payload, round=rnd,
                )
            )
            agent.lam = dual_update(agent, theta_rx, zeta_report=zeta_report)
            agent.tx_bits = net.stats[(agent.id, HUB)].payload_bits
            reports.append((theta_rx, zeta_report))

        for msg in net.poll(HUB, rnd):
            j = agent_ids.index(msg.sender)
            payload = msg.payload
            hub_zeta[j] = payload if isinstance(payload, np.ndarray) else payload.values()

        # mirrored dual and penalty updates from shared quantities only
        r_each = np.empty(N)
        dtheta_abs = np.abs(theta_used - theta_used_prev)
        for j in range(N):
            hub_lam[j] = hub_lam[j] + hub_rho[j] * (hub_zeta[j] - theta_used)
            r_each[j] = float(np.linalg.norm(hub_zeta[j] - theta_used))
            adapt_now = (
                settings.penalty_mode == "balance"
                and settings.adapt
                and (t + 1) % settings.balance_every == 0
                and (settings.balance_freeze is None or t < settings.balance_freeze)
            )
            if adapt_now:
                new_rho = adapt_rho(
                    hub_rho[j],
                    np.abs(hub_zeta[j] - theta_used),
                    hub_rho[j] * dtheta_abs,
                    mu=settings.balance_mu,
                    kappa=settings.balance_kappa,
                )
                hub_rho[j] = new_rho
                agents[j].rho = new_rho.copy()

        nll_sum = sum(gp.nll(a.zeta, a.ws, a.data.y) for a in agents)
        aug = 0.0
        for j, a in enumerate(agents):
            gap = a.zeta - theta
            aug += (
                gp.nll(a.zeta, a.ws, a.data.y)
                + float(a.lam @ gap)
                + 0.5 * float((a.rho * gap) @ gap)
            )
        trace.theta.append(theta.copy())
        trace.zeta.append([z.copy() for z in hub_zeta])
        trace.primal_res.append(float(r_each.max()))
        trace.dual_res.append(
            float(np.sqrt(sum(np.sum(np.square(r * dtheta_abs)) for r in hub_rho)))
        )
        trace.nll_sum.append(nll_sum)
        trace.aug_lagrangian.append(aug)
        trace.rho.append([r.copy() for r in hub_rho])
        trace.projection_active.append(clipped)
        trace.unit_time.append(unit_secs)
        trace.uplink_bits.append(
            sum(row[3] for row in net.stats_rows() if row[2] == rnd and row[1] == HUB)
        )
        trace.downlink_bits.append(
            sum(row[3] for row in net.stats_rows() if row[2] == rnd and row[0] == HUB)
        )

        # stopping thresholds in the stacked consensus geometry
        r_stack = float(np.sqrt(np.sum(np.square(r_each))))
        zeta_stack = float(np.sqrt(sum(np.sum(np.square(z)) for z in hub_zeta)))
        lam_stack = float(np.sqrt(sum(np.sum(np.square(l)) for l in hub_lam)))
        eps_pri = (
            np.sqrt(N * Q) * settings.eps_abs
            + settings.eps_rel
            * max(zeta_stack, np.sqrt(N) * float(np.linalg.norm(theta_used)))
        )
        eps_dual = np.sqrt(N * Q) * settings.eps_abs + settings.eps_rel * lam_stack
        theta_used_prev = theta_used
        if settings.stop_on_residuals and r_stack <= eps_pri:
            if settings.penalty_mode == "schedule":
                # once the ramp is capped the proximal term pins the global
                # iterate, so the scaled dual residual cannot tell settled
                # multiplier oscillation from progress; primal feasibility
                # at the cap is the meaningful test
                if float(np.max(hub_rho[0])) >= settings.rho_max:
                    trace.converged = True
                    break
            elif trace.dual_res[-1] <= eps_dual:
                trace.converged = True
                break

    trace.final_zeta = [a.zeta.copy() for a in agents]
    return theta, trace


def d2sca(
    full: Dataset,
    grid: GridSpec,
    N: int,
    s: int,
    settings: ConsensusSettings | None = None,
) -> tuple[np.ndarray, ConsensusTrace]:
    """Exact-transmission consensus learning (see module docstring)."""
    return run_consensus(full, grid, N, s, settings or ConsensusSettings())
