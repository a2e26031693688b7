"""Receding-horizon controller: single-shooting OCP with collision constraints.

States over the horizon are eliminated by rolling out the Euler model, so the
decision variable is the flat input sequence u in R^{3N}. The tracking cost
penalizes altitude/velocity errors, deviation from the hover input, and input
increments; the five per-stage collision constraints are max-form equalities
max(0, d_s - d_j - dd_{j+1} * Ts) = 0, handled by the quadratic-penalty loop.
Cost gradients are exact (adjoint recursion through the rollout, including
the clamp masks of the Euler step).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .config import (D_MAX, U_MAX, U_MIN, U_REF, ControlInput, MavState,
                     ModelParams, NmpcWeights, ReferenceCommand)
from .dynamics import NX, euler_step_kernel
from .perception import MeasurementError, ObstacleDistances
from .solver import (NlpProblem, NlpSolution, PanocSolver, PenaltySchedule,
                     SolveStatus, penalty_solve)

# Constraint axis tables: state distance index, rollout velocity index, sign
# of the velocity term in d_s - d_j - dd_{j+1}*Ts (dd is -v or +v per axis).
_VIDX = np.array([1, 1, 2, 2, 3], dtype=np.int64)
_VSGN = np.array([1.0, -1.0, 1.0, -1.0, 1.0])

_U_REF = np.array(U_REF)


@njit(cache=True)
def rollout_kernel(useq, x0, ts, p):
    """Roll the input sequence through the clamped Euler model.

    Returns (X, M): states X[(N+1), 11] with X[0] = x0, and clamp masks
    M[(N+1), 11] where M[t, i] = 0 marks an entry clamped at step t.
    """
    n = useq.shape[0] // 3
    X = np.empty((n + 1, NX))
    M = np.ones((n + 1, NX))
    X[0] = x0
    for t in range(n):
        euler_step_kernel(X[t], useq[3 * t:3 * t + 3], ts, p, X[t + 1], M[t + 1])
    return X, M


@njit(cache=True)
def residual_kernel(useq, x0, ts, p, d_s):
    """Stage constraint residuals max(0, d_s - d_j - dd_{j+1}*Ts), (5N,).

    Entry 5*j + a is stage j, axis a in order (x+, x-, y+, y-, z+).
    """
    n = useq.shape[0] // 3
    X, _ = rollout_kernel(useq, x0, ts, p)
    out = np.zeros(5 * n)
    for j in range(n):
        for a in range(5):
            vidx = 1 + (a // 2) if a < 4 else 3
            sgn = 1.0 if a % 2 == 0 else -1.0
            g = d_s - X[j, 6 + a] + sgn * X[j + 1, vidx] * ts
            if g > 0.0:
                out[5 * j + a] = g
    return out


@njit(cache=True)
def cost_kernel(useq, x0, uprev, ts, p, w, refs, rho):
    """Tracking cost plus (rho/2) * ||constraint residuals||^2.

    w = [qz, qv(3), qu(3), qdu(3), d_s]; refs = [z_r, vx_r, vy_r].
    """
    n = useq.shape[0] // 3
    X, _ = rollout_kernel(useq, x0, ts, p)
    qz = w[0]
    d_s = w[10]
    total = 0.0
    for j in range(n):
        ez = X[j + 1, 0] - refs[0]
        total += qz * ez * ez
        for i in range(3):
            ref_v = refs[1 + i] if i < 2 else 0.0
            ev = X[j + 1, 1 + i] - ref_v
            total += w[1 + i] * ev * ev
            uref_i = 0.5 if i == 2 else 0.0
            eu = useq[3 * j + i] - uref_i
            total += w[4 + i] * eu * eu
            prev = uprev[i] if j == 0 else useq[3 * (j - 1) + i]
            du = useq[3 * j + i] - prev
            total += w[7 + i] * du * du
        if rho > 0.0:
            for a in range(5):
                vidx = 1 + (a // 2) if a < 4 else 3
                sgn = 1.0 if a % 2 == 0 else -1.0
                g = d_s - X[j, 6 + a] + sgn * X[j + 1, vidx] * ts
                if g > 0.0:
                    total += 0.5 * rho * g * g
    return total


@njit(cache=True)
def _backward_kernel(useq, X, M, ts, p, seeds_x, seeds_u):
    """Adjoint sweep: gradient of sum(seeds) through the masked Euler rollout.

    seeds_x[i] is the direct cost gradient w.r.t. X[i]; seeds_u[t] the direct
    gradient w.r.t. stage input t. Returns the total gradient (3N,).
    """
    n = useq.shape[0] // 3
    g_out = np.empty(3 * n)
    ax, ay, az = p[1], p[2], p[3]
    k_phi, k_theta, tau_phi, tau_theta, t_max = p[4], p[5], p[6], p[7], p[8]
    lam = seeds_x[n].copy()
    for t in range(n - 1, -1, -1):
        # Mask rows clamped when producing X[t+1].
        lm = lam * M[t + 1]
        thrust = useq[3 * t + 2] * t_max
        sphi = np.sin(X[t, 4])
        cphi = np.cos(X[t, 4])
        sth = np.sin(X[t, 5])
        cth = np.cos(X[t, 5])
        # B^T lm (input Jacobian of one Euler step).
        g_out[3 * t + 0] = seeds_u[t, 0] + ts * (k_phi / tau_phi) * lm[4]
        g_out[3 * t + 1] = seeds_u[t, 1] + ts * (k_theta / tau_theta) * lm[5]
        g_out[3 * t + 2] = seeds_u[t, 2] + ts * t_max * (
            sth * cphi * lm[1] - sphi * lm[2] + cth * cphi * lm[3])
        if t > 0:
            # lam <- seeds_x[t] + A^T lm with A = I + ts * df/dx.
            nxt = seeds_x[t].copy()
            nxt[0] += lm[0]
            nxt[1] += lm[1] + ts * (-ax * lm[1] - lm[6] + lm[7])
            nxt[2] += lm[2] + ts * (-ay * lm[2] - lm[8] + lm[9])
            nxt[3] += lm[3] + ts * (lm[0] - az * lm[3] - lm[10])
            nxt[4] += lm[4] + ts * (-thrust * sth * sphi * lm[1]
                                    - thrust * cphi * lm[2]
                                    - thrust * cth * sphi * lm[3]
                                    - lm[4] / tau_phi)
            nxt[5] += lm[5] + ts * (thrust * cth * cphi * lm[1]
                                    - thrust * sth * cphi * lm[3]
                                    - lm[5] / tau_theta)
            for i in range(6, 11):
                nxt[i] += lm[i]
            lam = nxt
    return g_out


@njit(cache=True)
def grad_kernel(useq, x0, uprev, ts, p, w, refs, rho):
    """Exact gradient of cost_kernel via the adjoint recursion."""
    n = useq.shape[0] // 3
    X, M = rollout_kernel(useq, x0, ts, p)
    qz = w[0]
    d_s = w[10]
    seeds_x = np.zeros((n + 1, NX))
    seeds_u = np.zeros((n, 3))
    for j in range(n):
        seeds_x[j + 1, 0] += 2.0 * qz * (X[j + 1, 0] - refs[0])
        for i in range(3):
            ref_v = refs[1 + i] if i < 2 else 0.0
            seeds_x[j + 1, 1 + i] += 2.0 * w[1 + i] * (X[j + 1, 1 + i] - ref_v)
            uref_i = 0.5 if i == 2 else 0.0
            seeds_u[j, i] += 2.0 * w[4 + i] * (useq[3 * j + i] - uref_i)
            prev = uprev[i] if j == 0 else useq[3 * (j - 1) + i]
            seeds_u[j, i] += 2.0 * w[7 + i] * (useq[3 * j + i] - prev)
            if j + 1 < n:
                seeds_u[j, i] -= 2.0 * w[7 + i] * (useq[3 * (j + 1) + i] - useq[3 * j + i])
        if rho > 0.0:
            for a in range(5):
                vidx = 1 + (a // 2) if a < 4 else 3
                sgn = 1.0 if a % 2 == 0 else -1.0
                g = d_s - X[j, 6 + a] + sgn * X[j + 1, vidx] * ts
                if g > 0.0:
                    seeds_x[j, 6 + a] -= rho * g
                    seeds_x[j + 1, vidx] += rho * g * sgn * ts
    return _backward_kernel(useq, X, M, ts, p, seeds_x, seeds_u)


@njit(cache=True)
def residual_jtv_kernel(useq, x0, ts, p, d_s, v):
    """J_F(u)^T v for the residual map F (used by the penalty composition)."""
    n = useq.shape[0] // 3
    X, M = rollout_kernel(useq, x0, ts, p)
    seeds_x = np.zeros((n + 1, NX))
    seeds_u = np.zeros((n, 3))
    for j in range(n):
        for a in range(5):
            vidx = 1 + (a // 2) if a < 4 else 3
            sgn = 1.0 if a % 2 == 0 else -1.0
            g = d_s - X[j, 6 + a] + sgn * X[j + 1, vidx] * ts
            if g > 0.0:
                seeds_x[j, 6 + a] -= v[5 * j + a]
                seeds_x[j + 1, vidx] += v[5 * j + a] * sgn * ts
    return _backward_kernel(useq, X, M, ts, p, seeds_x, seeds_u)


@dataclass
class NmpcContext:
    """Mutable per-control-loop state: tuning, warm start, and latest inputs.

    reference updates may be swapped in from another thread (attribute
    assignment is atomic); everything else is owned by the control loop.
    """

    weights: NmpcWeights = field(default_factory=NmpcWeights)
    model: ModelParams = field(default_factory=ModelParams)
    reference: ReferenceCommand = field(default_factory=ReferenceCommand)
    u_prev: ControlInput = ControlInput(*U_REF)
    warm_start: Optional[np.ndarray] = None
    estimate: Optional[np.ndarray] = None
    distances: Optional[ObstacleDistances] = None
    tol: float = 1e-4
    c_tol: float = 1e-3
    schedule: PenaltySchedule = field(default_factory=PenaltySchedule)
    max_inner: int = 500
    degraded_ticks: int = 0
    watchdog_limit: int = 3
    last_warmstart_violation: float = 0.0

    def __post_init__(self):
        self._rho_warm = self.schedule.rho0
        n = self.weights.horizon
        if self.warm_start is None:
            self.warm_start = np.tile(_U_REF, n)
        self.warm_start = np.asarray(self.warm_start, dtype=float)
        if self.warm_start.shape != (3 * n,):
            raise ValueError(f"warm start must have shape ({3 * n},)")
        lo, hi = np.tile(U_MIN, n), np.tile(U_MAX, n)
        if np.any(self.warm_start < lo - 1e-12) or np.any(self.warm_start > hi + 1e-12):
            raise ValueError("warm start outside the input box")
        self._solver = PanocSolver(3 * n, lbfgs_memory=10)
        self._p = self.model.as_array()
        self._w = self.weights.as_array()
        self._lo = lo
        self._hi = hi


@dataclass(frozen=True)
class PredictedTrajectory:
    """Single-shooting rollout of the horizon under a given input sequence."""

    states: np.ndarray  # (N+1, 11)

    @property
    def distances(self) -> np.ndarray:
        return self.states[:, 6:11]


def assemble_state(estimate: np.ndarray, distances: ObstacleDistances) -> MavState:
    """Stack the 6 estimated entries and 5 measured distances into the state.

    Invalid (inf) distance channels fall back to the lidar bound.
    """
    est = np.asarray(estimate, dtype=float)
    if est.shape != (6,) or not np.all(np.isfinite(est)):
        raise MeasurementError(f"bad state estimate {estimate!r}")
    d = distances.as_array()
    d = np.where(np.isfinite(d), d, D_MAX)
    if np.any(d < 0.0):
        raise MeasurementError(f"negative distance in {distances!r}")
    d = np.minimum(d, D_MAX)
    return MavState.from_array(np.concatenate([est, d]))


def _refs_array(ctx: NmpcContext) -> np.ndarray:
    r = ctx.reference
    return np.array([r.z_r, r.vx_r, r.vy_r])


def _x0(ctx: NmpcContext) -> np.ndarray:
    return assemble_state(ctx.estimate, ctx.distances).as_array()


def rollout(u_seq: np.ndarray, ctx: NmpcContext) -> PredictedTrajectory:
    X, _ = rollout_kernel(np.asarray(u_seq, float).ravel(), _x0(ctx),
                          ctx.weights.ts, ctx._p)
    return PredictedTrajectory(states=X)


def cost(u_seq: np.ndarray, ctx: NmpcContext, rho: float = 0.0) -> float:
    """Finite-horizon objective (plus penalty term when rho > 0)."""
    return float(cost_kernel(np.asarray(u_seq, float).ravel(), _x0(ctx),
                             ctx.u_prev.as_array(), ctx.weights.ts, ctx._p,
                             ctx._w, _refs_array(ctx), rho))


def constraint_residuals(u_seq: np.ndarray, ctx: NmpcContext) -> np.ndarray:
    """Max-form collision residuals over the horizon; all-zero iff satisfied."""
    return residual_kernel(np.asarray(u_seq, float).ravel(), _x0(ctx),
                           ctx.weights.ts, ctx._p, ctx.weights.d_s)


def gradient(u_seq: np.ndarray, ctx: NmpcContext, rho: float = 0.0) -> np.ndarray:
    """Exact gradient of cost(u_seq, ctx, rho) via the adjoint recursion."""
    return grad_kernel(np.asarray(u_seq, float).ravel(), _x0(ctx),
                       ctx.u_prev.as_array(), ctx.weights.ts, ctx._p,
                       ctx._w, _refs_array(ctx), rho)


def build_problem(ctx: NmpcContext) -> NlpProblem:
    """Assemble the solver-facing problem around the current context."""
    x0 = _x0(ctx)
    uprev = ctx.u_prev.as_array()
    ts, p, w = ctx.weights.ts, ctx._p, ctx._w
    refs = _refs_array(ctx)
    d_s = ctx.weights.d_s

    def make_penalized(rho):
        def cost_rho(u):
            return float(cost_kernel(u, x0, uprev, ts, p, w, refs, rho))

        def grad_rho(u):
            return grad_kernel(u, x0, uprev, ts, p, w, refs, rho)

        return cost_rho, grad_rho

    base_cost, base_grad = make_penalized(0.0)
    return NlpProblem(
        n=3 * ctx.weights.horizon,
        cost=base_cost,
        grad=base_grad,
        u_min=ctx._lo,
        u_max=ctx._hi,
        constraints=lambda u: residual_kernel(u, x0, ts, p, d_s),
        constraints_jtv=lambda u, v: residual_jtv_kernel(u, x0, ts, p, d_s, v),
        penalized=make_penalized,
    )


def control_step(ctx: NmpcContext) -> tuple[ControlInput, NlpSolution, PredictedTrajectory]:
    """Solve the OCP, apply the receding-horizon shift, return the first input.

    On non-convergence the best-found input is still returned (flagged by the
    solution status); after watchdog_limit consecutive degraded ticks the
    velocity references are overridden to zero until the solver recovers.
    """
    if ctx.degraded_ticks >= ctx.watchdog_limit:
        ref = ctx.reference
        ctx.reference = ReferenceCommand(z_r=ref.z_r, vx_r=0.0, vy_r=0.0,
                                         timestamp=ref.timestamp,
                                         v_ref_max=ref.v_ref_max)
    problem = build_problem(ctx)
    ctx.last_warmstart_violation = float(np.max(
        problem.constraints(ctx.warm_start), initial=0.0))
    # Warm-start the penalty weight near the level that achieved feasibility
    # on the previous tick; it decays again once one round suffices.
    schedule = PenaltySchedule(rho0=ctx._rho_warm,
                               rho_factor=ctx.schedule.rho_factor,
                               max_outer=ctx.schedule.max_outer)
    sol = penalty_solve(problem, ctx.warm_start, tol=ctx.tol, c_tol=ctx.c_tol,
                        schedule=schedule, max_inner=ctx.max_inner,
                        solver=ctx._solver)
    if sol.outer_iterations > 1:
        ctx._rho_warm = min(sol.rho_final, 1e5)
    else:
        ctx._rho_warm = max(ctx.schedule.rho0, ctx._rho_warm / 10.0)
    u_star = np.clip(sol.u_star, ctx._lo, ctx._hi)
    first = ControlInput.from_array(u_star[:3])
    traj = PredictedTrajectory(states=rollout_kernel(u_star, _x0(ctx),
                                                     ctx.weights.ts, ctx._p)[0])
    # Shift the solution one stage and repeat the last input.
    ctx.warm_start = np.concatenate([u_star[3:], u_star[-3:]])
    ctx.u_prev = first
    if sol.status == SolveStatus.CONVERGED:
        ctx.degraded_ticks = 0
    else:
        ctx.degraded_ticks += 1
    return first, sol, traj
