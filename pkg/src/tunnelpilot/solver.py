"""Box-constrained nonconvex solver: PANOC inside a quadratic-penalty loop.

PANOC mixes projected-gradient (forward-backward) steps with L-BFGS
directions computed on the fixed-point residual, using the forward-backward
envelope (FBE) as a line-search merit function. Equality constraints
F(u) = 0 are handled by minimizing f(u) + (rho/2) ||F(u)||^2 for an
increasing penalty weight rho until the violation drops below tolerance.

A solver instance owns its workspace and is meant to be reused across calls
(one instance per control loop); distinct instances are independent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

# Floor for the Lipschitz estimate and its backtracking limits.
_MIN_LIPSCHITZ = 1e-10
_MAX_LIPSCHITZ = 1e9
_GAMMA_COEFF = 0.95
_LIPSCHITZ_EPS = 1e-6
_MAX_LIPSCHITZ_UPDATES = 10
_MAX_LINESEARCH = 10
# Perturbation used by the initial finite-difference Lipschitz estimate.
_FD_DELTA = 1e-12
_FD_EPSILON = 1e-6


class SolveStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"


@dataclass
class NlpProblem:
    """Box-constrained problem with optional equality constraints.

    cost/grad evaluate f and its gradient. constraints (if set) maps u to the
    m-vector F(u) whose components must vanish; constraints_jtv(u, v) returns
    J_F(u)^T v and is used to assemble penalty gradients. penalized, when
    provided, returns fused (cost, grad) callables for f + (rho/2)||F||^2 and
    takes precedence over the generic composition (lets callers share work
    between the two terms).
    """

    n: int
    cost: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    u_min: np.ndarray
    u_max: np.ndarray
    constraints: Optional[Callable[[np.ndarray], np.ndarray]] = None
    constraints_jtv: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    penalized: Optional[Callable[[float], tuple]] = None

    def __post_init__(self):
        self.u_min = np.asarray(self.u_min, dtype=float)
        self.u_max = np.asarray(self.u_max, dtype=float)
        if self.u_min.shape != (self.n,) or self.u_max.shape != (self.n,):
            raise ValueError("box bounds must have shape (n,)")
        if np.any(self.u_min > self.u_max):
            raise ValueError("u_min must not exceed u_max")

    def penalized_oracles(self, rho: float) -> tuple:
        if self.penalized is not None:
            return self.penalized(rho)
        if self.constraints is None:
            return self.cost, self.grad
        if self.constraints_jtv is None:
            raise ValueError("constraints require constraints_jtv or penalized")
        func, gfunc, cons, jtv = self.cost, self.grad, self.constraints, self.constraints_jtv

        def cost_rho(u):
            r = cons(u)
            return func(u) + 0.5 * rho * float(r @ r)

        def grad_rho(u):
            return gfunc(u) + rho * jtv(u, cons(u))

        return cost_rho, grad_rho


@dataclass
class NlpSolution:
    u_star: np.ndarray
    fixed_point_residual: float
    constraint_violation: float
    inner_iterations: int
    outer_iterations: int
    solve_time: float
    status: SolveStatus
    rho_final: float = 0.0  # penalty weight of the last outer round


@dataclass
class PenaltySchedule:
    rho0: float = 10.0
    rho_factor: float = 10.0
    max_outer: int = 6

    def __post_init__(self):
        if self.max_outer < 1 or self.rho0 <= 0.0 or self.rho_factor < 1.0:
            raise ValueError(f"invalid penalty schedule {self}")


@dataclass
class PanocSolver:
    """Reusable PANOC workspace for problems of a fixed dimension."""

    n: int
    lbfgs_memory: int = 10

    def __post_init__(self):
        n, m = self.n, max(self.lbfgs_memory, 1)
        self._s = np.zeros((m, n))
        self._y = np.zeros((m, n))
        self._rho_buf = np.zeros(m)
        self._alpha = np.zeros(m)
        self._count = 0
        self._head = 0
        self._have_prev = False
        self._prev_u = np.zeros(n)
        self._prev_r = np.zeros(n)
        self._h0 = 1.0

    # -- L-BFGS on the fixed-point residual -------------------------------

    def _lbfgs_reset(self) -> None:
        self._count = 0
        self._have_prev = False
        self._h0 = 1.0

    def _lbfgs_push(self, u: np.ndarray, r: np.ndarray) -> None:
        if self.lbfgs_memory == 0:
            return
        if not self._have_prev:
            self._prev_u[:] = u
            self._prev_r[:] = r
            self._have_prev = True
            return
        s = u - self._prev_u
        y = r - self._prev_r
        self._prev_u[:] = u
        self._prev_r[:] = r
        sy = float(s @ y)
        ss = float(s @ s)
        # Relative curvature test so tiny near-convergence steps still update H.
        if ss <= 1e-32 or sy <= 1e-10 * ss:
            return
        idx = self._head
        self._s[idx] = s
        self._y[idx] = y
        self._rho_buf[idx] = 1.0 / sy
        self._head = (self._head + 1) % self.lbfgs_memory
        self._count = min(self._count + 1, self.lbfgs_memory)
        yy = float(y @ y)
        if yy > 0.0:
            self._h0 = sy / yy

    def _lbfgs_apply(self, q: np.ndarray) -> np.ndarray:
        """Two-loop recursion: returns H @ q (approximation of J_r^{-1} q)."""
        out = q.copy()
        k = self._count
        if k == 0:
            return out
        idxs = [(self._head - 1 - i) % self.lbfgs_memory for i in range(k)]
        for j, idx in enumerate(idxs):
            self._alpha[j] = self._rho_buf[idx] * float(self._s[idx] @ out)
            out -= self._alpha[j] * self._y[idx]
        out *= self._h0
        for j in range(k - 1, -1, -1):
            idx = idxs[j]
            beta = self._rho_buf[idx] * float(self._y[idx] @ out)
            out += (self._alpha[j] - beta) * self._s[idx]
        return out

    # -- PANOC -------------------------------------------------------------

    def solve(self, problem: NlpProblem, u0: np.ndarray, tol: float = 1e-4,
              max_iters: int = 500,
              on_iteration: Optional[Callable[[int, float, float, float, float], None]] = None,
              _cost=None, _grad=None) -> NlpSolution:
        """Minimize the (optionally overridden) smooth cost over the box.

        The iterate u_{k+1} = u_k + tau*d + (1-tau)*(proj(u_k - gamma g) - u_k)
        is chosen by halving tau from 1 until the FBE decreases sufficiently;
        termination is on the inf-norm fixed-point residual scaled by gamma.
        on_iteration receives (k, cost, residual, gamma, tau, fbe) per
        iteration.
        """
        t_start = time.perf_counter()
        cost = _cost if _cost is not None else problem.cost
        grad = _grad if _grad is not None else problem.grad
        lo, hi = problem.u_min, problem.u_max
        self._lbfgs_reset()

        u = np.clip(np.asarray(u0, dtype=float), lo, hi)
        fx = cost(u)
        gx = grad(u)
        if not (np.isfinite(fx) and np.all(np.isfinite(gx))):
            return self._finish(u, np.inf, 0, t_start, SolveStatus.DIVERGED)

        # Local Lipschitz estimate from a gradient finite difference at u0.
        h = np.maximum(_FD_DELTA, _FD_EPSILON * np.abs(u))
        gph = grad(u + h)
        lip = float(np.linalg.norm(gph - gx) / np.linalg.norm(h))
        lip = min(max(lip, _MIN_LIPSCHITZ), _MAX_LIPSCHITZ)
        gamma = _GAMMA_COEFF / lip

        def half_step(point, gradient):
            return np.clip(point - gamma * gradient, lo, hi)

        us = half_step(u, gx)
        fpr = u - us
        iters = 0
        status = SolveStatus.MAX_ITERS
        tau = 1.0
        res = np.inf

        while iters < max_iters:
            # Backtrack gamma until the quadratic upper bound holds at us.
            f_us = cost(us)
            n_lip = 0
            while (f_us > fx + _LIPSCHITZ_EPS * abs(fx) - float(gx @ fpr)
                   + (_GAMMA_COEFF / (2.0 * gamma)) * float(fpr @ fpr)
                   and n_lip < _MAX_LIPSCHITZ_UPDATES and lip < _MAX_LIPSCHITZ):
                lip *= 2.0
                gamma *= 0.5
                self._lbfgs_reset()
                us = half_step(u, gx)
                fpr = u - us
                f_us = cost(us)
                n_lip += 1

            res = float(np.max(np.abs(fpr))) / gamma
            fpr_sq = float(fpr @ fpr)
            sigma = (1.0 - _GAMMA_COEFF) / (4.0 * gamma)
            fbe = fx - float(gx @ fpr) + fpr_sq / (2.0 * gamma)
            if on_iteration is not None:
                on_iteration(iters, fx, res, gamma, tau, fbe)
            if res <= tol:
                status = SolveStatus.CONVERGED
                break

            self._lbfgs_push(u, fpr)
            direction = -self._lbfgs_apply(fpr) if self._count > 0 else None

            if direction is None:
                u_next = us
            else:
                bound = fbe - sigma * fpr_sq
                tau = 1.0
                u_next = None
                for _ in range(_MAX_LINESEARCH):
                    cand = u + tau * direction - (1.0 - tau) * fpr
                    f_cand = cost(cand)
                    g_cand = grad(cand)
                    if np.isfinite(f_cand) and np.all(np.isfinite(g_cand)):
                        us_cand = np.clip(cand - gamma * g_cand, lo, hi)
                        d_cand = cand - us_cand
                        fbe_cand = (f_cand - float(g_cand @ d_cand)
                                    + float(d_cand @ d_cand) / (2.0 * gamma))
                        if fbe_cand <= bound:
                            u_next = cand
                            fx, gx, us, fpr = f_cand, g_cand, us_cand, d_cand
                            break
                    tau *= 0.5
                if u_next is None:
                    tau = 0.0
                    u_next = us

            if u_next is us:
                u = us
                fx = f_us
                gx = grad(u)
                if not (np.isfinite(fx) and np.all(np.isfinite(gx))):
                    status = SolveStatus.DIVERGED
                    iters += 1
                    break
                us = half_step(u, gx)
                fpr = u - us
            else:
                u = u_next
            iters += 1

        return self._finish(us if status != SolveStatus.DIVERGED else np.clip(u, lo, hi),
                            res, iters, t_start, status)

    @staticmethod
    def _finish(u, res, iters, t_start, status) -> NlpSolution:
        return NlpSolution(
            u_star=u.copy(), fixed_point_residual=res, constraint_violation=0.0,
            inner_iterations=iters, outer_iterations=0,
            solve_time=time.perf_counter() - t_start, status=status)


def panoc_solve(problem: NlpProblem, u0: np.ndarray, tol: float = 1e-4,
                max_iters: int = 500, lbfgs_memory: int = 10,
                on_iteration=None) -> NlpSolution:
    """One-shot PANOC solve of a problem without equality constraints."""
    solver = PanocSolver(problem.n, lbfgs_memory=lbfgs_memory)
    return solver.solve(problem, u0, tol=tol, max_iters=max_iters,
                        on_iteration=on_iteration)


def penalty_solve(problem: NlpProblem, u0: np.ndarray, tol: float = 1e-4,
                  c_tol: float = 1e-3, schedule: Optional[PenaltySchedule] = None,
                  max_inner: int = 500, lbfgs_memory: int = 10,
                  solver: Optional[PanocSolver] = None,
                  on_outer=None, on_iteration=None) -> NlpSolution:
    """Quadratic-penalty outer loop around PANOC.

    Solves a sequence of inner problems f + (rho/2)||F||^2 with rho growing
    by schedule.rho_factor, warm-starting each round at the previous
    solution, until ||F||_inf <= c_tol. on_outer receives
    (round, rho, violation) after each inner solve.
    """
    t_start = time.perf_counter()
    sched = schedule or PenaltySchedule()
    if solver is None:
        solver = PanocSolver(problem.n, lbfgs_memory=lbfgs_memory)
    if problem.constraints is None and problem.penalized is None:
        sol = solver.solve(problem, u0, tol=tol, max_iters=max_inner,
                           on_iteration=on_iteration)
        sol.outer_iterations = 1
        sol.solve_time = time.perf_counter() - t_start
        return sol

    u = np.asarray(u0, dtype=float)
    rho = sched.rho0
    total_inner = 0
    best: Optional[NlpSolution] = None
    violation = np.inf

    for outer in range(1, sched.max_outer + 1):
        cost_rho, grad_rho = problem.penalized_oracles(rho)
        sol = solver.solve(problem, u, tol=tol, max_iters=max_inner,
                           on_iteration=on_iteration, _cost=cost_rho, _grad=grad_rho)
        total_inner += sol.inner_iterations
        u = sol.u_star
        if sol.status == SolveStatus.DIVERGED:
            sol.outer_iterations = outer
            sol.inner_iterations = total_inner
            sol.constraint_violation = violation if np.isfinite(violation) else np.inf
            sol.solve_time = time.perf_counter() - t_start
            return sol
        residuals = problem.constraints(u) if problem.constraints is not None else None
        violation = float(np.max(np.abs(residuals))) if residuals is not None and residuals.size else 0.0
        if on_outer is not None:
            on_outer(outer, rho, violation)
        best = sol
        best.constraint_violation = violation
        best.outer_iterations = outer
        best.rho_final = rho
        if violation <= c_tol:
            best.inner_iterations = total_inner
            best.solve_time = time.perf_counter() - t_start
            return best
        rho *= sched.rho_factor

    best.status = SolveStatus.MAX_ITERS
    best.inner_iterations = total_inner
    best.solve_time = time.perf_counter() - t_start
    return best
