"""Continuous-time vehicle model, obstacle kinematics, and integrators.

The model state is the 11-vector [z, vx, vy, vz, phi, theta, d_xp, d_xm,
d_yp, d_ym, d_zp]. Thrust is commanded normalized in [0, 1] and converted to
an acceleration t * t_max inside the kernels. The roll/pitch channels are
first-order lags toward the commanded angles; the five obstacle distances
integrate the negated/matching body velocity of their axis.

``step_euler`` is the controller's prediction model; ``step_oracle`` is a
classical 4th-order integrator used as the simulator plant and as the test
oracle that bounds the Euler error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .config import ANGLE_MAX, D_MAX, ControlInput, MavState, ModelParams

NX = 11
NU = 3


@dataclass(frozen=True)
class StateDerivative:
    """Time derivative of MavState (per-second units, no range clamping)."""

    z: float
    vx: float
    vy: float
    vz: float
    phi: float
    theta: float
    d_xp: float
    d_xm: float
    d_yp: float
    d_ym: float
    d_zp: float

    def as_array(self) -> np.ndarray:
        return np.array([self.z, self.vx, self.vy, self.vz, self.phi, self.theta,
                         self.d_xp, self.d_xm, self.d_yp, self.d_ym, self.d_zp])


@njit(cache=True)
def deriv_kernel(x, u, p, out):
    """out <- dx/dt for state x (11,), input u (3,), params p (9,)."""
    g, ax, ay, az = p[0], p[1], p[2], p[3]
    k_phi, k_theta, tau_phi, tau_theta, t_max = p[4], p[5], p[6], p[7], p[8]
    thrust = u[2] * t_max
    sphi = np.sin(x[4])
    cphi = np.cos(x[4])
    sth = np.sin(x[5])
    cth = np.cos(x[5])
    out[0] = x[3]
    out[1] = thrust * sth * cphi - ax * x[1]
    out[2] = -thrust * sphi - ay * x[2]
    out[3] = thrust * cth * cphi - g - az * x[3]
    out[4] = (k_phi * u[0] - x[4]) / tau_phi
    out[5] = (k_theta * u[1] - x[5]) / tau_theta
    out[6] = -x[1]
    out[7] = x[1]
    out[8] = -x[2]
    out[9] = x[2]
    out[10] = -x[3]


@njit(cache=True)
def clamp_state(x, mask):
    """Clamp angles/distances in place; mask[i]=0 marks a clamped entry."""
    for i in range(NX):
        mask[i] = 1.0
    for i in (4, 5):
        if x[i] > ANGLE_MAX:
            x[i] = ANGLE_MAX
            mask[i] = 0.0
        elif x[i] < -ANGLE_MAX:
            x[i] = -ANGLE_MAX
            mask[i] = 0.0
    for i in range(6, 11):
        if x[i] > D_MAX:
            x[i] = D_MAX
            mask[i] = 0.0
        elif x[i] < 0.0:
            x[i] = 0.0
            mask[i] = 0.0


@njit(cache=True)
def euler_step_kernel(x, u, ts, p, out, mask):
    """One clamped Euler step; records which entries hit a clamp."""
    dx = np.empty(NX)
    deriv_kernel(x, u, p, dx)
    for i in range(NX):
        out[i] = x[i] + ts * dx[i]
    clamp_state(out, mask)


@njit(cache=True)
def rk4_step_kernel(x, u, dt, p, substeps, out):
    """Classical 4th-order step over [0, dt] split into substeps; clamped once."""
    h = dt / substeps
    k1 = np.empty(NX)
    k2 = np.empty(NX)
    k3 = np.empty(NX)
    k4 = np.empty(NX)
    tmp = np.empty(NX)
    for i in range(NX):
        out[i] = x[i]
    for _ in range(substeps):
        deriv_kernel(out, u, p, k1)
        for i in range(NX):
            tmp[i] = out[i] + 0.5 * h * k1[i]
        deriv_kernel(tmp, u, p, k2)
        for i in range(NX):
            tmp[i] = out[i] + 0.5 * h * k2[i]
        deriv_kernel(tmp, u, p, k3)
        for i in range(NX):
            tmp[i] = out[i] + h * k3[i]
        deriv_kernel(tmp, u, p, k4)
        for i in range(NX):
            out[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    mask = np.empty(NX)
    clamp_state(out, mask)


def derivative(x: MavState, u: ControlInput, p: ModelParams) -> StateDerivative:
    """Evaluate the continuous-time model at (x, u)."""
    out = np.empty(NX)
    deriv_kernel(x.as_array(), u.as_array(), p.as_array(), out)
    return StateDerivative(*(float(v) for v in out))


def step_euler(x: MavState, u: ControlInput, ts: float, p: ModelParams) -> MavState:
    """Advance one Euler step of length ts, clamping angles and distances."""
    if ts <= 0.0:
        raise ValueError(f"ts must be > 0, got {ts}")
    out = np.empty(NX)
    mask = np.empty(NX)
    euler_step_kernel(x.as_array(), u.as_array(), ts, p.as_array(), out, mask)
    return MavState.from_array(out)


def step_oracle(x: MavState, u: ControlInput, ts: float, p: ModelParams,
                substeps: int = 10) -> MavState:
    """High-accuracy reference step (4th order, ts/substeps internal step)."""
    if ts <= 0.0:
        raise ValueError(f"ts must be > 0, got {ts}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    out = np.empty(NX)
    rk4_step_kernel(x.as_array(), u.as_array(), ts, p.as_array(), substeps, out)
    return MavState.from_array(out)
