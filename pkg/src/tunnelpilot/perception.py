"""2D-lidar processing: sector obstacle distances and heading correction.

The four planar surface distances are sector minima over 90-degree body-frame
cones centered on the +x/-x/+y/-y axes; the upward distance comes from the
single-beam ceiling measurement. The heading corrector computes the
range-weighted mean beam angle over the frontal half-scan, fuses it with the
integrated gyro rate through a complementary filter, and emits a proportional
yaw-rate command toward the open space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import D_MAX, HeadingParams

INVALID_RANGE = np.inf

# Commanded yaw rate is saturated so a spurious spike in the weighted mean
# cannot request an unbounded turn.
PSI_DOT_LIMIT = 1.0


class MeasurementError(Exception):
    """Malformed or non-finite sensor input."""


class HeadingHoldError(Exception):
    """No valid beam in the heading window; keep the previous estimate."""


@dataclass(frozen=True)
class LidarScan:
    """Planar scan: per-beam range (m) and body-frame angle (rad, CCW from +x).

    Invalid returns (no echo within max_range) are marked with inf.
    """

    ranges: np.ndarray
    angles: np.ndarray
    max_range: float = D_MAX

    def __post_init__(self):
        ranges = np.asarray(self.ranges, dtype=float)
        angles = np.asarray(self.angles, dtype=float)
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "angles", angles)
        if ranges.shape != angles.shape or ranges.ndim != 1 or ranges.size == 0:
            raise MeasurementError("ranges/angles must be matching 1-D arrays")
        if np.any(np.diff(angles) <= 0.0):
            raise MeasurementError("beam angles must be strictly increasing")
        if angles[0] < -math.pi - 1e-9 or angles[-1] >= math.pi:
            raise MeasurementError("beam angles must lie in [-pi, pi)")
        valid = np.isfinite(ranges)
        if np.any(ranges[valid] <= 0.0) or np.any(ranges[valid] > self.max_range + 1e-9):
            raise MeasurementError("valid ranges must lie in (0, max_range]")
        if np.any(np.isnan(ranges)):
            raise MeasurementError("NaN range")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.ranges)


@dataclass(frozen=True)
class ObstacleDistances:
    """The five surface distances (x+, x-, y+, y-, z+), each in (0, d_max].

    A channel may carry inf as the explicit no-return marker (consumers clamp
    it to the lidar bound); sector extraction itself never emits it.
    """

    d_xp: float = D_MAX
    d_xm: float = D_MAX
    d_yp: float = D_MAX
    d_ym: float = D_MAX
    d_zp: float = D_MAX

    def __post_init__(self):
        for name in ("d_xp", "d_xm", "d_yp", "d_ym", "d_zp"):
            d = getattr(self, name)
            if not (0.0 < d <= D_MAX + 1e-12 or d == np.inf):
                raise MeasurementError(f"{name} out of (0, {D_MAX}]: {d}")

    def as_array(self) -> np.ndarray:
        return np.array([self.d_xp, self.d_xm, self.d_yp, self.d_ym, self.d_zp])


def _sector_min(scan: LidarScan, mask: np.ndarray) -> float:
    vals = scan.ranges[mask & scan.valid]
    return float(vals.min()) if vals.size else D_MAX


def sector_distances(scan: LidarScan, ceiling: float) -> ObstacleDistances:
    """Reduce a scan to the four planar sector minima plus the ceiling range.

    Sectors are 90-degree cones split on the +/-45-degree diagonals; invalid
    beams are skipped and an all-invalid sector reports the lidar bound.
    """
    if not math.isfinite(ceiling) or ceiling <= 0.0:
        ceiling = D_MAX
    a = scan.angles
    q = math.pi / 4.0
    d_xp = _sector_min(scan, (a >= -q) & (a < q))
    d_yp = _sector_min(scan, (a >= q) & (a < 3.0 * q))
    d_xm = _sector_min(scan, (a >= 3.0 * q) | (a < -3.0 * q))
    d_ym = _sector_min(scan, (a >= -3.0 * q) & (a < -q))
    return ObstacleDistances(d_xp=d_xp, d_xm=d_xm, d_yp=d_yp, d_ym=d_ym,
                             d_zp=min(ceiling, D_MAX))


def weighted_mean_heading(scan: LidarScan,
                          window: tuple[float, float] = (-math.pi / 2.0, math.pi / 2.0)
                          ) -> float:
    """Range-weighted mean beam angle over the window (the open-space bearing).

    Invalid beams carry no weight; raises HeadingHoldError when the window
    holds no valid beam so the caller keeps its previous estimate.
    """
    mask = (scan.angles >= window[0]) & (scan.angles <= window[1]) & scan.valid
    r = scan.ranges[mask]
    if r.size == 0:
        raise HeadingHoldError("no valid beam in heading window")
    return float((r @ scan.angles[mask]) / r.sum())


@dataclass(frozen=True)
class HeadingFilterState:
    """Complementary-filter state for the open-space bearing estimate."""

    psi_hat: float = 0.0
    params: HeadingParams = HeadingParams()


def heading_update(state: HeadingFilterState, omega_z: float, psi_k: float,
                   ts: float) -> HeadingFilterState:
    """Gyro prediction followed by the lidar correction.

    The correction subtracts (1 - beta) * psi_k: the measured free space
    rotates opposite to the vehicle's own yaw rate.
    """
    if ts <= 0.0:
        raise ValueError(f"ts must be > 0, got {ts}")
    beta = state.params.beta
    predicted = state.psi_hat + omega_z * ts
    return replace(state, psi_hat=beta * predicted - (1.0 - beta) * psi_k)


def heading_rate_cmd(state: HeadingFilterState) -> float:
    """Proportional yaw-rate command toward open space, saturated to +/-1."""
    cmd = -state.params.k_p * state.psi_hat
    return float(min(max(cmd, -PSI_DOT_LIMIT), PSI_DOT_LIMIT))
