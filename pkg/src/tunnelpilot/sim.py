"""Tunnel world, ray-cast lidar, vehicle plant, scenarios, and the 20 Hz loop.

The world is a 2D plan (wall segments) with a constant ceiling height. The
plant integrates the vehicle model with a high-order integrator at a finer
substep than the controller's Euler model, adds a first-order yaw-rate lag
(the model itself has no yaw channel), and advances the world pose by the
body velocities rotated through yaw. Scenario runs are deterministic given
the seed; run logs serialize byte-identically for identical seeds.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .config import (D_MAX, Config, ControlInput, MavState, ModelParams,
                     ReferenceCommand, SimParams, dumps_config)
from .dynamics import NX, rk4_step_kernel
from .nmpc import NmpcContext, control_step
from .perception import (HeadingFilterState, HeadingHoldError, LidarScan,
                         ObstacleDistances, heading_rate_cmd, heading_update,
                         sector_distances, weighted_mean_heading)

# Vehicle collision radius (disc) and physics substep.
VEHICLE_RADIUS = 0.3
PHYSICS_DT = 0.005
N_BEAMS = 360

RUNLOG_HEADER = ("t,x,y,yaw,z,vx,vy,vz,phi,theta,"
                 "d_xp,d_xm,d_yp,d_ym,d_zp,psi_dot_r,solve_ms,status,collision")


class SimulationFault(Exception):
    """The simulation reached an invalid configuration (e.g. pose left the world)."""


@dataclass(frozen=True)
class TunnelWorld:
    """Wall segments (world frame, meters), ceiling height, and spawn pose."""

    segments: np.ndarray  # (M, 4) rows x1, y1, x2, y2
    ceiling_height: float
    spawn: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=float).reshape(-1, 4)
        object.__setattr__(self, "segments", seg)
        if seg.shape[0] == 0 or self.ceiling_height <= 0.0:
            raise ValueError("world needs at least one wall and a positive ceiling")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        seg = self.segments
        xs = np.concatenate([seg[:, 0], seg[:, 2]])
        ys = np.concatenate([seg[:, 1], seg[:, 3]])
        return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())

    def wall_distance(self, x: float, y: float) -> float:
        """Euclidean distance from a point to the nearest wall segment."""
        seg = self.segments
        p1 = seg[:, 0:2]
        d = seg[:, 2:4] - p1
        rel = np.array([x, y]) - p1
        denom = np.einsum("ij,ij->i", d, d)
        tproj = np.zeros(len(seg))
        nz = denom > 0.0
        tproj[nz] = np.clip(np.einsum("ij,ij->i", rel[nz], d[nz]) / denom[nz], 0.0, 1.0)
        closest = p1 + tproj[:, None] * d
        return float(np.min(np.hypot(closest[:, 0] - x, closest[:, 1] - y)))


def raycast(world: TunnelWorld, pose: tuple[float, float, float],
            n_beams: int = N_BEAMS, max_range: float = D_MAX) -> LidarScan:
    """Cast one beam per angle step; beams with no hit in range report inf."""
    x, y, yaw = pose
    x0, y0, x1, y1 = world.bounds
    if not (x0 - 1e-9 <= x <= x1 + 1e-9 and y0 - 1e-9 <= y <= y1 + 1e-9):
        raise SimulationFault(f"pose ({x:.2f}, {y:.2f}) outside the world bounds")
    # (k - n/2) * step keeps the grid exactly antisymmetric under xi <-> -xi.
    xi = (np.arange(n_beams) - n_beams // 2) * (2.0 * math.pi / n_beams)
    ang = yaw + xi
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)          # (B, 2)
    seg = world.segments
    p1 = seg[:, 0:2]
    e = seg[:, 2:4] - p1                                         # (M, 2)
    w = p1 - np.array([x, y])                                    # (M, 2)
    denom = dirs[:, 0, None] * e[None, :, 1] - dirs[:, 1, None] * e[None, :, 0]
    w_cross_e = w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]            # (M,)
    w_cross_d = (w[None, :, 0] * dirs[:, 1, None]
                 - w[None, :, 1] * dirs[:, 0, None])             # (B, M)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = w_cross_e[None, :] / denom
        s = w_cross_d / denom
    hit = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= 0.0) & (s <= 1.0)
    t = np.where(hit, t, np.inf)
    ranges = t.min(axis=1)
    ranges = np.where(ranges <= max_range, ranges, np.inf)
    return LidarScan(ranges=ranges, angles=xi, max_range=max_range)


@dataclass(frozen=True)
class SimVehicle:
    """Plant truth: world pose, model state, yaw rate, and collision flag."""

    x: float
    y: float
    yaw: float
    state: MavState
    yaw_rate: float = 0.0
    collision: bool = False


def _collided(world: TunnelWorld, x: float, y: float, z: float) -> bool:
    if world.wall_distance(x, y) <= VEHICLE_RADIUS:
        return True
    return bool(z <= 0.0 or z >= world.ceiling_height - VEHICLE_RADIUS)


def vehicle_step(veh: SimVehicle, u: ControlInput, psi_dot_r: float, dt: float,
                 model: ModelParams, world: Optional[TunnelWorld] = None,
                 substep: float = PHYSICS_DT) -> SimVehicle:
    """Advance the plant by dt under a zero-order-hold input.

    The model state uses the 4th-order integrator at `substep`; the yaw rate
    follows an exact first-order lag toward psi_dot_r; the pose integrates
    the body velocities rotated by yaw (trapezoidal in the substep).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    n_sub = max(1, round(dt / substep))
    h = dt / n_sub
    p = model.as_array()
    uvec = u.as_array()
    xarr = veh.state.as_array()
    x, y, yaw, yr = veh.x, veh.y, veh.yaw, veh.yaw_rate
    tau = model.tau_psi
    nxt = np.empty(NX)
    for _ in range(n_sub):
        vx0, vy0 = xarr[1], xarr[2]
        rk4_step_kernel(xarr, uvec, h, p, 1, nxt)
        xarr, nxt = nxt, xarr
        decay = math.exp(-h / tau)
        yaw_inc = psi_dot_r * h + (yr - psi_dot_r) * tau * (1.0 - decay)
        yr = psi_dot_r + (yr - psi_dot_r) * decay
        yaw_mid = yaw + 0.5 * yaw_inc
        yaw += yaw_inc
        vxa = 0.5 * (vx0 + xarr[1])
        vya = 0.5 * (vy0 + xarr[2])
        c, s = math.cos(yaw_mid), math.sin(yaw_mid)
        x += (vxa * c - vya * s) * h
        y += (vxa * s + vya * c) * h
    collided = _collided(world, x, y, xarr[0]) if world is not None else veh.collision
    return SimVehicle(x=x, y=y, yaw=yaw, state=MavState.from_array(xarr),
                      yaw_rate=yr, collision=collided)


@dataclass(frozen=True)
class Scenario:
    """World plus the timed reference schedule, events, and noise levels."""

    name: str
    world: TunnelWorld
    schedule: tuple[ReferenceCommand, ...]
    duration: float
    noise: Optional[SimParams] = None
    events: tuple[tuple[str, float], ...] = ()
    centerline: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.duration < 0.0:
            raise ValueError("duration must be >= 0")
        if not self.schedule:
            raise ValueError("schedule needs at least one entry")
        times = [r.timestamp for r in self.schedule]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule timestamps must be increasing")
        if self.noise is None:
            object.__setattr__(self, "noise", SimParams())
        if self.centerline is not None:
            object.__setattr__(self, "centerline",
                               np.asarray(self.centerline, dtype=float))


def centerline_progress(centerline: np.ndarray, x: float, y: float) -> float:
    """Arc length along the centerline polyline of the nearest point."""
    best_d = np.inf
    best_arc = 0.0
    arc = 0.0
    for i in range(len(centerline) - 1):
        p1, p2 = centerline[i], centerline[i + 1]
        seg = p2 - p1
        ln = float(np.hypot(*seg))
        tproj = 0.0
        if ln > 0.0:
            tproj = float(np.clip(((x - p1[0]) * seg[0] + (y - p1[1]) * seg[1]) / ln**2,
                                  0.0, 1.0))
        cx, cy = p1 + tproj * seg
        d = math.hypot(cx - x, cy - y)
        if d < best_d:
            best_d = d
            best_arc = arc + tproj * ln
        arc += ln
    return best_arc


def _rect(x0: float, y0: float, x1: float, y1: float) -> list[list[float]]:
    return [[x0, y0, x1, y0], [x1, y0, x1, y1], [x1, y1, x0, y1], [x0, y1, x0, y0]]


def builtin_scenarios() -> dict[str, Scenario]:
    """The three stock environments: straight tunnel, S-tunnel, blockage."""
    straight = Scenario(
        name="straight_tunnel",
        world=TunnelWorld(segments=np.array(_rect(-5.0, -3.0, 35.0, 3.0)),
                          ceiling_height=4.0, spawn=(0.0, 0.0, 0.0)),
        schedule=(ReferenceCommand(z_r=1.0, vx_r=0.5, vy_r=0.0, timestamp=0.0),),
        duration=60.0,
        centerline=np.array([[-5.0, 0.0], [35.0, 0.0]]),
    )

    # S shape, 3.5 m wide, 3 m ceiling: +x leg, 90 deg left, +y leg, 90 deg
    # right, +x leg. Walls are the two offset polylines plus end caps.
    hw = 1.75
    left = [[-4.0, hw, 25.0 - hw, hw],
            [25.0 - hw, hw, 25.0 - hw, 12.0 + hw],
            [25.0 - hw, 12.0 + hw, 45.0, 12.0 + hw]]
    right = [[-4.0, -hw, 25.0 + hw, -hw],
             [25.0 + hw, -hw, 25.0 + hw, 12.0 - hw],
             [25.0 + hw, 12.0 - hw, 45.0, 12.0 - hw]]
    caps = [[-4.0, -hw, -4.0, hw], [45.0, 12.0 - hw, 45.0, 12.0 + hw]]
    s_tunnel = Scenario(
        name="s_tunnel",
        world=TunnelWorld(segments=np.array(left + right + caps),
                          ceiling_height=3.0, spawn=(0.0, 0.0, 0.0)),
        schedule=(ReferenceCommand(z_r=1.0, vx_r=1.2, vy_r=0.0, timestamp=0.0),),
        duration=60.0,
        centerline=np.array([[-4.0, 0.0], [25.0, 0.0], [25.0, 12.0], [45.0, 12.0]]),
    )

    # Straight tunnel with debris walls leaving a centered 2.4 m opening
    # (~60 % of the width obstructed) at x = 10; the scheduled return event
    # reverses vx_r and a later schedule entry stops the vehicle near spawn.
    gap = 1.2
    blockage_walls = _rect(-5.0, -3.0, 35.0, 3.0) + [
        [10.0, -3.0, 10.0, -gap],
        [10.0, gap, 10.0, 3.0],
    ]
    blockage = Scenario(
        name="blockage",
        world=TunnelWorld(segments=np.array(blockage_walls),
                          ceiling_height=4.0, spawn=(0.0, 0.0, 0.0)),
        schedule=(ReferenceCommand(z_r=1.0, vx_r=0.5, vy_r=0.0, timestamp=0.0),
                  ReferenceCommand(z_r=1.0, vx_r=0.0, vy_r=0.0, timestamp=89.0)),
        duration=100.0,
        events=(("return", 45.0),),
        centerline=np.array([[-5.0, 0.0], [35.0, 0.0]]),
    )
    return {"straight_tunnel": straight, "s_tunnel": s_tunnel, "blockage": blockage}


@dataclass
class ControllerStack:
    """Controller-side state threaded through the loop."""

    ctx: NmpcContext
    heading: HeadingFilterState
    config: Config


def build_controller(cfg: Optional[Config] = None) -> ControllerStack:
    cfg = cfg or Config()
    ctx = NmpcContext(weights=cfg.nmpc, model=cfg.model)
    return ControllerStack(ctx=ctx, heading=HeadingFilterState(params=cfg.heading),
                           config=cfg)


@dataclass
class TickRecord:
    t: float
    x: float
    y: float
    yaw: float
    state: MavState
    distances: ObstacleDistances
    psi_dot_r: float
    reference: ReferenceCommand
    solve_ms: float
    status: str
    collision: bool
    scan: LidarScan


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


@dataclass
class RunLog:
    """Per-run CSV rows plus the JSON sidecar.

    The solve_ms column is written as 0 unless timing is enabled: wall-clock
    measurements would break the byte-level reproducibility the log promises
    (aggregate timing still lands in the sidecar when enabled).
    """

    scenario: str
    seed: int
    rows: list = field(default_factory=list)
    sidecar: dict = field(default_factory=dict)
    timing: bool = False

    def append(self, rec: TickRecord) -> None:
        d = rec.distances
        s = rec.state
        self.rows.append(",".join([
            _fmt(rec.t), _fmt(rec.x), _fmt(rec.y), _fmt(rec.yaw),
            _fmt(s.z), _fmt(s.vx), _fmt(s.vy), _fmt(s.vz),
            _fmt(s.phi), _fmt(s.theta),
            _fmt(d.d_xp), _fmt(d.d_xm), _fmt(d.d_yp), _fmt(d.d_ym), _fmt(d.d_zp),
            _fmt(rec.psi_dot_r), _fmt(rec.solve_ms if self.timing else 0.0),
            rec.status, "1" if rec.collision else "0",
        ]))

    def csv_text(self) -> str:
        return RUNLOG_HEADER + "\n" + "\n".join(self.rows) + ("\n" if self.rows else "")

    def sidecar_text(self) -> str:
        return json.dumps(self.sidecar, sort_keys=True, indent=2) + "\n"

    def write(self, outdir) -> tuple[str, str]:
        import os
        os.makedirs(outdir, exist_ok=True)
        base = os.path.join(str(outdir), f"{self.scenario}_seed{self.seed}")
        csv_path, json_path = base + ".csv", base + ".json"
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(self.csv_text())
        with open(json_path, "w", encoding="utf-8") as fh:
            fh.write(self.sidecar_text())
        return csv_path, json_path


class SimulationLoop:
    """Deterministic closed loop: scan -> perception -> NMPC -> plant.

    Commands (reference updates, return, reset) are applied at tick
    boundaries; the scenario's own schedule and events feed through the same
    path. Physics run at PHYSICS_DT inside each control period.
    """

    def __init__(self, scenario: Scenario, stack: Optional[ControllerStack] = None,
                 seed: int = 0):
        self.scenario = scenario
        self.stack = stack or build_controller()
        self.seed = seed
        self.reset()

    def reset(self, scenario: Optional[Scenario] = None, seed: Optional[int] = None) -> None:
        if scenario is not None:
            self.scenario = scenario
        if seed is not None:
            self.seed = seed
        sxy = self.scenario.world.spawn
        z0 = self.scenario.schedule[0].z_r
        self.vehicle = SimVehicle(x=sxy[0], y=sxy[1], yaw=sxy[2],
                                  state=MavState(z=z0))
        self.rng = np.random.default_rng(self.seed)
        self.tick_index = 0
        self.reference = self.scenario.schedule[0]
        self._fired_events = set()
        self._schedule_pos = 0
        cfg = self.stack.config
        self.stack.ctx = NmpcContext(weights=cfg.nmpc, model=cfg.model)
        self.stack.heading = HeadingFilterState(params=cfg.heading)
        self.paused = False

    @property
    def ts(self) -> float:
        return self.stack.ctx.weights.ts

    @property
    def t(self) -> float:
        return self.tick_index * self.ts

    def apply_command(self, kind: str, **kw) -> None:
        """Reference/return/reset mutations, shared by schedule and operator."""
        if kind == "set_reference":
            self.reference = ReferenceCommand(
                z_r=kw["z_r"], vx_r=kw["vx_r"], vy_r=kw["vy_r"],
                timestamp=self.t)
        elif kind == "return":
            r = self.reference
            self.reference = ReferenceCommand(z_r=r.z_r, vx_r=-r.vx_r, vy_r=r.vy_r,
                                              timestamp=self.t)
        elif kind == "reset":
            self.reset(seed=kw.get("seed"))
        else:
            raise ValueError(f"unknown command {kind!r}")

    def _apply_schedule(self) -> None:
        t = self.t
        sched = self.scenario.schedule
        while (self._schedule_pos < len(sched)
               and sched[self._schedule_pos].timestamp <= t + 1e-9):
            self.reference = sched[self._schedule_pos]
            self._schedule_pos += 1
        for name, at in self.scenario.events:
            if at <= t + 1e-9 and (name, at) not in self._fired_events:
                self._fired_events.add((name, at))
                if name == "return":
                    self.apply_command("return")

    def tick(self) -> TickRecord:
        """Run one control period; returns the per-tick record."""
        self._apply_schedule()
        ts = self.ts
        noise = self.scenario.noise
        world = self.scenario.world
        veh = self.vehicle

        scan = raycast(world, (veh.x, veh.y, veh.yaw))
        ranges = scan.ranges.copy()
        valid = np.isfinite(ranges)
        ranges[valid] = np.maximum(
            ranges[valid] + self.rng.normal(0.0, noise.range_sigma, int(valid.sum())),
            1e-3)
        ranges[ranges > scan.max_range] = np.inf
        if noise.dropout > 0.0:
            ranges[self.rng.random(len(ranges)) < noise.dropout] = np.inf
        measured = LidarScan(ranges=ranges, angles=scan.angles, max_range=scan.max_range)

        ceiling = (world.ceiling_height - veh.state.z
                   + float(self.rng.normal(0.0, noise.range_sigma)))
        distances = sector_distances(measured, ceiling)

        hp = self.stack.heading.params
        omega_meas = veh.yaw_rate + float(self.rng.normal(0.0, noise.gyro_sigma))
        try:
            psi_k = weighted_mean_heading(measured, hp.window)
            self.stack.heading = heading_update(self.stack.heading, omega_meas,
                                                psi_k, ts)
        except HeadingHoldError:
            pass
        psi_dot_r = heading_rate_cmd(self.stack.heading)

        vel_noise = self.rng.normal(0.0, noise.vel_sigma, 3)
        st = veh.state
        estimate = np.array([st.z, st.vx + vel_noise[0], st.vy + vel_noise[1],
                             st.vz + vel_noise[2], st.phi, st.theta])

        ctx = self.stack.ctx
        ctx.reference = replace(self.reference, timestamp=self.t)
        ctx.estimate = estimate
        ctx.distances = distances
        t0 = time.perf_counter()
        u, sol, _traj = control_step(ctx)
        solve_ms = (time.perf_counter() - t0) * 1e3

        rec = TickRecord(
            t=self.t, x=veh.x, y=veh.y, yaw=veh.yaw, state=veh.state,
            distances=distances, psi_dot_r=psi_dot_r, reference=ctx.reference,
            solve_ms=solve_ms, status=sol.status.value, collision=veh.collision,
            scan=measured)

        self.vehicle = vehicle_step(veh, u, psi_dot_r, ts, self.stack.ctx.model,
                                    world=world)
        rec.collision = rec.collision or self.vehicle.collision
        self.tick_index += 1
        return rec


def run_scenario(scenario: Scenario, stack: Optional[ControllerStack] = None,
                 seed: int = 0, duration: Optional[float] = None,
                 timing: bool = False) -> RunLog:
    """Execute the closed loop for the scenario duration and collect the log."""
    loop = SimulationLoop(scenario, stack=stack, seed=seed)
    total = scenario.duration if duration is None else duration
    n_ticks = int(round(total / loop.ts))
    log = RunLog(scenario=scenario.name, seed=seed, timing=timing)
    timings = []
    fault = None
    for _ in range(n_ticks):
        try:
            rec = loop.tick()
        except SimulationFault as exc:
            fault = str(exc)  # abort, keeping the partial log
            break
        log.append(rec)
        if timing:
            timings.append(rec.solve_ms)
    log.sidecar = {
        "scenario": scenario.name,
        "seed": seed,
        "duration": total,
        "ticks": n_ticks,
        "parameter_hash": hashlib.sha256(
            dumps_config(loop.stack.config).encode()).hexdigest(),
        "collisions": sum(1 for r in log.rows if r.endswith(",1")),
    }
    if fault is not None:
        log.sidecar["fault"] = fault
    if timing and timings:
        arr = np.array(timings)
        log.sidecar["timing"] = {
            "mean_ms": float(arr.mean()),
            "p99_ms": float(np.percentile(arr, 99)),
            "max_ms": float(arr.max()),
        }
    return log
