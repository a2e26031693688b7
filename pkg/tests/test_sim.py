import math

import numpy as np
import pytest

from tunnelpilot.config import ControlInput, MavState, ModelParams, ReferenceCommand
from tunnelpilot.sim import (Scenario, SimVehicle, SimulationFault, SimulationLoop,
                             TunnelWorld, builtin_scenarios, centerline_progress,
                             raycast, run_scenario, vehicle_step, RUNLOG_HEADER)

P = ModelParams()
HOVER = ControlInput(0.0, 0.0, 0.5)


def corridor_world(width=6.0, length=2000.0, ceiling=4.0) -> TunnelWorld:
    half = width / 2.0
    return TunnelWorld(segments=np.array([
        [-length / 2, -half, length / 2, -half],
        [-length / 2, half, length / 2, half],
    ]), ceiling_height=ceiling)


def parse(log):
    rows = [r.split(",") for r in log.rows]
    num = np.array([[float(v) for v in r[:17]] for r in rows]) if rows else np.empty((0, 17))
    return rows, num


# -- raycast --------------------------------------------------------------------

def test_raycast_perpendicular_wall_distance():
    scan = raycast(corridor_world(), (0.0, 0.0, 0.0))
    idx = int(np.argmin(np.abs(scan.angles - math.pi / 2)))
    assert scan.ranges[idx] == pytest.approx(3.0, rel=1e-9)


def test_raycast_diagonal_beam():
    scan = raycast(corridor_world(), (0.0, 0.0, 0.0))
    idx = int(np.argmin(np.abs(scan.angles - math.pi / 4)))
    assert scan.ranges[idx] == pytest.approx(3.0 / math.sin(math.pi / 4), rel=1e-9)


def test_raycast_open_corridor_is_invalid_ahead():
    scan = raycast(corridor_world(), (0.0, 0.0, 0.0))
    idx = int(np.argmin(np.abs(scan.angles)))
    assert np.isinf(scan.ranges[idx])


def test_raycast_accounts_for_vehicle_yaw():
    scan = raycast(corridor_world(), (0.0, 0.0, math.pi / 2))
    idx = int(np.argmin(np.abs(scan.angles)))  # body +x now faces the wall
    assert scan.ranges[idx] == pytest.approx(3.0, rel=1e-9)


def test_raycast_mirror_symmetry():
    world = TunnelWorld(segments=np.array([
        [-50.0, -3.0, 50.0, -3.0], [-50.0, 3.0, 50.0, 3.0],
        [10.0, -3.0, 10.0, 0.5],
    ]), ceiling_height=4.0)
    mirrored = TunnelWorld(segments=world.segments * np.array([1.0, -1.0, 1.0, -1.0]),
                           ceiling_height=4.0)
    a = raycast(world, (0.0, 1.0, 0.0)).ranges
    b = raycast(mirrored, (0.0, -1.0, 0.0)).ranges
    # beam at angle xi maps to -xi: with angles -pi + k*step the mirror of
    # index k (k > 0) is index n - k, and index 0 maps to itself.
    n = len(a)
    assert a[0] == b[0]
    assert np.array_equal(a[1:], b[1:][::-1])


def test_raycast_outside_world_faults():
    with pytest.raises(SimulationFault):
        raycast(corridor_world(length=20.0), (100.0, 0.0, 0.0))


def test_perception_matches_geometry_for_perpendicular_walls():
    from tunnelpilot.perception import sector_distances

    world = corridor_world()
    scan = raycast(world, (0.0, 0.0, 0.0))
    d = sector_distances(scan, ceiling=3.0)
    # side sectors see the flat wall: within one-beam discretization of truth
    step = 2.0 * math.pi / 360.0
    assert 3.0 <= d.d_yp <= 3.0 / math.cos(step)
    assert 3.0 <= d.d_ym <= 3.0 / math.cos(step)
    # never closer than the true nearest wall
    assert d.d_yp >= world.wall_distance(0.0, 0.0) - 1e-9


# -- vehicle --------------------------------------------------------------------

def test_vehicle_step_hover_is_stationary():
    veh = SimVehicle(x=1.0, y=-2.0, yaw=0.3, state=MavState(z=1.0))
    out = vehicle_step(veh, HOVER, 0.0, 0.05, P)
    assert (out.x, out.y, out.yaw) == (veh.x, veh.y, veh.yaw)
    assert out.state == veh.state


def test_vehicle_step_rotates_body_velocity_into_world():
    veh = SimVehicle(x=0.0, y=0.0, yaw=math.pi / 2, state=MavState(z=1.0, vx=1.0))
    out = vehicle_step(veh, HOVER, 0.0, 0.1, P)
    # exact drag decay: dy = (1 - exp(-a t)) / a with a = 0.1
    expected = (1.0 - math.exp(-0.01)) / 0.1
    assert out.y == pytest.approx(expected, abs=1e-4)
    assert out.y == pytest.approx(0.1, abs=1e-2)
    assert out.x == pytest.approx(0.0, abs=1e-9)


def test_vehicle_step_yaw_rate_lag():
    veh = SimVehicle(x=0.0, y=0.0, yaw=0.0, state=MavState(z=1.0))
    out = vehicle_step(veh, HOVER, 1.0, 0.3, P)
    # first-order lag with tau = 0.3 after one time constant
    assert out.yaw_rate == pytest.approx(1.0 - math.exp(-1.0), rel=1e-6)
    assert 0.0 < out.yaw < 0.3


def test_vehicle_collision_flag_threshold():
    world = corridor_world()
    veh = SimVehicle(x=0.0, y=2.75, yaw=0.0, state=MavState(z=1.0))  # wall at 0.25
    out = vehicle_step(veh, HOVER, 0.0, 0.05, P, world=world)
    assert out.collision
    veh2 = SimVehicle(x=0.0, y=0.0, yaw=0.0, state=MavState(z=1.0))
    assert not vehicle_step(veh2, HOVER, 0.0, 0.05, P, world=world).collision


# -- scenarios -------------------------------------------------------------------

def test_builtin_scenario_dimensions():
    scs = builtin_scenarios()
    straight = scs["straight_tunnel"].world
    x0, y0, x1, y1 = straight.bounds
    assert y1 - y0 == pytest.approx(6.0)
    assert x1 - x0 == pytest.approx(40.0)
    assert straight.ceiling_height == 4.0
    s_world = scs["s_tunnel"].world
    assert s_world.ceiling_height == 3.0
    assert scs["s_tunnel"].schedule[0].vx_r == 1.2
    # corridor width: perpendicular wall distance from the spawn centerline
    assert s_world.wall_distance(0.0, 0.0) == pytest.approx(1.75)
    blockage = scs["blockage"]
    assert blockage.events == (("return", 45.0),)
    gap = [s for s in blockage.world.segments if s[0] == 10.0]
    assert len(gap) == 2


def test_return_event_negates_reference():
    sc = builtin_scenarios()["straight_tunnel"]
    quick = Scenario(name="quick", world=sc.world, schedule=sc.schedule,
                     duration=1.0, events=(("return", 0.10),))
    loop = SimulationLoop(quick, seed=0)
    loop.tick()  # t=0: vx_r = +0.5
    assert loop.reference.vx_r == 0.5
    loop.tick()  # t=0.05
    loop.tick()  # t=0.10: return fires
    assert loop.reference.vx_r == -0.5
    loop.tick()  # event must not fire twice
    assert loop.reference.vx_r == -0.5


def test_zero_duration_run_is_empty():
    sc = builtin_scenarios()["straight_tunnel"]
    log = run_scenario(sc, seed=0, duration=0.0)
    assert log.rows == []
    assert log.csv_text() == RUNLOG_HEADER + "\n"


def test_run_log_determinism_bytes():
    sc = builtin_scenarios()["straight_tunnel"]
    a = run_scenario(sc, seed=3, duration=2.0)
    b = run_scenario(sc, seed=3, duration=2.0)
    assert a.csv_text() == b.csv_text()
    assert a.sidecar_text() == b.sidecar_text()
    c = run_scenario(sc, seed=4, duration=2.0)
    assert c.csv_text() != a.csv_text()


def test_closed_loop_converges_to_hover_without_walls():
    world = corridor_world(width=80.0, length=2000.0, ceiling=40.0)
    sc = Scenario(name="open", world=world,
                  schedule=(ReferenceCommand(z_r=1.0, vx_r=0.0, vy_r=0.0),),
                  duration=10.0)
    loop = SimulationLoop(sc, seed=2)
    # start with a velocity disturbance
    loop.vehicle = SimVehicle(x=0.0, y=0.0, yaw=0.0,
                              state=MavState(z=1.0, vx=0.8, vy=-0.5, vz=0.2))
    rec = None
    for _ in range(200):
        rec = loop.tick()
    s = loop.vehicle.state
    assert math.hypot(s.vx, s.vy, s.vz) < 0.01


def test_recursive_feasibility_of_shifted_warm_start():
    sc = builtin_scenarios()["straight_tunnel"]
    loop = SimulationLoop(sc, seed=5)
    violations = []
    for _ in range(300):
        loop.tick()
        violations.append(loop.stack.ctx.last_warmstart_violation)
    ok = sum(1 for v in violations[1:] if v <= loop.stack.ctx.c_tol)
    assert ok / (len(violations) - 1) >= 0.99


def test_simulation_fault_yields_partial_log():
    # spawn outside the world: the first tick faults; the run aborts with an
    # (empty) partial log that records the fault instead of raising
    world = TunnelWorld(segments=np.array([[0.0, -1.0, 1.0, -1.0],
                                           [0.0, 1.0, 1.0, 1.0]]),
                        ceiling_height=4.0, spawn=(50.0, 0.0, 0.0))
    sc = Scenario(name="bad", world=world,
                  schedule=(ReferenceCommand(z_r=1.0),), duration=1.0)
    log = run_scenario(sc, seed=0)
    assert log.rows == []
    assert "fault" in log.sidecar


def test_centerline_progress_projection():
    line = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 5.0]])
    assert centerline_progress(line, 4.0, 1.0) == pytest.approx(4.0)
    assert centerline_progress(line, 11.0, 2.0) == pytest.approx(12.0)
    assert centerline_progress(line, -3.0, 0.0) == pytest.approx(0.0)
