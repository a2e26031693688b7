import math

import pytest

from tunnelpilot.config import (Config, ConfigError, ControlInput, HeadingParams,
                                MavState, ModelParams, NmpcWeights,
                                ReferenceCommand, dumps_config, load_config,
                                loads_config)


def test_empty_config_gives_table_defaults(tmp_path):
    path = tmp_path / "empty.ini"
    path.write_text("")
    cfg = load_config(path)
    assert cfg.nmpc.qz == 10.0
    assert cfg.nmpc.qv == (5.0, 5.0, 5.0)
    assert cfg.nmpc.qu == (20.0, 20.0, 20.0)
    assert cfg.nmpc.qdu == (20.0, 20.0, 20.0)
    assert cfg.nmpc.d_s == 1.0
    assert cfg.nmpc.horizon == 40
    assert cfg.nmpc.ts == 0.05
    assert cfg.model.g == 9.8
    assert cfg.model.ax == 0.1 and cfg.model.ay == 0.1 and cfg.model.az == 0.2
    assert cfg.model.k_phi == 1.0 and cfg.model.tau_phi == 0.5
    assert cfg.heading.beta == 0.95 and cfg.heading.k_p == 0.03


def test_horizon_of_one_is_rejected():
    with pytest.raises(ConfigError, match="horizon"):
        loads_config("[nmpc]\nhorizon = 1\n")


def test_override_keeps_other_defaults():
    cfg = loads_config("[nmpc]\nd_s = 0.5\n")
    assert cfg.nmpc.d_s == 0.5
    assert cfg.nmpc.qz == 10.0
    assert cfg.nmpc.horizon == 40


def test_unknown_key_is_rejected_by_name():
    with pytest.raises(ConfigError, match="qzz"):
        loads_config("[nmpc]\nqzz = 1\n")
    with pytest.raises(ConfigError, match="turbo"):
        loads_config("[turbo]\nx = 1\n")


def test_unparsable_value_names_the_key():
    with pytest.raises(ConfigError, match="qv"):
        loads_config("[nmpc]\nqv = 5, 5\n")
    with pytest.raises(ConfigError, match="g"):
        loads_config("[model]\ng = fast\n")


def test_round_trip_is_identical(tmp_path):
    cfg = loads_config("[nmpc]\nd_s = 0.75\nhorizon = 12\n[model]\ng = 9.81\n"
                       "[heading]\nbeta = 0.9\n[sim]\nrange_sigma = 0.01\n")
    again = loads_config(dumps_config(cfg))
    assert again == cfg
    assert loads_config(dumps_config(Config())) == Config()


def test_mav_state_invariants():
    MavState(phi=math.pi / 2, theta=-math.pi / 2, d_xp=0.0, d_zp=15.0)
    with pytest.raises(ConfigError):
        MavState(phi=2.0)
    with pytest.raises(ConfigError):
        MavState(d_xp=-0.5)
    with pytest.raises(ConfigError):
        MavState(d_ym=15.5)
    with pytest.raises(ConfigError):
        MavState(z=float("nan"))


def test_control_input_invariants():
    ControlInput(0.4, -0.4, 1.0)
    with pytest.raises(ConfigError):
        ControlInput(phi_d=0.5)
    with pytest.raises(ConfigError):
        ControlInput(thrust=1.2)
    with pytest.raises(ConfigError):
        ControlInput(thrust=-0.1)


def test_reference_command_bounds():
    ReferenceCommand(z_r=1.0, vx_r=2.0, vy_r=-2.0)
    with pytest.raises(ConfigError):
        ReferenceCommand(vx_r=2.5)
    with pytest.raises(ConfigError):
        ReferenceCommand(z_r=float("inf"))


def test_parameter_positivity():
    with pytest.raises(ConfigError):
        ModelParams(tau_phi=0.0)
    with pytest.raises(ConfigError):
        NmpcWeights(ts=-0.05)
    with pytest.raises(ConfigError):
        HeadingParams(beta=1.0)


def test_state_array_round_trip():
    x = MavState(z=1.2, vx=0.3, phi=0.1, d_yp=4.0)
    assert MavState.from_array(x.as_array()) == x
