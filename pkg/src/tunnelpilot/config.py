"""Shared domain types, physical/tuning parameters, and config file I/O.

All values are SI. Defaults reproduce the stock vehicle model and controller
tuning; a config file only needs to list the keys it overrides.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields

import numpy as np

# Lidar range bound; distances beyond it are reported as invalid (inf).
D_MAX = 15.0
# Roll/pitch are physically meaningful only in [-pi/2, pi/2].
ANGLE_MAX = math.pi / 2.0
# Operator velocity references are rejected beyond this magnitude (m/s).
V_REF_MAX = 2.0


class ConfigError(Exception):
    """Config file could not be parsed or failed validation."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class MavState:
    """The 11-entry vehicle state: altitude, body velocities, attitude, and
    the five surface-obstacle distances."""

    z: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    phi: float = 0.0
    theta: float = 0.0
    d_xp: float = D_MAX
    d_xm: float = D_MAX
    d_yp: float = D_MAX
    d_ym: float = D_MAX
    d_zp: float = D_MAX

    def __post_init__(self):
        _require(abs(self.phi) <= ANGLE_MAX + 1e-12, f"phi out of range: {self.phi}")
        _require(abs(self.theta) <= ANGLE_MAX + 1e-12, f"theta out of range: {self.theta}")
        for name in ("d_xp", "d_xm", "d_yp", "d_ym", "d_zp"):
            d = getattr(self, name)
            _require(-1e-12 <= d <= D_MAX + 1e-12, f"{name} out of [0, {D_MAX}]: {d}")
        _require(all(math.isfinite(getattr(self, f.name)) for f in fields(self)),
                 "non-finite state entry")

    def as_array(self) -> np.ndarray:
        return np.array([self.z, self.vx, self.vy, self.vz, self.phi, self.theta,
                         self.d_xp, self.d_xm, self.d_yp, self.d_ym, self.d_zp])

    @classmethod
    def from_array(cls, x: np.ndarray) -> "MavState":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class ControlInput:
    """Desired roll/pitch (rad) and normalized thrust in [0, 1]."""

    phi_d: float = 0.0
    theta_d: float = 0.0
    thrust: float = 0.5

    def __post_init__(self):
        _require(abs(self.phi_d) <= 0.4 + 1e-12, f"phi_d out of [-0.4, 0.4]: {self.phi_d}")
        _require(abs(self.theta_d) <= 0.4 + 1e-12, f"theta_d out of [-0.4, 0.4]: {self.theta_d}")
        _require(-1e-12 <= self.thrust <= 1.0 + 1e-12, f"thrust out of [0, 1]: {self.thrust}")

    def as_array(self) -> np.ndarray:
        return np.array([self.phi_d, self.theta_d, self.thrust])

    @classmethod
    def from_array(cls, u: np.ndarray) -> "ControlInput":
        return cls(float(u[0]), float(u[1]), float(u[2]))


# Hover input: level attitude, thrust at half scale (t_max = 2g makes 0.5 hover).
U_REF = (0.0, 0.0, 0.5)
U_MIN = (-0.4, -0.4, 0.0)
U_MAX = (0.4, 0.4, 1.0)


@dataclass(frozen=True)
class ModelParams:
    """Vehicle model constants.

    thrust is commanded normalized in [0, 1] and enters the dynamics as an
    acceleration t * t_max; with t_max = 2g the hover command is exactly 0.5.
    tau_psi is the yaw-rate lag used only by the simulator's yaw channel.
    """

    g: float = 9.8
    ax: float = 0.1
    ay: float = 0.1
    az: float = 0.2
    k_phi: float = 1.0
    k_theta: float = 1.0
    tau_phi: float = 0.5
    tau_theta: float = 0.5
    t_max: float = 19.6
    tau_psi: float = 0.3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            _require(math.isfinite(v) and v > 0.0, f"{f.name} must be > 0, got {v}")

    def as_array(self) -> np.ndarray:
        """Packed parameter vector consumed by the numeric kernels."""
        return np.array([self.g, self.ax, self.ay, self.az, self.k_phi,
                         self.k_theta, self.tau_phi, self.tau_theta, self.t_max])


@dataclass(frozen=True)
class NmpcWeights:
    """Cost weights, safety distance, and horizon of the controller."""

    qz: float = 10.0
    qv: tuple[float, float, float] = (5.0, 5.0, 5.0)
    qu: tuple[float, float, float] = (20.0, 20.0, 20.0)
    qdu: tuple[float, float, float] = (20.0, 20.0, 20.0)
    d_s: float = 1.0
    horizon: int = 40
    ts: float = 0.05

    def __post_init__(self):
        _require(self.qz >= 0.0, f"qz must be >= 0, got {self.qz}")
        for name in ("qv", "qu", "qdu"):
            vec = getattr(self, name)
            _require(len(vec) == 3 and all(w >= 0.0 for w in vec),
                     f"{name} must be 3 nonnegative weights, got {vec}")
        _require(self.horizon >= 2, f"horizon must be >= 2, got {self.horizon}")
        _require(self.ts > 0.0, f"ts must be > 0, got {self.ts}")
        _require(self.d_s > 0.0, f"d_s must be > 0, got {self.d_s}")

    def as_array(self) -> np.ndarray:
        """[qz, qv(3), qu(3), qdu(3), d_s] vector for the numeric kernels."""
        return np.array([self.qz, *self.qv, *self.qu, *self.qdu, self.d_s])


@dataclass(frozen=True)
class HeadingParams:
    """Complementary-filter coefficient, proportional gain, and scan window."""

    beta: float = 0.95
    k_p: float = 0.03
    window: tuple[float, float] = (-math.pi / 2.0, math.pi / 2.0)

    def __post_init__(self):
        _require(0.0 < self.beta < 1.0, f"beta must be in (0, 1), got {self.beta}")
        _require(self.k_p > 0.0, f"k_p must be > 0, got {self.k_p}")
        _require(self.window[0] < self.window[1], f"empty heading window {self.window}")


@dataclass(frozen=True)
class SimParams:
    """Simulator sensor-noise magnitudes and operator reference bound."""

    range_sigma: float = 0.02
    gyro_sigma: float = 0.01
    vel_sigma: float = 0.02
    dropout: float = 0.0
    v_ref_max: float = V_REF_MAX

    def __post_init__(self):
        for name in ("range_sigma", "gyro_sigma", "vel_sigma"):
            _require(getattr(self, name) >= 0.0, f"{name} must be >= 0")
        _require(0.0 <= self.dropout < 1.0, f"dropout must be in [0, 1), got {self.dropout}")
        _require(self.v_ref_max > 0.0, "v_ref_max must be > 0")


@dataclass(frozen=True)
class ReferenceCommand:
    """Operator reference: altitude plus planar body-frame velocities."""

    z_r: float = 1.0
    vx_r: float = 0.0
    vy_r: float = 0.0
    timestamp: float = 0.0
    v_ref_max: float = V_REF_MAX

    def __post_init__(self):
        for name in ("z_r", "vx_r", "vy_r", "timestamp"):
            _require(math.isfinite(getattr(self, name)), f"non-finite reference {name}")
        _require(abs(self.vx_r) <= self.v_ref_max, f"|vx_r| exceeds {self.v_ref_max}")
        _require(abs(self.vy_r) <= self.v_ref_max, f"|vy_r| exceeds {self.v_ref_max}")


@dataclass(frozen=True)
class Config:
    """Validated parameter bundle for one run of the stack."""

    model: ModelParams = field(default_factory=ModelParams)
    nmpc: NmpcWeights = field(default_factory=NmpcWeights)
    heading: HeadingParams = field(default_factory=HeadingParams)
    sim: SimParams = field(default_factory=SimParams)


# Section -> (key -> (parser, dataclass field)). Unknown keys are rejected.
_SCALAR = float
_VEC3 = "vec3"
_INT = int

_SCHEMA = {
    "model": {
        "g": _SCALAR, "ax": _SCALAR, "ay": _SCALAR, "az": _SCALAR,
        "k_phi": _SCALAR, "k_theta": _SCALAR, "tau_phi": _SCALAR,
        "tau_theta": _SCALAR, "t_max": _SCALAR, "tau_psi": _SCALAR,
    },
    "nmpc": {
        "qz": _SCALAR, "qv": _VEC3, "qu": _VEC3, "qdu": _VEC3,
        "d_s": _SCALAR, "horizon": _INT, "ts": _SCALAR,
    },
    "heading": {
        "beta": _SCALAR, "k_p": _SCALAR,
    },
    "sim": {
        "range_sigma": _SCALAR, "gyro_sigma": _SCALAR, "vel_sigma": _SCALAR,
        "dropout": _SCALAR, "v_ref_max": _SCALAR,
    },
}

_SECTION_TYPES = {"model": ModelParams, "nmpc": NmpcWeights,
                  "heading": HeadingParams, "sim": SimParams}


def _parse_value(section: str, key: str, raw: str):
    kind = _SCHEMA[section][key]
    try:
        if kind is _VEC3:
            parts = [float(p) for p in raw.replace(",", " ").split()]
            if len(parts) != 3:
                raise ValueError(f"expected 3 values, got {len(parts)}")
            return tuple(parts)
        if kind is _INT:
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from exc


def loads_config(text: str) -> Config:
    """Parse config text; omitted keys fall back to the stock defaults."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc

    sections = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        overrides = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            overrides[key] = _parse_value(section, key, raw)
        try:
            sections[section] = _SECTION_TYPES[section](**overrides)
        except ConfigError as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    return Config(
        model=sections.get("model", ModelParams()),
        nmpc=sections.get("nmpc", NmpcWeights()),
        heading=sections.get("heading", HeadingParams()),
        sim=sections.get("sim", SimParams()),
    )


def load_config(path) -> Config:
    """Load and validate a config file; missing sections use defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads_config(text)


def dumps_config(cfg: Config) -> str:
    """Serialize a config so that loads_config round-trips it exactly."""
    parser = configparser.ConfigParser()
    for section, obj in (("model", cfg.model), ("nmpc", cfg.nmpc),
                         ("heading", cfg.heading), ("sim", cfg.sim)):
        parser.add_section(section)
        for key in _SCHEMA[section]:
            value = getattr(obj, key)
            if isinstance(value, tuple):
                parser.set(section, key, ", ".join(repr(v) for v in value))
            else:
                parser.set(section, key, repr(value))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save_config(cfg: Config, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))
