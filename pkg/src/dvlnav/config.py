"""Scenario configuration files.

A scenario is described by a TOML file (or an equivalent JSON document)
with the sections below. Every key is optional; omitted keys take the
defaults shown.

.. code-block:: toml

    seed = 0

    [scenario]
    plan = "3d"                 # "3d", "2d" or a path to a plan file
    imu_rate = 100.0            # Hz
    dvl_rate = 100.0            # Hz
    origin = [120.0, 30.0, -50.0]         # lon [deg], lat [deg], h [m]
    init_attitude = [3.0, 0.0, 10.0]      # roll, pitch, yaw [deg]

    [sensors]
    gyro_bias = 0.01            # deg/h
    gyro_noise = 0.1            # deg/h/sqrt(Hz)
    accel_bias = 50.0           # micro-g
    accel_noise = 10.0          # micro-g/sqrt(Hz)
    dvl_noise = 0.02            # m/s

    [dvl]
    scale = 0.9998
    misalignment = [-0.1, -0.2, -0.5]     # roll, pitch, yaw [deg]

    [ekf]
    # any EkfConfig field, SI units (radians, m/s, ...)
    initial_scale = 0.8

A plan file is a JSON/TOML list of ``{kind, start, end, ...}`` records
under the key ``segments``.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import geo, simkit
from .attmath import EulerYZX
from .ekf import EkfConfig
from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

_SECTIONS = {
    "scenario": {"plan", "imu_rate", "dvl_rate", "origin", "init_attitude"},
    "sensors": {"gyro_bias", "gyro_noise", "accel_bias", "accel_noise", "dvl_noise"},
    "dvl": {"scale", "misalignment"},
    "ekf": {f.name for f in fields(EkfConfig)},
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to simulate and process one run."""

    plan_name: str = "3d"
    imu_rate: float = 100.0
    dvl_rate: float = 100.0
    origin: geo.GeoPosition = field(default_factory=lambda: geo.GeoPosition.from_degrees(120.0, 30.0, -50.0))
    init_attitude: EulerYZX = EulerYZX.from_degrees(3.0, 0.0, 10.0)
    sensors: simkit.SensorErrorModel = simkit.SensorErrorModel()
    dvl: simkit.DvlParams = simkit.DvlParams()
    ekf: EkfConfig = EkfConfig()
    seed: int = 0
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.imu_rate > 0 and self.dvl_rate > 0):
            raise ConfigError("scenario.imu_rate and scenario.dvl_rate must be positive")
        if self.plan_name not in ("3d", "2d") and not self._plan_path().exists():
            raise ConfigError(f"scenario.plan: file '{self.plan_name}' not found")

    def _plan_path(self) -> Path:
        p = Path(self.plan_name)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p

    def plan(self) -> simkit.MotionPlan:
        if self.plan_name == "3d":
            return simkit.build_plan_3d()
        if self.plan_name == "2d":
            return simkit.build_plan_2d()
        data = _load_mapping(self._plan_path())
        if "segments" not in data:
            raise ConfigError(f"{self.plan_name}: missing 'segments' list")
        return simkit.plan_from_records(data["segments"])

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=int(seed), sensors=replace(self.sensors, seed=int(seed)))

    def to_dict(self) -> dict:
        """Plain mapping in file units, suitable for JSON."""
        deg = np.rad2deg
        s = self.sensors
        return {
            "seed": self.seed,
            "scenario": {
                "plan": self.plan_name,
                "imu_rate": self.imu_rate,
                "dvl_rate": self.dvl_rate,
                "origin": [float(deg(self.origin.lon)), float(deg(self.origin.lat)), self.origin.height],
                "init_attitude": [float(a) for a in deg(np.array(self.init_attitude))],
            },
            "sensors": {
                "gyro_bias": _to_list(np.asarray(s.gyro_bias) / simkit.DEG_PER_HOUR),
                "gyro_noise": s.gyro_noise_density / simkit.DEG_PER_HOUR,
                "accel_bias": _to_list(np.asarray(s.accel_bias) / simkit.MICRO_G),
                "accel_noise": s.accel_noise_density / simkit.MICRO_G,
                "dvl_noise": s.dvl_noise_sigma,
            },
            "dvl": {"scale": self.dvl.scale,
                    "misalignment": [float(a) for a in deg(np.array(self.dvl.misalignment))]},
            "ekf": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.ekf).items()},
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        text = json.dumps(self.to_dict(), sort_keys=True, default=_json_default)
        return hashlib.sha256(text.encode()).hexdigest()


def _to_list(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else [float(v) for v in x]


def _json_default(x):
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    raise TypeError(type(x))


def _load_mapping(path: Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _vector(value, key, length=3):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected numbers, got {value!r}") from exc
    if arr.ndim == 0 and length == 0:
        return arr
    if arr.shape != (length,):
        raise ConfigError(f"{key}: expected {length} numbers, got {value!r}")
    return arr


def _number(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    return float(value)


def from_mapping(data: dict, base_dir: Path | None = None, source: str = "<config>") -> ScenarioConfig:
    """Validate a parsed mapping and build the scenario.

    Raises
    ------
    ConfigError
        On unknown sections or keys and on values of the wrong shape; the
        message names the offending key.
    """
    data = dict(data)
    seed = data.pop("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"{source}: seed must be a non-negative integer")
    for section, body in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section '{section}'")
        if not isinstance(body, dict):
            raise ConfigError(f"{source}: '{section}' must be a table")
        for key in body:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{source}: unknown key '{section}.{key}'")

    sc = data.get("scenario", {})
    kw = {}
    if "plan" in sc:
        if not isinstance(sc["plan"], str):
            raise ConfigError(f"{source}: scenario.plan must be a string")
        kw["plan_name"] = sc["plan"]
    for key in ("imu_rate", "dvl_rate"):
        if key in sc:
            kw[key] = _number(sc[key], f"scenario.{key}")
    if "origin" in sc:
        lon, lat, h = _vector(sc["origin"], "scenario.origin")
        kw["origin"] = geo.GeoPosition.from_degrees(lon, lat, h)
    if "init_attitude" in sc:
        kw["init_attitude"] = EulerYZX.from_degrees(*_vector(sc["init_attitude"], "scenario.init_attitude"))

    se = data.get("sensors", {})
    sensors = simkit.SensorErrorModel(seed=seed)
    conv = {"gyro_bias": ("gyro_bias", simkit.DEG_PER_HOUR), "gyro_noise": ("gyro_noise_density", simkit.DEG_PER_HOUR),
            "accel_bias": ("accel_bias", simkit.MICRO_G), "accel_noise": ("accel_noise_density", simkit.MICRO_G),
            "dvl_noise": ("dvl_noise_sigma", 1.0)}
    updates = {}
    for key, (name, unit) in conv.items():
        if key in se:
            val = se[key]
            if key in ("gyro_bias", "accel_bias") and isinstance(val, list):
                updates[name] = tuple(_vector(val, f"sensors.{key}") * unit)
            else:
                updates[name] = _number(val, f"sensors.{key}") * unit
    try:
        kw["sensors"] = replace(sensors, **updates)
    except ValueError as exc:
        raise ConfigError(f"{source}: sensors: {exc}") from exc

    dv = data.get("dvl", {})
    try:
        kw["dvl"] = simkit.DvlParams(
            _number(dv.get("scale", 0.9998), "dvl.scale"),
            EulerYZX.from_degrees(*_vector(dv.get("misalignment", [-0.1, -0.2, -0.5]), "dvl.misalignment")))
    except ValueError as exc:
        raise ConfigError(f"{source}: dvl: {exc}") from exc

    ek = dict(data.get("ekf", {}))
    for key, val in ek.items():
        if isinstance(val, list):
            ek[key] = tuple(float(v) for v in val)
        elif isinstance(val, str) and val.lower() in ("inf", "infinity"):
            ek[key] = float("inf")
    try:
        kw["ekf"] = EkfConfig(**ek)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: ekf: {exc}") from exc
    return ScenarioConfig(seed=seed, base_dir=base_dir, **kw)


def load(path=None, seed: int | None = None) -> ScenarioConfig:
    """Read a scenario file; ``None`` gives the default 3D scenario."""
    if path is None:
        cfg = ScenarioConfig()
    else:
        path = Path(path)
        cfg = from_mapping(_load_mapping(path), base_dir=path.parent, source=str(path))
    return cfg if seed is None else cfg.with_seed(seed)
