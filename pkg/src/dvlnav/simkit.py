"""Truth trajectories and synthetic IMU/DVL streams.

A motion plan is a contiguous list of primitives. Each primitive shapes
five smooth scalar profiles with closed-form derivatives:

* Euler angles ``(roll, pitch, yaw)`` of ``C_n^b``;
* forward speed ``s`` along body x;
* climb rate ``w`` along local up.

The N-U-E velocity is ``v = s * C_b^n e1 + w * e_up``, so both its time
derivative and the body rate follow analytically. Position is integrated
with the same trapezoidal predictor-corrector as the mechanization.

Ramps use a raised-cosine acceleration profile: acceleration (and the
body rate in turns) starts and ends at zero, keeping velocity C1 while
the specific-force rate varies during the ramp.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from numba import njit

from . import geo
from .attmath import EulerYZX, euler_to_dcm
from .errors import InvalidPlan
from .strapdown import ImuSeries, NavTrajectory, invert_dynamics

DEG = np.pi / 180.0
DEG_PER_HOUR = DEG / 3600.0
MICRO_G = 1e-6 * 9.80665

STREAM_IMU = 1
STREAM_DVL = 2

# peak of sin(u)(1 - cos u)/2, used to normalise the pitch excursion
_PITCH_SHAPE_PEAK = 0.75 * np.sin(2.0 * np.pi / 3.0)


class Kind(str, Enum):
    STATIC = "Static"
    LEVEL = "LevelAccelerate"
    DESCEND = "Descend"
    ASCEND = "Ascend"
    SQUARE = "SquareLegWithTiltedTurn"

    @property
    def constant_attitude(self) -> bool:
        return self is not Kind.SQUARE


@dataclass(frozen=True)
class MotionPrimitive:
    """One plan segment.

    Parameters
    ----------
    kind : Kind
    start, end : float
        Segment bounds [s].
    params : dict
        Kind-specific settings. Type-I kinds accept ``speed`` (target
        forward speed [m/s]), ``climb`` (target climb rate [m/s]) and
        ``settle`` (quiet time at both ends [s]) and ``ramp`` (length of the
        speed change after the leading quiet time [s]; by default the
        change fills the segment). The square accepts
        ``turns``, ``turn_duration`` [s], ``turn_angle``, ``bank`` and
        ``pitch`` [rad].
    """

    kind: Kind
    start: float
    end: float
    params: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class MotionPlan:
    """Ordered, contiguous list of motion primitives."""

    primitives: tuple

    def __post_init__(self):
        prims = tuple(self.primitives)
        object.__setattr__(self, "primitives", prims)
        if not prims:
            raise InvalidPlan("plan is empty")
        for i, p in enumerate(prims):
            if not p.end > p.start:
                raise InvalidPlan(f"segment {i} has non-increasing times")
            if i and abs(p.start - prims[i - 1].end) > 1e-9:
                raise InvalidPlan(f"segment {i} does not start where segment {i - 1} ends")

    @property
    def start(self) -> float:
        return self.primitives[0].start

    @property
    def end(self) -> float:
        return self.primitives[-1].end

    @property
    def boundaries(self) -> list:
        return [p.end for p in self.primitives]

    def __len__(self):
        return len(self.primitives)

    def __iter__(self):
        return iter(self.primitives)


@dataclass(frozen=True)
class TrajectoryShape:
    """Magnitudes shaping the plan primitives (all configurable)."""

    cruise_speed: float = 2.0
    final_speed: float = 1.5
    vertical_speed: float = 0.5
    settle: float = 5.0
    ramp: float | None = 20.0  # 3D Type-I segments; None spans the whole segment
    turns: int = 4
    turn_duration: float = 30.0
    turn_angle: float = 90.0 * DEG
    bank: float = 5.0 * DEG
    turn_pitch: float = 3.0 * DEG


def _ramp_param(shape: TrajectoryShape) -> dict:
    return {} if shape.ramp is None else {"ramp": shape.ramp}


def _square(start, end, shape: TrajectoryShape) -> MotionPrimitive:
    return MotionPrimitive(Kind.SQUARE, start, end, dict(
        turns=shape.turns, turn_duration=shape.turn_duration, turn_angle=shape.turn_angle,
        bank=shape.bank, pitch=shape.turn_pitch))


def build_plan_3d(shape: TrajectoryShape | None = None) -> MotionPlan:
    """Seven-segment plan with descent and ascent, 0-2060 s."""
    s = shape or TrajectoryShape()
    return MotionPlan((
        MotionPrimitive(Kind.STATIC, 0.0, 600.0),
        MotionPrimitive(Kind.LEVEL, 600.0, 660.0, dict(speed=s.cruise_speed, climb=0.0, settle=s.settle, **_ramp_param(s))),
        MotionPrimitive(Kind.DESCEND, 660.0, 720.0, dict(climb=-s.vertical_speed, settle=s.settle, **_ramp_param(s))),
        MotionPrimitive(Kind.LEVEL, 720.0, 750.0, dict(climb=0.0, settle=s.settle, **_ramp_param(s))),
        _square(750.0, 1970.0, s),
        MotionPrimitive(Kind.LEVEL, 1970.0, 2000.0, dict(speed=s.final_speed, climb=0.0, settle=s.settle, **_ramp_param(s))),
        MotionPrimitive(Kind.ASCEND, 2000.0, 2060.0, dict(climb=s.vertical_speed, settle=s.settle, **_ramp_param(s))),
    ))


def build_plan_2d(shape: TrajectoryShape | None = None) -> MotionPlan:
    """Planar plan (no vertical manoeuvres), 0-2040 s.

    The single acceleration ramp spans the whole 600-800 s segment.
    """
    s = shape or TrajectoryShape()
    return MotionPlan((
        MotionPrimitive(Kind.STATIC, 0.0, 600.0),
        MotionPrimitive(Kind.LEVEL, 600.0, 800.0, dict(speed=s.cruise_speed, climb=0.0, settle=s.settle)),
        _square(800.0, 2040.0, s),
    ))


def plan_from_records(records) -> MotionPlan:
    """Build a plan from dictionaries ``{kind, start, end, **params}``."""
    prims = []
    for i, rec in enumerate(records):
        rec = dict(rec)
        try:
            kind = Kind(rec.pop("kind"))
            start = float(rec.pop("start"))
            end = float(rec.pop("end"))
        except (KeyError, ValueError) as exc:
            raise InvalidPlan(f"segment {i}: {exc}") from exc
        prims.append(MotionPrimitive(kind, start, end, rec))
    return MotionPlan(tuple(prims))


# ---------------------------------------------------------------------------
# profile shapes


def _ramp(tau, duration):
    """Raised-cosine ramp 0 -> 1 on [0, duration] and its derivative."""
    x = np.clip(tau / duration, 0.0, 1.0)
    u = 2.0 * np.pi * x
    value = x - np.sin(u) / (2.0 * np.pi)
    rate = np.where((tau > 0) & (tau < duration), (1.0 - np.cos(u)) / duration, 0.0)
    return value, rate


def _bump(tau, duration):
    """Smooth 0 -> 1 -> 0 bump, ``(1 - cos u)/2``, and its derivative."""
    x = np.clip(tau / duration, 0.0, 1.0)
    u = 2.0 * np.pi * x
    return 0.5 * (1.0 - np.cos(u)), np.pi / duration * np.sin(u)


def _wiggle(tau, duration):
    """Zero-mean excursion with unit peak, ``sin u (1 - cos u)/2`` normalised."""
    x = np.clip(tau / duration, 0.0, 1.0)
    u = 2.0 * np.pi * x
    value = np.sin(u) * (1.0 - np.cos(u)) / 2.0 / _PITCH_SHAPE_PEAK
    rate = (np.cos(u) - np.cos(2.0 * u)) * np.pi / duration / _PITCH_SHAPE_PEAK
    return value, rate


@dataclass
class _Profiles:
    euler: np.ndarray
    euler_rate: np.ndarray
    speed: np.ndarray
    speed_rate: np.ndarray
    climb: np.ndarray
    climb_rate: np.ndarray


def _evaluate(plan: MotionPlan, init_attitude, t) -> tuple[_Profiles, np.ndarray]:
    n = len(t)
    prof = _Profiles(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros(n), np.zeros(n),
                     np.zeros(n), np.zeros(n))
    seg_index = np.full(n, -1)
    euler = np.array(init_attitude, dtype=float)
    speed = 0.0
    climb = 0.0
    for k, prim in enumerate(plan):
        last = k == len(plan) - 1
        m = (t >= prim.start) & ((t <= prim.end) if last else (t < prim.end))
        seg_index[m] = k
        tau = t[m] - prim.start
        prof.euler[m] = euler
        prof.speed[m] = speed
        prof.climb[m] = climb
        if prim.kind.constant_attitude:
            if prim.kind is Kind.STATIC:
                if speed != 0.0 or climb != 0.0:
                    raise InvalidPlan(f"segment {k}: static while moving")
                continue
            settle = float(prim.params.get("settle", 5.0))
            span = prim.duration - 2.0 * settle
            if span <= 0:
                raise InvalidPlan(f"segment {k}: settle time leaves no ramp")
            ramp = min(float(prim.params.get("ramp", span)), span)
            if ramp <= 0:
                raise InvalidPlan(f"segment {k}: ramp duration must be positive")
            r, dr = _ramp(tau - settle, ramp)
            target_speed = float(prim.params.get("speed", speed))
            target_climb = float(prim.params.get("climb", climb))
            prof.speed[m] = speed + (target_speed - speed) * r
            prof.speed_rate[m] = (target_speed - speed) * dr
            prof.climb[m] = climb + (target_climb - climb) * r
            prof.climb_rate[m] = (target_climb - climb) * dr
            speed, climb = target_speed, target_climb
        else:
            if climb != 0.0:
                raise InvalidPlan(f"segment {k}: square pattern requires zero climb rate")
            turns = int(prim.params.get("turns", 4))
            td = float(prim.params.get("turn_duration", 30.0))
            angle = float(prim.params.get("turn_angle", 90.0 * DEG))
            bank = float(prim.params.get("bank", 5.0 * DEG))
            pitch = float(prim.params.get("pitch", 3.0 * DEG))
            leg = (prim.duration - turns * td) / turns
            if leg <= 0:
                raise InvalidPlan(f"segment {k}: turns do not fit in the square segment")
            for j in range(turns):
                t0 = prim.start + (j + 1) * leg + j * td
                mm = m & (t >= t0)
                tt = t[mm] - t0
                inside = tt < td
                yv, yr = _ramp(tt, td)
                bv, br = _bump(tt, td)
                pv, pr = _wiggle(tt, td)
                prof.euler[mm, 2] += angle * yv
                prof.euler_rate[mm, 2] += angle * yr
                prof.euler[mm, 0] += bank * bv * inside
                prof.euler_rate[mm, 0] += bank * br * inside
                prof.euler[mm, 1] += pitch * pv * inside
                prof.euler_rate[mm, 1] += pitch * pr * inside
            euler = euler + np.array([0.0, 0.0, turns * angle])
    return prof, seg_index


def body_rate_from_euler(euler, euler_rate) -> np.ndarray:
    """Body rate relative to the local-level frame from Euler angle rates.

    For ``C_n^b = R_x(roll) R_z(pitch) R_y(yaw)``::

        w_nb^b = roll_dot e1 + pitch_dot R_x e3 + yaw_dot R_x R_z e2
    """
    r, p = euler[..., 0], euler[..., 1]
    dr, dp, dy = euler_rate[..., 0], euler_rate[..., 1], euler_rate[..., 2]
    sr, cr, sp, cp = np.sin(r), np.cos(r), np.sin(p), np.cos(p)
    return np.stack([dr + dy * sp, dp * sr + dy * cr * cp, dp * cr - dy * sr * cp], axis=-1)


@njit(cache=True)
def _integrate_position(p0, v, dt):
    n = v.shape[0]
    out = np.empty((n, 3))
    out[0] = p0
    p = p0.copy()
    for i in range(n - 1):
        r0 = geo._position_rate(p, v[i])
        pred = p + dt * r0
        p = p + 0.5 * dt * (r0 + geo._position_rate(pred, v[i + 1]))
        out[i + 1] = p
    return out


@dataclass
class TruthSeries(NavTrajectory):
    """Truth trajectory with analytic rates.

    Extra attributes
    ----------------
    euler : ndarray, shape (n, 3)
        ``(roll, pitch, yaw)`` of ``C_n^b``.
    att_rate : ndarray, shape (n, 3)
        ``w_nb^b`` [rad/s].
    accel_n : ndarray, shape (n, 3)
        Time derivative of the N-U-E velocity [m/s^2].
    segment : ndarray of int, shape (n,)
        Index of the plan primitive active at each tick.
    """

    euler: np.ndarray = None
    att_rate: np.ndarray = None
    accel_n: np.ndarray = None
    segment: np.ndarray = None
    plan: MotionPlan = None

    @property
    def rate(self) -> float:
        return float(round(1.0 / (self.time[1] - self.time[0]), 9))

    @property
    def body_velocity(self) -> np.ndarray:
        return np.einsum("nji,nj->ni", self.attitude, self.velocity)

    def decimate(self, stride: int) -> "TruthSeries":
        sl = slice(None, None, stride)
        return TruthSeries(self.time[sl], self.attitude[sl], self.velocity[sl], self.position[sl],
                           dict(self.extras), self.euler[sl], self.att_rate[sl], self.accel_n[sl],
                           self.segment[sl], self.plan)


def synthesize_truth(plan: MotionPlan, origin: geo.GeoPosition, init_attitude,
                     rate: float = 100.0) -> TruthSeries:
    """Evaluate a motion plan on a uniform time grid.

    Parameters
    ----------
    plan : MotionPlan
    origin : GeoPosition
        Position at the plan start.
    init_attitude : EulerYZX or array_like
        ``(roll, pitch, yaw)`` of the vehicle at the plan start [rad].
    rate : float
        Tick rate [Hz].

    Returns
    -------
    TruthSeries
    """
    if rate <= 0:
        raise InvalidPlan("tick rate must be positive")
    n = int(round((plan.end - plan.start) * rate)) + 1
    t = plan.start + np.arange(n) / rate
    prof, seg = _evaluate(plan, init_attitude, t)

    c_nb = euler_to_dcm(prof.euler)
    c_bn = np.swapaxes(c_nb, 1, 2)
    w_nb = body_rate_from_euler(prof.euler, prof.euler_rate)
    x_axis = c_bn[:, :, 0]
    up = np.array([0.0, 1.0, 0.0])
    vel = prof.speed[:, None] * x_axis + prof.climb[:, None] * up
    x_axis_rate = np.einsum("nij,nj->ni", c_bn, np.cross(w_nb, [1.0, 0.0, 0.0]))
    acc = (prof.speed_rate[:, None] * x_axis + prof.speed[:, None] * x_axis_rate
           + prof.climb_rate[:, None] * up)
    pos = _integrate_position(origin.as_array(), np.ascontiguousarray(vel), 1.0 / rate)
    return TruthSeries(t, c_bn, vel, pos, {}, prof.euler, w_nb, acc, seg, plan)


# ---------------------------------------------------------------------------
# sensors


@dataclass(frozen=True)
class SensorErrorModel:
    """Inertial and DVL error magnitudes.

    Attributes
    ----------
    gyro_bias : float or array_like
        Constant gyro bias [rad/s]; a scalar applies to every axis.
    gyro_noise_density : float
        White rate noise [rad/s/sqrt(Hz)].
    accel_bias : float or array_like
        Constant accelerometer bias [m/s^2].
    accel_noise_density : float
        White specific-force noise [m/s^2/sqrt(Hz)].
    dvl_noise_sigma : float
        DVL white noise per axis [m/s].
    seed : int
    """

    gyro_bias: float = 0.01 * DEG_PER_HOUR
    gyro_noise_density: float = 0.1 * DEG_PER_HOUR
    accel_bias: float = 50.0 * MICRO_G
    accel_noise_density: float = 10.0 * MICRO_G
    dvl_noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for name in ("gyro_noise_density", "accel_noise_density", "dvl_noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def noise_free(cls, seed: int = 0, keep_biases: bool = False) -> "SensorErrorModel":
        base = cls(seed=seed)
        if keep_biases:
            return replace(base, gyro_noise_density=0.0, accel_noise_density=0.0, dvl_noise_sigma=0.0)
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, seed)

    @property
    def gyro_bias_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.gyro_bias, dtype=float), (3,)).copy()

    @property
    def accel_bias_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.accel_bias, dtype=float), (3,)).copy()


@dataclass(frozen=True)
class DvlParams:
    """DVL scale factor and mounting.

    Attributes
    ----------
    scale : float
        Scale factor ``k``.
    misalignment : EulerYZX
        Angles of ``C_b^d`` (body to DVL) in the yaw-pitch-roll sequence.
    """

    scale: float = 0.9998
    misalignment: EulerYZX = EulerYZX(-0.1 * DEG, -0.2 * DEG, -0.5 * DEG)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "misalignment", EulerYZX(*self.misalignment))

    @property
    def c_b_d(self) -> np.ndarray:
        return euler_to_dcm(self.misalignment)

    @property
    def c_d_b(self) -> np.ndarray:
        return self.c_b_d.T

    @classmethod
    def ideal(cls) -> "DvlParams":
        return cls(1.0, EulerYZX(0.0, 0.0, 0.0))


@dataclass
class DvlSeries:
    """Time-ordered DVL stream (velocity in the DVL frame)."""

    time: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(-1, 3)
        if len(self.time) != len(self.velocity):
            raise ValueError("time and velocity lengths differ")

    def __len__(self):
        return len(self.time)

    @property
    def rate(self) -> float:
        return float(round(1.0 / np.median(np.diff(self.time)), 9))

    def between(self, t0: float, t1: float, tol: float = 1e-9) -> "DvlSeries":
        m = (self.time >= t0 - tol) & (self.time <= t1 + tol)
        return DvlSeries(self.time[m], self.velocity[m])

    def scaled(self, factor: float) -> "DvlSeries":
        return DvlSeries(self.time.copy(), self.velocity * factor)


def noise_generator(seed: int, stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by seed and stream id."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def _stride(truth: TruthSeries, rate: float) -> int:
    ratio = truth.rate / rate
    stride = int(round(ratio))
    if rate <= 0 or stride < 1 or abs(ratio - stride) > 1e-9:
        raise ValueError(f"rate {rate} Hz must divide the truth tick rate {truth.rate} Hz")
    return stride


def gen_imu(truth: TruthSeries, errors: SensorErrorModel, rate: float | None = None) -> ImuSeries:
    """Synthesize IMU samples from a truth trajectory.

    Parameters
    ----------
    truth : TruthSeries
    errors : SensorErrorModel
    rate : float, optional
        Output rate [Hz]; must divide the truth rate. Defaults to the
        truth rate.

    Returns
    -------
    ImuSeries
        Ideal outputs plus constant biases plus white noise of standard
        deviation ``density * sqrt(rate)``.
    """
    rate = truth.rate if rate is None else rate
    tr = truth.decimate(_stride(truth, rate))
    gyro, accel = invert_dynamics(tr.attitude, tr.att_rate, tr.velocity, tr.accel_n, tr.position)
    rng = noise_generator(errors.seed, STREAM_IMU)
    n = len(tr.time)
    gn = rng.standard_normal((n, 3))
    an = rng.standard_normal((n, 3))
    gyro = gyro + errors.gyro_bias_vector + errors.gyro_noise_density * np.sqrt(rate) * gn
    accel = accel + errors.accel_bias_vector + errors.accel_noise_density * np.sqrt(rate) * an
    return ImuSeries(tr.time.copy(), gyro, accel)


def gen_dvl(truth: TruthSeries, params: DvlParams, errors: SensorErrorModel,
            rate: float = 1.0) -> DvlSeries:
    """Synthesize DVL velocities ``y = k C_b^d C_n^b v + noise``.

    Parameters
    ----------
    truth : TruthSeries
    params : DvlParams
    errors : SensorErrorModel
        Only ``dvl_noise_sigma`` and ``seed`` are used.
    rate : float
        Output rate [Hz]; must divide the truth rate.
    """
    tr = truth.decimate(_stride(truth, rate))
    y = params.scale * tr.body_velocity @ params.c_b_d.T
    rng = noise_generator(errors.seed, STREAM_DVL)
    y = y + errors.dvl_noise_sigma * rng.standard_normal(y.shape)
    return DvlSeries(tr.time.copy(), y)


def specific_force_rate_direction(truth: TruthSeries, t0: float, t1: float) -> np.ndarray:
    """Principal direction (body frame) of the specific-force rate over a window.

    On constant-attitude segments the specific-force rate equals the rate
    of change of body acceleration; its dominant axis is the excitation
    direction seen by the DVL.
    """
    m = (truth.time >= t0) & (truth.time <= t1)
    acc_b = np.einsum("nji,nj->ni", truth.attitude[m], truth.accel_n[m])
    jerk = np.gradient(acc_b, truth.time[m], axis=0)
    _, _, vt = np.linalg.svd(jerk, full_matrices=False)
    return vt[0]
