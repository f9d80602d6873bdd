"""Strapdown mechanization in the N-U-E local-level frame.

Rate equations
--------------
Attitude ``C = C_b^n``::

    dC/dt = C skew(w_nb),   w_nb = w_ib - b_g - C^T (w_ie + w_en)

Velocity::

    dv/dt = C (f - b_a) - (2 w_ie + w_en) x v + g

Position ``p = (lon, lat, h)``::

    dp/dt = R_c(p) v

Integration
-----------
Each step splits the attitude update into a body increment (rotation
vector of the averaged body rate plus the second-order coning term) and a
navigation-frame increment. Velocity and position use a trapezoidal
predictor-corrector. When only one IMU sample is available for the step
the rates are held constant over the interval; supplying the sample at the
end of the step as well (``sample_end``) makes the scheme second order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

from . import geo
from .attmath import _expm_so3, _orthonormalize
from .errors import StepTooLarge

MAX_STEP = 0.1
RENORM_EVERY = 256


class ImuSample(NamedTuple):
    """Single IMU reading: body rate [rad/s] and specific force [m/s^2]."""

    time: float
    gyro: np.ndarray
    accel: np.ndarray

    def __sub__(self, biases: "ImuBiases") -> "ImuSample":
        return ImuSample(self.time, np.asarray(self.gyro) - biases.gyro_bias,
                         np.asarray(self.accel) - biases.accel_bias)


class ImuBiases(NamedTuple):
    """Constant gyro [rad/s] and accelerometer [m/s^2] biases."""

    gyro_bias: np.ndarray
    accel_bias: np.ndarray

    @classmethod
    def zeros(cls) -> "ImuBiases":
        return cls(np.zeros(3), np.zeros(3))


@dataclass
class ImuSeries:
    """Time-ordered IMU stream.

    Attributes
    ----------
    time : ndarray, shape (n,)
    gyro : ndarray, shape (n, 3)
    accel : ndarray, shape (n, 3)
    """

    time: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        if not (len(self.time) == len(self.gyro) == len(self.accel)):
            raise ValueError("time, gyro and accel lengths differ")

    def __len__(self):
        return len(self.time)

    def __getitem__(self, i) -> ImuSample:
        return ImuSample(float(self.time[i]), self.gyro[i], self.accel[i])

    @property
    def rate(self) -> float:
        return float(round(1.0 / np.median(np.diff(self.time)), 9))

    def between(self, t0: float, t1: float, tol: float = 1e-9) -> "ImuSeries":
        m = (self.time >= t0 - tol) & (self.time <= t1 + tol)
        return ImuSeries(self.time[m], self.gyro[m], self.accel[m])


@dataclass
class NavState:
    """Navigation solution at one instant.

    Attributes
    ----------
    attitude : ndarray, shape (3, 3)
        ``C_b^n``, body to N-U-E.
    velocity : ndarray, shape (3,)
        N-U-E velocity [m/s].
    position : GeoPosition
    time : float
    """

    attitude: np.ndarray
    velocity: np.ndarray
    position: geo.GeoPosition
    time: float = 0.0

    def __post_init__(self):
        self.attitude = np.asarray(self.attitude, dtype=float).reshape(3, 3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        if not isinstance(self.position, geo.GeoPosition):
            self.position = geo.GeoPosition.from_array(self.position)


@dataclass
class NavTrajectory:
    """Sequence of navigation states on a common time grid."""

    time: np.ndarray
    attitude: np.ndarray  # (n, 3, 3) C_b^n
    velocity: np.ndarray  # (n, 3)
    position: np.ndarray  # (n, 3) lon, lat, h
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.time)

    def state(self, i) -> NavState:
        return NavState(self.attitude[i], self.velocity[i],
                        geo.GeoPosition.from_array(self.position[i]), float(self.time[i]))


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _nav_terms(p, v):
    """Earth rate, transport rate and gravity-plus-Coriolis acceleration."""
    wie = geo._earth_rate(p[1])
    wen = geo._transport_rate(p, v)
    g = np.zeros(3)
    g[1] = -geo._gravity_magnitude(p[1], p[2])
    acc = g - _cross(2.0 * wie + wen, v)
    return wie + wen, acc


@njit(cache=True)
def _mech_step(c, v, p, w0, f0, w1, f1, dt):
    theta = 0.5 * (w0 + w1) * dt + _cross(w0, w1) * (dt * dt / 12.0)
    body = _expm_so3(theta)
    win0, acc0 = _nav_terms(p, v)
    cf0 = c @ f0
    pr0 = geo._position_rate(p, v)

    # predictor
    c1 = _expm_so3(-win0 * dt) @ c @ body
    v1 = v + 0.5 * dt * (cf0 + c1 @ f1) + dt * acc0
    p1 = p + dt * pr0

    # corrector
    win1, acc1 = _nav_terms(p1, v1)
    c1 = _expm_so3(-0.5 * (win0 + win1) * dt) @ c @ body
    v1 = v + 0.5 * dt * (cf0 + c1 @ f1) + 0.5 * dt * (acc0 + acc1)
    p1 = p + 0.5 * dt * (pr0 + geo._position_rate(p1, v1))
    return c1, v1, p1


@njit(cache=True)
def _integrate(c0, v0, p0, gyro, accel, dt, renorm_every):
    n = gyro.shape[0]
    cs = np.empty((n, 3, 3))
    vs = np.empty((n, 3))
    ps = np.empty((n, 3))
    cs[0] = c0
    vs[0] = v0
    ps[0] = p0
    c = c0.copy()
    v = v0.copy()
    p = p0.copy()
    for i in range(n - 1):
        c, v, p = _mech_step(c, v, p, gyro[i], accel[i], gyro[i + 1], accel[i + 1], dt)
        if renorm_every > 0 and (i + 1) % renorm_every == 0:
            c = _orthonormalize(c)
        cs[i + 1] = c
        vs[i + 1] = v
        ps[i + 1] = p
    return cs, vs, ps


# ---------------------------------------------------------------------------
# public API


def _check_step(dt):
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    if dt > MAX_STEP:
        raise StepTooLarge(f"step {dt} s exceeds the {MAX_STEP} s mechanization bound")


def propagate(state: NavState, sample: ImuSample, dt: float, biases: ImuBiases | None = None,
              sample_end: ImuSample | None = None) -> NavState:
    """Advance a navigation state by one IMU step.

    Parameters
    ----------
    state : NavState
        State at the start of the step.
    sample : ImuSample
        IMU reading at the start of the step.
    dt : float
        Step length [s], ``0 < dt <= 0.1``.
    biases : ImuBiases, optional
        Sensor biases subtracted from the readings.
    sample_end : ImuSample, optional
        Reading at the end of the step. When omitted the start reading is
        held over the interval.

    Returns
    -------
    NavState
    """
    _check_step(dt)
    pos = state.position
    geo._check_polar(pos.lat)
    if biases is not None:
        sample = sample - biases
        if sample_end is not None:
            sample_end = sample_end - biases
    end = sample if sample_end is None else sample_end
    c, v, p = _mech_step(state.attitude, state.velocity, pos.as_array(),
                         np.asarray(sample.gyro, dtype=float), np.asarray(sample.accel, dtype=float),
                         np.asarray(end.gyro, dtype=float), np.asarray(end.accel, dtype=float), dt)
    return NavState(c, v, geo.GeoPosition.from_array(p), state.time + dt)


def integrate(state: NavState, imu: ImuSeries, biases: ImuBiases | None = None,
              renorm_every: int = RENORM_EVERY) -> NavTrajectory:
    """Propagate through a whole IMU stream with constant step.

    The first sample is taken to coincide with ``state``; every later
    sample closes one step.

    Returns
    -------
    NavTrajectory
        States at every IMU timestamp.
    """
    if len(imu) < 2:
        raise ValueError("need at least two IMU samples")
    steps = np.diff(imu.time)
    dt = float(np.median(steps))
    if np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise ValueError("IMU stream must have a constant sampling interval")
    _check_step(dt)
    geo._check_polar(state.position.lat)
    gyro, accel = imu.gyro, imu.accel
    if biases is not None:
        gyro = gyro - biases.gyro_bias
        accel = accel - biases.accel_bias
    cs, vs, ps = _integrate(state.attitude, state.velocity, state.position.as_array(),
                            np.ascontiguousarray(gyro), np.ascontiguousarray(accel), dt, renorm_every)
    if np.any(np.abs(ps[:, 1]) >= np.pi / 2 - geo.POLAR_TOLERANCE):
        geo._check_polar(ps[:, 1])
    return NavTrajectory(imu.time.copy(), cs, vs, ps)


def invert_dynamics(attitude, att_rate, velocity, accel_n, pos):
    """Ideal IMU outputs consistent with a prescribed motion.

    Parameters
    ----------
    attitude : array_like, shape (..., 3, 3)
        ``C_b^n``.
    att_rate : array_like, shape (..., 3)
        Body rate relative to the local-level frame ``w_nb^b`` [rad/s].
    velocity : array_like, shape (..., 3)
        N-U-E velocity [m/s].
    accel_n : array_like, shape (..., 3)
        Time derivative of the N-U-E velocity [m/s^2].
    pos : GeoPosition or array_like, shape (..., 3)

    Returns
    -------
    gyro : ndarray, shape (..., 3)
        ``w_nb + C_n^b (w_ie + w_en)``.
    accel : ndarray, shape (..., 3)
        ``C_n^b (dv/dt + (2 w_ie + w_en) x v - g)``.
    """
    c = np.asarray(attitude, dtype=float)
    v = np.asarray(velocity, dtype=float)
    p = pos.as_array() if isinstance(pos, geo.GeoPosition) else np.asarray(pos, dtype=float)
    wie = geo.earth_rate_n(p[..., 1])
    wen = geo.transport_rate(v, p)
    g = geo.gravity_n(p)
    ct = np.swapaxes(c, -1, -2)
    gyro = np.asarray(att_rate, dtype=float) + np.einsum("...ij,...j->...i", ct, wie + wen)
    spec = np.asarray(accel_n, dtype=float) + np.cross(2.0 * wie + wen, v) - g
    accel = np.einsum("...ij,...j->...i", ct, spec)
    return gyro, accel
