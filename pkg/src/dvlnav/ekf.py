"""Error-state Kalman filter for IMU/DVL navigation with DVL calibration.

Error state (19 entries)::

    0:3    phi    attitude error, N-U-E [rad];  C_b^n = (I - phi x) C_hat
    3:6    dv     velocity error [m/s]
    6:9    dp     position error (lon, lat [rad], h [m])
    9:12   dbg    gyro bias error [rad/s]
    12:15  dba    accelerometer bias error [m/s^2]
    15     dk     DVL scale error
    16:19  mu     DVL mounting error, DVL axes;  C_b^d = (I - mu x) C_hat_b^d

Errors are defined as true minus estimated. The nominal state is
propagated with the strapdown kernels at IMU rate, the covariance with the
first-order transition ``I + F dt``, and each DVL sample
``y = k C_b^d C_n^b v`` is fused with a Joseph-form update followed by a
reset of the error state into the nominal state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from . import geo
from .attmath import _expm_so3, _orthonormalize, _skew, dcm_to_euler, euler_to_dcm, skew
from .errors import InnovationGateExceeded, StepTooLarge, TimebaseMismatch, ValidationError
from .simkit import DEG, DEG_PER_HOUR, MICRO_G, DvlSeries, noise_generator
from .strapdown import (MAX_STEP, ImuBiases, ImuSample, ImuSeries, NavState, _cross, _mech_step,
                        _nav_terms)

N_STATES = 19
ATT, VEL, POS, GYRO, ACCEL, SCALE, MIS = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12),
                                           slice(12, 15), 15, slice(16, 19))
CHI2_GATE = 16.266  # 99.9 % quantile, 3 degrees of freedom
ALIGNMENT_STREAM = 3

STATE_LABELS = ("phi_n", "phi_u", "phi_e", "v_n", "v_u", "v_e", "lon", "lat", "h",
                "bg_x", "bg_y", "bg_z", "ba_x", "ba_y", "ba_z", "k", "mu_x", "mu_y", "mu_z")
ESTIMATE_LABELS = ("roll", "pitch", "yaw", "v_n", "v_u", "v_e", "lon", "lat", "h",
                   "bg_x", "bg_y", "bg_z", "ba_x", "ba_y", "ba_z", "k",
                   "dvl_roll", "dvl_yaw", "dvl_pitch")


@dataclass(frozen=True)
class EkfConfig:
    """Filter tuning.

    Attributes
    ----------
    attitude_sigma : tuple of float
        Initial attitude error 1-sigma about N, U, E [rad].
    velocity_sigma, position_sigma : float
        Initial 1-sigma [m/s], [m].
    gyro_bias_sigma, accel_bias_sigma : float
        Initial 1-sigma [rad/s], [m/s^2].
    scale_sigma, misalignment_sigma : float
        Initial 1-sigma of ``k`` and of each mounting angle [rad].
    gyro_noise, accel_noise : float
        White-noise densities [rad/s/sqrt(Hz)], [m/s^2/sqrt(Hz)].
    gyro_bias_walk, accel_bias_walk, scale_walk, misalignment_walk : float
        Random-walk densities [unit/sqrt(s)] that keep the filter
        responsive.
    dvl_sigma : float
        DVL measurement noise per axis [m/s].
    initial_scale : float
    update_interval : float
        Spacing [s] of the DVL samples that are fused; ``0`` fuses every
        sample.
    gate : float
        Chi-square threshold on the normalised innovation; ``inf``
        disables gating.
    alignment : {"truth", "coarse"}
        ``"truth"`` starts from the true attitude plus random errors drawn
        with ``alignment_error`` (roll, pitch, yaw) 1-sigma; ``"coarse"``
        levels and gyrocompasses from the static data.
    start_time : float
        End of the static alignment period [s].
    history_interval : float
        Spacing [s] of recorded filter output.
    hold_speed : float
        Below this estimated speed [m/s] the scale and mounting states are
        held (Schmidt consider update). At rest the DVL output carries no
        information on them, and the bilinear measurement would otherwise
        fit noise in the velocity estimate.
    """

    attitude_sigma: tuple = (0.01 * DEG, 0.1 * DEG, 0.01 * DEG)
    velocity_sigma: float = 0.01
    position_sigma: float = 1.0
    gyro_bias_sigma: float = 0.02 * DEG_PER_HOUR
    accel_bias_sigma: float = 100.0 * MICRO_G
    scale_sigma: float = 0.2
    misalignment_sigma: float = 1.0 * DEG
    gyro_noise: float = 0.1 * DEG_PER_HOUR
    accel_noise: float = 10.0 * MICRO_G
    gyro_bias_walk: float = 1e-6 * 0.01 * DEG_PER_HOUR
    accel_bias_walk: float = 1e-6 * 50.0 * MICRO_G
    scale_walk: float = 1e-8
    misalignment_walk: float = 1e-8
    dvl_sigma: float = 0.02
    initial_scale: float = 0.8
    update_interval: float = 0.0
    gate: float = CHI2_GATE
    alignment: str = "truth"
    alignment_error: tuple = (0.01 * DEG, 0.01 * DEG, 0.1 * DEG)
    start_time: float = 600.0
    history_interval: float = 0.1
    hold_speed: float = 0.05

    def __post_init__(self):
        sigmas = [*self.attitude_sigma, self.velocity_sigma, self.position_sigma,
                  self.gyro_bias_sigma, self.accel_bias_sigma, self.scale_sigma,
                  self.misalignment_sigma, self.dvl_sigma]
        if len(self.attitude_sigma) != 3 or len(self.alignment_error) != 3:
            raise ValidationError("attitude_sigma and alignment_error need three entries")
        if min(sigmas) <= 0:
            raise ValidationError("initial and measurement sigmas must be positive")
        walks = [self.gyro_noise, self.accel_noise, self.gyro_bias_walk, self.accel_bias_walk,
                 self.scale_walk, self.misalignment_walk]
        if min(walks) < 0 or min(self.alignment_error) < 0:
            raise ValidationError("noise densities must be non-negative")
        if self.alignment not in ("truth", "coarse"):
            raise ValidationError("alignment must be 'truth' or 'coarse'")
        if self.hold_speed < 0:
            raise ValidationError("hold_speed must be non-negative")
        if not self.initial_scale > 0 or self.update_interval < 0 or not self.gate > 0:
            raise ValidationError("initial_scale and gate must be positive, update_interval non-negative")

    def initial_sigmas(self, lat: float, height: float = 0.0) -> np.ndarray:
        rn, re = geo.radii_of_curvature(lat)
        sig = np.empty(N_STATES)
        sig[ATT] = self.attitude_sigma
        sig[VEL] = self.velocity_sigma
        sig[POS] = (self.position_sigma / ((re + height) * np.cos(lat)),
                    self.position_sigma / (rn + height), self.position_sigma)
        sig[GYRO] = self.gyro_bias_sigma
        sig[ACCEL] = self.accel_bias_sigma
        sig[SCALE] = self.scale_sigma
        sig[MIS] = self.misalignment_sigma
        return sig

    def noise_density(self) -> np.ndarray:
        """Diagonal of the continuous process-noise spectral density."""
        q = np.zeros(N_STATES)
        q[ATT] = self.gyro_noise**2
        q[VEL] = self.accel_noise**2
        q[GYRO] = self.gyro_bias_walk**2
        q[ACCEL] = self.accel_bias_walk**2
        q[SCALE] = self.scale_walk**2
        q[MIS] = self.misalignment_walk**2
        return q


@dataclass
class EkfState:
    """Nominal navigation/calibration state and error covariance."""

    nav: NavState
    biases: ImuBiases
    scale: float
    c_b_d: np.ndarray
    covariance: np.ndarray
    error: np.ndarray = field(default_factory=lambda: np.zeros(N_STATES))

    @property
    def time(self) -> float:
        return self.nav.time

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def copy(self) -> "EkfState":
        return EkfState(NavState(self.nav.attitude.copy(), self.nav.velocity.copy(),
                                 self.nav.position, self.nav.time),
                        ImuBiases(self.biases.gyro_bias.copy(), self.biases.accel_bias.copy()),
                        float(self.scale), self.c_b_d.copy(), self.covariance.copy(),
                        self.error.copy())


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _rate_partials(p, v):
    """Partials of w_in, the nav-frame acceleration and the position rate.

    Returns ``(win, acc, wv, wp, av, ap, rv, rp)`` where the suffix ``v``
    or ``p`` marks the derivative with respect to velocity or position.
    """
    lat, h = p[1], p[2]
    rn, re = geo._radii(lat)
    drn, dre = geo._radii_dlat(lat)
    rnh, reh = rn + h, re + h
    sl, cl, tl = np.sin(lat), np.cos(lat), np.tan(lat)
    vn, ve = v[0], v[2]

    wie = geo._earth_rate(lat)
    wen = geo._transport_rate(p, v)
    win = wie + wen
    g = np.zeros(3)
    g[1] = -geo._gravity_magnitude(lat, h)
    acc = g - _cross(2.0 * wie + wen, v)

    wen_v = np.zeros((3, 3))
    wen_v[0, 2] = 1.0 / reh
    wen_v[1, 2] = tl / reh
    wen_v[2, 0] = -1.0 / rnh
    wen_p = np.zeros((3, 3))
    wen_p[0, 1] = -ve * dre / reh**2
    wen_p[1, 1] = ve * (1.0 / (cl * cl * reh) - tl * dre / reh**2)
    wen_p[2, 1] = vn * drn / rnh**2
    wen_p[0, 2] = -ve / reh**2
    wen_p[1, 2] = -ve * tl / reh**2
    wen_p[2, 2] = vn / rnh**2
    wie_p = np.zeros((3, 3))
    wie_p[0, 1] = -geo.EARTH_RATE * sl
    wie_p[1, 1] = geo.EARTH_RATE * cl

    vx = _skew(v)
    av = -_skew(2.0 * wie + wen) + vx @ wen_v
    ap = vx @ (2.0 * wie_p + wen_p)
    ap[1, 1] -= geo._gravity_dlat(lat)
    ap[1, 2] += geo.FREE_AIR_GRADIENT

    rv = np.zeros((3, 3))
    rv[0, 2] = 1.0 / (reh * cl)
    rv[1, 0] = 1.0 / rnh
    rv[2, 1] = 1.0
    rp = np.zeros((3, 3))
    rp[0, 1] = ve * (reh * sl - dre * cl) / (reh * cl) ** 2
    rp[1, 1] = -vn * drn / rnh**2
    rp[0, 2] = -ve / (reh**2 * cl)
    rp[1, 2] = -vn / rnh**2
    return win, acc, wen_v, wie_p + wen_p, av, ap, rv, rp


@njit(cache=True)
def _f_matrix(c, v, p, f_hat):
    """Continuous error dynamics ``d(dx)/dt = F dx``."""
    win, _, wv, wp, av, ap, rv, rp = _rate_partials(p, v)
    f = np.zeros((19, 19))
    f[0:3, 0:3] = -_skew(win)
    f[0:3, 3:6] = wv
    f[0:3, 6:9] = wp
    f[0:3, 9:12] = c
    f[3:6, 0:3] = _skew(c @ f_hat)
    f[3:6, 3:6] = av
    f[3:6, 6:9] = ap
    f[3:6, 12:15] = -c
    f[6:9, 3:6] = rv
    f[6:9, 6:9] = rp
    return f


@njit(cache=True)
def _h_matrix(c, v, k, cbd):
    """Predicted DVL output and its Jacobian ``H`` (3 x 19)."""
    m = cbd @ c.T
    u = m @ v
    h = np.zeros((3, 19))
    h[:, 0:3] = -k * (m @ _skew(v))
    h[:, 3:6] = k * m
    h[:, 15] = u
    h[:, 16:19] = k * _skew(u)
    return k * u, h


@njit(cache=True)
def _propagate_cov(cov, f, q, dt):
    phi = np.eye(19) + f * dt
    out = phi @ cov @ phi.T
    for i in range(19):
        out[i, i] += q[i] * dt
    return 0.5 * (out + out.T)


@njit(cache=True)
def _kalman(cov, h, resid, r_var, gate, hold):
    """Joseph-form update. Returns ``(dx, cov, nis, accepted)``.

    With ``hold`` the scale and mounting rows of the gain are zeroed; the
    Joseph form keeps the covariance exact for that suboptimal gain.
    """
    s = h @ cov @ h.T
    for i in range(3):
        s[i, i] += r_var
    s_inv = np.linalg.inv(s)
    nis = resid @ s_inv @ resid
    if nis > gate:
        return np.zeros(19), cov, nis, False
    gain = cov @ h.T @ s_inv
    if hold:
        gain[15:19] = 0.0
    ikh = np.eye(19) - gain @ h
    out = ikh @ cov @ ikh.T + r_var * (gain @ gain.T)
    return gain @ resid, 0.5 * (out + out.T), nis, True


@njit(cache=True)
def _inject(c, v, p, bg, ba, k, cbd, dx):
    c = _expm_so3(-dx[0:3]) @ c
    cbd = _expm_so3(-dx[16:19]) @ cbd
    return c, v + dx[3:6], p + dx[6:9], bg + dx[9:12], ba + dx[12:15], k + dx[15], cbd


@njit(cache=True)
def _run(c, v, p, bg, ba, k, cbd, cov, gyro, accel, dt, update_idx, meas, r_var, gate, q,
         record_every, monitor, hold_speed):
    n = gyro.shape[0]
    n_rec = (n - 1) // record_every + 1
    rec_c = np.empty((n_rec, 3, 3))
    rec_cbd = np.empty((n_rec, 3, 3))
    rec_x = np.empty((n_rec, 13))  # v, p, bg, ba, k
    rec_var = np.empty((n_rec, 19))
    nis = np.full(update_idx.shape[0], np.nan)
    accepted = np.zeros(update_idx.shape[0], dtype=np.bool_)
    worst_eig = np.inf
    worst_asym = 0.0
    j = 0
    r = 0
    for i in range(n):
        if i > 0:
            w0 = gyro[i - 1] - bg
            f0 = accel[i - 1] - ba
            w1 = gyro[i] - bg
            f1 = accel[i] - ba
            fm = _f_matrix(c, v, p, 0.5 * (f0 + f1))
            c, v, p = _mech_step(c, v, p, w0, f0, w1, f1, dt)
            cov = _propagate_cov(cov, fm, q, dt)
            if i % 256 == 0:
                c = _orthonormalize(c)
        while j < update_idx.shape[0] and update_idx[j] == i:
            pred, h = _h_matrix(c, v, k, cbd)
            dx, cov, nis[j], accepted[j] = _kalman(cov, h, meas[j] - pred, r_var, gate,
                                                 np.linalg.norm(v) < hold_speed)
            if accepted[j]:
                c, v, p, bg, ba, k, cbd = _inject(c, v, p, bg, ba, k, cbd, dx)
            j += 1
        if monitor:
            asym = np.max(np.abs(cov - cov.T))
            if asym > worst_asym:
                worst_asym = asym
            eig = np.linalg.eigvalsh(cov)[0]
            if eig < worst_eig:
                worst_eig = eig
        if i % record_every == 0:
            rec_c[r] = c
            rec_cbd[r] = cbd
            rec_x[r, 0:3] = v
            rec_x[r, 3:6] = p
            rec_x[r, 6:9] = bg
            rec_x[r, 9:12] = ba
            rec_x[r, 12] = k
            for m in range(19):
                rec_var[r, m] = cov[m, m]
            r += 1
    return (c, v, p, bg, ba, k, cbd, cov, rec_c, rec_cbd, rec_x, rec_var, nis, accepted,
            worst_eig, worst_asym)


# ---------------------------------------------------------------------------
# single-step API


def _unpack(state: EkfState):
    return (state.nav.attitude, state.nav.velocity, state.nav.position.as_array(),
            np.asarray(state.biases.gyro_bias, dtype=float),
            np.asarray(state.biases.accel_bias, dtype=float), float(state.scale), state.c_b_d)


def _pack(c, v, p, bg, ba, k, cbd, cov, time, error=None) -> EkfState:
    return EkfState(NavState(c, v, geo.GeoPosition.from_array(p), time), ImuBiases(bg, ba),
                    float(k), cbd, cov, np.zeros(N_STATES) if error is None else error)


def coarse_alignment(imu: ImuSeries) -> np.ndarray:
    """``C_b^n`` from gravity levelling and gyrocompassing on static data."""
    f = imu.accel.mean(axis=0)
    w = imu.gyro.mean(axis=0)
    up = f / np.linalg.norm(f)
    north = w - (w @ up) * up
    north /= np.linalg.norm(north)
    east = np.cross(north, up)
    return np.array([north, up, east])


def init(config: EkfConfig, aligned_attitude, pos, velocity=None, time: float | None = None) -> EkfState:
    """Filter state at the end of alignment.

    Parameters
    ----------
    config : EkfConfig
    aligned_attitude : array_like, shape (3, 3)
        ``C_b^n`` after alignment (errors already included).
    pos : GeoPosition or array_like
    velocity : array_like, optional
        Defaults to zero (alignment at rest).
    time : float, optional
        Defaults to ``config.start_time``.
    """
    pos = pos if isinstance(pos, geo.GeoPosition) else geo.GeoPosition.from_array(pos)
    cov = np.diag(config.initial_sigmas(pos.lat, pos.height) ** 2)
    v = np.zeros(3) if velocity is None else np.asarray(velocity, dtype=float)
    nav = NavState(_orthonormalize(np.asarray(aligned_attitude, dtype=float)), v, pos,
                   config.start_time if time is None else float(time))
    return EkfState(nav, ImuBiases.zeros(), float(config.initial_scale), np.eye(3), cov)


def perturbed_attitude(attitude, errors, seed: int) -> np.ndarray:
    """True attitude with random roll/pitch/yaw errors added.

    ``errors`` holds the 1-sigma values [rad] in (roll, pitch, yaw) order.
    """
    rng = noise_generator(seed, ALIGNMENT_STREAM)
    angles = np.asarray(dcm_to_euler(attitude.T)) + rng.standard_normal(3) * np.asarray(errors)
    return euler_to_dcm(angles).T


def predict(state: EkfState, sample: ImuSample, dt: float, config: EkfConfig,
            sample_end: ImuSample | None = None) -> EkfState:
    """Propagate nominal state and covariance over one IMU step.

    ``dt = 0`` returns an unchanged copy.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt > MAX_STEP:
        raise StepTooLarge(f"step {dt} s exceeds the {MAX_STEP} s mechanization bound")
    if dt == 0:
        return state.copy()
    c, v, p, bg, ba, k, cbd = _unpack(state)
    end = sample if sample_end is None else sample_end
    w0, f0 = np.asarray(sample.gyro) - bg, np.asarray(sample.accel) - ba
    w1, f1 = np.asarray(end.gyro) - bg, np.asarray(end.accel) - ba
    fm = _f_matrix(c, v, p, 0.5 * (f0 + f1))
    c1, v1, p1 = _mech_step(c, v, p, w0, f0, w1, f1, dt)
    cov = _propagate_cov(state.covariance, fm, config.noise_density(), dt)
    return _pack(c1, v1, p1, bg.copy(), ba.copy(), k, cbd.copy(), cov, state.time + dt)


def update(state: EkfState, meas, config: EkfConfig, imu_period: float = 0.01) -> EkfState:
    """Fuse one DVL sample ``(time, y)``.

    Raises
    ------
    TimebaseMismatch
        When the sample is more than half an IMU period from the filter time.
    InnovationGateExceeded
        When the normalised innovation exceeds ``config.gate``; the state is
        left untouched.
    """
    t, y = meas
    if abs(t - state.time) > 0.5 * imu_period + 1e-12:
        raise TimebaseMismatch(f"DVL time {t} differs from filter time {state.time}")
    c, v, p, bg, ba, k, cbd = _unpack(state)
    pred, h = _h_matrix(c, v, k, cbd)
    dx, cov, nis, ok = _kalman(state.covariance, h, np.asarray(y, dtype=float) - pred,
                               config.dvl_sigma**2, config.gate,
                               bool(np.linalg.norm(v) < config.hold_speed))
    if not ok:
        raise InnovationGateExceeded(f"normalised innovation {nis:.1f} > {config.gate}", nis=float(nis))
    out = _inject(c, v, p, bg, ba, k, cbd, dx)
    return _pack(*out, cov, state.time, error=dx)


def measurement(state: EkfState) -> np.ndarray:
    """Predicted DVL output ``k C_b^d C_n^b v``."""
    c, v, _, _, _, k, cbd = _unpack(state)
    return k * cbd @ c.T @ v


def jacobians(state: EkfState, sample: ImuSample):
    """Analytic ``(F, H)`` at a state for the given IMU reading."""
    c, v, p, bg, ba, k, cbd = _unpack(state)
    f = _f_matrix(c, v, p, np.asarray(sample.accel) - ba)
    return f, _h_matrix(c, v, k, cbd)[1]


def perturb(state: EkfState, dx) -> EkfState:
    """Apply an error vector to the nominal state (true = nominal + dx)."""
    out = _inject(*_unpack(state), np.asarray(dx, dtype=float))
    return _pack(*out, state.covariance.copy(), state.time)


def error_between(truth: EkfState, estimate: EkfState) -> np.ndarray:
    """Error vector ``dx`` with ``truth = perturb(estimate, dx)`` to first order."""
    dx = np.empty(N_STATES)
    d = truth.nav.attitude @ estimate.nav.attitude.T
    dx[ATT] = -_vee(d)
    dx[VEL] = truth.nav.velocity - estimate.nav.velocity
    dx[POS] = truth.nav.position.as_array() - estimate.nav.position.as_array()
    dx[GYRO] = truth.biases.gyro_bias - estimate.biases.gyro_bias
    dx[ACCEL] = truth.biases.accel_bias - estimate.biases.accel_bias
    dx[SCALE] = truth.scale - estimate.scale
    dx[MIS] = -_vee(truth.c_b_d @ estimate.c_b_d.T)
    return dx


def _vee(m):
    """Rotation vector of a near-identity DCM."""
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(m).as_rotvec()


def error_rate(state: EkfState, sample: ImuSample, dx) -> np.ndarray:
    """Nonlinear time derivative of the error vector.

    The true state is ``perturb(state, dx)`` and both true and nominal
    states see the same IMU reading with their own bias values. Used to
    validate ``F`` by finite differences.
    """
    true = perturb(state, dx)

    def rates(s: EkfState):
        c, v, p, bg, ba, _, _ = _unpack(s)
        win, acc = _nav_terms(p, v)
        w = np.asarray(sample.gyro) - bg
        f = np.asarray(sample.accel) - ba
        c_dot = c @ skew(w) - skew(win) @ c
        return c, c_dot, c @ f + acc, geo._position_rate(p, v)

    c_t, cd_t, vd_t, pd_t = rates(true)
    c_n, cd_n, vd_n, pd_n = rates(state)
    # d/dt (C C_hat^T) = -(phi_dot x) to first order
    d = cd_t @ c_n.T + c_t @ cd_n.T
    out = np.zeros(N_STATES)
    out[ATT] = -0.5 * np.array([d[2, 1] - d[1, 2], d[0, 2] - d[2, 0], d[1, 0] - d[0, 1]])
    out[VEL] = vd_t - vd_n
    out[POS] = pd_t - pd_n
    return out


# ---------------------------------------------------------------------------
# full run


@dataclass
class EkfHistory:
    """Recorded filter output.

    Attributes
    ----------
    time : ndarray, shape (n,)
    estimates : ndarray, shape (n, 19)
        Columns :data:`ESTIMATE_LABELS`.
    sigmas : ndarray, shape (n, 19)
        One-sigma of the error state, columns :data:`STATE_LABELS`.
    errors : ndarray, shape (n, 19) or None
        Error state (truth minus estimate) when truth was supplied.
    misalignment_errors : ndarray, shape (n, 3) or None
        Mounting Euler-angle errors (roll, pitch, yaw) [rad].
    innovation_nis : ndarray
        Normalised innovation squared of every DVL sample.
    accepted : ndarray of bool
    worst_eigenvalue, worst_asymmetry : float
        Extremes of the covariance checks over all steps (``nan`` when
        not monitored).
    final : EkfState
    """

    time: np.ndarray
    estimates: np.ndarray
    sigmas: np.ndarray
    errors: np.ndarray | None
    misalignment_errors: np.ndarray | None
    innovation_nis: np.ndarray
    accepted: np.ndarray
    worst_eigenvalue: float
    worst_asymmetry: float
    final: EkfState
    extras: dict = field(default_factory=dict)

    def at(self, t: float) -> int:
        return int(np.clip(np.searchsorted(self.time, t - 1e-9), 0, len(self.time) - 1))

    def normalized_sigmas(self) -> np.ndarray:
        return self.sigmas / self.sigmas[0]

    @property
    def misalignment_angles(self) -> np.ndarray:
        """Estimated mounting angles (roll, pitch, yaw) [rad]."""
        return self.estimates[:, [16, 18, 17]]

    @property
    def misalignment_sigmas(self) -> np.ndarray:
        """Mounting-angle 1-sigma ordered (roll, pitch, yaw)."""
        return self.sigmas[:, [16, 18, 17]]


def _align_dvl(imu_time, dvl: DvlSeries, start: float, interval: float):
    dt = float(np.median(np.diff(imu_time)))
    t = dvl.time
    keep = t >= start - 1e-9
    if interval > 0:
        phase = (t - start) / interval
        keep &= np.abs(phase - np.round(phase)) < 0.5 * dt / interval
    t, y = t[keep], dvl.velocity[keep]
    idx = np.round((t - imu_time[0]) / dt).astype(np.int64)
    ok = (idx >= 0) & (idx < len(imu_time))
    if not np.all(ok):
        t, y, idx = t[ok], y[ok], idx[ok]
    if len(idx) and np.max(np.abs(imu_time[idx] - t)) > 0.5 * dt:
        raise TimebaseMismatch("DVL timestamps do not fall on the IMU time grid")
    return idx, y


def run(imu: ImuSeries, dvl: DvlSeries, config: EkfConfig | None = None, truth=None,
        initial: EkfState | None = None, seed: int = 0, monitor: bool = False,
        dvl_truth=None) -> EkfHistory:
    """Run the filter from ``config.start_time`` to the end of the IMU stream.

    Parameters
    ----------
    imu, dvl : ImuSeries, DvlSeries
    config : EkfConfig, optional
    truth : TruthSeries, optional
        Needed for the default ``"truth"`` alignment and for error output.
    initial : EkfState, optional
        Overrides the alignment step.
    seed : int
        Keys the injected alignment errors.
    monitor : bool
        Track the covariance symmetry and smallest eigenvalue at every step.
    dvl_truth : DvlParams, optional
        True DVL parameters (and, via ``extras``, sensor biases) for the
        error columns.
    """
    config = EkfConfig() if config is None else config
    steps = np.diff(imu.time)
    dt = float(np.median(steps))
    if np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise TimebaseMismatch("IMU stream must have a constant sampling interval")
    if dt > MAX_STEP:
        raise StepTooLarge(f"IMU step {dt} s exceeds {MAX_STEP} s")
    i0 = int(np.searchsorted(imu.time, config.start_time - 0.5 * dt))
    if i0 >= len(imu) - 1:
        raise ValidationError("start_time lies beyond the IMU stream")
    t0 = float(imu.time[i0])
    if initial is None:
        if config.alignment == "coarse" or truth is None:
            if i0 < 2:
                raise ValidationError("coarse alignment needs static data before start_time")
            static = ImuSeries(imu.time[:i0], imu.gyro[:i0], imu.accel[:i0])
            att = coarse_alignment(static)
            pos = truth.position[np.searchsorted(truth.time, t0)] if truth is not None else None
            if pos is None:
                raise ValidationError("an initial position is required without truth")
            vel = np.zeros(3)
        else:
            j = int(np.searchsorted(truth.time, t0 - 1e-9))
            att = perturbed_attitude(truth.attitude[j], config.alignment_error, seed)
            pos, vel = truth.position[j], truth.velocity[j]
        initial = init(config, att, pos, vel, t0)

    gyro = np.ascontiguousarray(imu.gyro[i0:])
    accel = np.ascontiguousarray(imu.accel[i0:])
    idx, meas = _align_dvl(imu.time[i0:], dvl, t0, config.update_interval)
    record_every = max(1, int(round(config.history_interval / dt)))
    c, v, p, bg, ba, k, cbd = _unpack(initial)
    out = _run(c.copy(), v.copy(), p.copy(), bg.copy(), ba.copy(), k, cbd.copy(),
               initial.covariance.copy(), gyro, accel, dt, idx, np.ascontiguousarray(meas),
               config.dvl_sigma**2, config.gate, config.noise_density(), record_every, monitor,
               config.hold_speed)
    c, v, p, bg, ba, k, cbd, cov, rec_c, rec_cbd, rec_x, rec_var, nis, accepted, weig, wasym = out
    time = imu.time[i0::record_every][:len(rec_x)]
    att_euler = np.asarray(dcm_to_euler(np.swapaxes(rec_c, 1, 2)))
    mis_euler = np.asarray(dcm_to_euler(rec_cbd))
    estimates = np.column_stack([att_euler, rec_x, mis_euler[:, [0, 2, 1]]])
    sigmas = np.sqrt(np.clip(rec_var, 0.0, None))

    errors = mis_errors = None
    if truth is not None:
        errors, mis_errors = _errors_vs_truth(time, rec_c, rec_x, rec_cbd, truth, dvl_truth)
    final = _pack(c, v, p, bg, ba, k, cbd, cov, float(imu.time[-1]))
    nan = float("nan")
    return EkfHistory(time, estimates, sigmas, errors, mis_errors, nis, accepted,
                      weig if monitor else nan, wasym if monitor else nan, final)


def _errors_vs_truth(time, rec_c, rec_x, rec_cbd, truth, dvl_truth):
    from scipy.spatial.transform import Rotation

    j = np.clip(np.searchsorted(truth.time, time - 1e-9), 0, len(truth.time) - 1)
    err = np.full((len(time), N_STATES), np.nan)
    rel = truth.attitude[j] @ np.swapaxes(rec_c, 1, 2)
    err[:, ATT] = -Rotation.from_matrix(rel).as_rotvec()
    err[:, VEL] = truth.velocity[j] - rec_x[:, 0:3]
    err[:, POS] = truth.position[j] - rec_x[:, 3:6]
    mis = None
    extras = getattr(truth, "extras", {}) or {}
    if "gyro_bias" in extras:
        err[:, GYRO] = extras["gyro_bias"] - rec_x[:, 6:9]
    if "accel_bias" in extras:
        err[:, ACCEL] = extras["accel_bias"] - rec_x[:, 9:12]
    if dvl_truth is not None:
        err[:, SCALE] = dvl_truth.scale - rec_x[:, 12]
        rel = dvl_truth.c_b_d @ np.swapaxes(rec_cbd, 1, 2)
        err[:, MIS] = -Rotation.from_matrix(rel).as_rotvec()
        mis = np.asarray(dvl_truth.misalignment) - np.asarray(dcm_to_euler(rec_cbd))
    return err, mis


def with_sensor_truth(truth, errors):
    """Attach the simulated sensor biases to a truth series for error output."""
    extras = dict(getattr(truth, "extras", {}) or {})
    extras.update(gyro_bias=errors.gyro_bias_vector, accel_bias=errors.accel_bias_vector)
    return replace(truth, extras=extras)
