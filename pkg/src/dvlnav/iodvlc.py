"""Offline DVL calibration on constant-attitude segments.

On a segment ``[t_s, t_e]`` with constant attitude, integrating the
velocity error equation once and removing its value and slope at ``t_s``
gives the relation::

    k * beta(t) = C_d^b * gamma(t)

with::

    beta(t)  = int_{t_s}^t f dtau - f(t_s) (t - t_s)
    gamma(t) = y(t) - y(t_s) - y_dot(t_s) (t - t_s)

The scale ``k`` follows from the norm ratio and the rotation from a
Wahba fit over all retained samples (:func:`accumulate`,
:func:`estimate_scale`, :func:`estimate_misalignment`).

That relation neglects the Coriolis/Earth-rate coupling of the body
velocity and the change of gravity with depth, and it leans on noisy
initial values. :func:`calibrate` therefore refines it by default:

* the neglected terms are restored from the segment's gyro mean and the
  sensed vertical;
* the gravity reference replacing ``f(t_s)`` is shared by abutting
  segments (a chain, flown at one attitude) and fused from the quiet end
  windows, where the vehicle is not accelerating, and from the DVL;
* only a constant offset of ``y`` per segment remains a nuisance and is
  eliminated exactly;
* scale, rotation and the per-chain gravity references come from one
  joint least-squares fit started at the closed-form values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from . import geo
from .attmath import closest_about_axis, dcm_to_euler, rotation_from_profile, wahba_solve
from .errors import (InsufficientExcitation, SegmentTooShort, StreamGap,
                     UnderdeterminedRotation)
from .simkit import DvlSeries
from .strapdown import ImuBiases, ImuSeries

MIN_SEGMENT = 10.0
SLOPE_WINDOW = 5.0
FORCE_WINDOW = 1.0
QUIET_WINDOW = 5.0
BETA_FLOOR = 0.05
MIN_RETAINED = 100
DIRECTION_RANK_TOL = 1e-2
# floors on the measured noise levels used to weight the gravity reference
PRIOR_DENSITY_FLOOR = 1e-7  # m/s^2/sqrt(Hz)
DVL_NOISE_FLOOR = 1e-6  # m/s

NUISANCE_MODELS = ("offset", "line", "none")


@dataclass
class SegmentData:
    """Per-segment quantities kept for the refinement step.

    All arrays are sampled at the DVL timestamps of the segment.
    """

    start: float
    end: float
    tau: np.ndarray
    y: np.ndarray
    slope_start: np.ndarray
    beta: np.ndarray
    force_integral: np.ndarray
    force_head: np.ndarray
    force_tail: np.ndarray
    gyro_mean: np.ndarray
    quiet: float
    force_noise: float = 0.0  # accelerometer white-noise density estimate

    @property
    def up_body(self) -> np.ndarray:
        return self.force_head / np.linalg.norm(self.force_head)


@dataclass
class BetaGammaSeries:
    """Paired ``beta`` and ``gamma`` samples over one or more segments.

    Attributes
    ----------
    time : ndarray, shape (n,)
    beta : ndarray, shape (n, 3)
        Body frame [m/s].
    gamma : ndarray, shape (n, 3)
        DVL frame [m/s].
    segment_id : ndarray of int, shape (n,)
    segments : list of SegmentData
    """

    time: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    segment_id: np.ndarray
    segments: list = field(default_factory=list)

    def __len__(self):
        return len(self.time)

    @classmethod
    def concat(cls, parts) -> "BetaGammaSeries":
        parts = list(parts)
        if not parts:
            raise ValueError("no series to merge")
        ids, segs = [], []
        for p in parts:
            # relabel so that ids index the merged segment list
            _, local = np.unique(p.segment_id, return_inverse=True)
            ids.append(local + len(segs))
            segs.extend(p.segments)
        return cls(np.concatenate([p.time for p in parts]),
                   np.concatenate([p.beta for p in parts]),
                   np.concatenate([p.gamma for p in parts]),
                   np.concatenate(ids).astype(int), segs)

    def upto(self, t: float) -> "BetaGammaSeries":
        m = self.time <= t
        return BetaGammaSeries(self.time[m], self.beta[m], self.gamma[m], self.segment_id[m],
                               self.segments)


@dataclass
class DvlCalibration:
    """Result of the DVL calibration.

    Attributes
    ----------
    scale_estimate : float
    misalignment_estimate : ndarray, shape (3, 3)
        ``C_d^b`` (DVL to body).
    scale_samples : ndarray, shape (m, 2)
        ``(time, ratio)`` of every retained sample.
    residual : float
        RMS of ``|k beta - C gamma|`` over all samples [m/s].
    free_axis : ndarray or None
        Body-frame axis about which the rotation is unobservable.
    history : dict
        Intermediate series and optional cumulative estimates.
    """

    scale_estimate: float
    misalignment_estimate: np.ndarray
    scale_samples: np.ndarray
    residual: float
    free_axis: np.ndarray | None = None
    history: dict = field(default_factory=dict)

    @property
    def c_b_d(self) -> np.ndarray:
        return self.misalignment_estimate.T

    @property
    def angles(self):
        """Euler angles ``(roll, pitch, yaw)`` of the estimated ``C_b^d``."""
        return dcm_to_euler(self.c_b_d)

    @property
    def inestimable_angle(self) -> str | None:
        """Name of the Euler angle about the free axis, if any."""
        if self.free_axis is None:
            return None
        return ("roll", "yaw", "pitch")[int(np.argmax(np.abs(self.free_axis)))]


def _check_coverage(t, ts, te, what):
    if len(t) < 2:
        raise StreamGap(f"{what} stream has fewer than two samples on the segment")
    d = np.diff(t)
    step = np.median(d)
    if np.any(d > 1.5 * step):
        i = int(np.argmax(d))
        raise StreamGap(f"{what} stream gap of {d[i]:.3f} s at t = {t[i]:.3f} s")
    if t[0] - ts > 1.5 * step or te - t[-1] > 1.5 * step:
        raise StreamGap(f"{what} stream does not cover [{ts}, {te}]")


def _interp_rows(x, xp, fp):
    return np.column_stack([np.interp(x, xp, fp[:, i]) for i in range(fp.shape[1])])


def accumulate(imu: ImuSeries, dvl: DvlSeries, segment, biases: ImuBiases | None = None,
               slope_window: float = SLOPE_WINDOW, force_window: float = FORCE_WINDOW,
               segment_id: int = 0, quiet_window: float = QUIET_WINDOW) -> BetaGammaSeries:
    """Form ``beta`` and ``gamma`` on one constant-attitude segment.

    Parameters
    ----------
    imu : ImuSeries
    dvl : DvlSeries
    segment : tuple of float
        ``(t_s, t_e)``.
    biases : ImuBiases, optional
        Subtracted from the IMU samples. A constant accelerometer bias
        cancels in ``beta`` anyway.
    slope_window : float
        Length [s] of the initial window used to fit ``y_dot(t_s)``.
    force_window : float
        Length [s] of the initial window averaged for ``f(t_s)``.
    segment_id : int
        Label stored with the samples.
    quiet_window : float
        Length [s] of the end windows kept for :func:`refine`.

    Returns
    -------
    BetaGammaSeries
        Samples at the DVL timestamps in the segment. Both series are
        zero at the first of them, which is taken as ``t_s``.

    Raises
    ------
    SegmentTooShort
        Segment shorter than 10 s.
    StreamGap
        Missing samples inside the segment.
    """
    ts, te = float(segment[0]), float(segment[1])
    if te - ts < MIN_SEGMENT:
        raise SegmentTooShort(f"segment [{ts}, {te}] shorter than {MIN_SEGMENT} s")
    im = imu.between(ts, te)
    dv = dvl.between(ts, te)
    _check_coverage(im.time, ts, te, "IMU")
    _check_coverage(dv.time, ts, te, "DVL")

    ts = float(dv.time[0])
    f = im.accel if biases is None else im.accel - biases.accel_bias
    w = im.gyro if biases is None else im.gyro - biases.gyro_bias
    t_imu = im.time - ts
    f_int = cumulative_trapezoid(f, t_imu, axis=0, initial=0.0)
    tau = dv.time - ts
    force_integral = _interp_rows(tau, t_imu, f_int)
    force_integral -= force_integral[0]

    f_start = f[(t_imu >= 0.0) & (t_imu <= force_window + 1e-9)].mean(axis=0)
    beta = force_integral - np.outer(tau, f_start)
    head = tau <= slope_window + 1e-9
    if np.count_nonzero(head) < 2:
        raise SegmentTooShort("fewer than two DVL samples in the slope window")
    slope = np.polyfit(tau[head], dv.velocity[head], 1)[0]
    gamma = dv.velocity - dv.velocity[0] - np.outer(tau, slope)

    t_end = t_imu[-1]
    seg = SegmentData(
        start=ts, end=float(im.time[-1]), tau=tau, y=dv.velocity.copy(), slope_start=slope,
        beta=beta.copy(), force_integral=force_integral,
        force_head=f[(t_imu >= 0.0) & (t_imu <= quiet_window)].mean(axis=0),
        force_tail=f[t_imu >= t_end - quiet_window].mean(axis=0),
        gyro_mean=w.mean(axis=0), quiet=quiet_window,
        force_noise=_noise_sigma(f) * np.sqrt(1.0 / np.median(np.diff(im.time))))
    return BetaGammaSeries(dv.time.copy(), beta, gamma, np.full(len(tau), segment_id), [seg])


def literal_rate_beta(time, force_rate, segment_start: float) -> np.ndarray:
    """``int f_dot dtau - f_dot(t_s) (t - t_s)`` on a sampled rate series.

    This is the variant built on the specific-force *rate*. It carries
    units of acceleration and does not satisfy the calibration relation;
    it is kept for comparison only.
    """
    tau = np.asarray(time, dtype=float) - segment_start
    fdot = np.asarray(force_rate, dtype=float)
    integral = cumulative_trapezoid(fdot, tau, axis=0, initial=0.0)
    return integral - np.outer(tau, fdot[0])


def estimate_scale(series: BetaGammaSeries, floor: float = BETA_FLOOR,
                   min_samples: int = MIN_RETAINED):
    """Scale factor as the median of ``|gamma| / |beta|``.

    Parameters
    ----------
    series : BetaGammaSeries
    floor : float
        Samples with ``|beta|`` below this [m/s] are discarded.
    min_samples : int

    Returns
    -------
    k : float
    ratios : ndarray, shape (m, 2)
        ``(time, ratio)`` for the retained samples.

    Raises
    ------
    InsufficientExcitation
        When fewer than ``min_samples`` samples pass the floor.
    """
    nb = np.linalg.norm(series.beta, axis=1)
    keep = nb >= floor
    if np.count_nonzero(keep) < min_samples:
        raise InsufficientExcitation(
            f"only {np.count_nonzero(keep)} samples with |beta| >= {floor} m/s")
    ratios = np.linalg.norm(series.gamma[keep], axis=1) / nb[keep]
    return float(np.median(ratios)), np.column_stack([series.time[keep], ratios])


def scale_least_squares(series: BetaGammaSeries, c: np.ndarray) -> float:
    """Scale minimizing ``sum |k beta - C gamma|^2`` for a fixed rotation."""
    num = np.sum(series.beta * (series.gamma @ np.asarray(c).T))
    return float(num / np.sum(series.beta**2))


def segment_directions(series: BetaGammaSeries, floor: float = BETA_FLOOR) -> np.ndarray:
    """Dominant body-frame excitation direction of every excited segment.

    A segment counts as excited once ``beta`` has moved by more than
    ``floor`` from its mean; ``beta`` comes from the IMU and is far less
    noisy than ``gamma``.
    """
    dirs = []
    for sid in np.unique(series.segment_id):
        b = series.beta[series.segment_id == sid]
        if len(b) < 3:
            continue
        b = b - b.mean(axis=0)
        if np.max(np.linalg.norm(b, axis=1)) < floor:
            continue
        _, _, vt = np.linalg.svd(b, full_matrices=False)
        dirs.append(vt[0])
    return np.array(dirs).reshape(-1, 3)


def direction_rank(directions, rtol: float = DIRECTION_RANK_TOL) -> int:
    """Numerical rank of a set of unit directions."""
    d = np.asarray(directions, dtype=float).reshape(-1, 3)
    if len(d) == 0:
        return 0
    s = np.linalg.svd(d, compute_uv=False)
    return int(np.count_nonzero(s > rtol * s[0]))


def _free_axis(directions, profile) -> np.ndarray:
    if len(directions):
        axis = directions[0].copy()
    else:
        axis = np.linalg.svd(profile)[0][:, 0]
    return axis * np.sign(axis[np.argmax(np.abs(axis))])


def estimate_misalignment(series: BetaGammaSeries, k: float,
                          rank_tol: float = DIRECTION_RANK_TOL) -> DvlCalibration:
    """Rotation ``C_d^b`` minimizing ``sum |k beta - C gamma|^2``.

    Excitation directions are judged per segment. When they span a single
    axis the best-fit rotation nearest identity about that axis is
    returned together with ``free_axis`` instead of raising.

    Parameters
    ----------
    series : BetaGammaSeries
    k : float
        Scale factor, positive.
    rank_tol : float
        Relative singular-value threshold for the direction set.

    Returns
    -------
    DvlCalibration
    """
    if not k > 0:
        raise ValueError("scale must be positive")
    lhs = k * series.beta
    rhs = series.gamma
    nb = np.linalg.norm(series.beta, axis=1)
    keep = nb >= BETA_FLOOR
    ratios = np.column_stack([series.time[keep], np.linalg.norm(rhs[keep], axis=1) / nb[keep]])
    directions = segment_directions(series)
    free_axis = None
    try:
        c = wahba_solve(lhs, rhs, rank_tol=1e-12)
    except UnderdeterminedRotation as exc:
        free_axis, c = exc.free_axis, exc.rotation
    if free_axis is None and direction_rank(directions, rank_tol) < 2:
        free_axis = _free_axis(directions, c @ rhs.T @ lhs)
        c = closest_about_axis(c, free_axis)
    resid = lhs - rhs @ c.T
    return DvlCalibration(float(k), c, ratios, float(np.sqrt(np.mean(np.sum(resid**2, axis=1)))),
                          free_axis)


# ---------------------------------------------------------------------------
# refinement


@dataclass
class _LocalFrame:
    """Local-level axes and latitude sensed on a constant-attitude segment."""

    up: np.ndarray
    north: np.ndarray
    east: np.ndarray
    lat: float


def _local_frame(seg: SegmentData) -> _LocalFrame:
    # Earth rate dominates the gyro mean: its horizontal part points north
    up = seg.up_body
    w = seg.gyro_mean
    horiz = w - (w @ up) * up
    north = horiz / np.linalg.norm(horiz)
    east = np.cross(north, up)
    lat = float(np.arctan2(w @ up, np.linalg.norm(horiz)))
    return _LocalFrame(up, north, east, lat)


def _earth_rate_terms(seg: SegmentData, frame: _LocalFrame, u: np.ndarray) -> np.ndarray:
    """``2 w_ie + w_en`` in body axes at each DVL time.

    The gyro mean supplies ``w_ie + mean(w_en)``; the transport rate
    follows from the body velocity and the sensed local-level axes.
    """
    rn, re = geo.radii_of_curvature(frame.lat)
    v_north = u @ frame.north
    v_east = u @ frame.east
    wen = (np.outer(v_east / re, frame.north) + np.outer(v_east * np.tan(frame.lat) / re, frame.up)
           - np.outer(v_north / rn, frame.east))
    return 2.0 * (seg.gyro_mean - wen.mean(axis=0)) + wen


def _noise_sigma(x: np.ndarray) -> float:
    """Robust white-noise level of a smooth signal from second differences."""
    if len(x) < 4:
        return 0.0
    d2 = np.diff(x, n=2, axis=0)
    mad = np.median(np.abs(d2 - np.median(d2, axis=0)))
    return float(1.4826 * mad / np.sqrt(6.0))


def _segment_terms(seg: SegmentData, k: float, c: np.ndarray, compensate: bool):
    """Earth-rate terms, corrected DVL signal and gravity change on a segment.

    Returns
    -------
    w : ndarray, shape (n, 3)
        ``2 w_ie + w_en`` in body axes.
    grav : ndarray, shape (n, 3)
        Integral of the body-frame gravity change since the segment start.
    z : ndarray, shape (n, 3)
        ``y + int (W^d x y) dtau``.
    drop : ndarray, shape (n,)
        Decrease of gravity magnitude since the segment start [m/s^2].
    u : ndarray, shape (n, 3)
        Body velocity implied by ``(k, C)``.
    """
    tau = seg.tau
    u = seg.y @ c.T / k
    if not compensate:
        zeros = np.zeros_like(u)
        return zeros, zeros, seg.y, np.zeros(len(tau)), u
    frame = _local_frame(seg)
    w = _earth_rate_terms(seg, frame, u)
    w_dvl = w @ c  # rows: C^T w
    z = seg.y + cumulative_trapezoid(np.cross(w_dvl, seg.y), tau, axis=0, initial=0.0)
    rn, _ = geo.radii_of_curvature(frame.lat)
    dh = cumulative_trapezoid(u @ frame.up, tau, initial=0.0)
    dlat = cumulative_trapezoid(u @ frame.north, tau, initial=0.0) / rn
    drop = geo.FREE_AIR_GRADIENT * dh - geo._gravity_dlat(frame.lat) * dlat
    grav = np.outer(cumulative_trapezoid(drop, tau, initial=0.0), frame.up)
    return w, grav, z, drop, u


def chains(series: BetaGammaSeries) -> list:
    """Groups of abutting segments, which share one attitude."""
    groups = []
    for i, seg in enumerate(series.segments):
        if groups:
            prev = series.segments[groups[-1][-1]]
            step = np.median(np.diff(prev.tau)) if len(prev.tau) > 1 else 0.0
            if abs(seg.start - prev.end) <= 1.5 * step + 1e-9:
                groups[-1].append(i)
                continue
        groups.append([i])
    return groups


def _chain_setup(series, members, k, c, compensate):
    """Model pieces of one chain of abutting segments.

    The specific force at rest at the chain start, ``G0``, is seen by the
    accelerometers in every quiet end window and by the DVL through the
    velocity slope over the whole chain. This returns the accelerometer
    estimate of ``G0`` with its variance, plus per-segment arrays for the
    DVL model ``z - a_j = k C^T (base - tau G0)``.
    """
    segs = [series.segments[i] for i in members]
    terms = [_segment_terms(s, k, c, compensate) for s in segs]
    up = segs[0].up_body

    # gravity decrease at each segment start relative to the chain start
    total, drops = 0.0, []
    for _, _, _, drop, _ in terms:
        drops.append(total)
        total += drop[-1]

    # accelerometer view: at rest f = G0 - drop * up + W x u
    obs, span = [], []
    for s, (w, _, _, drop, u), d0 in zip(segs, terms, drops):
        for mask, force in ((s.tau <= s.quiet, s.force_head),
                            (s.tau >= s.tau[-1] - s.quiet, s.force_tail)):
            coriolis = np.cross(w[mask], u[mask]).mean(axis=0)
            obs.append(force - coriolis + (d0 + drop[mask].mean()) * up)
            span.append(s.quiet)
    span = np.asarray(span)
    prior = np.average(np.asarray(obs), axis=0, weights=span)
    density = max(float(np.mean([s.force_noise for s in segs])), PRIOR_DENSITY_FLOOR)
    prior_sigma = density / np.sqrt(span.sum())
    sigma_y = max(float(np.mean([_noise_sigma(s.y) for s in segs])), DVL_NOISE_FLOOR)

    pieces = []
    for s, (_, grav, z, _, _), d0 in zip(segs, terms, drops):
        base = s.force_integral + grav + d0 * np.outer(s.tau, up)
        pieces.append((base, z, s.tau))
    return dict(members=members, prior=prior, prior_sigma=prior_sigma, sigma_y=sigma_y,
                pieces=pieces)


def _conditional_g0(setup, k, c):
    """Weighted combination of both views of ``G0`` for fixed ``(k, C)``."""
    num = np.zeros(3)
    den = 0.0
    for base, z, tau in setup["pieces"]:
        r = z - k * base @ c
        tt = tau - tau.mean()
        num -= k * tt @ (r - r.mean(axis=0))
        den += k * k * tt @ tt
    wy = 1.0 / setup["sigma_y"] ** 2
    wp = 1.0 / setup["prior_sigma"] ** 2
    return c @ ((num * wy + (setup["prior"] @ c) * wp) / (den * wy + wp))


def _joint_fit(setups, k, c):
    """Least-squares ``(k, C, G0 per chain)`` with DVL offsets eliminated."""
    n_chain = len(setups)

    def unpack(x):
        rot = Rotation.from_rotvec(x[:3]).as_matrix() @ c
        return rot, x[3], x[4:].reshape(n_chain, 3)

    def residuals(x):
        rot, scale, g0 = unpack(x)
        out = []
        for st, g in zip(setups, g0):
            for base, z, tau in st["pieces"]:
                r = z - scale * (base - np.outer(tau, g)) @ rot
                out.append(((r - r.mean(axis=0)) / st["sigma_y"]).ravel())
            out.append((g - st["prior"]) / st["prior_sigma"])
        return np.concatenate(out)

    x0 = np.concatenate([np.zeros(3), [k], np.concatenate([st["prior"] for st in setups])])
    sol = least_squares(residuals, x0, method="trf", x_scale="jac", xtol=1e-15, ftol=1e-15,
                        gtol=1e-15)
    return unpack(sol.x)


def _apply_fit(series, setups, k, c, g0):
    betas = [None] * len(series.segments)
    gammas = [None] * len(series.segments)
    for st, g in zip(setups, g0):
        for i, (base, z, tau) in zip(st["members"], st["pieces"]):
            beta = base - np.outer(tau, g)
            betas[i] = beta
            gammas[i] = z - (z - k * beta @ c).mean(axis=0)
    return BetaGammaSeries(series.time, np.concatenate(betas), np.concatenate(gammas),
                           series.segment_id, series.segments)


def refine(series: BetaGammaSeries, k: float, c: np.ndarray, compensate: bool = True,
           nuisance: str = "offset") -> BetaGammaSeries:
    """Recompute ``beta``/``gamma`` for given ``(k, C_d^b)``.

    Parameters
    ----------
    series : BetaGammaSeries
        Output of :func:`accumulate` (possibly merged).
    k, c : float, ndarray
    compensate : bool
        Apply Earth-rate/Coriolis and gravity-gradient terms.
    nuisance : {"offset", "line", "none"}
        ``"offset"`` replaces the initial specific force by a gravity
        reference shared by abutting segments and fused from the quiet
        end windows and the DVL, then eliminates a constant DVL offset per
        segment. ``"line"`` eliminates offset and slope per segment.
        ``"none"`` keeps the initial value and fitted slope.

    Returns
    -------
    BetaGammaSeries
        ``k beta = C gamma`` holds up to noise. With a nuisance model the
        series no longer start at zero.
    """
    if nuisance not in NUISANCE_MODELS:
        raise ValueError(f"nuisance must be one of {NUISANCE_MODELS}")
    if nuisance == "offset":
        setups = [_chain_setup(series, m, k, c, compensate) for m in chains(series)]
        return _apply_fit(series, setups, k, c, [_conditional_g0(st, k, c) for st in setups])
    betas = [None] * len(series.segments)
    gammas = [None] * len(series.segments)
    for i, seg in enumerate(series.segments):
        w, grav, z, _, _ = _segment_terms(seg, k, c, compensate)
        beta = seg.beta + grav
        if nuisance == "line":
            design = np.column_stack([np.ones_like(seg.tau), seg.tau])
            beta = beta - design @ np.linalg.lstsq(design, beta, rcond=None)[0]
            gamma = z - design @ np.linalg.lstsq(design, z, rcond=None)[0]
        else:
            # the fitted initial slope already contains W x u(t_s)
            z = z - np.outer(seg.tau, np.cross(w[0] @ c, seg.y[0]))
            gamma = z - z[0] - np.outer(seg.tau, seg.slope_start)
        betas[i], gammas[i] = beta, gamma
    return BetaGammaSeries(series.time, np.concatenate(betas), np.concatenate(gammas),
                           series.segment_id, series.segments)


def calibrate(imu: ImuSeries, dvl: DvlSeries, segments, biases: ImuBiases | None = None,
              compensate: bool = True, nuisance: str = "offset", max_iter: int = 20,
              history_step: float | None = 1.0) -> DvlCalibration:
    """Full calibration over several constant-attitude segments.

    Parameters
    ----------
    imu, dvl : ImuSeries, DvlSeries
    segments : sequence of (t_s, t_e)
        With ``nuisance="offset"`` each should begin and end with a few
        seconds without acceleration.
    biases : ImuBiases, optional
    compensate : bool
        Restore the Earth-rate/Coriolis and gravity-gradient terms.
    nuisance : {"offset", "line", "none"}
        See :func:`refine`. With ``"none"`` and ``compensate=False`` the
        estimates are the plain median ratio and Wahba fit of the
        accumulated series. Otherwise the scale is the joint least-squares
        value, since the median ratio is biased upwards by noise on small
        ``beta``.
    max_iter : int
        Passes of the refinement, which depends weakly on ``(k, C)``.
    history_step : float or None
        Spacing [s] of the cumulative estimate history; ``None`` skips it.

    Returns
    -------
    DvlCalibration
        ``history`` holds the ``raw`` and refined ``series`` and, when
        requested, cumulative ``time``, ``scale`` and ``angles`` arrays.
    """
    parts = [accumulate(imu, dvl, seg, biases, segment_id=i) for i, seg in enumerate(segments)]
    raw = BetaGammaSeries.concat(parts)
    k, _ = estimate_scale(raw)
    cal = estimate_misalignment(raw, k)
    series = raw
    literal = nuisance == "none" and not compensate
    if nuisance == "offset":
        c = cal.misalignment_estimate
        for _ in range(max_iter):
            setups = [_chain_setup(raw, m, k, c, compensate) for m in chains(raw)]
            c_new, k_new, g0 = _joint_fit(setups, k, c)
            series = _apply_fit(raw, setups, k_new, c_new, g0)
            step = abs(k_new - k) + np.max(np.abs(c_new - c))
            k, c = k_new, c_new
            if step < 1e-13:
                break
        cal = estimate_misalignment(series, k)
    elif not literal:
        c = cal.misalignment_estimate
        for _ in range(max_iter):
            series = refine(raw, k, c, compensate=compensate, nuisance=nuisance)
            rot = estimate_misalignment(series, 1.0).misalignment_estimate
            k_new = scale_least_squares(series, rot)
            cal = estimate_misalignment(series, k_new)
            step = abs(k_new - k) + np.max(np.abs(cal.misalignment_estimate - c))
            k, c = k_new, cal.misalignment_estimate
            if step < 1e-14:
                break
    cal.history["series"] = series
    cal.history["raw"] = raw
    if history_step:
        cal.history.update(cumulative_history(series, history_step, least_squares=not literal))
    return cal


def cumulative_history(series: BetaGammaSeries, step: float = 1.0,
                       least_squares: bool = False) -> dict:
    """Estimates using only the samples up to each output time.

    Running sums of the attitude profile matrix make this cheap; the
    rotation is nearest-identity about the excitation axis while only one
    direction has been seen.

    Returns
    -------
    dict
        ``time``, ``scale``, ``angles`` (rows ``roll, pitch, yaw`` of
        ``C_b^d`` [rad]) and ``free`` (True where the rotation was
        rank-deficient).
    """
    beta, gamma = series.beta, series.gamma
    profile = np.cumsum(beta[:, :, None] * gamma[:, None, :], axis=0)
    beta_sq = np.cumsum(np.sum(beta**2, axis=1))
    nb = np.linalg.norm(beta, axis=1)
    ratio = np.where(nb >= BETA_FLOOR, np.linalg.norm(gamma, axis=1) / np.maximum(nb, 1e-300), np.nan)
    retained = np.cumsum(nb >= BETA_FLOOR)

    t_out, k_out, ang_out, free_out = [], [], [], []
    for t in np.arange(series.time[0] + step, series.time[-1] + 0.5 * step, step):
        i = int(np.searchsorted(series.time, t, side="right")) - 1
        if retained[i] < MIN_RETAINED:
            continue
        c = rotation_from_profile(profile[i])
        directions = segment_directions(series.upto(t))
        free = direction_rank(directions) < 2
        if free:
            c = closest_about_axis(c, _free_axis(directions, profile[i]))
        if least_squares:
            k = float(np.trace(c @ profile[i].T) / beta_sq[i])
        else:
            k = float(np.nanmedian(ratio[: i + 1]))
        t_out.append(t)
        k_out.append(k)
        ang_out.append(np.array(dcm_to_euler(c.T)))
        free_out.append(free)
    return dict(time=np.array(t_out), scale=np.array(k_out),
                angles=np.array(ang_out).reshape(-1, 3), free=np.array(free_out, dtype=bool))
