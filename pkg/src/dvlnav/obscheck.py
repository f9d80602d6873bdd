"""Trajectory observability checks for the IMU/DVL calibration problem.

Segments of the trajectory are sorted into three kinds:

* constant attitude (``TYPE_I``), where a changing specific force reveals
  the DVL scale and mounting rotation;
* turning (``TYPE_II``), where the rotating gravity direction seen in body
  axes pins down the accelerometer bias;
* everything else (``NEITHER``).

:func:`check_type1` measures how many independent excitation directions
the constant-attitude segments provide; a single direction leaves the
rotation about it free. :func:`check_type2` forms the gravity-like vector
``alpha`` over the turns and tests that its second-moment matrix is
non-singular. :func:`theorem1_verdict` combines both into per-state flags.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import savgol_filter

from .attmath import sphere_center
from .errors import InsufficientTurning, NoExcitation
from .simkit import DEG, DvlSeries
from .strapdown import ImuSeries

WINDOW = 5.0
STILL_THRESHOLD = 0.02 * DEG  # rad/s
TURN_THRESHOLD = 0.5 * DEG  # rad/s
MIN_TURN = 10.0
EXCITATION_THRESHOLD = 1e-3  # m/s^2 on 1 s means
EXCITATION_PAD = 10.0
MIN_SEGMENT = 10.0
RANK_TOL = 1e-2
EIGEN_RATIO = 1e-3
MIN_TURNING = 60.0
DERIVATIVE_WINDOW = 7.0
EXCITATION_FLOOR = 0.05  # m/s

_EULER_OF_AXIS = ("roll", "yaw", "pitch")  # body x, y, z


class SegmentKind(str, Enum):
    TYPE_I = "TypeI"
    TYPE_II = "TypeII"
    NEITHER = "Neither"


@dataclass(frozen=True)
class Segment:
    """Classified time interval.

    Attributes
    ----------
    kind : SegmentKind
    start, end : float
        Bounds [s].
    diagnostics : dict
        ``attitude_variation`` [rad] (rotation accumulated relative to the
        reference rate), ``peak_rate`` [rad/s], ``peak_excitation``
        [m/s^2] and ``excited`` (constant-attitude segments only).
    """

    kind: SegmentKind
    start: float
    end: float
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("segment start must precede its end")

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def excited(self) -> bool:
        return bool(self.diagnostics.get("excited", False))

    @property
    def interval(self) -> tuple:
        return (self.start, self.end)


@dataclass
class Type1Result:
    """Excitation directions of the constant-attitude segments."""

    rank: int
    free_axis: np.ndarray | None
    directions: np.ndarray
    segments: list


@dataclass
class Type2Result:
    """Second-moment test of ``alpha`` over the turns."""

    min_eigenvalue: float
    eigenvalues: np.ndarray
    alpha: np.ndarray
    time: np.ndarray
    turning_duration: float
    threshold: float

    @property
    def nonsingular(self) -> bool:
        return bool(self.min_eigenvalue > self.threshold)


@dataclass
class ObservabilityReport:
    """Which states the trajectory makes estimable.

    Attributes
    ----------
    type1_rank : int
    type1_free_axis : ndarray or None
        Present iff ``type1_rank == 1``.
    type2_min_eigenvalue : float
    estimable : dict of str -> bool
    """

    type1_rank: int
    type1_free_axis: np.ndarray | None
    type2_min_eigenvalue: float
    estimable: dict

    def __post_init__(self):
        if self.type1_rank not in (0, 1, 2, 3):
            raise ValueError("type1_rank must be 0..3")
        if (self.type1_free_axis is not None) != (self.type1_rank == 1):
            raise ValueError("free axis is reported exactly when the rank is one")

    @property
    def inestimable(self) -> list:
        return [name for name, ok in self.estimable.items() if not ok]


# ---------------------------------------------------------------------------
# classification


def _runs(mask):
    """Start/stop index pairs of consecutive True entries."""
    padded = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    return list(zip(edges[::2], edges[1::2]))


def _window_means(time, values, window):
    t0 = time[0]
    idx = np.floor((time - t0) / window + 1e-9).astype(int)
    n = idx[-1] + 1
    counts = np.bincount(idx, minlength=n).astype(float)
    sums = np.stack([np.bincount(idx, values[:, i], minlength=n) for i in range(values.shape[1])], axis=1)
    full = counts >= 0.5 * np.median(counts)
    means = sums / np.maximum(counts, 1.0)[:, None]
    starts = t0 + window * np.arange(n)
    ends = np.minimum(starts + window, time[-1])
    return starts[full], ends[full], means[full]


def _split_still(imu: ImuSeries, start, end, threshold, pad, min_segment):
    """Cut a constant-attitude span at the onsets of specific-force excitation."""
    span = imu.between(start, end)
    s1, e1, f1 = _window_means(span.time, span.accel, 1.0)
    baseline = np.median(f1, axis=0)
    deviation = np.linalg.norm(f1 - baseline, axis=1)
    # bursts are detected on 1 s means, then widened while a 5 s average
    # keeps falling off towards the quiet level (slow ramps start early)
    smooth = np.linalg.norm(uniform_filter1d(f1, 5, axis=0, mode="nearest") - baseline, axis=1)
    noise = 1.4826 * np.median(np.abs(np.diff(f1, axis=0)), axis=0) / np.sqrt(2.0)
    step = max(0.5 * np.linalg.norm(noise) / np.sqrt(5.0), 5e-6)
    bursts = []
    for a, b in _runs(deviation > threshold):
        while a > 0 and smooth[a - 1] < smooth[a] - step:
            a -= 1
        while b < len(smooth) and smooth[b] < smooth[b - 1] - step:
            b += 1
        if bursts and s1[a] <= bursts[-1][1]:
            last = bursts.pop()
            bursts.append((last[0], e1[b - 1], max(last[2], float(deviation[a:b].max()))))
        else:
            bursts.append((s1[a], e1[b - 1], float(deviation[a:b].max())))

    pieces = []
    if not bursts:
        return [(start, end, False, float(deviation.max(initial=0.0)))]
    bounds = []
    for j, (on, off, peak) in enumerate(bursts):
        lo = max(start, on - pad)
        hi = min(end, off + pad)
        if bounds:
            # the quiet gap between consecutive bursts stays with the earlier
            # one, except for the padded lead-in of the later burst
            cut = max(lo, 0.5 * (bursts[j - 1][1] + on))
            bounds[-1][1] = cut
            lo = cut
        bounds.append([lo, hi, peak])
    cursor = start
    for lo, hi, peak in bounds:
        if lo - cursor > 1e-9:
            pieces.append((cursor, lo, False, 0.0))
        pieces.append((lo, hi, True, peak))
        cursor = hi
    if end - cursor > 1e-9:
        pieces.append((cursor, end, False, 0.0))
    # short quiet leftovers are merged into neighbouring excited pieces
    merged = []
    for p in pieces:
        if not p[2] and p[1] - p[0] < min_segment and merged and merged[-1][2]:
            last = merged[-1]
            merged[-1] = (last[0], p[1], True, last[3])
        else:
            merged.append(p)
    return merged


def classify_segments(imu: ImuSeries, window: float = WINDOW,
                      still_threshold: float = STILL_THRESHOLD,
                      turn_threshold: float = TURN_THRESHOLD, min_turn: float = MIN_TURN,
                      excitation_threshold: float = EXCITATION_THRESHOLD,
                      excitation_pad: float = EXCITATION_PAD,
                      min_segment: float = MIN_SEGMENT) -> list:
    """Split an IMU stream into constant-attitude, turning and other segments.

    Parameters
    ----------
    imu : ImuSeries
    window : float
        Length [s] of the rate-averaging windows.
    still_threshold : float
        Windows whose mean rate differs from the reference rate by less
        than this [rad/s] count as constant attitude. The reference rate
        is the median of all window means, so a constant gyro bias (and
        Earth rate) drops out.
    turn_threshold : float
        Rate deviation [rad/s] marking a turning window.
    min_turn : float
        Minimum duration [s] of a turning run.
    excitation_threshold : float
        Deviation [m/s^2] of 1 s specific-force means from their median
        that marks excitation inside a constant-attitude span.
    excitation_pad : float
        Quiet time [s] kept before and after each excitation burst.
    min_segment : float
        Shorter constant-attitude pieces become ``NEITHER``.

    Returns
    -------
    list of Segment
        Contiguous and in time order.
    """
    if len(imu) < 2 or imu.time[-1] - imu.time[0] < 2 * window:
        raise ValueError("stream must cover at least two windows")
    starts, ends, means = _window_means(imu.time, imu.gyro, window)
    reference = np.median(means, axis=0)
    deviation = np.linalg.norm(means - reference, axis=1)
    kind = np.full(len(starts), SegmentKind.NEITHER, dtype=object)
    kind[deviation < still_threshold] = SegmentKind.TYPE_I
    for a, b in _runs(deviation > turn_threshold):
        if ends[b - 1] - starts[a] >= min_turn:
            kind[a:b] = SegmentKind.TYPE_II

    segments = []
    i = 0
    while i < len(kind):
        j = i
        while j + 1 < len(kind) and kind[j + 1] is kind[i]:
            j += 1
        t0, t1 = starts[i], ends[j]
        rot = float(np.sum(deviation[i:j + 1] * (ends[i:j + 1] - starts[i:j + 1])))
        diag = dict(attitude_variation=rot, peak_rate=float(deviation[i:j + 1].max()))
        if kind[i] is SegmentKind.TYPE_I:
            for lo, hi, excited, peak in _split_still(imu, t0, t1, excitation_threshold,
                                                       excitation_pad, min_segment):
                k = SegmentKind.TYPE_I if hi - lo >= min_segment else SegmentKind.NEITHER
                segments.append(Segment(k, lo, hi, dict(diag, excited=excited and k is SegmentKind.TYPE_I,
                                                        peak_excitation=peak)))
        else:
            segments.append(Segment(kind[i], t0, t1, diag))
        i = j + 1
    return segments


def type1_segments(segments, excited_only: bool = True) -> list:
    return [s for s in segments if s.kind is SegmentKind.TYPE_I and (s.excited or not excited_only)]


def type2_segments(segments) -> list:
    return [s for s in segments if s.kind is SegmentKind.TYPE_II]


# ---------------------------------------------------------------------------
# checks


def _excitation_direction(dvl: DvlSeries, seg: Segment, floor: float):
    d = dvl.between(seg.start, seg.end)
    if len(d) < 4:
        return None
    tau = d.time - d.time[0]
    # the departure from a straight line carries the curvature of y
    design = np.column_stack([np.ones_like(tau), tau])
    resid = d.velocity - design @ np.linalg.lstsq(design, d.velocity, rcond=None)[0]
    # the floor is applied to 1 s means so that DVL noise alone never passes
    means = _window_means(d.time, d.velocity, 1.0)[2] if tau[-1] >= 2.0 else d.velocity
    if np.max(np.linalg.norm(means - means[0], axis=1)) < floor:
        return None
    _, _, vt = np.linalg.svd(resid, full_matrices=False)
    return vt[0]


def _oriented(axis):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return axis * np.sign(axis[np.argmax(np.abs(axis))])


def check_type1(segments, dvl: DvlSeries, rank_tol: float = RANK_TOL,
                floor: float = EXCITATION_FLOOR) -> Type1Result:
    """Number of independent excitation directions on constant-attitude segments.

    Parameters
    ----------
    segments : list of Segment
        Output of :func:`classify_segments`; excited ``TYPE_I`` entries are
        used.
    dvl : DvlSeries
    rank_tol : float
        Relative singular-value threshold on the stacked unit directions.
    floor : float
        Segments whose DVL velocity change stays below this [m/s] are
        skipped.

    Returns
    -------
    Type1Result
        ``free_axis`` (DVL frame, largest component positive) is set when
        the rank is one.

    Raises
    ------
    NoExcitation
        When no segment carries usable excitation.
    """
    used, dirs = [], []
    for seg in type1_segments(segments):
        d = _excitation_direction(dvl, seg, floor)
        if d is not None:
            used.append(seg)
            dirs.append(_oriented(d))
    if not dirs:
        raise NoExcitation("no constant-attitude segment shows DVL excitation")
    dirs = np.array(dirs)
    sv = np.linalg.svd(dirs, compute_uv=False)
    rank = int(np.count_nonzero(sv > rank_tol * sv[0]))
    free_axis = None
    if rank == 1:
        free_axis = _oriented(np.linalg.svd(dirs)[2][0])
    return Type1Result(rank, free_axis, dirs, used)


def _interp_rows(x, xp, fp):
    return np.column_stack([np.interp(x, xp, fp[:, i]) for i in range(fp.shape[1])])


def velocity_derivative(dvl: DvlSeries, window: float = DERIVATIVE_WINDOW) -> np.ndarray:
    """Time derivative of the DVL velocity from sliding quadratic fits.

    The fit spans ``window`` seconds (at least 7 samples).
    """
    dt = float(np.median(np.diff(dvl.time)))
    n = max(7, int(round(window / dt)) | 1)
    n = min(n, len(dvl) - (1 - len(dvl) % 2))
    return savgol_filter(dvl.velocity, n, 2, deriv=1, delta=dt, axis=0)


def check_type2(imu: ImuSeries, dvl: DvlSeries, k: float, c_d_b, gyro_bias, segments,
                earth_rate_b=None, gravity: float | None = None,
                window: float = DERIVATIVE_WINDOW, eigen_ratio: float = EIGEN_RATIO,
                min_turning: float = MIN_TURNING) -> Type2Result:
    """Second-moment test of ``alpha`` over the turning segments.

    ``alpha = ((w_ib x) C y + C y_dot) / k - f`` equals the body-frame
    gravity minus the accelerometer bias, so its values lie on a sphere of
    radius ``g`` centred at ``-b_a``.

    Parameters
    ----------
    imu, dvl : ImuSeries, DvlSeries
    k : float
        DVL scale.
    c_d_b : array_like, shape (3, 3)
        DVL-to-body rotation.
    gyro_bias : array_like, shape (3,)
    segments : list of Segment
        ``TYPE_II`` entries select the samples.
    earth_rate_b : array_like, shape (n, 3) or (3,), optional
        Earth rate in body axes at the selected DVL times. When given the
        small ``w_ie x u`` term is added, which makes the sphere relation
        exact.
    gravity : float, optional
        Only stored for :func:`accel_bias_from_alpha`; defaults to the
        median specific-force magnitude.
    window : float
        Span [s] of the quadratic fits for ``y_dot``.
    eigen_ratio : float
        Non-singularity threshold relative to ``trace / 3``.
    min_turning : float
        Minimum total turning time [s].

    Returns
    -------
    Type2Result

    Raises
    ------
    InsufficientTurning
        When the turning segments last less than ``min_turning`` seconds.
    """
    turns = type2_segments(segments)
    duration = float(sum(s.duration for s in turns))
    if duration < min_turning:
        raise InsufficientTurning(f"only {duration:.1f} s of turning (< {min_turning} s)")
    c = np.asarray(c_d_b, dtype=float)
    ydot = velocity_derivative(dvl, window)
    mask = np.zeros(len(dvl), dtype=bool)
    for s in turns:
        mask |= (dvl.time >= s.start) & (dvl.time <= s.end)
    t = dvl.time[mask]
    w = _interp_rows(t, imu.time, imu.gyro) - np.asarray(gyro_bias, dtype=float)
    f = _interp_rows(t, imu.time, imu.accel)
    u = dvl.velocity[mask] @ c.T / k
    alpha = np.cross(w, u) + ydot[mask] @ c.T / k - f
    if earth_rate_b is not None:
        alpha = alpha + np.cross(np.broadcast_to(earth_rate_b, u.shape), u)
    moment = alpha.T @ alpha
    eig = np.linalg.eigvalsh(moment)
    result = Type2Result(float(eig[0]), eig, alpha, t, duration,
                         float(eigen_ratio * np.trace(moment) / 3.0))
    result.gravity = float(np.median(np.linalg.norm(imu.accel, axis=1))) if gravity is None else float(gravity)
    return result


def accel_bias_from_alpha(alpha, gravity: float, initial=None, iterations: int = 50) -> np.ndarray:
    """Solve ``|alpha + b|^2 = g^2`` for ``b`` by Gauss-Newton."""
    a = np.asarray(alpha, dtype=float)
    b = np.zeros(3) if initial is None else np.asarray(initial, dtype=float).copy()
    for _ in range(iterations):
        r = a + b
        norm = np.linalg.norm(r, axis=1)
        jac = r / norm[:, None]
        step = np.linalg.lstsq(jac, gravity - norm, rcond=None)[0]
        b += step
        if np.max(np.abs(step)) < 1e-15:
            break
    return b


def sphere_accel_bias(result: Type2Result) -> np.ndarray:
    """Accelerometer bias as minus the centre of the fixed-radius ``alpha`` sphere."""
    centre, _ = sphere_center(result.alpha, radius=result.gravity)
    return -centre


# ---------------------------------------------------------------------------
# verdict


def theorem1_verdict(type1: Type1Result | None, type2: Type2Result | None) -> ObservabilityReport:
    """Per-state estimability from the two checks.

    A failed check may be passed as ``None``.

    Rules: the DVL scale needs at least one excitation direction; the
    full mounting rotation needs two, with one direction leaving the angle
    about it free; the accelerometer bias needs a non-singular ``alpha``
    moment; attitude, velocity and gyro bias need the turns as well, since
    the changing heading is what separates the Earth-rate components.
    Position is never observable from velocity aiding.
    """
    rank = 0 if type1 is None else type1.rank
    free_axis = None if type1 is None or rank != 1 else type1.free_axis
    turning = type2 is not None and type2.nonsingular
    angles = {f"dvl_{name}": rank >= 2 for name in ("roll", "pitch", "yaw")}
    if rank == 1:
        free_name = _EULER_OF_AXIS[int(np.argmax(np.abs(free_axis)))]
        for name in ("roll", "pitch", "yaw"):
            angles[f"dvl_{name}"] = name != free_name
    estimable = dict(attitude=turning and rank >= 1, velocity=turning and rank >= 1,
                     position=False, gyro_bias=turning and rank >= 1, accel_bias=turning,
                     dvl_scale=rank >= 1, **angles)
    return ObservabilityReport(rank, free_axis, float("nan") if type2 is None else type2.min_eigenvalue,
                               estimable)


def analyze(imu: ImuSeries, dvl: DvlSeries, k: float, c_d_b, gyro_bias, **options):
    """Classify, run both checks and return ``(segments, type1, type2, report)``.

    Failed checks appear as ``None``.
    """
    segments = classify_segments(imu, **{key: v for key, v in options.items()
                                         if key in classify_segments.__code__.co_varnames})
    try:
        t1 = check_type1(segments, dvl)
    except NoExcitation:
        t1 = None
    try:
        t2 = check_type2(imu, dvl, k, c_d_b, gyro_bias, segments)
    except InsufficientTurning:
        t2 = None
    return segments, t1, t2, theorem1_verdict(t1, t2)
