"""Rotation algebra and attitude solvers.

Euler convention
----------------
Angles are ``(roll, pitch, yaw)``. The rotation sequence turns the source
frame first about its y axis (yaw), then about the new z axis (pitch) and
finally about the new x axis (roll)::

    C = R_x(roll) @ R_z(pitch) @ R_y(yaw)

where each ``R`` is a passive (frame) rotation. The resulting matrix maps
source-frame coordinates into the rotated frame, and its (0, 1) entry is
``sin(pitch)``. The same function serves the vehicle attitude (``C_n^b``)
and the DVL mounting (``C_b^d``).

Solvers
-------
``triad`` (two-vector deterministic attitude), ``wahba_solve`` (SVD
least-squares rotation) and ``sphere_center`` (centre of a sphere through
non-coplanar points).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit
from scipy.spatial.transform import Rotation

from .errors import CoplanarPoints, DegenerateVectors, GimbalLock, UnderdeterminedRotation

GIMBAL_TOLERANCE = 1e-9


class EulerYZX(NamedTuple):
    """Euler angles [rad] of the yaw-pitch-roll (y, z, x) sequence."""

    roll: float
    pitch: float
    yaw: float

    @classmethod
    def from_degrees(cls, roll, pitch, yaw):
        return cls(*np.deg2rad([roll, pitch, yaw]))

    def degrees(self) -> np.ndarray:
        return np.rad2deg(np.array(self))


def skew(a) -> np.ndarray:
    """Cross-product matrix, ``skew(a) @ b == np.cross(a, b)``.

    Parameters
    ----------
    a : array_like, shape (..., 3)

    Returns
    -------
    ndarray, shape (..., 3, 3)
    """
    a = np.asarray(a, dtype=float)
    out = np.zeros(a.shape[:-1] + (3, 3))
    out[..., 0, 1] = -a[..., 2]
    out[..., 0, 2] = a[..., 1]
    out[..., 1, 0] = a[..., 2]
    out[..., 1, 2] = -a[..., 0]
    out[..., 2, 0] = -a[..., 1]
    out[..., 2, 1] = a[..., 0]
    return out


def euler_to_dcm(angles) -> np.ndarray:
    """Direction cosine matrix of the (y, z, x) Euler sequence.

    Parameters
    ----------
    angles : EulerYZX or array_like, shape (..., 3)
        ``(roll, pitch, yaw)`` in radians.

    Returns
    -------
    ndarray, shape (..., 3, 3)
        Matrix mapping source-frame coordinates into the rotated frame.
    """
    e = np.asarray(angles, dtype=float)
    sr, cr = np.sin(e[..., 0]), np.cos(e[..., 0])
    sp, cp = np.sin(e[..., 1]), np.cos(e[..., 1])
    sy, cy = np.sin(e[..., 2]), np.cos(e[..., 2])
    c = np.empty(e.shape[:-1] + (3, 3))
    c[..., 0, 0] = cp * cy
    c[..., 0, 1] = sp
    c[..., 0, 2] = -cp * sy
    c[..., 1, 0] = -cr * sp * cy + sr * sy
    c[..., 1, 1] = cr * cp
    c[..., 1, 2] = cr * sp * sy + sr * cy
    c[..., 2, 0] = sr * sp * cy + cr * sy
    c[..., 2, 1] = -sr * cp
    c[..., 2, 2] = -sr * sp * sy + cr * cy
    return c


def dcm_to_euler(dcm) -> EulerYZX | np.ndarray:
    """Inverse of :func:`euler_to_dcm`.

    Parameters
    ----------
    dcm : array_like, shape (..., 3, 3)

    Returns
    -------
    EulerYZX for a single matrix, otherwise ndarray of shape (..., 3).

    Raises
    ------
    GimbalLock
        If ``|C[0, 1]| >= 1 - 1e-9`` for any input.
    """
    c = np.asarray(dcm, dtype=float)
    s = c[..., 0, 1]
    if np.any(np.abs(s) >= 1.0 - GIMBAL_TOLERANCE):
        raise GimbalLock("pitch at +/-90 deg, roll and yaw not separable")
    pitch = np.arcsin(s)
    yaw = np.arctan2(-c[..., 0, 2], c[..., 0, 0])
    roll = np.arctan2(-c[..., 2, 1], c[..., 1, 1])
    if c.ndim == 2:
        return EulerYZX(float(roll), float(pitch), float(yaw))
    return np.stack([roll, pitch, yaw], axis=-1)


def rotation_matrix(rotvec) -> np.ndarray:
    """Matrix exponential ``expm(skew(rotvec))`` (active rotation)."""
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix()


def rotation_vector(dcm) -> np.ndarray:
    """Logarithm of a rotation matrix, inverse of :func:`rotation_matrix`."""
    return Rotation.from_matrix(np.asarray(dcm, dtype=float)).as_rotvec()


def orthonormalize(dcm) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(np.asarray(dcm, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def angle_between(a, b) -> float:
    """Angle [rad] between two 3-vectors, robust near 0 and pi."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def triad(u1, u2, w1, w2) -> np.ndarray:
    """Two-vector attitude determination.

    Finds ``C`` with ``C @ u_i ~ w_i``; the first pair is matched exactly
    in direction and the second pair fixes the rotation about it.

    Parameters
    ----------
    u1, u2 : array_like, shape (3,)
        Reference vectors in frame A.
    w1, w2 : array_like, shape (3,)
        The same vectors observed in frame B.

    Returns
    -------
    ndarray, shape (3, 3)
        ``C_A^B``.

    Raises
    ------
    DegenerateVectors
        If either pair is parallel (``|sin angle| < 1e-6``).

    References
    ----------
    .. [1] Shuster, M. D., Oh, S. D., "Three-axis attitude determination from
       vector observations", J. Guidance and Control 4(1), 1981.
    """

    def frame(a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        cr = np.cross(a, b)
        if na == 0.0 or nb == 0.0 or np.linalg.norm(cr) < 1e-6 * na * nb:
            raise DegenerateVectors("TRIAD needs two non-parallel vectors")
        t1 = a / na
        t2 = cr / np.linalg.norm(cr)
        return np.column_stack([t1, t2, np.cross(t1, t2)])

    return frame(w1, w2) @ frame(u1, u2).T


def closest_about_axis(dcm, axis) -> np.ndarray:
    """Rotate ``dcm`` about ``axis`` (left frame) to be as close to identity as possible.

    Used to pick a representative from the one-parameter family of
    rotations left free by a rank-one fit.
    """
    c = np.asarray(dcm, dtype=float)
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    k = skew(a)
    cos_term = np.trace(c) - a @ c @ a
    sin_term = np.trace(k @ c)
    theta = np.arctan2(sin_term, cos_term)
    return rotation_matrix(theta * a) @ c


def _profile_rotation(b):
    u, _, vt = np.linalg.svd(b)
    d = np.linalg.det(u) * np.linalg.det(vt)
    return u @ np.diag([1.0, 1.0, d]) @ vt, u


def rotation_from_profile(b) -> np.ndarray:
    """Proper rotation maximizing ``trace(C^T B)`` for an attitude profile matrix."""
    return _profile_rotation(np.asarray(b, dtype=float))[0]


def wahba_solve(lhs, rhs, weights=None, rank_tol: float = 1e-6) -> np.ndarray:
    """Least-squares rotation between paired vectors.

    Minimizes ``sum_i w_i * ||lhs_i - C @ rhs_i||^2`` over proper rotations.

    Parameters
    ----------
    lhs, rhs : array_like, shape (n, 3)
        Paired vectors; ``lhs_i ~ C @ rhs_i``.
    weights : array_like, shape (n,), optional
        Positive weights; uniform when omitted.
    rank_tol : float
        Relative singular-value threshold below which the ``rhs`` set is
        treated as a single direction.

    Returns
    -------
    ndarray, shape (3, 3)

    Raises
    ------
    UnderdeterminedRotation
        When all ``rhs`` are parallel. The exception carries the best-fit
        rotation nearest identity and the free axis (in the lhs frame).

    Notes
    -----
    The attitude profile matrix ``B = sum w lhs rhs^T`` is decomposed as
    ``U S V^T`` and ``C = U diag(1, 1, det(U V^T)) V^T``.

    References
    ----------
    .. [1] Markley, F. L., "Attitude determination using vector observations
       and the singular value decomposition", J. Astronaut. Sci. 36(3), 1988.
    """
    lhs = np.atleast_2d(np.asarray(lhs, dtype=float))
    rhs = np.atleast_2d(np.asarray(rhs, dtype=float))
    if lhs.shape != rhs.shape or lhs.shape[-1] != 3:
        raise ValueError("lhs and rhs must both have shape (n, 3)")
    w = np.ones(len(lhs)) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    b = (lhs * w[:, None]).T @ rhs
    c, u = _profile_rotation(b)

    spread = np.linalg.svd(rhs * np.sqrt(w)[:, None], compute_uv=False)
    if spread[0] == 0.0 or spread[1] < rank_tol * spread[0]:
        axis = u[:, 0].copy()
        axis *= np.sign(axis[np.argmax(np.abs(axis))])
        raise UnderdeterminedRotation(
            "all reference vectors are parallel; rotation about the free axis is unobservable",
            rotation=closest_about_axis(c, axis),
            free_axis=axis,
        )
    return c


def sphere_center(points, radius: float | None = None, rtol: float = 1e-9):
    """Centre and radius of the sphere through a set of points.

    Parameters
    ----------
    points : array_like, shape (n, 3)
        At least four non-coplanar points.
    radius : float, optional
        Known radius. When given, the centre is refined by Gauss-Newton on
        the distance residuals with the radius held fixed.
    rtol : float
        Relative threshold on the smallest singular value of the centred
        point matrix for the coplanarity test.

    Returns
    -------
    center : ndarray, shape (3,)
    radius : float
        Mean distance to the centre (or the given radius).

    Raises
    ------
    CoplanarPoints
        If the points lie (numerically) in a plane.

    Notes
    -----
    Subtracting the first point's equation ``|a_i - x|^2 = r^2`` from the
    others cancels ``r^2`` and ``|x|^2`` and leaves the linear system
    ``2 (a_i - a_0) . x = |a_i|^2 - |a_0|^2``.
    """
    a = np.asarray(points, dtype=float)
    if a.ndim != 2 or a.shape[1] != 3 or len(a) < 4:
        raise ValueError("need at least four 3-vectors")
    sv = np.linalg.svd(a - a.mean(axis=0), compute_uv=False)
    if sv[0] == 0.0 or sv[2] <= rtol * sv[0]:
        raise CoplanarPoints("points are coplanar; sphere centre is not unique")
    ref = a[0]
    lhs = 2.0 * (a[1:] - ref)
    rhs = np.einsum("ij,ij->i", a[1:], a[1:]) - ref @ ref
    x = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    if radius is None:
        return x, float(np.mean(np.linalg.norm(a - x, axis=1)))

    for _ in range(100):
        diff = x - a
        dist = np.linalg.norm(diff, axis=1)
        jac = diff / dist[:, None]
        step = np.linalg.lstsq(jac, -(dist - radius), rcond=None)[0]
        x = x + step
        if np.linalg.norm(step) <= 1e-15 * max(1.0, radius):
            break
    return x, float(radius)


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _skew(a):
    out = np.zeros((3, 3))
    out[0, 1] = -a[2]
    out[0, 2] = a[1]
    out[1, 0] = a[2]
    out[1, 2] = -a[0]
    out[2, 0] = -a[1]
    out[2, 1] = a[0]
    return out


@njit(cache=True)
def _expm_so3(phi):
    theta2 = phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]
    if theta2 < 1e-10:
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    k = _skew(phi)
    return np.eye(3) + a * k + b * (k @ k)


@njit(cache=True)
def _orthonormalize(c):
    u, _, vt = np.linalg.svd(c)
    return u @ vt
