"""Earth model in the North-Up-East local-level frame.

WGS-84 ellipsoid, Somigliana normal gravity with a linear free-air term,
Earth rotation and transport rates, and the curvature matrix mapping the
local-level velocity to geodetic position rates.

Positions are ``(lon, lat, height)`` in radians and metres. Velocities and
angular rates are ordered North, Up, East.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import PolarSingularity

SEMI_MAJOR_AXIS = 6378137.0
FLATTENING = 1.0 / 298.257223563
ECC2 = FLATTENING * (2.0 - FLATTENING)
EARTH_RATE = 7.292115e-5

# Somigliana coefficients for WGS-84
GRAVITY_EQUATOR = 9.7803253359
GRAVITY_K = 0.00193185265241
FREE_AIR_GRADIENT = 3.086e-6

POLAR_TOLERANCE = 1e-6


@dataclass(frozen=True)
class EllipsoidModel:
    """Reference ellipsoid and rotation rate (defaults: WGS-84)."""

    semi_major_axis: float = SEMI_MAJOR_AXIS
    flattening: float = FLATTENING
    earth_rate: float = EARTH_RATE
    gravity_equator: float = GRAVITY_EQUATOR
    gravity_k: float = GRAVITY_K
    free_air_gradient: float = FREE_AIR_GRADIENT

    def __post_init__(self):
        if not 0.0 < self.flattening < 1.0:
            raise ValueError("flattening must lie in (0, 1)")
        if self.earth_rate <= 0.0:
            raise ValueError("earth_rate must be positive")

    @property
    def ecc2(self) -> float:
        return self.flattening * (2.0 - self.flattening)


WGS84 = EllipsoidModel()


def wrap_angle(x):
    """Wrap angles to the half-open interval (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    y = np.where(y == -np.pi, np.pi, y)
    return y if np.ndim(y) else float(y)


@dataclass(frozen=True)
class GeoPosition:
    """Geodetic position.

    Parameters
    ----------
    lon : float
        Longitude [rad]; wrapped to (-pi, pi].
    lat : float
        Geodetic latitude [rad], ``|lat| <= pi/2``.
    height : float
        Ellipsoidal height [m].
    """

    lon: float
    lat: float
    height: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.height):
            raise ValueError("height must be finite")
        if not abs(self.lat) <= np.pi / 2:
            raise ValueError(f"latitude {self.lat!r} outside [-pi/2, pi/2]")
        object.__setattr__(self, "lon", wrap_angle(self.lon))

    def as_array(self) -> np.ndarray:
        return np.array([self.lon, self.lat, self.height])

    @classmethod
    def from_array(cls, p) -> "GeoPosition":
        return cls(float(p[0]), float(p[1]), float(p[2]))

    @classmethod
    def from_degrees(cls, lon_deg: float, lat_deg: float, height: float = 0.0):
        return cls(np.deg2rad(lon_deg), np.deg2rad(lat_deg), height)


def _lat_of(pos):
    if isinstance(pos, GeoPosition):
        return pos.lat, pos.height
    p = np.asarray(pos, dtype=float)
    return p[..., 1], p[..., 2]


def _check_polar(lat):
    if np.any(np.abs(lat) >= np.pi / 2 - POLAR_TOLERANCE):
        raise PolarSingularity("latitude within 1e-6 rad of a pole")


# ---------------------------------------------------------------------------
# compiled kernels (scalar latitude, used inside the integration loops)


@njit(cache=True)
def _radii(lat):
    s = np.sin(lat)
    w = 1.0 - ECC2 * s * s
    rn = SEMI_MAJOR_AXIS * (1.0 - ECC2) / w**1.5
    re = SEMI_MAJOR_AXIS / np.sqrt(w)
    return rn, re


@njit(cache=True)
def _radii_dlat(lat):
    """Derivatives of (R_N, R_E) with respect to latitude."""
    s = np.sin(lat)
    c = np.cos(lat)
    w = 1.0 - ECC2 * s * s
    drn = 3.0 * SEMI_MAJOR_AXIS * (1.0 - ECC2) * ECC2 * s * c / w**2.5
    dre = SEMI_MAJOR_AXIS * ECC2 * s * c / w**1.5
    return drn, dre


@njit(cache=True)
def _position_rate(p, v):
    rn, re = _radii(p[1])
    out = np.empty(3)
    out[0] = v[2] / ((re + p[2]) * np.cos(p[1]))
    out[1] = v[0] / (rn + p[2])
    out[2] = v[1]
    return out


@njit(cache=True)
def _earth_rate(lat):
    out = np.empty(3)
    out[0] = EARTH_RATE * np.cos(lat)
    out[1] = EARTH_RATE * np.sin(lat)
    out[2] = 0.0
    return out


@njit(cache=True)
def _transport_rate(p, v):
    rn, re = _radii(p[1])
    out = np.empty(3)
    out[0] = v[2] / (re + p[2])
    out[1] = v[2] * np.tan(p[1]) / (re + p[2])
    out[2] = -v[0] / (rn + p[2])
    return out


@njit(cache=True)
def _gravity_magnitude(lat, h):
    s2 = np.sin(lat) ** 2
    g0 = GRAVITY_EQUATOR * (1.0 + GRAVITY_K * s2) / np.sqrt(1.0 - ECC2 * s2)
    return g0 - FREE_AIR_GRADIENT * h


@njit(cache=True)
def _gravity_dlat(lat):
    s = np.sin(lat)
    c = np.cos(lat)
    s2 = s * s
    w = 1.0 - ECC2 * s2
    num = 1.0 + GRAVITY_K * s2
    return GRAVITY_EQUATOR * 2.0 * s * c * (GRAVITY_K / np.sqrt(w) + 0.5 * ECC2 * num / w**1.5)


# ---------------------------------------------------------------------------
# public API


def radii_of_curvature(lat):
    """Meridian and transverse radii of curvature.

    Parameters
    ----------
    lat : float or array_like
        Geodetic latitude [rad].

    Returns
    -------
    meridian : float or ndarray
        Meridian radius ``R_N`` [m].
    transverse : float or ndarray
        Transverse (prime-vertical) radius ``R_E`` [m].
    """
    lat = np.asarray(lat, dtype=float)
    if np.any(np.abs(lat) > np.pi / 2):
        raise ValueError("latitude outside [-pi/2, pi/2]")
    w = 1.0 - ECC2 * np.sin(lat) ** 2
    rn = SEMI_MAJOR_AXIS * (1.0 - ECC2) / w**1.5
    re = SEMI_MAJOR_AXIS / np.sqrt(w)
    if rn.ndim == 0:
        return float(rn), float(re)
    return rn, re


def curvature_matrix(pos) -> np.ndarray:
    """Matrix ``R_c`` with ``d(lon, lat, h)/dt = R_c @ v`` for N-U-E velocity.

    Parameters
    ----------
    pos : GeoPosition or array_like, shape (3,)

    Returns
    -------
    ndarray, shape (3, 3)

    Raises
    ------
    PolarSingularity
        If the latitude is within ``1e-6`` rad of a pole.
    """
    lat, h = _lat_of(pos)
    _check_polar(lat)
    rn, re = radii_of_curvature(lat)
    rc = np.zeros((3, 3))
    rc[0, 2] = 1.0 / ((re + h) * np.cos(lat))
    rc[1, 0] = 1.0 / (rn + h)
    rc[2, 1] = 1.0
    return rc


def earth_rate_n(lat) -> np.ndarray:
    """Earth rotation rate resolved in N-U-E, ``Omega * [cos L, sin L, 0]``."""
    lat = np.asarray(lat, dtype=float)
    out = np.zeros(lat.shape + (3,))
    out[..., 0] = EARTH_RATE * np.cos(lat)
    out[..., 1] = EARTH_RATE * np.sin(lat)
    return out


def transport_rate(v, pos) -> np.ndarray:
    """Rotation rate of the local-level frame relative to the Earth.

    Parameters
    ----------
    v : array_like, shape (..., 3)
        N-U-E velocity [m/s].
    pos : GeoPosition or array_like, shape (..., 3)

    Returns
    -------
    ndarray, shape (..., 3)
        ``[vE/(R_E+h), vE tan L/(R_E+h), -vN/(R_N+h)]`` [rad/s].
    """
    v = np.asarray(v, dtype=float)
    lat, h = _lat_of(pos)
    _check_polar(lat)
    rn, re = radii_of_curvature(lat)
    out = np.empty(np.broadcast_shapes(v.shape, np.shape(lat) + (3,)))
    out[..., 0] = v[..., 2] / (re + h)
    out[..., 1] = v[..., 2] * np.tan(lat) / (re + h)
    out[..., 2] = -v[..., 0] / (rn + h)
    return out


def gravity_magnitude(lat, height=0.0):
    """Normal gravity magnitude [m/s^2] at latitude and height."""
    lat = np.asarray(lat, dtype=float)
    s2 = np.sin(lat) ** 2
    g0 = GRAVITY_EQUATOR * (1.0 + GRAVITY_K * s2) / np.sqrt(1.0 - ECC2 * s2)
    g = g0 - FREE_AIR_GRADIENT * np.asarray(height, dtype=float)
    return float(g) if np.ndim(g) == 0 else g


def gravity_n(pos) -> np.ndarray:
    """Gravity vector in N-U-E, ``[0, -g, 0]``."""
    lat, h = _lat_of(pos)
    g = gravity_magnitude(lat, h)
    out = np.zeros(np.shape(g) + (3,))
    out[..., 1] = -g
    return out
