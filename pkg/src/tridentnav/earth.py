"""Earth constants, gravity model with its Jacobian, and geodetic conversions.

Gravity kernels take the packed constant vector ``EarthModel.as_array()``:
``[mu, omega_ie, a, f, j2]`` where ``j2`` is zero when the oblateness term is
disabled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jit import kernel
from .algebra import cross
from .errors import ConfigError, DomainError

MIN_RADIUS = 1.0e6

WGS84_MU = 3.986004418e14
WGS84_OMEGA_IE = 7.292115e-5
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_J2 = 1.08262982131e-3


@dataclass(frozen=True)
class EarthModel:
    mu: float = WGS84_MU
    omega_ie: float = WGS84_OMEGA_IE
    a: float = WGS84_A
    f: float = WGS84_F
    j2: float = WGS84_J2
    use_j2: bool = False

    def __post_init__(self):
        # mu = 0 or omega_ie = 0 switch the field or the spin off
        for name in ("mu", "omega_ie", "f", "j2"):
            if not getattr(self, name) >= 0.0:
                raise ConfigError(f"earth constant {name} must be nonnegative")
        if not self.a > 0.0:
            raise ConfigError("earth constant a must be strictly positive")
        if not self.f < 1.0:
            raise ConfigError("flattening must be below 1")

    @property
    def b(self) -> float:
        return self.a * (1.0 - self.f)

    @property
    def e2(self) -> float:
        return self.f * (2.0 - self.f)

    @property
    def omega_vec(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.omega_ie])

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.mu, self.omega_ie, self.a, self.f, self.j2 if self.use_j2 else 0.0]
        )


WGS84 = EarthModel()


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


@kernel
def k_gravitation(p, earth):
    mu, a, j2 = earth[0], earth[2], earth[4]
    if mu == 0.0:
        return np.zeros(3)
    r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2]
    r = math.sqrt(r2)
    g = -mu / (r2 * r) * p
    if j2 != 0.0:
        k = 1.5 * mu * j2 * a * a
        r5 = r2 * r2 * r
        z2r2 = p[2] * p[2] / r2
        ca = (1.0 - 5.0 * z2r2) / r5
        cz = (3.0 - 5.0 * z2r2) / r5
        g[0] -= k * p[0] * ca
        g[1] -= k * p[1] * ca
        g[2] -= k * p[2] * cz
    return g


@kernel
def k_centripetal(p, earth):
    """``-(w x (w x p))`` for the Earth rate along +z."""
    w2 = earth[1] * earth[1]
    out = np.zeros(3)
    out[0] = w2 * p[0]
    out[1] = w2 * p[1]
    return out


@kernel
def k_effective_gravity(p, earth):
    return k_gravitation(p, earth) + k_centripetal(p, earth)


@kernel
def k_gravitation_jacobian(p, earth):
    mu, a, j2 = earth[0], earth[2], earth[4]
    if mu == 0.0:
        return np.zeros((3, 3))
    r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2]
    r = math.sqrt(r2)
    r3 = r2 * r
    jac = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            jac[i, j] = 3.0 * mu * p[i] * p[j] / (r3 * r2)
        jac[i, i] -= mu / r3
    if j2 != 0.0:
        k = 1.5 * mu * j2 * a * a
        z = p[2]
        r5 = r3 * r2
        r7 = r5 * r2
        r9 = r7 * r2
        ca = 1.0 / r5 - 5.0 * z * z / r7
        cz = 3.0 / r5 - 5.0 * z * z / r7
        for j in range(3):
            dz = 1.0 if j == 2 else 0.0
            dca = -5.0 * p[j] / r7 + 35.0 * z * z * p[j] / r9 - 10.0 * z * dz / r7
            dcz = -15.0 * p[j] / r7 + 35.0 * z * z * p[j] / r9 - 10.0 * z * dz / r7
            for i in range(2):
                di = 1.0 if i == j else 0.0
                jac[i, j] -= k * (di * ca + p[i] * dca)
            jac[2, j] -= k * (dz * cz + z * dcz)
    return jac


@kernel
def k_gravity_jacobian(p, earth):
    jac = k_gravitation_jacobian(p, earth)
    w2 = earth[1] * earth[1]
    jac[0, 0] += w2
    jac[1, 1] += w2
    return jac


@kernel
def k_earth_rate(earth):
    out = np.zeros(3)
    out[2] = earth[1]
    return out


@kernel
def k_coriolis(v, earth):
    return 2.0 * cross(k_earth_rate(earth), v)


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------


def _checked_position(p_e) -> np.ndarray:
    p = np.asarray(p_e, dtype=float).reshape(3)
    if not np.linalg.norm(p) > MIN_RADIUS:
        raise DomainError("position too close to geocenter")
    return p


def gravitation(p_e, earth: EarthModel = WGS84) -> np.ndarray:
    """Mass attraction at ECEF position ``p_e`` (m/s^2)."""
    return k_gravitation(_checked_position(p_e), earth.as_array())


def effective_gravity(p_e, earth: EarthModel = WGS84) -> np.ndarray:
    """Gravitation minus the centripetal term of the rotating frame."""
    return k_effective_gravity(_checked_position(p_e), earth.as_array())


def gravity_jacobian(p_e, earth: EarthModel = WGS84) -> np.ndarray:
    """Analytic Jacobian of :func:`effective_gravity` (1/s^2)."""
    return k_gravity_jacobian(_checked_position(p_e), earth.as_array())


def gravitation_jacobian(p_e, earth: EarthModel = WGS84) -> np.ndarray:
    return k_gravitation_jacobian(_checked_position(p_e), earth.as_array())


@dataclass(frozen=True)
class GeodeticCoord:
    lat: float
    lon: float
    h: float = 0.0

    def __post_init__(self):
        if abs(self.lat) > math.pi / 2 + 1e-15:
            raise DomainError(f"latitude {self.lat} outside [-pi/2, pi/2]")
        if not -math.pi <= self.lon <= math.pi:
            raise DomainError(f"longitude {self.lon} outside (-pi, pi]")

    @classmethod
    def from_degrees(cls, lat_deg, lon_deg, h=0.0) -> GeodeticCoord:
        return cls(math.radians(lat_deg), math.radians(lon_deg), float(h))


def geodetic_to_ecef(g: GeodeticCoord, earth: EarthModel = WGS84) -> np.ndarray:
    sl, cl = math.sin(g.lat), math.cos(g.lat)
    n = earth.a / math.sqrt(1.0 - earth.e2 * sl * sl)
    return np.array(
        [
            (n + g.h) * cl * math.cos(g.lon),
            (n + g.h) * cl * math.sin(g.lon),
            (n * (1.0 - earth.e2) + g.h) * sl,
        ]
    )


def ecef_to_geodetic(p_e, earth: EarthModel = WGS84) -> GeodeticCoord:
    x, y, z = (float(c) for c in np.asarray(p_e, dtype=float).reshape(3))
    e2 = earth.e2
    lon = math.atan2(y, x)
    rho = math.hypot(x, y)
    lat = math.atan2(z, rho * (1.0 - e2))
    # fixed-point iteration contracts by ~e2 per pass
    for _ in range(12):
        sl = math.sin(lat)
        n = earth.a / math.sqrt(1.0 - e2 * sl * sl)
        lat_new = math.atan2(z + e2 * n * sl, rho)
        if lat_new == lat:
            break
        lat = lat_new
    sl, cl = math.sin(lat), math.cos(lat)
    h = rho * cl + z * sl - earth.a * math.sqrt(1.0 - e2 * sl * sl)
    if lon == -math.pi:
        lon = math.pi
    return GeodeticCoord(lat, lon, h)


def enu_to_ecef_matrix(lat: float, lon: float) -> np.ndarray:
    """Columns are the east, north and up directions in ECEF."""
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array(
        [
            [-so, -sl * co, cl * co],
            [co, -sl * so, cl * so],
            [0.0, cl, sl],
        ]
    )


def level_frame_matrix(p_e, earth: EarthModel = WGS84) -> np.ndarray:
    """Local frame with ``up`` along minus effective gravity.

    Columns are east, north and up in ECEF; east is horizontal to the plumb
    line and normal to the spin axis. This is the frame in which leveling and
    yaw are defined.
    """
    up = -effective_gravity(p_e, earth)
    up /= np.linalg.norm(up)
    east = np.cross([0.0, 0.0, 1.0], up)
    ne = np.linalg.norm(east)
    if ne < 1e-12:
        east = np.array([0.0, 1.0, 0.0])
    else:
        east /= ne
    north = np.cross(up, east)
    return np.column_stack([east, north, up])


@kernel
def k_effective_gravity_rows(P, earth):
    """Row-wise :func:`k_effective_gravity` for an ``(N, 3)`` array."""
    out = np.empty_like(P)
    for i in range(P.shape[0]):
        out[i] = k_effective_gravity(P[i], earth)
    return out
