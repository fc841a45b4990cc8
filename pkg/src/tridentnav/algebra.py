"""Quaternion, dual-quaternion and trident-quaternion algebra.

All quaternions are stored scalar-first, ``(w, x, y, z)``. A trident
quaternion ``P + e1*D1 + e2*D2`` with ``e1**2 = e2**2 = e1*e2 = 0`` is stored
as a ``(3, 4)`` array whose rows are ``P``, ``D1`` and ``D2``.

The array-level functions prefixed with ``q_``/``t_``/``d_`` are JIT kernels
used by the hot loops. The classes below wrap them in immutable value types for
interactive use and tests.

Note on ``q_exp``: it maps a 3-vector ``v`` to ``cos|v| + sin|v| v/|v|``, so a
rotation of angle ``theta`` about unit axis ``n`` is ``q_exp(theta/2 * n)``.
Angular rates fed to the kinematic right-hand sides are full rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jit import kernel
from .errors import ContractError, DomainError, NormalizationError

_SMALL_ANGLE = 1e-6
UNIT_TOL = 1e-6


# --------------------------------------------------------------------------
# array kernels
# --------------------------------------------------------------------------


@kernel
def skew(v):
    m = np.zeros((3, 3))
    m[0, 1] = -v[2]
    m[0, 2] = v[1]
    m[1, 0] = v[2]
    m[1, 2] = -v[0]
    m[2, 0] = -v[1]
    m[2, 1] = v[0]
    return m


@kernel
def cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@kernel
def q_mul(p, q):
    """Hamilton product of two ``(4,)`` arrays."""
    out = np.empty(4)
    pw, px, py, pz = p[0], p[1], p[2], p[3]
    qw, qx, qy, qz = q[0], q[1], q[2], q[3]
    out[0] = pw * qw - px * qx - py * qy - pz * qz
    out[1] = pw * qx + px * qw + py * qz - pz * qy
    out[2] = pw * qy - px * qz + py * qw + pz * qx
    out[3] = pw * qz + px * qy - py * qx + pz * qw
    return out


@kernel
def q_conj(q):
    out = np.empty(4)
    out[0] = q[0]
    out[1] = -q[1]
    out[2] = -q[2]
    out[3] = -q[3]
    return out


@kernel
def q_pure(v):
    out = np.empty(4)
    out[0] = 0.0
    out[1] = v[0]
    out[2] = v[1]
    out[3] = v[2]
    return out


@kernel
def q_norm(q):
    return math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


@kernel
def q_normalize(q):
    return q / q_norm(q)


@kernel
def q_inv(q):
    n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]
    return q_conj(q) / n2


@kernel
def q_exp(v):
    """Unit quaternion ``cos|v| + sinc|v| v`` for a 3-vector ``v``."""
    th2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
    th = math.sqrt(th2)
    if th < _SMALL_ANGLE:
        c = 1.0 - th2 / 2.0 + th2 * th2 / 24.0
        s = 1.0 - th2 / 6.0 + th2 * th2 / 120.0
    else:
        c = math.cos(th)
        s = math.sin(th) / th
    out = np.empty(4)
    out[0] = c
    out[1] = s * v[0]
    out[2] = s * v[1]
    out[3] = s * v[2]
    return out


@kernel
def q_log(q):
    """Quaternion logarithm; vector part has norm in ``[0, pi]``."""
    vn2 = q[1] * q[1] + q[2] * q[2] + q[3] * q[3]
    vn = math.sqrt(vn2)
    n = math.sqrt(q[0] * q[0] + vn2)
    out = np.empty(4)
    out[0] = math.log(n)
    if vn == 0.0:
        if q[0] < 0.0:
            out[1] = math.pi
        else:
            out[1] = 0.0
        out[2] = 0.0
        out[3] = 0.0
        return out
    if vn < _SMALL_ANGLE * n and q[0] > 0.0:
        r2 = vn2 / (q[0] * q[0])
        k = (1.0 - r2 / 3.0 + r2 * r2 / 5.0) / q[0]
    else:
        k = math.atan2(vn, q[0]) / vn
    out[1] = k * q[1]
    out[2] = k * q[2]
    out[3] = k * q[3]
    return out


@kernel
def q_rotmat(q):
    """Rotation matrix ``I + 2 q0 [q]x + 2 [q]x^2`` of a unit quaternion."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    m = np.empty((3, 3))
    m[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[0, 1] = 2.0 * (x * y - w * z)
    m[0, 2] = 2.0 * (x * z + w * y)
    m[1, 0] = 2.0 * (x * y + w * z)
    m[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[1, 2] = 2.0 * (y * z - w * x)
    m[2, 0] = 2.0 * (x * z - w * y)
    m[2, 1] = 2.0 * (y * z + w * x)
    m[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


@kernel
def q_rotate(q, v):
    """Vector part of ``q . (0, v) . q*``."""
    return q_mul(q_mul(q, q_pure(v)), q_conj(q))[1:]


@kernel
def t_mul(a, b):
    out = np.empty((3, 4))
    out[0] = q_mul(a[0], b[0])
    out[1] = q_mul(a[0], b[1]) + q_mul(a[1], b[0])
    out[2] = q_mul(a[0], b[2]) + q_mul(a[2], b[0])
    return out


@kernel
def t_conj(a):
    out = np.empty((3, 4))
    out[0] = q_conj(a[0])
    out[1] = q_conj(a[1])
    out[2] = q_conj(a[2])
    return out


@kernel
def t_from_nav(q, v, p):
    out = np.empty((3, 4))
    out[0] = q
    out[1] = 0.5 * q_mul(q_pure(v), q)
    out[2] = 0.5 * q_mul(q_pure(p), q)
    return out


@kernel
def _two_prod(a, b):
    # Dekker split product: a*b == p + e exactly
    p = a * b
    c = 134217729.0 * a
    ah = c - (c - a)
    al = a - ah
    c = 134217729.0 * b
    bh = c - (c - b)
    bl = b - bh
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


@kernel
def _dot4_dd(s0, a0, b0, s1, a1, b1, s2, a2, b2, s3, a3, b3):
    """Compensated ``sum(s_i a_i b_i)`` as an unevaluated pair ``hi + lo``."""
    p, lo = _two_prod(s0 * a0, b0)
    for x, y in ((s1 * a1, b1), (s2 * a2, b2), (s3 * a3, b3)):
        h, r = _two_prod(x, y)
        t = p + h
        z = t - p
        lo += (p - (t - z)) + (h - z) + r
        p = t
    hi = p + lo
    return hi, lo - (hi - p)


@kernel
def _q_mul_conj_dd(p, q):
    """``p q*`` with each component as a double-double pair ``(hi, lo)``."""
    pw, px, py, pz = p[0], p[1], p[2], p[3]
    qw, qx, qy, qz = q[0], -q[1], -q[2], -q[3]
    out = np.empty((4, 2))
    out[0] = _dot4_dd(1.0, pw, qw, -1.0, px, qx, -1.0, py, qy, -1.0, pz, qz)
    out[1] = _dot4_dd(1.0, pw, qx, 1.0, px, qw, 1.0, py, qz, -1.0, pz, qy)
    out[2] = _dot4_dd(1.0, pw, qy, -1.0, px, qz, 1.0, py, qw, 1.0, pz, qx)
    out[3] = _dot4_dd(1.0, pw, qz, 1.0, px, qy, -1.0, py, qx, 1.0, pz, qw)
    return out


@kernel
def _dd_div(ah, al, bh, bl):
    x = ah / bh
    ph, pe = _two_prod(x, bh)
    r = ((ah - ph) - pe + al - x * bl) / bh
    return x + r


@kernel
def t_dual_vector(t, i):
    """Vector ``2 D_i P^-1`` for slot ``i``, real part included, rounded once.

    A plain evaluation is biased: its value sits within an ulp of the
    embedded vector, and ``|P|^2`` straddles 1.0 where double spacing is
    asymmetric, so a few roundings in a row push the result outward on
    average. Working in double-double keeps the error symmetric.
    """
    nh, nl = _dot4_dd(
        1.0, t[0, 0], t[0, 0], 1.0, t[0, 1], t[0, 1],
        1.0, t[0, 2], t[0, 2], 1.0, t[0, 3], t[0, 3],
    )
    m = _q_mul_conj_dd(t[i], t[0])
    out = np.empty(4)
    for k in range(4):
        out[k] = 2.0 * _dd_div(m[k, 0], m[k, 1], nh, nl)
    return out


@kernel
def t_extract_fast(t):
    pinv = q_inv(t[0])
    v = 2.0 * q_mul(t[1], pinv)
    p = 2.0 * q_mul(t[2], pinv)
    return t[0].copy(), v[1:].copy(), p[1:].copy()


@kernel
def t_extract(t):
    """Return ``(q, v, p)`` with ``v = 2 D1 P^-1`` and ``p = 2 D2 P^-1``.

    On unit tridents ``P^-1 = P*``; using the inverse keeps the map exact for
    the non-unit intermediate stages of an integrator.
    """
    v = t_dual_vector(t, 1)
    p = t_dual_vector(t, 2)
    return t[0].copy(), v[1:].copy(), p[1:].copy()


@kernel
def t_normalize(t):
    """Rescale to a unit principal part and zero the real parts of 2 D_i P*."""
    n = q_norm(t[0])
    out = np.empty((3, 4))
    out[0] = t[0] / n
    # extract against the unscaled P and re-embed with P/|P|, so rounding in
    # |P/|P||^2 never rescales the ECEF vectors
    for i in range(1, 3):
        u = t_dual_vector(t, i)
        u[0] = 0.0
        out[i] = 0.5 * q_mul(u, out[0])
    return out


@kernel
def d_ode_rhs(dq, w, v):
    """Derivative of a dual quaternion ``(2, 4)`` under body rate ``w`` and velocity ``v``."""
    out = np.empty((2, 4))
    wq = q_pure(w)
    out[0] = 0.5 * q_mul(dq[0], wq)
    out[1] = 0.5 * (q_mul(dq[1], wq) + q_mul(q_pure(v), dq[0]))
    return out


@kernel
def t_ode_rhs(t, w, a, v):
    """Derivative of a trident under body rate ``w``, acceleration ``a`` and velocity ``v``."""
    out = np.empty((3, 4))
    wq = q_pure(w)
    out[0] = 0.5 * q_mul(t[0], wq)
    out[1] = 0.5 * (q_mul(t[1], wq) + q_mul(q_pure(a), t[0]))
    out[2] = 0.5 * (q_mul(t[2], wq) + q_mul(q_pure(v), t[0]))
    return out


# --------------------------------------------------------------------------
# value types
# --------------------------------------------------------------------------


def _vec3(x):
    a = np.asarray(x, dtype=float).reshape(3).copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Quaternion:
    """Quaternion ``w + xyz`` with scalar part ``w`` and vector part ``xyz``."""

    w: float
    xyz: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "xyz", _vec3(self.xyz))

    @classmethod
    def from_array(cls, a) -> Quaternion:
        a = np.asarray(a, dtype=float)
        return cls(a[0], a[1:4])

    @classmethod
    def identity(cls) -> Quaternion:
        return cls(1.0, np.zeros(3))

    @classmethod
    def pure(cls, v) -> Quaternion:
        return cls(0.0, v)

    @property
    def array(self) -> np.ndarray:
        return np.array([self.w, *self.xyz])

    def __mul__(self, other):
        if isinstance(other, Quaternion):
            return quat_mul(self, other)
        return Quaternion(self.w * other, self.xyz * other)

    __rmul__ = __mul__

    def __add__(self, other: Quaternion) -> Quaternion:
        return Quaternion(self.w + other.w, self.xyz + other.xyz)

    def __sub__(self, other: Quaternion) -> Quaternion:
        return Quaternion(self.w - other.w, self.xyz - other.xyz)

    def __neg__(self) -> Quaternion:
        return Quaternion(-self.w, -self.xyz)

    def conj(self) -> Quaternion:
        return quat_conj(self)

    def norm(self) -> float:
        return quat_norm(self)

    def allclose(self, other: Quaternion, atol=1e-12) -> bool:
        return bool(np.allclose(self.array, other.array, rtol=0.0, atol=atol))

    def __repr__(self):
        return f"Quaternion({self.w!r}, {self.xyz.tolist()!r})"


def quat_mul(p: Quaternion, q: Quaternion) -> Quaternion:
    return Quaternion.from_array(q_mul(p.array, q.array))


def quat_conj(q: Quaternion) -> Quaternion:
    return Quaternion(q.w, -q.xyz)


def quat_norm(q: Quaternion) -> float:
    return math.sqrt(q.w * q.w + float(q.xyz @ q.xyz))


def quat_inv(q: Quaternion) -> Quaternion:
    n2 = q.w * q.w + float(q.xyz @ q.xyz)
    if n2 == 0.0:
        raise DomainError("zero quaternion has no inverse")
    return Quaternion(q.w / n2, -q.xyz / n2)


def quat_normalize(q: Quaternion) -> Quaternion:
    n = quat_norm(q)
    if n == 0.0:
        raise DomainError("zero quaternion cannot be normalized")
    return Quaternion(q.w / n, q.xyz / n)


def quat_exp(v) -> Quaternion:
    return Quaternion.from_array(q_exp(np.asarray(v, dtype=float)))


def quat_log(q: Quaternion) -> Quaternion:
    if quat_norm(q) == 0.0:
        raise DomainError("logarithm of the zero quaternion is undefined")
    return Quaternion.from_array(q_log(q.array))


def _require_unit(q: Quaternion, what="quaternion"):
    if abs(quat_norm(q) - 1.0) > UNIT_TOL:
        raise ContractError(f"{what} must be unit, got norm {quat_norm(q):.3g}")


def quat_to_rotmat(q: Quaternion) -> np.ndarray:
    _require_unit(q)
    return q_rotmat(q.array)


def quat_adjoint(q: Quaternion, v: Quaternion) -> Quaternion:
    """``q . v . q*`` for a unit ``q`` and pure-imaginary ``v``."""
    _require_unit(q)
    if abs(v.w) > 1e-12 * max(1.0, quat_norm(v)):
        raise ContractError("adjoint action requires a pure-imaginary argument")
    out = q_mul(q_mul(q.array, v.array), q_conj(q.array))
    out[0] = 0.0
    return Quaternion.from_array(out)


@dataclass(frozen=True, eq=False)
class DualQuaternion:
    """``p + e*d`` with ``e**2 = 0``; unit ones encode a pose."""

    p: Quaternion
    d: Quaternion

    @property
    def array(self) -> np.ndarray:
        return np.stack([self.p.array, self.d.array])

    @classmethod
    def from_array(cls, a) -> DualQuaternion:
        return cls(Quaternion.from_array(a[0]), Quaternion.from_array(a[1]))

    @classmethod
    def identity(cls) -> DualQuaternion:
        return cls(Quaternion.identity(), Quaternion(0.0, np.zeros(3)))

    @classmethod
    def from_pose(cls, q: Quaternion, p) -> DualQuaternion:
        _require_unit(q, "rotation")
        return cls(q, 0.5 * quat_mul(Quaternion.pure(p), q))

    def __mul__(self, other: DualQuaternion) -> DualQuaternion:
        return dq_mul(self, other)

    def conj(self) -> DualQuaternion:
        return DualQuaternion(self.p.conj(), self.d.conj())

    def pose(self):
        """Return ``(q, p)`` with ``p = 2 D P*``."""
        t = quat_mul(2.0 * self.d, self.p.conj())
        return self.p, t.xyz.copy()


def dq_mul(a: DualQuaternion, b: DualQuaternion) -> DualQuaternion:
    return DualQuaternion(a.p * b.p, a.p * b.d + a.d * b.p)


def dq_ode_rhs(dq: DualQuaternion, w, v) -> DualQuaternion:
    """Time derivative of a unit dual quaternion.

    ``w`` is the angular rate in the moving frame and ``v`` the linear velocity
    in the reference frame.
    """
    return DualQuaternion.from_array(
        d_ode_rhs(dq.array, np.asarray(w, float), np.asarray(v, float))
    )


@dataclass(frozen=True, eq=False)
class TridentQuaternion:
    """``p + e1*d1 + e2*d2`` with ``e1**2 = e2**2 = e1*e2 = 0``."""

    p: Quaternion
    d1: Quaternion
    d2: Quaternion

    @property
    def array(self) -> np.ndarray:
        return np.stack([self.p.array, self.d1.array, self.d2.array])

    @classmethod
    def from_array(cls, a) -> TridentQuaternion:
        a = np.asarray(a, dtype=float)
        return cls(*(Quaternion.from_array(row) for row in a))

    @classmethod
    def identity(cls) -> TridentQuaternion:
        z = Quaternion(0.0, np.zeros(3))
        return cls(Quaternion.identity(), z, z)

    def __mul__(self, other: TridentQuaternion) -> TridentQuaternion:
        return tq_mul(self, other)

    def conj(self) -> TridentQuaternion:
        return TridentQuaternion(self.p.conj(), self.d1.conj(), self.d2.conj())

    def allclose(self, other: TridentQuaternion, atol=1e-12) -> bool:
        return bool(np.allclose(self.array, other.array, rtol=0.0, atol=atol))

    def is_unit(self, tol=1e-9) -> bool:
        a = self.array
        if abs(q_norm(a[0]) - 1.0) > tol:
            return False
        pc = q_conj(a[0])
        for i in (1, 2):
            u = 2.0 * q_mul(a[i], pc)
            if abs(u[0]) > tol * max(1.0, float(np.linalg.norm(u[1:]))):
                return False
        return True


@dataclass(frozen=True, eq=False)
class TridentRate:
    """Trident quaternion vector: three pure-imaginary slots."""

    w: Quaternion
    a1: Quaternion
    a2: Quaternion

    def __post_init__(self):
        for name in ("w", "a1", "a2"):
            q = getattr(self, name)
            if q.w != 0.0:
                object.__setattr__(self, name, Quaternion(0.0, q.xyz))

    @classmethod
    def from_vectors(cls, w, a1, a2) -> TridentRate:
        return cls(Quaternion.pure(w), Quaternion.pure(a1), Quaternion.pure(a2))

    def as_trident(self) -> TridentQuaternion:
        return TridentQuaternion(self.w, self.a1, self.a2)


def tq_mul(a: TridentQuaternion, b: TridentQuaternion) -> TridentQuaternion:
    return TridentQuaternion.from_array(t_mul(a.array, b.array))


def tq_from_nav(q: Quaternion, v, p) -> TridentQuaternion:
    _require_unit(q, "attitude")
    return TridentQuaternion.from_array(
        t_from_nav(q.array, np.asarray(v, float), np.asarray(p, float))
    )


def tq_extract(tq: TridentQuaternion):
    """Recover ``(q, v, p)`` from a unit trident quaternion."""
    if not tq.is_unit():
        raise NormalizationError("trident quaternion violates the unit invariants")
    _, v, p = t_extract(tq.array)
    return tq.p, v, p


def tq_normalize(tq: TridentQuaternion) -> TridentQuaternion:
    if quat_norm(tq.p) == 0.0:
        raise NormalizationError("trident principal part is zero")
    return TridentQuaternion.from_array(t_normalize(tq.array))


def tq_ode_rhs(tq: TridentQuaternion, w, a, v) -> TridentQuaternion:
    """Time derivative of a trident quaternion.

    ``w`` is the body angular rate; ``a`` and ``v`` are acceleration and
    velocity in the reference frame.
    """
    return TridentQuaternion.from_array(
        t_ode_rhs(tq.array, np.asarray(w, float), np.asarray(a, float), np.asarray(v, float))
    )
