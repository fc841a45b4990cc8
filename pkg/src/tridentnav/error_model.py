"""Left-handed trident error-state model and its discretization.

The 15-slot error vector is ``(ds, ds1, ds2, db_w, db_f)``:

* ``ds``  body-frame attitude error, true ``q = q_est . exp(ds/2)``;
* ``ds1 = -C_e^b (v - v_est)`` and ``ds2 = -C_e^b (p - p_est)``, ECEF
  velocity/position errors resolved in estimated body axes;
* ``db_w = b_w - b_w_est`` and ``db_f = b_f_est - b_f``.

These are the signs under which ``F_L``, ``B_L`` and ``H_L`` take their
textbook block layout with ``dq_L = q_est* . q`` (see ``docs/`` and the ekf
feedback helper for the corresponding correction).

``left_error_dynamics`` evaluates the exact nonlinear error rates. It exists
to check ``F_L`` by finite differences and is not used by the filter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jit import kernel
from .algebra import cross, q_conj, q_exp, q_log, q_mul, q_rotmat, skew
from .earth import WGS84, EarthModel, k_gravity_jacobian
from .errors import ContractError
from .mechanization import NavState

N_ERR = 15
N_NOISE = 12

ATT, VEL, POS, BW, BF = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15))


@dataclass(frozen=True)
class NoiseParams:
    """IMU noise densities, bias drives and GPS standard deviations.

    Parameters
    ----------
    sigma_w, sigma_f : float
        Gyro (rad/s/sqrt(Hz)) and accelerometer (m/s^2/sqrt(Hz)) white noise.
    sigma_bw, sigma_bf : float
        Bias random-walk drives (rad/s^2/sqrt(Hz), m/s^3/sqrt(Hz)).
    r_p, r_v : float
        GPS position (m) and velocity (m/s) standard deviation per axis.
    """

    sigma_w: float = 8.7e-4
    sigma_f: float = 2.3e-3
    sigma_bw: float = 1.0e-5
    sigma_bf: float = 1.0e-4
    r_p: float = 2.0
    r_v: float = 0.2

    def __post_init__(self):
        for name in ("sigma_w", "sigma_f", "sigma_bw", "sigma_bf", "r_p", "r_v"):
            val = float(getattr(self, name))
            if not (val >= 0.0 and math.isfinite(val)):
                raise ContractError(f"noise parameter {name} must be finite and nonnegative")
            object.__setattr__(self, name, val)

    def continuous_q(self) -> np.ndarray:
        """Diagonal ``Q_c`` (12x12) of ``w = (xi_w, xi_f, xi_bw, xi_bf)``."""
        d = np.repeat([self.sigma_w, self.sigma_f, self.sigma_bw, self.sigma_bf], 3) ** 2
        return np.diag(d)

    def imu_array(self) -> np.ndarray:
        return np.array([self.sigma_w, self.sigma_f, self.sigma_bw, self.sigma_bf])


@dataclass(frozen=True, eq=False)
class ErrorState:
    dsigma: np.ndarray
    dsigma1: np.ndarray
    dsigma2: np.ndarray
    db_w: np.ndarray
    db_f: np.ndarray

    def __post_init__(self):
        for name in ("dsigma", "dsigma1", "dsigma2", "db_w", "db_f"):
            a = np.asarray(getattr(self, name), dtype=float).reshape(3).copy()
            if not np.all(np.isfinite(a)):
                raise ContractError(f"error slot {name} is not finite")
            object.__setattr__(self, name, a)

    @classmethod
    def zero(cls) -> ErrorState:
        return cls.from_array(np.zeros(N_ERR))

    @classmethod
    def from_array(cls, x) -> ErrorState:
        x = np.asarray(x, dtype=float).reshape(N_ERR)
        return cls(x[ATT], x[VEL], x[POS], x[BW], x[BF])

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.dsigma, self.dsigma1, self.dsigma2, self.db_w, self.db_f])


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


@kernel
def k_build_F(q, w, f, p, earth):
    """``F_L`` at attitude ``q`` (body->ECEF), corrected rates and position ``p``."""
    C_eb = q_rotmat(q).T
    wie = np.zeros(3)
    wie[2] = earth[1]
    wie_b = C_eb @ wie
    F = np.zeros((15, 15))
    F[0:3, 0:3] = -skew(w)
    F[3:6, 0:3] = skew(f)
    F[3:6, 3:6] = -skew(w + wie_b)
    F[3:6, 6:9] = C_eb @ k_gravity_jacobian(p, earth) @ C_eb.T
    F[6:9, 3:6] = np.eye(3)
    F[6:9, 6:9] = -skew(w - wie_b)
    F[0:3, 9:12] = -np.eye(3)
    F[3:6, 12:15] = -np.eye(3)
    return F


@kernel
def k_build_H(q):
    C_be = q_rotmat(q)
    H = np.zeros((6, 15))
    H[0:3, 6:9] = -C_be
    H[3:6, 3:6] = -C_be
    return H


@kernel
def k_discretize_diag(F, qdiag, dt):
    """``(Phi, Q_d)`` for a diagonal ``B Q_c B^T`` given as ``qdiag`` (15,)."""
    n = F.shape[0]
    Fd = F * dt
    Phi = np.eye(n) + Fd + 0.5 * (Fd @ Fd)
    # Phi diag(q) Phi^T without forming diag(q)
    PhiQ = Phi * qdiag
    Qd = 0.5 * dt * (PhiQ @ Phi.T)
    for i in range(n):
        Qd[i, i] += 0.5 * dt * qdiag[i]
    Qd = 0.5 * (Qd + Qd.T)
    return Phi, Qd


@kernel
def k_noise_diag(noise):
    """Diagonal of ``B_L Q_c B_L^T`` from ``[sigma_w, sigma_f, sigma_bw, sigma_bf]``."""
    d = np.zeros(15)
    for i in range(3):
        d[i] = noise[0] * noise[0]
        d[3 + i] = noise[1] * noise[1]
        d[9 + i] = noise[2] * noise[2]
        d[12 + i] = noise[3] * noise[3]
    return d


@kernel
def _central_gravity_difference(p, r, mu):
    """``g(p + r) - g(p)`` for ``g = -mu p / |p|^3`` without cancellation."""
    b2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2]
    a2 = (p[0] + r[0]) ** 2 + (p[1] + r[1]) ** 2 + (p[2] + r[2]) ** 2
    a = math.sqrt(a2)
    b = math.sqrt(b2)
    pr = p[0] * r[0] + p[1] * r[1] + p[2] * r[2]
    rr = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
    a_minus_b = (2.0 * pr + rr) / (a + b)
    inv3_diff = -a_minus_b * (a2 + a * b + b2) / (a2 * a * b2 * b)
    return -mu * (r / (a2 * a) + p * inv3_diff)


@kernel
def _jr_inv(phi):
    """Inverse right Jacobian of SO(3) at rotation vector ``phi``."""
    th2 = phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]
    th = math.sqrt(th2)
    S = skew(phi)
    if th < 1e-4:
        c = 1.0 / 12.0 + th2 / 720.0
    else:
        c = 1.0 / th2 - (1.0 + math.cos(th)) / (2.0 * th * math.sin(th))
    return np.eye(3) + 0.5 * S + c * (S @ S)


@kernel
def k_left_error_dynamics(q, p, w, f, dx, earth):
    """Exact rates of the left error ``dx`` around an estimate.

    ``q``, ``p`` are the estimated attitude and position, ``w``, ``f`` the
    estimated (bias-corrected) rates. Noise is zero. The gravity difference
    is the central term plus the linear centripetal term; an enabled J2 term
    is ignored here.
    """
    C_be = q_rotmat(q)
    C_eb = C_be.T
    wie = np.zeros(3)
    wie[2] = earth[1]
    wie_b = C_eb @ wie
    phi = dx[0:3]
    ds1 = dx[3:6]
    ds2 = dx[6:9]
    R = q_rotmat(q_exp(0.5 * phi))
    w_true = w - dx[9:12]
    f_true = f + dx[12:15]
    out = np.zeros(15)
    out[0:3] = _jr_inv(phi) @ (w_true - R.T @ w)
    r = -(C_be @ ds2)
    dg = _central_gravity_difference(p, r, earth[0])
    w2 = earth[1] * earth[1]
    dg[0] += w2 * r[0]
    dg[1] += w2 * r[1]
    out[3:6] = -cross(w + wie_b, ds1) - (R @ f_true - f) - C_eb @ dg
    out[6:9] = -cross(w - wie_b, ds2) + ds1
    return out


@kernel
def k_left_error(q_est, v_est, p_est, bw_est, bf_est, q, v, p, bw, bf):
    """Left error of the true state ``(q, v, p, bw, bf)`` about an estimate."""
    C_eb = q_rotmat(q_est).T
    dq = q_mul(q_conj(q_est), q)
    if dq[0] < 0.0:
        dq = -dq
    out = np.empty(15)
    out[0:3] = 2.0 * q_log(dq)[1:]
    out[3:6] = -(C_eb @ (v - v_est))
    out[6:9] = -(C_eb @ (p - p_est))
    out[9:12] = bw - bw_est
    out[12:15] = bf_est - bf
    return out


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------


def build_F_L(state: NavState, w, f, earth: EarthModel = WGS84) -> np.ndarray:
    """Continuous-time error dynamics matrix (15x15).

    Parameters
    ----------
    state : NavState
        Estimated navigation state (attitude and position are used).
    w, f : array_like
        Bias-corrected angular rate (rad/s) and specific force (m/s^2).
    """
    return k_build_F(
        state.q_be.array,
        np.asarray(w, float).reshape(3),
        np.asarray(f, float).reshape(3),
        state.p_e,
        earth.as_array(),
    )


def build_B_L() -> np.ndarray:
    """Noise input matrix (15x12) for ``w = (xi_w, xi_f, xi_bw, xi_bf)``."""
    B = np.zeros((N_ERR, N_NOISE))
    B[0:3, 0:3] = -np.eye(3)
    B[3:6, 3:6] = -np.eye(3)
    B[9:12, 6:9] = np.eye(3)
    B[12:15, 9:12] = np.eye(3)
    return B


def build_H_L(state: NavState) -> np.ndarray:
    """Measurement matrix (6x15) for stacked GPS ``(position, velocity)``."""
    return k_build_H(state.q_be.array)


def build_J_L(state: NavState) -> np.ndarray:
    """Orthogonal map from the ECEF error ``(phi^e, dv, dp, db_w, db_f)`` to ``dx_L``.

    Here ``dv = v - v_est`` and ``dp = p - p_est``; velocity precedes position
    so the map stays block diagonal, matching the ``dx_L`` slot order.
    """
    C_eb = state.C_be.T
    J = np.eye(N_ERR)
    J[ATT, ATT] = C_eb
    J[VEL, VEL] = -C_eb
    J[POS, POS] = -C_eb
    return J


def _check_psd(Q, name, tol=1e-12):
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ContractError(f"{name} must be square")
    if not np.all(np.isfinite(Q)):
        raise ContractError(f"{name} is not finite")
    scale = max(1.0, float(np.max(np.abs(Q))))
    if np.max(np.abs(Q - Q.T)) > tol * scale:
        raise ContractError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(Q).min() < -tol * scale:
        raise ContractError(f"{name} is not positive semidefinite")
    return Q


def discretize(F, B, Q_c, dt):
    """Second-order transition matrix and trapezoidal process noise.

    ``Phi = I + F dt + (F dt)^2 / 2`` and
    ``Q_d = (Phi Q Phi^T + Q) dt / 2`` with ``Q = B Q_c B^T``.

    Raises
    ------
    ContractError
        If ``dt`` is outside ``(0, 1]`` or ``Q_c`` is not symmetric PSD.
    """
    if not 0.0 < dt <= 1.0:
        raise ContractError(f"dt must lie in (0, 1] s, got {dt}")
    F = np.asarray(F, dtype=float)
    B = np.asarray(B, dtype=float)
    Q_c = _check_psd(Q_c, "Q_c")
    n = F.shape[0]
    Fd = F * dt
    Phi = np.eye(n) + Fd + 0.5 * Fd @ Fd
    Q = B @ Q_c @ B.T
    Qd = 0.5 * (Phi @ Q @ Phi.T + Q) * dt
    return Phi, 0.5 * (Qd + Qd.T)


def left_error_dynamics(state: NavState, w, f, dx, earth: EarthModel = WGS84) -> np.ndarray:
    """Nonlinear ``d(dx_L)/dt`` about ``state``; see module notes."""
    return k_left_error_dynamics(
        state.q_be.array, state.p_e,
        np.asarray(w, float).reshape(3), np.asarray(f, float).reshape(3),
        np.asarray(dx, float).reshape(N_ERR), earth.as_array(),
    )


def left_error(estimate: NavState, truth: NavState) -> np.ndarray:
    """``dx_L`` (15,) of ``truth`` relative to ``estimate``."""
    return k_left_error(
        estimate.q_be.array, estimate.v_e, estimate.p_e, estimate.b_w, estimate.b_f,
        truth.q_be.array, truth.v_e, truth.p_e, truth.b_w, truth.b_f,
    )
