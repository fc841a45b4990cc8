"""Closed-loop error-state EKF for loosely coupled INS/GPS.

The covariance lives in the left trident error coordinates of
:mod:`tridentnav.error_model`. After each GPS update the estimated error is
fed back into the navigation state and reset to zero, so ``P`` carries all of
the uncertainty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from ._jit import kernel
from .algebra import Quaternion, q_mul, q_normalize, q_rotmat
from .earth import WGS84, EarthModel, level_frame_matrix
from .error_model import (
    N_ERR,
    ErrorState,
    NoiseParams,
    k_build_F,
    k_build_H,
    k_discretize_diag,
    k_noise_diag,
)
from .errors import DivergenceError, InitializationError, NumericalHealthError
from .mechanization import (
    DT_GATE,
    DT_NOMINAL,
    FLAG_DT_GATE,
    FLAG_SUBSTEP,
    MAX_DT,
    NavState,
    _form_code,
    imu_to_array,
    k_all_finite,
    k_nav_step,
    check_monotonic,
)

FEEDBACK_LIMIT = 0.5
PSD_TOL = 1e-9
GATE_QUANTILE = 0.999

# status codes shared by the kernels and the python wrappers
OK = 0
ERR_PSD = 1
ERR_DIVERGED = 2
ERR_NONFINITE = 3
ERR_S_SINGULAR = 4

FIX_UNUSED = 0
FIX_ACCEPTED = 1
FIX_GATED = 2


def gate_threshold(quantile=GATE_QUANTILE, dof=6) -> float:
    """Chi-square NIS rejection threshold (22.46 for the defaults)."""
    if not 0.0 < quantile < 1.0:
        return math.inf
    return float(chi2.ppf(quantile, dof))


@dataclass(frozen=True, eq=False)
class GpsFix:
    t: float
    p_e: np.ndarray
    v_e: np.ndarray
    r_p: float = 2.0
    r_v: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        for name in ("p_e", "v_e"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float).reshape(3).copy())
        if not (self.r_p > 0.0 and self.r_v > 0.0):
            raise ValueError("GPS standard deviations must be positive")


@dataclass(frozen=True, eq=False)
class InnovationRecord:
    t: float
    dy: np.ndarray
    S: np.ndarray
    nis: float
    accepted: bool = True


@dataclass(frozen=True, eq=False)
class FilterState:
    nav: NavState
    P: np.ndarray
    t_last_update: float = -math.inf

    def replace(self, **kw) -> FilterState:
        return replace(self, **kw)


@dataclass(frozen=True)
class InitPriors:
    """Initial 1-sigma uncertainties and the leveling window.

    ``sigma_level`` applies to roll and pitch, ``sigma_yaw`` to heading
    (which is initialized to zero). Position and velocity priors default to
    the fix standard deviations when left as ``None``.
    """

    sigma_level: float = 0.02
    sigma_yaw: float = 0.3
    sigma_p: float | None = None
    sigma_v: float | None = None
    sigma_bw: float = 0.01
    sigma_bf: float = 0.1
    window: float = 2.0


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


@kernel
def k_chol_ok(A):
    """True when ``A`` admits a Cholesky factorization."""
    n = A.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / d
    return True


@kernel
def k_psd_ok(P, tol):
    """``P`` is PSD up to ``-tol * trace(P)`` in its smallest eigenvalue."""
    n = P.shape[0]
    tr = 0.0
    for i in range(n):
        tr += P[i, i]
    if not tr > 0.0:
        return tr == 0.0
    A = P.copy()
    for i in range(n):
        A[i, i] += tol * tr
    return k_chol_ok(A)


@kernel
def k_predict(x, P, w_meas, f_meas, dt, form, earth, qdiag):
    """Propagate nav ``x`` and covariance ``P`` over one IMU interval.

    The error model is linearized at the start of each substep with the
    bias-corrected rates held constant, matching the mechanization.
    """
    n = int(math.ceil(dt / MAX_DT - 1e-12))
    if n < 1:
        n = 1
    h = dt / n
    w = w_meas - x[10:13]
    f = f_meas - x[13:16]
    for _ in range(n):
        F = k_build_F(x[0:4], w, f, x[7:10], earth)
        Phi, Qd = k_discretize_diag(F, qdiag, h)
        P = Phi @ P @ Phi.T + Qd
        P = 0.5 * (P + P.T)
        x, _ = k_nav_step(x, w, f, h, form, earth)
    return x, P, n


@kernel
def k_feedback(x, dx):
    """Apply an error estimate to nav ``x``; see :func:`apply_feedback`."""
    C = q_rotmat(x[0:4])
    out = x.copy()
    dq = np.empty(4)
    dq[0] = 1.0
    dq[1:4] = 0.5 * dx[0:3]
    out[0:4] = q_normalize(q_mul(x[0:4], dq))
    out[4:7] = x[4:7] - C @ dx[3:6]
    out[7:10] = x[7:10] - C @ dx[6:9]
    out[10:13] = x[10:13] + dx[9:12]
    out[13:16] = x[13:16] - dx[12:15]
    return out


@kernel
def k_innovation(x, P, zp, zv, rp, rv):
    H = k_build_H(x[0:4])
    dy = np.empty(6)
    dy[0:3] = zp - x[7:10]
    dy[3:6] = zv - x[4:7]
    S = H @ P @ H.T
    for i in range(3):
        S[i, i] += rp * rp
        S[3 + i, 3 + i] += rv * rv
    S = 0.5 * (S + S.T)
    return H, dy, S


@kernel
def k_update(x, P, zp, zv, rp, rv, gate):
    """One GPS update; returns ``(x, P, dy, S, nis, code, accepted)``."""
    H, dy, S = k_innovation(x, P, zp, zv, rp, rv)
    if not k_chol_ok(S):
        return x, P, dy, S, math.nan, ERR_S_SINGULAR, False
    Sinv_dy = np.linalg.solve(S, dy)
    nis = dy @ Sinv_dy
    if nis > gate:
        return x, P, dy, S, nis, OK, False
    # K = P H^T S^-1 via S symmetric: K^T = S^-1 H P
    K = np.linalg.solve(S, H @ P).T
    dx = K @ dy
    th = math.sqrt(dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2])
    if not th < FEEDBACK_LIMIT:
        return x, P, dy, S, nis, ERR_DIVERGED, False
    IKH = np.eye(15) - K @ H
    R = np.zeros((6, 6))
    for i in range(3):
        R[i, i] = rp * rp
        R[3 + i, 3 + i] = rv * rv
    P = IKH @ P @ IKH.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    return k_feedback(x, dx), P, dy, S, nis, OK, True


@kernel
def k_fuse(x0, P0, t0, imu, gps, gps_std, noise, earth, form, dt_nominal, dt_gate,
           gate, ins_only):
    """Run the filter over whole logs.

    Parameters are arrays: ``imu`` (N, 7) ``[t, w, f]``, ``gps`` (M, 7)
    ``[t, p, v]`` and ``gps_std`` (M, 2) ``[r_p, r_v]``. IMU rows must follow
    ``t0``. A fix is processed right after the IMU step whose stamp it falls
    on or inside; fixes at or before ``t0`` are left unused.

    Returns
    -------
    states (N, 16), pdiag (N, 15), flags (N,), fix_row (M,), fix_status (M,),
    dys (M, 6), nis (M,), P_fix (M, 15, 15), code, code_index
    """
    n = imu.shape[0]
    m = gps.shape[0]
    qdiag = k_noise_diag(noise)
    states = np.full((n, 16), np.nan)
    pdiag = np.full((n, 15), np.nan)
    flags = np.zeros(n, dtype=np.int64)
    fix_row = np.full(m, -1, dtype=np.int64)
    fix_status = np.zeros(m, dtype=np.int64)
    dys = np.full((m, 6), np.nan)
    nis_out = np.full(m, np.nan)
    P_fix = np.full((m, 15, 15), np.nan)
    x = x0.copy()
    P = P0.copy()
    t_prev = t0
    j = 0
    while j < m and gps[j, 0] <= t0:
        j += 1
    for k in range(n):
        dt = imu[k, 0] - t_prev
        if abs(dt - dt_nominal) > dt_gate * dt_nominal:
            flags[k] |= FLAG_DT_GATE
        x, P, nsub = k_predict(x, P, imu[k, 1:4], imu[k, 4:7], dt, form, earth, qdiag)
        if nsub > 1:
            flags[k] |= FLAG_SUBSTEP
        if k_all_finite(x) >= 0:
            return states, pdiag, flags, fix_row, fix_status, dys, nis_out, P_fix, ERR_NONFINITE, k
        if not k_psd_ok(P, PSD_TOL):
            return states, pdiag, flags, fix_row, fix_status, dys, nis_out, P_fix, ERR_PSD, k
        while j < m and gps[j, 0] <= imu[k, 0]:
            if ins_only:
                j += 1
                continue
            x, P, dy, S, nis, code, acc = k_update(
                x, P, gps[j, 1:4], gps[j, 4:7], gps_std[j, 0], gps_std[j, 1], gate
            )
            fix_row[j] = k
            dys[j] = dy
            nis_out[j] = nis
            if code != OK:
                return states, pdiag, flags, fix_row, fix_status, dys, nis_out, P_fix, code, k
            fix_status[j] = FIX_ACCEPTED if acc else FIX_GATED
            P_fix[j] = P
            j += 1
        states[k] = x
        for i in range(15):
            pdiag[k, i] = P[i, i]
        t_prev = imu[k, 0]
    return states, pdiag, flags, fix_row, fix_status, dys, nis_out, P_fix, OK, -1


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------


def _raise_for(code, where, index=None):
    if code == ERR_PSD:
        raise NumericalHealthError(f"covariance lost positive semidefiniteness {where}")
    if code == ERR_DIVERGED:
        raise DivergenceError(
            f"attitude correction exceeds {FEEDBACK_LIMIT} rad {where}", index=index
        )
    if code == ERR_NONFINITE:
        raise NumericalHealthError(f"non-finite navigation state {where}")
    if code == ERR_S_SINGULAR:
        raise NumericalHealthError(f"innovation covariance not positive definite {where}")


def predict(fs: FilterState, w_meas, f_meas, dt, noise: NoiseParams,
            earth: EarthModel = WGS84, form="trident") -> FilterState:
    """Advance nav and covariance by ``dt`` with raw IMU readings.

    ``w_meas`` and ``f_meas`` are sensor outputs; the current bias estimates
    are removed before mechanization and linearization.

    Raises
    ------
    NumericalHealthError
        If ``P`` stops being positive semidefinite.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    x, P, _ = k_predict(
        fs.nav.to_array(), np.asarray(fs.P, float),
        np.asarray(w_meas, float).reshape(3), np.asarray(f_meas, float).reshape(3),
        float(dt), _form_code(form), earth.as_array(), k_noise_diag(noise.imu_array()),
    )
    if k_all_finite(x) >= 0:
        _raise_for(ERR_NONFINITE, f"at t={fs.nav.t + dt}")
    if not k_psd_ok(P, PSD_TOL):
        _raise_for(ERR_PSD, f"at t={fs.nav.t + dt}")
    return replace(fs, nav=NavState.from_array(x, fs.nav.t + dt), P=P)


def innovation(fs: FilterState, fix: GpsFix) -> InnovationRecord:
    _, dy, S = k_innovation(fs.nav.to_array(), np.asarray(fs.P, float),
                            fix.p_e, fix.v_e, fix.r_p, fix.r_v)
    if not k_chol_ok(S):
        _raise_for(ERR_S_SINGULAR, f"at t={fix.t}")
    nis = float(dy @ np.linalg.solve(S, dy))
    return InnovationRecord(fix.t, dy, S, nis)


def update(fs: FilterState, fix: GpsFix, gate=math.inf):
    """Joseph-form GPS update with immediate feedback.

    Fixes whose NIS exceeds ``gate`` leave the state untouched and come back
    with ``accepted=False``.
    """
    x, P, dy, S, nis, code, acc = k_update(
        fs.nav.to_array(), np.asarray(fs.P, float), fix.p_e, fix.v_e,
        fix.r_p, fix.r_v, float(gate),
    )
    _raise_for(code, f"at t={fix.t}")
    rec = InnovationRecord(fix.t, dy, S, float(nis), bool(acc))
    if not acc:
        return fs, rec
    nav = NavState.from_array(x, fs.nav.t)
    return FilterState(nav, P, fix.t), rec


def apply_feedback(nav: NavState, dx) -> NavState:
    """Correct ``nav`` by the error estimate ``dx`` (ErrorState or 15-vector).

    ``q <- q (1, ds/2)`` normalized, ``v <- v - C ds1``, ``p <- p - C ds2``,
    ``b_w <- b_w + db_w`` and ``b_f <- b_f - db_f`` with ``C = C_b^e`` of the
    uncorrected estimate. These signs follow the error definitions.

    Raises
    ------
    DivergenceError
        If the attitude correction is not below 0.5 rad.
    """
    d = dx.to_array() if isinstance(dx, ErrorState) else np.asarray(dx, float).reshape(N_ERR)
    if not np.linalg.norm(d[0:3]) < FEEDBACK_LIMIT:
        raise DivergenceError(f"attitude correction exceeds {FEEDBACK_LIMIT} rad")
    return NavState.from_array(k_feedback(nav.to_array(), d), nav.t)


def level_attitude(f_mean, p_e, earth: EarthModel = WGS84, yaw=0.0) -> Quaternion:
    """Body->ECEF attitude from a mean specific force sensed at rest.

    Roll and pitch come from the direction of ``f_mean`` (FLU body axes)
    relative to the plumb line; heading is set to ``yaw`` about the up axis
    of :func:`tridentnav.earth.level_frame_matrix`.
    """
    fx, fy, fz = (float(c) for c in np.asarray(f_mean, float).reshape(3))
    roll = math.atan2(fy, fz)
    pitch = math.atan2(-fx, math.hypot(fy, fz))
    C_nb = euler_to_rotmat(roll, pitch, yaw)
    C_en = level_frame_matrix(p_e, earth)
    return Quaternion.from_array(rotmat_to_quat(C_en @ C_nb))


def euler_to_rotmat(roll, pitch, yaw) -> np.ndarray:
    """``Rz(yaw) Ry(pitch) Rx(roll)``: body to level frame."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def rotmat_to_quat(C) -> np.ndarray:
    """Unit quaternion (w >= 0) of a rotation matrix."""
    C = np.asarray(C, float)
    tr = C[0, 0] + C[1, 1] + C[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (C[2, 1] - C[1, 2]) / s, (C[0, 2] - C[2, 0]) / s, (C[1, 0] - C[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(C)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * math.sqrt(1.0 + C[i, i] - C[j, j] - C[k, k])
        q = [0.0] * 4
        q[0] = (C[k, j] - C[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (C[j, i] + C[i, j]) / s
        q[1 + k] = (C[k, i] + C[i, k]) / s
    q = np.array(q)
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def rotmat_to_euler(C) -> tuple[float, float, float]:
    """Inverse of :func:`euler_to_rotmat` as ``(roll, pitch, yaw)``."""
    C = np.asarray(C, float)
    pitch = math.asin(max(-1.0, min(1.0, -C[2, 0])))
    return math.atan2(C[2, 1], C[2, 2]), pitch, math.atan2(C[1, 0], C[0, 0])


def initial_covariance(q_be, p_e, priors: InitPriors, r_p, r_v,
                       earth: EarthModel = WGS84) -> np.ndarray:
    """``P(0)`` in left error coordinates.

    Attitude uncertainty is specified in the level frame (east, north, up
    tilt axes) and rotated into estimated body axes; velocity and position
    priors are isotropic so the rotation leaves them unchanged.
    """
    C_eb = q_rotmat(np.asarray(q_be, float)).T
    C_en = level_frame_matrix(p_e, earth)
    P_n = np.diag([priors.sigma_level**2, priors.sigma_level**2, priors.sigma_yaw**2])
    A = C_eb @ C_en
    sp = r_p if priors.sigma_p is None else priors.sigma_p
    sv = r_v if priors.sigma_v is None else priors.sigma_v
    P = np.zeros((N_ERR, N_ERR))
    P[0:3, 0:3] = A @ P_n @ A.T
    P[3:6, 3:6] = sv**2 * np.eye(3)
    P[6:9, 6:9] = sp**2 * np.eye(3)
    P[9:12, 9:12] = priors.sigma_bw**2 * np.eye(3)
    P[12:15, 12:15] = priors.sigma_bf**2 * np.eye(3)
    return 0.5 * (P + P.T)


def init_filter(first_fixes, imu_window, priors: InitPriors = InitPriors(),
                earth: EarthModel = WGS84) -> FilterState:
    """Initial filter state from the first fix and a stationary IMU window.

    The state time is that of the first fix. Leveling averages the specific
    force of samples stamped within ``priors.window`` seconds after it.

    Raises
    ------
    InitializationError
        Without a fix, or with less than ``priors.window`` seconds of IMU data.
    """
    fixes = list(first_fixes)
    if not fixes:
        raise InitializationError("no GPS fix available for initialization")
    fix = fixes[0]
    imu = imu_to_array(imu_window)
    if imu.shape[0] == 0:
        raise InitializationError("no IMU samples in the leveling window")
    sel = (imu[:, 0] > fix.t) & (imu[:, 0] <= fix.t + priors.window + 1e-9)
    win = imu[sel]
    if win.shape[0] < 2 or win[-1, 0] - fix.t < priors.window * (1.0 - 1e-6):
        raise InitializationError(
            f"need {priors.window} s of IMU data after t={fix.t} for leveling"
        )
    q = level_attitude(win[:, 4:7].mean(axis=0), fix.p_e, earth)
    nav = NavState(q, fix.v_e, fix.p_e, t=fix.t)
    P = initial_covariance(q.array, fix.p_e, priors, fix.r_p, fix.r_v, earth)
    return FilterState(nav, P, fix.t)


def yaw_sigma(nav: NavState, P, earth: EarthModel = WGS84) -> float:
    """1-sigma heading uncertainty about the local plumb line (rad)."""
    up = level_frame_matrix(nav.p_e, earth)[:, 2]
    a = nav.C_be.T @ up
    return float(math.sqrt(max(a @ np.asarray(P)[0:3, 0:3] @ a, 0.0)))


@dataclass
class FusionResult:
    """Arrays produced by :func:`run_filter`.

    ``states`` and ``pdiag`` have one row per IMU sample after ``t0`` (row 0
    is the initial state). GPS arrays are indexed by fix.
    """

    t: np.ndarray
    states: np.ndarray
    pdiag: np.ndarray
    flags: np.ndarray
    fix_t: np.ndarray
    fix_row: np.ndarray
    fix_status: np.ndarray
    dy: np.ndarray
    nis: np.ndarray
    P_fix: np.ndarray
    code: int = OK
    code_index: int = -1
    counters: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.code == OK

    @property
    def n_rows(self) -> int:
        """Rows with a valid state: all of them, or those before the failing row."""
        if self.code == OK:
            return self.states.shape[0]
        return self.code_index


def gps_to_arrays(fixes):
    fixes = list(fixes)
    g = np.empty((len(fixes), 7))
    s = np.empty((len(fixes), 2))
    for i, fx in enumerate(fixes):
        g[i, 0] = fx.t
        g[i, 1:4] = fx.p_e
        g[i, 4:7] = fx.v_e
        s[i] = fx.r_p, fx.r_v
    return g, s


def run_filter(fs0: FilterState, imu, fixes, noise: NoiseParams,
               earth: EarthModel = WGS84, form="trident", ins_only=False,
               gate=None, dt_nominal=DT_NOMINAL, dt_gate=DT_GATE) -> FusionResult:
    """Fuse whole logs starting from ``fs0``.

    IMU samples at or before ``fs0.nav.t`` are skipped. Failures do not
    raise: the result carries the error code and all rows up to the failure.
    """
    imu = imu_to_array(imu)
    imu = imu[imu[:, 0] > fs0.nav.t]
    check_monotonic(imu[:, 0])
    if isinstance(fixes, tuple) and len(fixes) == 2 and isinstance(fixes[0], np.ndarray):
        g, s = fixes
    else:
        g, s = gps_to_arrays(fixes)
    if g.shape[0] > 1:
        check_monotonic(g[:, 0])
    gate = gate_threshold() if gate is None else float(gate)
    out = k_fuse(
        fs0.nav.to_array(), np.asarray(fs0.P, float), fs0.nav.t, imu, g, s,
        noise.imu_array(), earth.as_array(), _form_code(form), float(dt_nominal),
        float(dt_gate), gate, bool(ins_only),
    )
    states, pdiag, flags, fix_row, fix_status, dys, nis, P_fix, code, idx = out
    t = np.concatenate([[fs0.nav.t], imu[:, 0]])
    states = np.vstack([fs0.nav.to_array()[None, :], states])
    pdiag = np.vstack([np.diag(fs0.P)[None, :], pdiag])
    flags = np.concatenate([[0], flags])
    fix_row = np.where(fix_row >= 0, fix_row + 1, -1)
    code_index = int(idx) + 1 if code != OK else -1
    counters = {
        "imu_samples": int(imu.shape[0]),
        "fixes_accepted": int(np.sum(fix_status == FIX_ACCEPTED)),
        "fixes_gated": int(np.sum(fix_status == FIX_GATED)),
        "dt_gate_flags": int(np.sum((flags & FLAG_DT_GATE) != 0)),
        "substep_events": int(np.sum((flags & FLAG_SUBSTEP) != 0)),
        # every accepted correction renormalizes the attitude quaternion
        "normalization_events": int(np.sum(fix_status == FIX_ACCEPTED)),
    }
    return FusionResult(t, states, pdiag, flags, g[:, 0].copy(), fix_row, fix_status,
                        dys, nis, P_fix, int(code), code_index, counters)


def raise_for_result(res: FusionResult):
    if res.code != OK:
        t = res.t[res.code_index] if 0 <= res.code_index < res.t.size else math.nan
        _raise_for(res.code, f"at t={t}", index=res.code_index)
