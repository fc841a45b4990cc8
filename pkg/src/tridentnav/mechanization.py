"""Strapdown mechanization in ECEF.

Two interchangeable forms advance the same navigation state:

* ``classical``: RK4 on ``(q_be, v_e, p_e)`` with
  ``p' = v``, ``v' = C f - 2 w_ie x v - w_ie x (w_ie x p) + gravitation(p)``,
  ``q' = q.w_ib/2 - w_ie.q/2``;
* ``trident``: RK4 on the unit trident ``q + e1 v.q/2 + e2 p.q/2`` with
  ``T' = T.W_ib/2 - W_ie.T/2``.

IMU rates are held constant over a step. A sample stamped ``t_k`` drives the
interval ``(t_{k-1}, t_k]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._jit import kernel
from .algebra import (
    Quaternion,
    TridentQuaternion,
    TridentRate,
    cross,
    q_conj,
    q_inv,
    q_mul,
    q_normalize,
    q_pure,
    q_rotmat,
    t_extract,
    t_extract_fast,
    t_from_nav,
    t_mul,
    t_normalize,
)
from .earth import WGS84, EarthModel, k_effective_gravity, k_gravitation
from .errors import ContractError, IngestionError, PropagationError

CLASSICAL = 0
TRIDENT = 1
FORMS = {"classical": CLASSICAL, "trident": TRIDENT}

MAX_DT = 0.1
DT_NOMINAL = 0.005
DT_GATE = 0.5

FLAG_DT_GATE = 1
FLAG_SUBSTEP = 2


def _vec(x):
    a = np.asarray(x, dtype=float).reshape(3).copy()
    return a


@dataclass(frozen=True, eq=False)
class ImuSample:
    t: float
    w_ib_b: np.ndarray
    f_b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "w_ib_b", _vec(self.w_ib_b))
        object.__setattr__(self, "f_b", _vec(self.f_b))


@dataclass(frozen=True, eq=False)
class NavState:
    """Attitude body->ECEF, ECEF velocity and position, bias estimates."""

    q_be: Quaternion
    v_e: np.ndarray
    p_e: np.ndarray
    b_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_f: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def __post_init__(self):
        for name in ("v_e", "p_e", "b_w", "b_f"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        object.__setattr__(self, "t", float(self.t))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.q_be.array, self.v_e, self.p_e, self.b_w, self.b_f])

    @classmethod
    def from_array(cls, x, t=0.0) -> NavState:
        x = np.asarray(x, dtype=float)
        return cls(Quaternion.from_array(x[0:4]), x[4:7], x[7:10], x[10:13], x[13:16], t)

    @property
    def C_be(self) -> np.ndarray:
        return q_rotmat(self.q_be.array)

    def trident(self) -> TridentQuaternion:
        return TridentQuaternion.from_array(t_from_nav(self.q_be.array, self.v_e, self.p_e))

    def with_trident(self, tq: TridentQuaternion, t=None) -> NavState:
        q, v, p = t_extract(tq.array)
        return replace(self, q_be=Quaternion.from_array(q), v_e=v, p_e=p,
                       t=self.t if t is None else t)

    def replace(self, **kw) -> NavState:
        return replace(self, **kw)


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


@kernel
def k_classical_rhs(q, v, p, w, f, earth):
    wie = np.zeros(3)
    wie[2] = earth[1]
    dq = 0.5 * (q_mul(q, q_pure(w)) - q_mul(q_pure(wie), q))
    cf = q_rotmat(q) @ f
    dv = cf - 2.0 * cross(wie, v) - cross(wie, cross(wie, p)) + k_gravitation(p, earth)
    return dq, dv, v.copy()


@kernel
def k_classical_rk4(x, ws, fs, dt, earth):
    """One RK4 step of ``x = [q, v, p]``; ``ws``/``fs`` rows hold rates at t, t+dt/2, t+dt."""
    q, v, p = x[0:4], x[4:7], x[7:10]
    k1q, k1v, k1p = k_classical_rhs(q, v, p, ws[0], fs[0], earth)
    h = 0.5 * dt
    k2q, k2v, k2p = k_classical_rhs(q + h * k1q, v + h * k1v, p + h * k1p, ws[1], fs[1], earth)
    k3q, k3v, k3p = k_classical_rhs(q + h * k2q, v + h * k2v, p + h * k2p, ws[1], fs[1], earth)
    k4q, k4v, k4p = k_classical_rhs(q + dt * k3q, v + dt * k3v, p + dt * k3p, ws[2], fs[2], earth)
    s = dt / 6.0
    out = np.empty(10)
    out[0:4] = q_normalize(q + s * (k1q + 2.0 * k2q + 2.0 * k3q + k4q))
    out[4:7] = v + s * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    out[7:10] = p + s * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return out


@kernel
def k_trident_rates(v, p, w, f, earth):
    """Return ``(W_ib, W_ie)`` as ``(3, 4)`` trident vectors."""
    wie = np.zeros(3)
    wie[2] = earth[1]
    wib = np.zeros((3, 4))
    wib[0, 1:] = w
    wib[1, 1:] = f
    g = k_effective_gravity(p, earth)
    we = np.zeros((3, 4))
    we[0, 1:] = wie
    we[1, 1:] = -(g - cross(wie, v))
    we[2, 1:] = -(v + cross(wie, p))
    return wib, we


@kernel
def k_trident_rhs(t, w, f, earth):
    q, v, p = t_extract_fast(t)
    wib, wie = k_trident_rates(v, p, w, f, earth)
    return 0.5 * (t_mul(t, wib) - t_mul(wie, t))


@kernel
def k_trident_rk4_increment(t, ws, fs, dt, earth):
    """RK4 increment ``T(t + dt) - T(t)`` of the trident ODE."""
    k1 = k_trident_rhs(t, ws[0], fs[0], earth)
    h = 0.5 * dt
    k2 = k_trident_rhs(t + h * k1, ws[1], fs[1], earth)
    k3 = k_trident_rhs(t + h * k2, ws[1], fs[1], earth)
    k4 = k_trident_rhs(t + dt * k3, ws[2], fs[2], earth)
    return (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@kernel
def k_trident_rk4(t, ws, fs, dt, earth):
    return t_normalize(t + k_trident_rk4_increment(t, ws, fs, dt, earth))


@kernel
def k_trident_nav_rk4(x, ws, fs, dt, earth):
    """Trident RK4 step of ``x = [q, v, p]`` with incremental extraction.

    With ``D = r P / 2`` at the start of the step, the extracted vector after
    the step is ``r + 2 (dD - r dP / 2) (P + dP)^-1``. Evaluating it this way
    cancels the large ``|p| |dP|`` terms analytically, so position is updated
    by a small increment exactly like the classical form instead of being
    re-quantized through ``D2`` (whose entries are ~3e6 m).
    """
    q, v, p = x[0:4], x[4:7], x[7:10]
    tq = t_from_nav(q, v, p)
    dT = k_trident_rk4_increment(tq, ws, fs, dt, earth)
    P1 = tq[0] + dT[0]
    pinv = q_inv(P1)
    dv = 2.0 * q_mul(dT[1] - 0.5 * q_mul(q_pure(v), dT[0]), pinv)
    dp = 2.0 * q_mul(dT[2] - 0.5 * q_mul(q_pure(p), dT[0]), pinv)
    out = np.empty(10)
    out[0:4] = q_normalize(P1)
    out[4:7] = v + dv[1:]
    out[7:10] = p + dp[1:]
    return out


@kernel
def _hold(r):
    out = np.empty((3, 3))
    for i in range(3):
        out[i] = r
    return out


@kernel
def k_nav_step(x, w, f, dt, form, earth):
    """Advance ``x = [q, v, p, ...]`` with bias-corrected rates held over ``dt``.

    Steps longer than ``MAX_DT`` are split. Trailing bias slots pass through.
    Returns the new array and the number of substeps used.
    """
    n = int(math.ceil(dt / MAX_DT - 1e-12))
    if n < 1:
        n = 1
    h = dt / n
    ws = _hold(w)
    fs = _hold(f)
    out = x.copy()
    for _ in range(n):
        if form == TRIDENT:
            out[0:10] = k_trident_nav_rk4(out[0:10], ws, fs, h, earth)
        else:
            out[0:10] = k_classical_rk4(out[0:10], ws, fs, h, earth)
    return out, n


@kernel
def k_all_finite(x):
    for i in range(x.shape[0]):
        if not math.isfinite(x[i]):
            return i
    return -1


@kernel
def k_propagate(nav0, t0, imu, form, earth, dt_nominal, dt_gate):
    """Fold ``k_nav_step`` over an ``(N, 7)`` IMU array ``[t, w, f]``.

    Returns ``(states (N, 16), flags (N,), bad_index, bad_field)``; on a
    non-finite result ``bad_index`` is the sample index and the arrays are
    filled up to it.
    """
    n = imu.shape[0]
    states = np.empty((n, 16))
    flags = np.zeros(n, dtype=np.int64)
    x = nav0.copy()
    t_prev = t0
    for k in range(n):
        dt = imu[k, 0] - t_prev
        if abs(dt - dt_nominal) > dt_gate * dt_nominal:
            flags[k] |= FLAG_DT_GATE
        w = imu[k, 1:4] - x[10:13]
        f = imu[k, 4:7] - x[13:16]
        x, nsub = k_nav_step(x, w, f, dt, form, earth)
        if nsub > 1:
            flags[k] |= FLAG_SUBSTEP
        states[k] = x
        bad = k_all_finite(x)
        if bad >= 0:
            return states, flags, k, bad
        t_prev = imu[k, 0]
    return states, flags, -1, -1


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------

STATE_FIELDS = ("q_be",) * 4 + ("v_e",) * 3 + ("p_e",) * 3 + ("b_w",) * 3 + ("b_f",) * 3


def _form_code(form) -> int:
    if isinstance(form, (int, np.integer)):
        return int(form)
    try:
        return FORMS[form]
    except KeyError:
        raise ContractError(f"unknown mechanization form {form!r}") from None


def _check_dt(dt):
    if not 0.0 < dt <= MAX_DT:
        raise ContractError(f"dt must lie in (0, {MAX_DT}] s, got {dt}")


def correct_imu(s: ImuSample, state: NavState):
    """Bias-compensated ``(w, f)`` from a raw sample."""
    return s.w_ib_b - state.b_w, s.f_b - state.b_f


def _finish(state: NavState, x, dt) -> NavState:
    bad = k_all_finite(x)
    if bad >= 0:
        raise PropagationError(
            f"non-finite {STATE_FIELDS[bad]} after propagation", field=STATE_FIELDS[bad]
        )
    return NavState.from_array(x, state.t + dt)


def classical_step(state: NavState, w, f, dt, earth: EarthModel = WGS84) -> NavState:
    _check_dt(dt)
    x = state.to_array()
    x, _ = k_nav_step(x, _vec(w), _vec(f), float(dt), CLASSICAL, earth.as_array())
    return _finish(state, x, dt)


def build_trident_rates(state: NavState, w, f, earth: EarthModel = WGS84):
    """Trident rate vectors ``(W_ib^b, W_ie^e)`` at ``state``."""
    wib, wie = k_trident_rates(state.v_e, state.p_e, _vec(w), _vec(f), earth.as_array())
    return (
        TridentRate(*(Quaternion.from_array(r) for r in wib)),
        TridentRate(*(Quaternion.from_array(r) for r in wie)),
    )


def trident_rhs(tq: TridentQuaternion, w, f, earth: EarthModel = WGS84) -> TridentQuaternion:
    return TridentQuaternion.from_array(
        k_trident_rhs(tq.array, _vec(w), _vec(f), earth.as_array())
    )


def classical_rhs(state: NavState, w, f, earth: EarthModel = WGS84):
    """``(q', v', p')`` of the classical navigation equations."""
    dq, dv, dp = k_classical_rhs(
        state.q_be.array, state.v_e, state.p_e, _vec(w), _vec(f), earth.as_array()
    )
    return dq, dv, dp


def trident_step(tq: TridentQuaternion, w, f, dt, earth: EarthModel = WGS84) -> TridentQuaternion:
    _check_dt(dt)
    e = earth.as_array()
    q, v, p = t_extract(tq.array)
    x = np.concatenate([q, v, p, np.zeros(6)])
    x = k_trident_nav_rk4(x, _hold(_vec(w)), _hold(_vec(f)), float(dt), e)
    out = t_from_nav(x[0:4], x[4:7], x[7:10])
    if not np.all(np.isfinite(out)):
        raise PropagationError("non-finite trident after propagation", field="trident")
    return TridentQuaternion.from_array(out)


def nav_step(state: NavState, s: ImuSample, form="trident", earth: EarthModel = WGS84) -> NavState:
    """Advance ``state`` to ``s.t`` using the bias-corrected sample."""
    dt = s.t - state.t
    if not dt > 0.0:
        raise IngestionError(f"sample time {s.t} does not follow state time {state.t}")
    w, f = correct_imu(s, state)
    x, _ = k_nav_step(state.to_array(), w, f, dt, _form_code(form), earth.as_array())
    return _finish(state, x, dt)


def imu_to_array(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return np.asarray(samples, dtype=float).reshape(-1, 7)
    out = np.empty((len(samples), 7))
    for i, s in enumerate(samples):
        out[i, 0] = s.t
        out[i, 1:4] = s.w_ib_b
        out[i, 4:7] = s.f_b
    return out


def check_monotonic(times, t0=None):
    """Raise :class:`IngestionError` at the first non-increasing timestamp."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return
    if t0 is not None and not times[0] > t0:
        raise IngestionError(f"sample 0 at t={times[0]} does not follow t0={t0}", location=0)
    bad = np.flatnonzero(~(np.diff(times) > 0.0))
    if bad.size:
        i = int(bad[0]) + 1
        raise IngestionError(f"non-monotonic timestamp at sample {i}", location=i)


def propagate_log(state0: NavState, samples, form="trident", earth: EarthModel = WGS84,
                  dt_nominal=DT_NOMINAL, dt_gate=DT_GATE):
    """INS-only propagation; returns ``[state0, s_1, ..., s_N]``."""
    imu = imu_to_array(samples)
    if imu.shape[0] == 0:
        return [state0]
    check_monotonic(imu[:, 0], state0.t)
    states, _, bad_k, bad_f = k_propagate(
        state0.to_array(), state0.t, imu, _form_code(form), earth.as_array(),
        float(dt_nominal), float(dt_gate),
    )
    if bad_k >= 0:
        raise PropagationError(
            f"non-finite {STATE_FIELDS[bad_f]} at sample {bad_k}",
            field=STATE_FIELDS[bad_f], index=int(bad_k),
        )
    out = [state0]
    out.extend(NavState.from_array(states[k], imu[k, 0]) for k in range(imu.shape[0]))
    return out


def propagate_arrays(state0: NavState, imu, form="trident", earth: EarthModel = WGS84,
                     dt_nominal=DT_NOMINAL, dt_gate=DT_GATE):
    """Array form of :func:`propagate_log`: ``(states (N, 16), flags)``."""
    imu = imu_to_array(imu)
    check_monotonic(imu[:, 0], state0.t)
    states, flags, bad_k, bad_f = k_propagate(
        state0.to_array(), state0.t, imu, _form_code(form), earth.as_array(),
        float(dt_nominal), float(dt_gate),
    )
    if bad_k >= 0:
        raise PropagationError(
            f"non-finite {STATE_FIELDS[bad_f]} at sample {bad_k}",
            field=STATE_FIELDS[bad_f], index=int(bad_k),
        )
    return states, flags


def stationary_imu(p_e, q_be: Quaternion, earth: EarthModel = WGS84):
    """Exact ``(w_ib_b, f_b)`` sensed by a vehicle at rest at ``p_e``."""
    e = earth.as_array()
    C_eb = q_rotmat(q_conj(q_be.array))
    f = -C_eb @ k_effective_gravity(np.asarray(p_e, float), e)
    w = C_eb @ earth.omega_vec
    return w, f
