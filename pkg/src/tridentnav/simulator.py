"""Truth trajectories and IMU/GPS synthesis.

A profile is a sequence of segments, each holding derivative commands for
along-track speed, heading and vertical speed (``hover`` holds all three
at zero). Neighbouring commands are blended by a quintic smoothstep centred
on the boundary, so integrated speeds and headings are what the unblended
steps would give. The motion is laid out in a frame fixed at the origin
(east, north, up about the plumb line) and mapped to ECEF.

Attitude follows the motion the way a multirotor does: heading equals course,
and the body z axis is tilted along the commanded acceleration plus gravity.
All time derivatives (accelerations, attitude rates) are taken by complex-step
differentiation of the closed-form expressions, which is exact to rounding.
True IMU rates then follow from the inverse kinematics of the ECEF
mechanization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .earth import (
    WGS84,
    EarthModel,
    GeodeticCoord,
    geodetic_to_ecef,
    k_effective_gravity_rows,
    level_frame_matrix,
)
from .ekf import GpsFix, rotmat_to_quat
from .error_model import NoiseParams
from .errors import ContractError, SpecError
from .mechanization import ImuSample

KINDS = ("hover", "constant-accel", "coordinated-turn", "climb")
# parameter name and channel (0 speed, 1 heading, 2 vertical) per kind
_KIND_PARAM = {
    "hover": (None, -1),
    "constant-accel": ("accel", 0),
    "coordinated-turn": ("rate", 1),
    "climb": ("accel", 2),
}
G0 = 9.80665
MAX_F = 4.0 * G0
MAX_W = 5.0
DEFAULT_RAMP = 1.0
_CSTEP = 1e-30
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class Segment:
    """One profile segment.

    ``accel`` (m/s^2) applies to ``constant-accel`` (along track) and
    ``climb`` (vertical); ``rate`` (rad/s) is the heading rate of a
    ``coordinated-turn``.
    """

    kind: str
    duration: float
    accel: float = 0.0
    rate: float = 0.0

    def command(self) -> tuple[float, float, float]:
        name, ch = _KIND_PARAM[self.kind]
        c = [0.0, 0.0, 0.0]
        if name is not None:
            c[ch] = getattr(self, name)
        return tuple(c)


@dataclass(frozen=True)
class ProfileSpec:
    segments: tuple
    origin: GeodeticCoord = GeodeticCoord.from_degrees(45.0, 7.0, 300.0)
    seed: int = 0
    heading: float = 0.0
    speed0: float = 0.0
    ramp: float = DEFAULT_RAMP

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise SpecError("profile has no segments")
        for i, s in enumerate(self.segments):
            if s.kind not in KINDS:
                raise SpecError(f"segment {i}: unknown kind {s.kind!r}", segment=i)
            if not (s.duration > 0.0 and math.isfinite(s.duration)):
                raise SpecError(f"segment {i}: duration must be positive", segment=i)
            if not (abs(s.accel) <= MAX_F and math.isfinite(s.accel)):
                raise SpecError(f"segment {i}: |accel| exceeds {MAX_F:.4g} m/s^2", segment=i)
            if not (abs(s.rate) <= MAX_W and math.isfinite(s.rate)):
                raise SpecError(f"segment {i}: |rate| exceeds {MAX_W} rad/s", segment=i)
        if not self.ramp >= 0.0:
            raise SpecError("ramp must be nonnegative")
        if not 0 <= int(self.seed) < 2**64:
            raise SpecError("seed must be a 64-bit unsigned integer")

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])


# --------------------------------------------------------------------------
# closed-form motion (complex-capable)
# --------------------------------------------------------------------------


def _step(y):
    yr = np.real(y)
    poly = y * y * y * (10.0 + y * (-15.0 + 6.0 * y))
    return np.where(yr <= 0.0, 0.0, np.where(yr >= 1.0, 1.0, poly))


def _step_int(y):
    yr = np.real(y)
    poly = y**4 * (2.5 + y * (-3.0 + y))
    return np.where(yr <= 0.0, 0.0, np.where(yr >= 1.0, y - 0.5, poly))


class _Motion:
    """Commands, their integrals and the derived attitude as functions of t."""

    def __init__(self, spec: ProfileSpec):
        self.spec = spec
        cmds = np.array([s.command() for s in spec.segments])
        self.c0 = cmds[0]
        self.jumps = np.diff(cmds, axis=0)  # (n_seg - 1, 3)
        self.t_jump = spec.boundaries()[1:-1]
        durs = np.array([s.duration for s in spec.segments])
        self.tau = float(min(spec.ramp, durs.min()))
        self.x0 = np.array([spec.speed0, spec.heading, 0.0])

    def _blend(self, t, integral):
        t = np.asarray(t)
        out = np.empty(t.shape + (3,), dtype=np.result_type(t, float))
        base = t[..., None] * self.c0 if integral else np.broadcast_to(self.c0, out.shape)
        out[...] = base
        for jump, tj in zip(self.jumps, self.t_jump):
            if self.tau == 0.0:
                y = np.where(np.real(t) >= tj, 1.0, 0.0)
                s = (t - tj) * y if integral else y
            else:
                y = (t - tj) / self.tau + 0.5
                s = self.tau * _step_int(y) if integral else _step(y)
            out += s[..., None] * jump
        return out

    def commands(self, t):
        """``(dV/dt, dchi/dt, dw/dt)``."""
        return self._blend(t, False)

    def channels(self, t):
        """``(V, chi, w)``."""
        return self.x0 + self._blend(t, True)

    def velocity_n(self, t):
        c = self.channels(t)
        V, chi, w = c[..., 0], c[..., 1], c[..., 2]
        return np.stack([V * np.cos(chi), V * np.sin(chi), w], axis=-1)

    def C_nb(self, t):
        """Body (FLU) to local frame, ZYX with yaw = course."""
        c = self.channels(t)
        d = self.commands(t)
        ax = d[..., 0]
        ay = c[..., 0] * d[..., 1]
        az = G0 + d[..., 2]
        pitch = np.arctan(ax / az)
        roll = -np.arctan(ay / np.sqrt(ax * ax + az * az))
        yaw = c[..., 1]
        cr, sr = np.cos(roll), np.sin(roll)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cy, sy = np.cos(yaw), np.sin(yaw)
        C = np.empty(np.shape(yaw) + (3, 3), dtype=np.result_type(yaw, float))
        C[..., 0, 0] = cy * cp
        C[..., 0, 1] = cy * sp * sr - sy * cr
        C[..., 0, 2] = cy * sp * cr + sy * sr
        C[..., 1, 0] = sy * cp
        C[..., 1, 1] = sy * sp * sr + cy * cr
        C[..., 1, 2] = sy * sp * cr - cy * sr
        C[..., 2, 0] = -sp
        C[..., 2, 1] = cp * sr
        C[..., 2, 2] = cp * cr
        return C


def _cstep(fn, t):
    """Value and exact derivative of an analytic ``fn`` at real ``t``."""
    z = fn(np.asarray(t, dtype=float) + 1j * _CSTEP)
    return np.real(z), np.imag(z) / _CSTEP


def _quad_velocity(motion, a, b):
    """``int_a^b v_n dt`` per row for arrays ``a``, ``b`` (8-point Gauss)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    v = motion.velocity_n(nodes)  # (n, 8, 3)
    return half[:, None] * np.einsum("k,nkd->nd", _GL_WEIGHTS, v)


def _qmul_rows(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def _qexp_rows(v):
    th = np.linalg.norm(v, axis=-1)
    small = th < 1e-8
    s = np.where(small, 1.0 - th * th / 6.0, np.sin(th) / np.where(small, 1.0, th))
    return np.concatenate([np.cos(th)[..., None], s[..., None] * v], axis=-1)


def _qlog_rows(q):
    vn = np.linalg.norm(q[..., 1:], axis=-1)
    small = vn < 1e-12
    k = np.where(small, 1.0 / q[..., 0], np.arctan2(vn, q[..., 0]) / np.where(small, 1.0, vn))
    return k[..., None] * q[..., 1:]


def _rotmat_rows(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    C = np.empty(q.shape[:-1] + (3, 3))
    C[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    C[..., 0, 1] = 2.0 * (x * y - w * z)
    C[..., 0, 2] = 2.0 * (x * z + w * y)
    C[..., 1, 0] = 2.0 * (x * y + w * z)
    C[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    C[..., 1, 2] = 2.0 * (y * z - w * x)
    C[..., 2, 0] = 2.0 * (x * z - w * y)
    C[..., 2, 1] = 2.0 * (y * z + w * x)
    C[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return C


def _equivalent_rates(motion, t, q, v_e, p_n, C_en, p0, earth):
    """Constant ``(w, f)`` per interval that reproduce the truth under ZOH.

    ``w`` gives the exact attitude change under ``q' = q w/2 - w_ie q/2``.
    ``f`` makes the integral of ``C(s) f`` over the interval, with ``C(s)``
    the attitude rotating at that constant ``w``, equal to the true velocity
    increment minus the Coriolis and gravity integrals. This is what an
    IMU reporting delta angles and delta velocities provides.
    """
    dt = t[1:] - t[:-1]
    wie = earth.omega_vec
    half_e = np.tile(-0.5 * wie, (dt.size, 1)) * dt[:, None]
    # exp(-w_ie dt/2)^* q_k q_{k+1}: conjugate of the earth term is exp(+w_ie dt/2)
    dq = _qmul_rows(_qmul_rows(_qexp_rows(-half_e) * [1, -1, -1, -1], q[:-1]) * [1, -1, -1, -1],
                    q[1:])
    dq = np.where(dq[:, :1] < 0.0, -dq, dq)
    w_eq = 2.0 * _qlog_rows(dq) / dt[:, None]
    # quadrature nodes inside each interval
    half = 0.5 * dt
    s_nodes = half[:, None] * (_GL_NODES[None, :] + 1.0)  # offsets from t_k
    nodes = t[:-1, None] + s_nodes
    v_nodes = motion.velocity_n(nodes) @ C_en.T
    pn_nodes = p_n[:-1, None, :] + np.stack(
        [_quad_velocity(motion, t[:-1], nodes[:, j]) for j in range(_GL_NODES.size)], axis=1
    )
    p_nodes = p0 + pn_nodes @ C_en.T
    e = earth.as_array()
    gam = k_effective_gravity_rows(p_nodes.reshape(-1, 3), e).reshape(p_nodes.shape)
    other = 2.0 * np.cross(wie, v_nodes) - gam
    rhs = (v_e[1:] - v_e[:-1]) + half[:, None] * np.einsum("j,njd->nd", _GL_WEIGHTS, other)
    # attitude along the interval under the constant equivalent rate
    qe = _qexp_rows(0.5 * s_nodes[..., None] * (-wie))
    qb = _qexp_rows(0.5 * s_nodes[..., None] * w_eq[:, None, :])
    qs = _qmul_rows(_qmul_rows(qe, np.broadcast_to(q[:-1, None, :], qb.shape)), qb)
    A = half[:, None, None] * np.einsum("j,njab->nab", _GL_WEIGHTS, _rotmat_rows(qs))
    f_eq = np.linalg.solve(A, rhs[..., None])[..., 0]
    return w_eq, f_eq


# --------------------------------------------------------------------------
# truth
# --------------------------------------------------------------------------


@dataclass(eq=False)
class TruthTrajectory:
    """Sampled truth plus the ideal IMU table.

    ``t``, ``q_be``, ``v_e``, ``p_e``, ``w_ib_b``, ``f_b`` hold the state and
    instantaneous rates at the sample times ``k / rate``. ``imu`` (N-1, 7)
    holds, in row ``k``, the constant rates over ``(t_k, t_k+1]`` stamped
    ``t_k+1`` that reproduce the interval's attitude and velocity change
    under zero-order hold (see ``_equivalent_rates``).
    """

    t: np.ndarray
    q_be: np.ndarray
    v_e: np.ndarray
    p_e: np.ndarray
    w_ib_b: np.ndarray
    f_b: np.ndarray
    imu: np.ndarray
    rate: float
    spec: ProfileSpec
    earth: EarthModel = WGS84
    _motion: _Motion | None = field(default=None, repr=False)
    _frame: tuple | None = field(default=None, repr=False)

    def __len__(self):
        return self.t.size

    @property
    def samples(self):
        return [
            (self.t[k], self.q_be[k], self.v_e[k], self.p_e[k], self.w_ib_b[k], self.f_b[k])
            for k in range(self.t.size)
        ]

    def state_array(self) -> np.ndarray:
        """``(N, 10)`` rows ``[q, v, p]``."""
        return np.hstack([self.q_be, self.v_e, self.p_e])

    def evaluate(self, times):
        """Truth ``(q_be, v_e, p_e, w_ib_b, f_b)`` at arbitrary times in range."""
        times = np.atleast_1d(np.asarray(times, float))
        if times.min() < 0.0 or times.max() > self.t[-1] + 1e-9:
            raise ContractError("evaluation time outside the trajectory")
        k = np.clip(np.searchsorted(self.t, times, side="right") - 1, 0, self.t.size - 1)
        C_en, p0 = self._frame
        pn0 = (self.p_e[k] - p0) @ C_en
        pn = pn0 + _quad_velocity(self._motion, self.t[k], times)
        return _kinematics(self._motion, times, pn, C_en, p0, self.earth)


def _kinematics(motion, t, p_n, C_en, p0, earth):
    v_n, a_n = _cstep(motion.velocity_n, t)
    C_nb, dC_nb = _cstep(motion.C_nb, t)
    C_be = np.einsum("ij,njk->nik", C_en, C_nb)
    p_e = p0 + p_n @ C_en.T
    v_e = v_n @ C_en.T
    a_e = a_n @ C_en.T
    wie = earth.omega_vec
    gam = k_effective_gravity_rows(p_e, earth.as_array())
    acc = a_e + 2.0 * np.cross(wie, v_e) - gam
    f_b = np.einsum("nji,nj->ni", C_be, acc)
    W = np.einsum("nji,njk->nik", C_nb, dC_nb)
    w_nb = 0.5 * np.stack(
        [W[:, 2, 1] - W[:, 1, 2], W[:, 0, 2] - W[:, 2, 0], W[:, 1, 0] - W[:, 0, 1]], axis=-1
    )
    w_ib = w_nb + np.einsum("nji,j->ni", C_be, wie)
    q = np.array([rotmat_to_quat(C) for C in C_be])
    # keep the sign continuous along the trajectory
    flip = np.concatenate([[False], np.einsum("ij,ij->i", q[1:], q[:-1]) < 0.0])
    sign = np.where(np.logical_xor.accumulate(flip), -1.0, 1.0)
    return q * sign[:, None], v_e, p_e, w_ib, f_b


def _check_limits(spec, t, w, f):
    bad = np.flatnonzero(
        (np.linalg.norm(f, axis=1) > MAX_F) | (np.linalg.norm(w, axis=1) > MAX_W)
    )
    if bad.size:
        tb = float(t[bad[0]])
        seg = int(np.clip(np.searchsorted(spec.boundaries(), tb, side="right") - 1,
                          0, len(spec.segments) - 1))
        raise SpecError(
            f"segment {seg}: dynamic limits exceeded at t={tb:.3f} s "
            f"(|f| <= {MAX_F:.4g} m/s^2, |w| <= {MAX_W} rad/s)",
            segment=seg,
        )


def gen_trajectory(spec: ProfileSpec, rate: float = 200.0,
                   earth: EarthModel = WGS84) -> TruthTrajectory:
    """Sample the profile at ``rate`` Hz over its full duration.

    Raises
    ------
    SpecError
        If the rate is outside [50, 1000] Hz or the motion breaks the dynamic
        limits; the message names the segment.
    """
    if not 50.0 <= rate <= 1000.0:
        raise SpecError(f"rate {rate} Hz outside [50, 1000]")
    motion = _Motion(spec)
    n = int(round(spec.duration * rate))
    t = np.arange(n + 1) / rate
    p0 = geodetic_to_ecef(spec.origin, earth)
    C_en = level_frame_matrix(p0, earth)
    dp = _quad_velocity(motion, t[:-1], t[1:])
    p_n = np.vstack([np.zeros((1, 3)), np.cumsum(dp, axis=0)])
    q, v, p, w, f = _kinematics(motion, t, p_n, C_en, p0, earth)
    wm, fm = _equivalent_rates(motion, t, q, v, p_n, C_en, p0, earth)
    _check_limits(spec, np.concatenate([t, t[1:]]), np.vstack([w, wm]), np.vstack([f, fm]))
    imu = np.hstack([t[1:, None], wm, fm])
    return TruthTrajectory(t, q, v, p, w, f, imu, float(rate), spec, earth, motion, (C_en, p0))


# --------------------------------------------------------------------------
# sensors
# --------------------------------------------------------------------------


def _rng_pair(seed):
    ss = np.random.SeedSequence(int(seed))
    a, b = ss.spawn(2)
    return np.random.Generator(np.random.PCG64(a)), np.random.Generator(np.random.PCG64(b))


def synth_imu_arrays(truth: TruthTrajectory, noise: NoiseParams, bias_w=(0, 0, 0),
                     bias_f=(0, 0, 0), seed=0, bias_walk=False):
    """IMU table ``(N-1, 7)`` and the true bias rows ``(N, 3)`` per sample time.

    Readings are ``truth + bias + white noise`` with per-sample std
    ``sigma * sqrt(rate)``. With ``bias_walk`` the biases take a random-walk
    step ``N(0, sigma_b^2 dt)`` before each sample; row 0 of the bias arrays is
    the initial value.
    """
    rng_noise, rng_walk = _rng_pair(seed)
    n = truth.imu.shape[0]
    dt = 1.0 / truth.rate
    sq = math.sqrt(truth.rate)
    white = rng_noise.standard_normal((n, 6))
    walk = rng_walk.standard_normal((n, 6))
    bw = np.tile(np.asarray(bias_w, float).reshape(1, 3), (n + 1, 1))
    bf = np.tile(np.asarray(bias_f, float).reshape(1, 3), (n + 1, 1))
    if bias_walk:
        sdt = math.sqrt(dt)
        bw[1:] += np.cumsum(walk[:, 0:3] * (noise.sigma_bw * sdt), axis=0)
        bf[1:] += np.cumsum(walk[:, 3:6] * (noise.sigma_bf * sdt), axis=0)
    out = truth.imu.copy()
    out[:, 1:4] += bw[1:] + white[:, 0:3] * (noise.sigma_w * sq)
    out[:, 4:7] += bf[1:] + white[:, 3:6] * (noise.sigma_f * sq)
    return out, bw, bf


def synth_imu(truth: TruthTrajectory, noise: NoiseParams, bias_w=(0, 0, 0),
              bias_f=(0, 0, 0), seed=0, bias_walk=False):
    imu, _, _ = synth_imu_arrays(truth, noise, bias_w, bias_f, seed, bias_walk)
    return [ImuSample(r[0], r[1:4], r[4:7]) for r in imu]


def gps_indices(truth: TruthTrajectory, rate: float = 1.0) -> np.ndarray:
    if not 0.0 < rate <= truth.rate:
        raise ContractError(f"GPS rate {rate} must lie in (0, {truth.rate}] Hz")
    step = truth.rate / rate
    n = int(math.floor((truth.t.size - 1) / step + 1e-9))
    return np.rint(np.arange(n + 1) * step).astype(np.int64)


def synth_gps_arrays(truth: TruthTrajectory, noise: NoiseParams, rate: float = 1.0, seed=0):
    """``(M, 7)`` fixes ``[t, p, v]`` on the IMU time grid, starting at t = 0."""
    idx = gps_indices(truth, rate)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    z = rng.standard_normal((idx.size, 6))
    out = np.empty((idx.size, 7))
    out[:, 0] = truth.t[idx]
    out[:, 1:4] = truth.p_e[idx] + noise.r_p * z[:, 0:3]
    out[:, 4:7] = truth.v_e[idx] + noise.r_v * z[:, 3:6]
    return out


def synth_gps(truth: TruthTrajectory, noise: NoiseParams, rate: float = 1.0, seed=0):
    g = synth_gps_arrays(truth, noise, rate, seed)
    return [GpsFix(r[0], r[1:4], r[4:7], noise.r_p, noise.r_v) for r in g]


def imu_gps_seeds(seed):
    """Independent child seeds ``(imu, gps)`` derived from a profile seed."""
    a, b = np.random.SeedSequence(int(seed)).spawn(2)
    return int(a.generate_state(1, np.uint64)[0]), int(b.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SimulationSpec:
    """Everything needed to produce a set of logs from a profile."""

    profile: ProfileSpec
    rate: float = 200.0
    gps_rate: float = 1.0
    noise: NoiseParams = NoiseParams()
    bias_w: tuple = (0.0, 0.0, 0.0)
    bias_f: tuple = (0.0, 0.0, 0.0)
    bias_walk: bool = False


@dataclass(eq=False)
class SimulationOutput:
    truth: TruthTrajectory
    imu: np.ndarray
    gps: np.ndarray
    bias_w: np.ndarray
    bias_f: np.ndarray

    def truth_table(self) -> np.ndarray:
        """``(N, 17)`` rows ``[t, q, v, p, b_w, b_f]`` at the sample times."""
        tr = self.truth
        return np.hstack([tr.t[:, None], tr.q_be, tr.v_e, tr.p_e, self.bias_w, self.bias_f])


def simulate(sim: SimulationSpec, seed=None, earth: EarthModel = WGS84) -> SimulationOutput:
    """Truth, noisy IMU and GPS for ``sim``; ``seed`` overrides the profile seed."""
    seed = sim.profile.seed if seed is None else int(seed)
    s_imu, s_gps = imu_gps_seeds(seed)
    truth = gen_trajectory(sim.profile, sim.rate, earth)
    imu, bw, bf = synth_imu_arrays(truth, sim.noise, sim.bias_w, sim.bias_f, s_imu, sim.bias_walk)
    gps = synth_gps_arrays(truth, sim.noise, sim.gps_rate, s_gps)
    return SimulationOutput(truth, imu, gps, bw, bf)
