import math

import numpy as np
import pytest

from scenarios import BIAS_F, BIAS_W, fix_errors, flight_120, fixes_of, fuse_sim
from tridentnav.algebra import Quaternion, q_exp, q_mul, q_rotmat
from tridentnav.earth import WGS84, EarthModel, GeodeticCoord, geodetic_to_ecef, level_frame_matrix
from tridentnav.ekf import (
    ERR_DIVERGED,
    FIX_ACCEPTED,
    FIX_GATED,
    FIX_UNUSED,
    PSD_TOL,
    FilterState,
    GpsFix,
    InitPriors,
    apply_feedback,
    euler_to_rotmat,
    gate_threshold,
    init_filter,
    initial_covariance,
    innovation,
    level_attitude,
    predict,
    raise_for_result,
    rotmat_to_euler,
    rotmat_to_quat,
    run_filter,
    update,
    yaw_sigma,
)
from tridentnav.error_model import ErrorState, NoiseParams, left_error
from tridentnav.errors import DivergenceError, IngestionError, InitializationError
from tridentnav.mechanization import NavState, stationary_imu
from tridentnav.simulator import ProfileSpec, Segment, SimulationSpec, simulate

FLAT = EarthModel(mu=0.0, omega_ie=0.0)
QUIET = NoiseParams(0.0, 0.0, 0.0, 0.0, 2.0, 0.2)
P0 = geodetic_to_ecef(GeodeticCoord.from_degrees(45.0, 7.0, 300.0))


def _fs(P=None, nav=None):
    nav = nav or NavState(Quaternion.identity(), np.zeros(3), np.array([WGS84.a, 0.0, 0.0]))
    return FilterState(nav, np.eye(15) if P is None else P)


def _random_pd(rng, n=15, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T / n + 0.1 * np.eye(n))


def _min_eig_ok(P):
    return np.linalg.eigvalsh(P).min() >= -PSD_TOL * np.trace(P)


@pytest.fixture(scope="module")
def biased_flight():
    sim = SimulationSpec(flight_120(), bias_w=BIAS_W, bias_f=BIAS_F)
    return fuse_sim(sim, InitPriors(sigma_yaw=0.1))


# --------------------------------------------------------------------------
# predict
# --------------------------------------------------------------------------


def test_gate_threshold(frozen):
    assert gate_threshold() == pytest.approx(frozen["chi2"]["q0999_dof6"], rel=1e-12)
    assert gate_threshold(0.975, 15) == pytest.approx(frozen["chi2"]["q0975_dof15"], rel=1e-12)
    assert gate_threshold(1.0) == math.inf


def test_predict_identity_transition_keeps_P():
    # zero noise and zero rates: the attitude block is carried unchanged
    P = np.zeros((15, 15))
    P[0:3, 0:3] = np.diag([1e-4, 2e-4, 3e-4])
    fs = _fs(P)
    out = predict(fs, np.zeros(3), np.zeros(3), 0.005, QUIET, FLAT)
    np.testing.assert_array_equal(out.P, P)
    assert out.nav.t == pytest.approx(0.005)


def test_predict_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        predict(_fs(), np.zeros(3), np.zeros(3), 0.0, QUIET)


def test_stationary_position_variance_grows():
    sim = SimulationSpec(ProfileSpec([Segment("hover", 62.0)], seed=1))
    out = simulate(sim)
    fixes = fixes_of(out.gps)
    fs0 = init_filter(fixes, out.imu)
    res = run_filter(fs0, out.imu, fixes, sim.noise, ins_only=True)
    assert res.ok
    pos = res.pdiag[:, 6:9].sum(axis=1)
    late = res.t <= fs0.nav.t + 60.0
    assert np.all(np.diff(pos[late]) >= 0.0)
    assert pos[late][-1] > 10 * pos[0]


def test_attitude_variance_grows_with_gyro_noise():
    # with no initial uncertainty, var(attitude) = sigma_w^2 t to leading order
    noise = NoiseParams()
    q = level_attitude([0, 0, 9.8], P0)
    w, f = stationary_imu(P0, q)
    nav = NavState(q, np.zeros(3), P0)
    fs = FilterState(nav, np.zeros((15, 15)))
    dt = 0.005
    for _ in range(200):
        fs = predict(fs, w, f, dt, noise)
    expected = noise.sigma_w**2 * 1.0
    np.testing.assert_allclose(np.diag(fs.P)[0:3], expected, rtol=1e-3)


def test_predict_symmetric_and_psd():
    rng = np.random.default_rng(0)
    fs = _fs(_random_pd(rng, scale=1e-2), NavState(Quaternion.identity(), np.zeros(3), P0))
    w, f = np.array([0.1, -0.2, 0.3]), np.array([0.5, 0.1, 9.8])
    for _ in range(100):
        fs = predict(fs, w, f, 0.005, NoiseParams())
        assert np.abs(fs.P - fs.P.T).max() <= 1e-12 * np.abs(fs.P).max()
        assert _min_eig_ok(fs.P)


# --------------------------------------------------------------------------
# innovation / update
# --------------------------------------------------------------------------


def test_innovation_zero():
    fs = _fs()
    rec = innovation(fs, GpsFix(0.0, fs.nav.p_e, fs.nav.v_e))
    np.testing.assert_array_equal(rec.dy, 0.0)
    assert rec.nis == 0.0


def test_innovation_unit_offset():
    fs = _fs(np.zeros((15, 15)))
    rec = innovation(fs, GpsFix(0.0, fs.nav.p_e + [1.0, 0, 0], fs.nav.v_e, r_p=1.0, r_v=1.0))
    np.testing.assert_array_equal(rec.dy, [1.0, 0, 0, 0, 0, 0])
    assert rec.nis == pytest.approx(1.0, rel=1e-15)
    np.testing.assert_array_equal(rec.S, np.eye(6))


def test_update_zero_gain_limit():
    fs = _fs()
    fix = GpsFix(1.0, fs.nav.p_e + [30.0, -5.0, 2.0], fs.nav.v_e + [1.0, 0, 0], r_p=1e9, r_v=1e9)
    out, rec = update(fs, fix)
    assert rec.accepted
    np.testing.assert_allclose(out.nav.to_array(), fs.nav.to_array(), rtol=0, atol=1e-9)


def test_update_half_gain():
    fs = _fs(np.eye(15))
    fix = GpsFix(1.0, fs.nav.p_e + [1.0, 2.0, -1.0], fs.nav.v_e + [0.5, 0, 0], r_p=1.0, r_v=1.0)
    out, rec = update(fs, fix)
    np.testing.assert_allclose(out.nav.p_e - fs.nav.p_e, [0.5, 1.0, -0.5], atol=1e-12)
    np.testing.assert_allclose(out.nav.v_e - fs.nav.v_e, [0.25, 0, 0], atol=1e-12)
    np.testing.assert_allclose(np.diag(out.P)[3:9], 0.5, rtol=1e-12)
    np.testing.assert_allclose(np.diag(out.P)[0:3], 1.0, rtol=1e-12)
    assert out.t_last_update == 1.0


def test_joseph_never_increases_diagonal():
    rng = np.random.default_rng(1)
    for _ in range(50):
        q = rng.standard_normal(4)
        nav = NavState(Quaternion.from_array(q / np.linalg.norm(q)), rng.normal(0, 50, 3), P0)
        d = np.repeat([0.01, 0.5, 5.0, 1e-3, 0.05], 3) * rng.uniform(0.2, 2.0)
        P = d[:, None] * _random_pd(rng) * d[None, :]
        fix = GpsFix(0.0, nav.p_e + rng.normal(0, 3, 3), nav.v_e + rng.normal(0, 0.3, 3),
                     rng.uniform(0.5, 5), rng.uniform(0.05, 0.5))
        out, rec = update(FilterState(nav, P), fix)
        assert rec.accepted
        d0, d1 = np.diag(P), np.diag(out.P)
        assert np.all(d1 <= d0 + 1e-12 * d0.max())
        assert _min_eig_ok(out.P)
        np.testing.assert_array_equal(out.P, out.P.T)


def test_gated_fix_leaves_state():
    fs = _fs()
    fix = GpsFix(1.0, fs.nav.p_e + [100.0, 0, 0], fs.nav.v_e, r_p=1.0, r_v=1.0)
    out, rec = update(fs, fix, gate=gate_threshold())
    assert not rec.accepted
    assert rec.nis > gate_threshold()
    assert out is fs


def test_update_reports_divergence():
    # a large position residual with a strongly coupled attitude prior asks
    # for an attitude correction beyond the small-error regime
    P = np.eye(15)
    P[0:3, 6:9] = P[6:9, 0:3] = 0.9 * np.eye(3)
    fs = _fs(P)
    fix = GpsFix(1.0, fs.nav.p_e + [5.0, 0, 0], fs.nav.v_e, r_p=0.1, r_v=0.1)
    with pytest.raises(DivergenceError):
        update(fs, fix)


# --------------------------------------------------------------------------
# feedback
# --------------------------------------------------------------------------


def test_feedback_zero_is_identity():
    nav = NavState(Quaternion.from_array([0.5, 0.5, 0.5, 0.5]), np.ones(3), P0, np.ones(3), np.ones(3))
    np.testing.assert_array_equal(apply_feedback(nav, ErrorState.zero()).to_array(), nav.to_array())


def test_feedback_attitude_first_order():
    nav = _fs().nav
    eps = 1e-4
    out = apply_feedback(nav, np.r_[2 * eps, 0, 0, np.zeros(12)])
    # the increment is (1, eps, 0, 0) = q_exp(eps x): a physical rotation of
    # 2 eps about body x, so dsigma is a rotation vector
    np.testing.assert_allclose(out.q_be.array, q_exp(np.array([eps, 0, 0])), atol=1e-12)
    np.testing.assert_allclose(left_error(nav, out)[0:3], [2 * eps, 0, 0], rtol=1e-7)
    assert abs(out.q_be.norm() - 1.0) < 1e-15


def test_feedback_rejects_large_attitude():
    with pytest.raises(DivergenceError):
        apply_feedback(_fs().nav, np.r_[0.5, 0, 0, np.zeros(12)])


def test_feedback_inverts_left_error():
    # feeding back the exact left error recovers the truth (to first order)
    rng = np.random.default_rng(2)
    q = rng.standard_normal(4)
    est = NavState(Quaternion.from_array(q / np.linalg.norm(q)), rng.normal(0, 50, 3), P0)
    truth = est.replace(
        q_be=Quaternion.from_array(q_mul(est.q_be.array, q_exp(np.array([1e-4, -2e-4, 1e-4])))),
        v_e=est.v_e + [0.3, -0.1, 0.2], p_e=est.p_e + [3.0, 1.0, -2.0],
        b_w=np.full(3, 1e-3), b_f=np.full(3, -0.02),
    )
    corrected = apply_feedback(est, left_error(est, truth))
    assert np.abs(left_error(corrected, truth)).max() < 1e-8


def test_perfect_update_reduces_measured_error():
    rng = np.random.default_rng(3)
    est = NavState(level_attitude([0, 0, 9.8], P0), np.array([10.0, 0, 0]), P0)
    scale = np.repeat([1e-3, 0.5, 5.0, 1e-4, 1e-2], 3)
    dx = rng.standard_normal(15) * scale
    truth = est.replace(
        q_be=Quaternion.from_array(q_mul(est.q_be.array, q_exp(0.5 * dx[0:3]))),
        v_e=est.v_e - est.C_be @ dx[3:6], p_e=est.p_e - est.C_be @ dx[6:9],
        b_w=dx[9:12], b_f=-dx[12:15],
    )
    P = np.diag(scale**2)
    fix = GpsFix(0.0, truth.p_e, truth.v_e, r_p=1e-3, r_v=1e-4)
    out, rec = update(FilterState(est, P), fix)
    before = left_error(est, truth)[3:9]
    after = left_error(out.nav, truth)[3:9]
    assert np.linalg.norm(after) * 10 <= np.linalg.norm(before)


def test_feedback_sign_shrinks_true_error():
    # settles the velocity sign: with exact fixes (the filter still assumes
    # the nominal GPS noise), updates move the estimate toward the simulated
    # truth and the opposite correction moves it away
    sim = SimulationSpec(flight_120(), bias_w=BIAS_W, bias_f=BIAS_F)
    out = simulate(sim)
    truth = out.truth_table()
    rows = truth[np.rint(out.gps[:, 0] * out.truth.rate).astype(int)]
    fixes = [GpsFix(r[0], r[8:11], r[5:8]) for r in rows]
    res = run_filter(init_filter(fixes, out.imu, InitPriors(sigma_yaw=0.1)), out.imu,
                     fixes, sim.noise)
    assert res.ok
    acc = np.flatnonzero(res.fix_status == FIX_ACCEPTED)
    better = worse_flipped = 0
    for j in acc:
        r = res.fix_row[j]
        tru = NavState.from_array(truth[int(round(res.t[r] * out.truth.rate)), 1:])
        post = NavState.from_array(res.states[r])
        prev = FilterState(NavState.from_array(res.states[r - 1]), np.eye(15))
        w, f = out.imu[r - 1, 1:4], out.imu[r - 1, 4:7]
        pre = predict(prev, w, f, res.t[r] - res.t[r - 1], sim.noise).nav
        e_pre = np.linalg.norm(left_error(pre, tru)[3:9])
        better += np.linalg.norm(left_error(post, tru)[3:9]) < e_pre
        flipped = pre.replace(p_e=2 * pre.p_e - post.p_e, v_e=2 * pre.v_e - post.v_e)
        worse_flipped += np.linalg.norm(left_error(flipped, tru)[3:9]) > e_pre
    assert better >= 0.95 * len(acc)
    assert worse_flipped == len(acc)


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------


def _static_window(q, n=400, rate=200.0):
    w, f = stationary_imu(P0, q)
    t = np.arange(1, n + 1) / rate
    return np.column_stack([t, np.tile(w, (n, 1)), np.tile(f, (n, 1))])


def test_leveling_recovers_roll_and_pitch():
    C_en = level_frame_matrix(P0)
    for roll, pitch, yaw in [(0.05, -0.03, 1.0), (-0.2, 0.1, -2.5), (0.0, 0.0, 0.3)]:
        q = Quaternion.from_array(rotmat_to_quat(C_en @ euler_to_rotmat(roll, pitch, yaw)))
        fs = init_filter([GpsFix(0.0, P0, np.zeros(3))], _static_window(q))
        r, p, y = rotmat_to_euler(C_en.T @ fs.nav.C_be)
        assert abs(math.degrees(r - roll)) < 0.01
        assert abs(math.degrees(p - pitch)) < 0.01
        assert y == pytest.approx(0.0, abs=1e-12)


def test_initial_covariance_properties():
    q = Quaternion.from_array(rotmat_to_quat(level_frame_matrix(P0) @ euler_to_rotmat(0.1, 0.2, 0)))
    for sy in (0.05, 0.3, 1.0):
        priors = InitPriors(sigma_yaw=sy)
        fs = init_filter([GpsFix(0.0, P0, np.zeros(3), 3.0, 0.1)], _static_window(q), priors)
        P = fs.P
        np.testing.assert_array_equal(P, P.T)
        assert np.linalg.eigvalsh(P).min() > 0
        assert yaw_sigma(fs.nav, P) == pytest.approx(sy, rel=1e-12)
        np.testing.assert_allclose(np.diag(P)[3:9], [0.01] * 3 + [9.0] * 3)
    P = initial_covariance(q.array, P0, InitPriors(sigma_p=5.0, sigma_v=0.5), 2.0, 0.2)
    np.testing.assert_allclose(np.diag(P)[3:9], [0.25] * 3 + [25.0] * 3)


def test_init_errors():
    q = level_attitude([0, 0, 9.8], P0)
    with pytest.raises(InitializationError, match="no GPS"):
        init_filter([], _static_window(q))
    with pytest.raises(InitializationError, match="leveling"):
        init_filter([GpsFix(0.0, P0, np.zeros(3))], _static_window(q, n=100))
    with pytest.raises(InitializationError):
        init_filter([GpsFix(0.0, P0, np.zeros(3))], np.empty((0, 7)))


def test_gps_fix_validation():
    with pytest.raises(ValueError):
        GpsFix(0.0, P0, np.zeros(3), r_p=0.0)


def test_rotmat_quat_roundtrip():
    rng = np.random.default_rng(4)
    for _ in range(100):
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        q *= np.sign(q[0])
        np.testing.assert_allclose(rotmat_to_quat(q_rotmat(q)), q, atol=1e-14)
    for angles in [(0.1, -0.4, 2.0), (-1.0, 0.2, -3.0)]:
        np.testing.assert_allclose(rotmat_to_euler(euler_to_rotmat(*angles)), angles, atol=1e-14)


# --------------------------------------------------------------------------
# whole-log runs
# --------------------------------------------------------------------------


def test_run_filter_matches_manual_loop():
    sim = SimulationSpec(flight_120(), bias_w=BIAS_W, bias_f=BIAS_F)
    out = simulate(sim)
    fixes = fixes_of(out.gps)
    fs = init_filter(fixes, out.imu)
    n = 2000
    res = run_filter(fs, out.imu[:n], fixes[:11], sim.noise)
    j = 1
    for k in range(n):
        t, w, f = out.imu[k, 0], out.imu[k, 1:4], out.imu[k, 4:7]
        fs = predict(fs, w, f, t - fs.nav.t, sim.noise)
        while j < len(fixes) and fixes[j].t <= t + 1e-12 and j < 11:
            fs, rec = update(fs, fixes[j], gate=gate_threshold())
            j += 1
    np.testing.assert_allclose(res.states[-1, 7:10], fs.nav.p_e, rtol=0, atol=1e-6)
    np.testing.assert_allclose(res.states[-1], fs.nav.to_array(), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(res.pdiag[-1], np.diag(fs.P), rtol=1e-8, atol=1e-18)


def test_fix_bookkeeping():
    sim = SimulationSpec(ProfileSpec([Segment("hover", 12.0)], seed=3))
    out = simulate(sim)
    fixes = fixes_of(out.gps)
    fs0 = init_filter(fixes[2:], out.imu)
    # an outlier gets gated, earlier fixes stay unused
    bad = fixes[6]
    fixes[6] = GpsFix(bad.t, bad.p_e + [200.0, 0, 0], bad.v_e)
    res = run_filter(fs0, out.imu, fixes, sim.noise)
    assert res.ok
    assert list(res.fix_status[:3]) == [FIX_UNUSED] * 3
    assert res.fix_status[6] == FIX_GATED
    assert res.counters["fixes_gated"] == 1
    assert np.all(res.fix_status[[3, 4, 5, 7, 8]] == FIX_ACCEPTED)
    # the fix lands on the IMU row with the same stamp
    for j in np.flatnonzero(res.fix_row >= 0):
        assert res.t[res.fix_row[j]] == pytest.approx(res.fix_t[j], abs=1e-9)
    only = run_filter(fs0, out.imu, fixes, sim.noise, ins_only=True)
    assert np.all(only.fix_status == FIX_UNUSED)
    assert np.all(only.fix_row == -1)


def test_fixes_sharing_an_interval_are_both_applied():
    sim = SimulationSpec(ProfileSpec([Segment("hover", 8.0)], seed=3))
    out = simulate(sim)
    fixes = fixes_of(out.gps)
    fs0 = init_filter(fixes, out.imu)
    early = GpsFix(fixes[4].t - 2e-3, fixes[4].p_e, fixes[4].v_e)
    g = fixes[:4] + [early] + fixes[4:]
    res = run_filter(fs0, out.imu, g, sim.noise)
    assert res.ok
    assert res.fix_status[4] == res.fix_status[5] == FIX_ACCEPTED
    assert res.fix_row[4] == res.fix_row[5]


def test_run_filter_rejects_unsorted_imu():
    sim = SimulationSpec(ProfileSpec([Segment("hover", 4.0)], seed=3))
    out = simulate(sim)
    fixes = fixes_of(out.gps)
    fs0 = init_filter(fixes, out.imu)
    imu = out.imu.copy()
    imu[[500, 501]] = imu[[501, 500]]
    with pytest.raises(IngestionError):
        run_filter(fs0, imu, fixes, sim.noise)


def test_divergence_is_reported_not_raised():
    sim = SimulationSpec(ProfileSpec([Segment("hover", 6.0)], seed=3))
    out = simulate(sim)
    fixes = fixes_of(out.gps)
    fs0 = init_filter(fixes, out.imu)
    P = fs0.P.copy()
    P[0:3, 0:3] = np.eye(3)
    P[0:3, 6:9] = P[6:9, 0:3] = 0.95 * np.sqrt(P[6, 6]) * np.eye(3)
    fixes[2] = GpsFix(fixes[2].t, fixes[2].p_e + [3.0, 3.0, 0.0], fixes[2].v_e)
    res = run_filter(fs0.replace(P=P), out.imu, fixes, sim.noise)
    assert res.code == ERR_DIVERGED
    assert not res.ok
    assert res.n_rows == res.code_index
    assert np.all(np.isfinite(res.states[:res.n_rows]))
    assert np.all(np.isnan(res.states[res.n_rows]))
    with pytest.raises(DivergenceError):
        raise_for_result(res)


def test_flight_covariance_health(biased_flight):
    out, res = biased_flight
    assert res.ok
    for P in res.P_fix[res.fix_status == FIX_ACCEPTED]:
        assert np.abs(P - P.T).max() <= 1e-12 * np.abs(P).max()
        assert _min_eig_ok(P)
    assert np.all(res.pdiag >= 0)


def test_flight_position_rmse(biased_flight):
    out, res = biased_flight
    truth = out.truth_table()
    late = res.t >= 30.0
    k = np.rint(res.t[late] * out.truth.rate).astype(int)
    err = res.states[late, 7:10] - truth[k, 8:11]
    rmse = math.sqrt(np.mean(np.sum(err**2, axis=1)) / 3)
    assert rmse <= 1.5 * NoiseParams().r_p


def test_flight_gyro_bias_recovered(biased_flight):
    out, res = biased_flight
    t, dx, P = fix_errors(out, res)
    late = t >= 60.0
    sig = np.sqrt(np.diagonal(P[late], axis1=1, axis2=2))
    assert np.all(np.abs(dx[late, 9:12]) <= 3 * sig[:, 9:12])
    bw = res.states[-1, 10:13]
    np.testing.assert_allclose(bw, BIAS_W, atol=3 * sig[-1, 9:12].max())
