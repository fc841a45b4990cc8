import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_positions
from tridentnav.earth import (
    WGS84,
    EarthModel,
    GeodeticCoord,
    ecef_to_geodetic,
    effective_gravity,
    enu_to_ecef_matrix,
    geodetic_to_ecef,
    gravitation,
    gravitation_jacobian,
    gravity_jacobian,
    level_frame_matrix,
)
from tridentnav.errors import ConfigError, DomainError

J2 = EarthModel(use_j2=True)
NO_SPIN = EarthModel(omega_ie=0.0)


def _num_jac(fun, p, h=1.0):
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        cols.append((fun(p + e) - fun(p - e)) / (2 * h))
    return np.column_stack(cols)


@pytest.mark.parametrize("tag,model", [("central", WGS84), ("j2", J2)])
def test_gravity_matches_potential_gradient(frozen, tag, model):
    # oracle: gradient / Hessian of the potential, differentiated symbolically
    for case in frozen["gravity"]:
        p = np.array(case["p"])
        np.testing.assert_allclose(gravitation(p, model), case[f"grav_{tag}"], rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(effective_gravity(p, model), case[f"eff_{tag}"], rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(gravity_jacobian(p, model), case[f"jac_{tag}"], rtol=1e-12, atol=1e-20)


def test_equator_examples():
    p = np.array([WGS84.a, 0, 0])
    g = gravitation(p)
    assert g[0] == pytest.approx(-WGS84.mu / WGS84.a**2, rel=1e-15)
    assert g[0] == pytest.approx(-9.7983, abs=1e-4)
    ge = effective_gravity(p)
    assert ge[0] == pytest.approx(-9.7644, abs=1e-4)
    assert ge[0] == pytest.approx(-WGS84.mu / WGS84.a**2 + WGS84.omega_ie**2 * WGS84.a, rel=1e-14)
    jac = gravitation_jacobian(p)
    assert jac[0, 0] == pytest.approx(2 * WGS84.mu / WGS84.a**3, rel=1e-14)


def test_pole_has_no_centripetal_term():
    p = np.array([0.0, 0.0, WGS84.a])
    np.testing.assert_array_equal(effective_gravity(p), gravitation(p))


def test_spinless_effective_gravity_is_gravitation():
    p = np.array([4.0e6, -3.0e6, 3.5e6])
    np.testing.assert_array_equal(effective_gravity(p, NO_SPIN), gravitation(p, NO_SPIN))


@given(st.integers(0, 10**6))
def test_central_field_symmetries(seed):
    p = random_positions(np.random.default_rng(seed), 1)[0]
    np.testing.assert_array_equal(gravitation(-p), -gravitation(p))
    assert np.linalg.norm(gravitation(2 * p)) == pytest.approx(np.linalg.norm(gravitation(p)) / 4, rel=1e-14)


def test_central_jacobian_is_traceless():
    for p in random_positions(np.random.default_rng(0), 20):
        jac = gravitation_jacobian(p)
        assert abs(np.trace(jac)) < 1e-20
        assert abs(np.trace(gravitation_jacobian(p, J2))) < 1e-20


@pytest.mark.parametrize("model", [WGS84, J2])
def test_jacobian_matches_finite_differences(model):
    worst = 0.0
    for p in random_positions(np.random.default_rng(1), 100):
        ana = gravity_jacobian(p, model)
        num = _num_jac(lambda x: effective_gravity(x, model), p, 1.0)
        worst = max(worst, np.abs(ana - num).max() / np.abs(ana).max())
    assert worst < 1e-6


@pytest.mark.parametrize("model", [WGS84, J2])
def test_effective_gravity_is_curl_free(model):
    for p in random_positions(np.random.default_rng(2), 50):
        num = _num_jac(lambda x: effective_gravity(x, model), p, 1.0)
        assert np.abs(num - num.T).max() < 1e-9
        ana = gravity_jacobian(p, model)
        np.testing.assert_allclose(ana, ana.T, rtol=0, atol=1e-21)


def test_rejects_positions_near_geocenter():
    for fn in (gravitation, effective_gravity, gravity_jacobian):
        with pytest.raises(DomainError, match="too close to geocenter"):
            fn([1.0, 2.0, 3.0])


def test_earth_model_validation():
    with pytest.raises(ConfigError):
        EarthModel(mu=-1.0)
    with pytest.raises(ConfigError):
        EarthModel(a=0.0)
    with pytest.raises(ConfigError):
        EarthModel(f=1.5)
    assert WGS84.b == pytest.approx(WGS84.a * (1 - WGS84.f))


def test_geodetic_matches_oracle(frozen):
    for case in frozen["geodetic"]:
        g = GeodeticCoord.from_degrees(case["lat_deg"], case["lon_deg"], case["h"])
        np.testing.assert_allclose(geodetic_to_ecef(g), case["ecef"], rtol=0, atol=2e-9)
    inv = frozen["geodetic_inverse"]
    g = ecef_to_geodetic(inv["ecef"])
    assert g.lat == pytest.approx(inv["lat"], abs=1e-15)
    assert g.lon == pytest.approx(inv["lon"], abs=1e-15)
    assert g.h == pytest.approx(inv["h"], abs=1e-8)


def test_geodetic_examples():
    np.testing.assert_array_equal(geodetic_to_ecef(GeodeticCoord(0, 0, 0)), [WGS84.a, 0, 0])
    pole = geodetic_to_ecef(GeodeticCoord(math.pi / 2, 1.234, 0.0))
    np.testing.assert_allclose(pole, [0, 0, WGS84.b], rtol=0, atol=1e-9)


def test_geodetic_roundtrip():
    rng = np.random.default_rng(3)
    lat = np.radians(rng.uniform(-89.9, 89.9, 1000))
    lon = rng.uniform(-math.pi, math.pi, 1000)
    h = rng.uniform(-1000, 20000, 1000)
    worst = 0.0
    for la, lo, hh in zip(lat, lon, h):
        p = geodetic_to_ecef(GeodeticCoord(la, lo, hh))
        g = ecef_to_geodetic(p)
        worst = max(worst, np.linalg.norm(geodetic_to_ecef(g) - p))
        assert g.lon == pytest.approx(lo, abs=1e-14)
        assert -math.pi < g.lon <= math.pi
    assert worst < 1e-8


def test_geodetic_coord_validation():
    from tridentnav.errors import DomainError as DE

    with pytest.raises(DE):
        GeodeticCoord(2.0, 0.0, 0.0)


def test_local_frames_are_rotations():
    for p in random_positions(np.random.default_rng(4), 10):
        g = ecef_to_geodetic(p)
        for M in (enu_to_ecef_matrix(g.lat, g.lon), level_frame_matrix(p)):
            np.testing.assert_allclose(M.T @ M, np.eye(3), atol=1e-15)
            assert np.linalg.det(M) == pytest.approx(1.0, abs=1e-14)
        up = level_frame_matrix(p)[:, 2]
        ge = effective_gravity(p)
        np.testing.assert_allclose(up, -ge / np.linalg.norm(ge), atol=1e-15)


@settings(max_examples=50)
@given(st.floats(-89.0, 89.0), st.floats(-179.0, 179.0))
def test_plumb_line_close_to_ellipsoid_normal(lat, lon):
    # effective gravity is nearly normal to the ellipsoid; the central model
    # leaves a deflection of about 0.2 deg at mid latitudes
    p = geodetic_to_ecef(GeodeticCoord.from_degrees(lat, lon, 0.0))
    up = level_frame_matrix(p)[:, 2]
    normal = enu_to_ecef_matrix(math.radians(lat), math.radians(lon))[:, 2]
    assert math.degrees(math.acos(min(1.0, up @ normal))) < 0.25
