import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cqdsim.core import FRISCH_SEGRE as GEOM
from cqdsim.core import K39, MU0
from cqdsim.field import (
    adiabaticity,
    field_on_path,
    null_point,
    quadrupole_field,
    quadrupole_gradient,
    quadrupole_on_path,
    quadrupole_path_coefficients,
    total_field,
    wire_field,
)

SWEEP = np.geomspace(0.01, 0.5, 25)
currents = st.floats(0.01, 0.5)


def test_wire_field_at_origin():
    B = wire_field(0.0, 0.0, 0.02, GEOM)
    assert B == pytest.approx([0.0, MU0 * 0.02 / (2 * np.pi * 105e-6), 0.0])
    assert B[1] == pytest.approx(38.10e-6, rel=1e-3)


def test_wire_field_ampere_magnitude(rng):
    y, z = rng.uniform(-1e-3, 1e-3, (2, 100))
    B = wire_field(y, z, 0.3, GEOM)
    r = np.hypot(y, z + GEOM.z_a)
    np.testing.assert_allclose(np.linalg.norm(B, axis=-1), MU0 * 0.3 / (2 * np.pi * r), rtol=1e-13)


def test_wire_field_zero_current_and_symmetry():
    assert np.all(wire_field(1e-4, 2e-5, 0.0, GEOM) == 0.0)
    z = -GEOM.z_a + 3e-5
    a, b = wire_field(4e-5, z, 0.1, GEOM), wire_field(-4e-5, z, 0.1, GEOM)
    assert a[1] == b[1] and a[2] == -b[2]


def test_wire_field_singular_at_wire():
    with pytest.raises(ValueError):
        wire_field(0.0, -GEOM.z_a, 0.1, GEOM)


def test_total_field_examples():
    assert total_field(0.0, 0.0, 0.02, GEOM) == pytest.approx([0.0, 38.10e-6, 42e-6], rel=1e-3)
    np.testing.assert_array_equal(total_field(3e-4, 1e-5, 0.0, GEOM), [0.0, 0.0, 42e-6])


@pytest.mark.parametrize("I_w", SWEEP)
def test_total_field_vanishes_at_null_point(I_w):
    np_ = null_point(I_w, GEOM)
    B = total_field(np_.y_NP, -GEOM.z_a, I_w, GEOM)
    assert np.max(np.abs(B)) <= 4 * np.finfo(float).eps * GEOM.B_r


def test_field_on_path_examples():
    assert field_on_path(0.0, 0.02, GEOM) == pytest.approx(total_field(0.0, 0.0, 0.02, GEOM))
    np_ = null_point(0.02, GEOM)
    # on the beam line (z = 0) B_z does not cancel at t_NP: the residual is
    # B_r z_a^2 / (z_a^2 + y_NP^2); only the quadrupole form vanishes there
    B = field_on_path(np_.t_NP, 0.02, GEOM)
    assert B[2] == pytest.approx(GEOM.B_r * GEOM.z_a**2 / (GEOM.z_a**2 + np_.y_NP**2), rel=1e-12)
    assert B[1] > 0
    assert quadrupole_on_path(np_.t_NP, 0.02, GEOM)[2] == 0.0
    np.testing.assert_array_equal(field_on_path(3e-6, 0.0, GEOM), [0.0, 0.0, 42e-6])


@pytest.mark.parametrize("I_w", [0.1, 0.3, 0.5])
def test_exact_path_field_reverses_where_quadratic_has_roots(I_w):
    # B_z = 0 on z = 0 where y^2 - y_NP y + z_a^2 = 0
    y_np = null_point(I_w, GEOM).y_NP
    disc = y_np**2 - 4 * GEOM.z_a**2
    assert disc > 0
    for y in ((y_np - np.sqrt(disc)) / 2, (y_np + np.sqrt(disc)) / 2):
        assert abs(field_on_path(y / GEOM.v, I_w, GEOM)[2]) < 1e-12 * GEOM.B_r


def test_field_on_path_window():
    field_on_path(GEOM.half_transit, 0.1, GEOM)
    with pytest.raises(ValueError):
        field_on_path(GEOM.half_transit * 1.001, 0.1, GEOM)


def test_null_point_values():
    np_ = null_point(0.02, GEOM)
    assert np_.y_NP == pytest.approx(95.24e-6, rel=1e-4)
    assert np_.t_NP == pytest.approx(119.05e-9, rel=1e-4)
    assert null_point(0.04, GEOM).y_NP == pytest.approx(2 * np_.y_NP, rel=1e-15)
    for bad in (0.0, -0.1):
        with pytest.raises(ValueError):
            null_point(bad, GEOM)


def test_null_point_matches_root_finding():
    from scipy.optimize import brentq

    y = brentq(lambda y: total_field(y, -GEOM.z_a, 0.02, GEOM)[2], 1e-6, 1e-3, xtol=1e-18)
    assert y == pytest.approx(null_point(0.02, GEOM).y_NP, rel=1e-10)


def test_quadrupole_examples():
    I_w = 0.1
    np_ = null_point(I_w, GEOM)
    np.testing.assert_array_equal(quadrupole_field(np_.y_NP, -GEOM.z_a, I_w, GEOM), 0.0)
    g = quadrupole_gradient(I_w, GEOM)
    assert g == pytest.approx(2 * np.pi * GEOM.B_r**2 / (MU0 * I_w))
    d = 1e-6
    assert quadrupole_field(np_.y_NP + d, -GEOM.z_a, I_w, GEOM)[2] == pytest.approx(g * d)
    assert quadrupole_field(np_.y_NP, -GEOM.z_a + d, I_w, GEOM)[1] == pytest.approx(g * d)
    with pytest.raises(ValueError):
        quadrupole_field(0.0, 0.0, 0.0, GEOM)


def _taylor_slope(I_w, direction):
    np_ = null_point(I_w, GEOM)
    rho = np.geomspace(0.1e-6, 10e-6, 9)
    y = np_.y_NP + rho * direction[0]
    z = -GEOM.z_a + rho * direction[1]
    rem = np.linalg.norm(quadrupole_field(y, z, I_w, GEOM) - total_field(y, z, I_w, GEOM), axis=-1)
    return np.polyfit(np.log(rho), np.log(rem), 1)[0]


@pytest.mark.parametrize("I_w", [0.01, 0.1, 0.5])
@pytest.mark.parametrize("angle", [0.3, 1.2, 2.5, 4.0])
def test_quadrupole_taylor_remainder_is_quadratic(I_w, angle):
    assert _taylor_slope(I_w, (np.cos(angle), np.sin(angle))) == pytest.approx(2.0, abs=0.1)


def test_quadrupole_divergence_and_curl_free():
    I_w, h = 0.1, 1e-9
    for y, z in [(1e-5, 2e-6), (1.3e-4, -1.1e-4), (-5e-5, 3e-5)]:
        dBdy = (quadrupole_field(y + h, z, I_w, GEOM) - quadrupole_field(y - h, z, I_w, GEOM)) / (2 * h)
        dBdz = (quadrupole_field(y, z + h, I_w, GEOM) - quadrupole_field(y, z - h, I_w, GEOM)) / (2 * h)
        g = quadrupole_gradient(I_w, GEOM)
        assert abs(dBdy[1] + dBdz[2]) < 1e-6 * g
        assert abs(dBdy[2] - dBdz[1]) < 1e-6 * g


@given(currents, st.floats(-10e-6, 10e-6))
def test_quadrupole_on_path_properties(I_w, dt):
    np_ = null_point(I_w, GEOM)
    g = quadrupole_gradient(I_w, GEOM)
    B0 = quadrupole_on_path(np_.t_NP, I_w, GEOM)
    assert B0[0] == 0 and B0[2] == 0 and B0[1] == pytest.approx(g * GEOM.z_a)
    a = quadrupole_on_path(np_.t_NP + dt, I_w, GEOM)[2]
    b = quadrupole_on_path(np_.t_NP - dt, I_w, GEOM)[2]
    assert a == pytest.approx(-b, rel=1e-9, abs=1e-12 * g * GEOM.v * 1e-6)
    t = np_.t_NP + dt
    np.testing.assert_allclose(
        quadrupole_on_path(t, I_w, GEOM), quadrupole_field(GEOM.v * t, 0.0, I_w, GEOM), rtol=1e-12, atol=1e-18
    )
    B0c, B1c = quadrupole_path_coefficients(I_w, GEOM)
    np.testing.assert_allclose(B0c + B1c * t, quadrupole_on_path(t, I_w, GEOM), rtol=1e-9, atol=1e-15)


@given(currents, st.floats(-1e-3, 1e-3), st.floats(-1e-3, 1e-3))
def test_all_fields_lie_in_yz_plane(I_w, y, z):
    if np.hypot(y, z + GEOM.z_a) < 1e-9:
        return
    assert wire_field(y, z, I_w, GEOM)[0] == 0.0
    assert total_field(y, z, I_w, GEOM)[0] == 0.0
    assert quadrupole_field(y, z, I_w, GEOM)[0] == 0.0


def _k_finite_difference(t, I_w):
    """|gamma_e B| / |d/dt arctan(B_z/B_y)| by a five-point stencil."""
    angle = lambda tt: np.arctan2(field_on_path(tt, I_w, GEOM)[..., 2], field_on_path(tt, I_w, GEOM)[..., 1])
    t_np = null_point(I_w, GEOM).t_NP
    h = np.minimum(1e-4 * np.maximum(np.abs(t - t_np), 1e-9), 1e-9)
    rate = (-angle(t + 2 * h) + 8 * angle(t + h) - 8 * angle(t - h) + angle(t - 2 * h)) / (12 * h)
    B = np.linalg.norm(field_on_path(t, I_w, GEOM), axis=-1)
    return abs(K39.gamma_e) * B / np.abs(rate)


@pytest.mark.parametrize("I_w", SWEEP)
def test_adiabaticity_matches_finite_difference(I_w):
    t = np.linspace(-GEOM.half_transit, GEOM.half_transit, 1000) * 0.999
    np.testing.assert_allclose(adiabaticity(t, I_w, GEOM), _k_finite_difference(t, I_w), rtol=1e-6)


def test_adiabaticity_pole_and_trough():
    I_w = 0.1
    t_np = null_point(I_w, GEOM).t_NP
    assert adiabaticity(t_np / 2, I_w, GEOM) == np.inf
    t = np.linspace(-GEOM.half_transit, GEOM.half_transit, 200001)
    k = adiabaticity(t, I_w, GEOM)
    after = t > t_np / 2 + 1e-8
    trough = t[after][np.argmin(k[after])]
    assert abs(trough - t_np) < 0.05 * t_np
    before = t < t_np / 2
    assert np.max(k[before]) > 1e3


def test_adiabaticity_rejects_bad_current():
    with pytest.raises(ValueError):
        adiabaticity(0.0, 0.0, GEOM)
