import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glancer import symbol as sym
from glancer.errors import EllipticPoint, NotCharacteristic, NotOnBoundary
from glancer.symbol import PhasePoint, Tag

angles = st.floats(0.0, 2 * np.pi, allow_nan=False)


def unit_point(t, x, tau, theta):
    return PhasePoint(
        t=t, x=np.asarray(x, dtype=float), tau=tau,
        xi=abs(tau) * np.array([np.cos(theta), np.sin(theta)]),
    )


def test_p_eval_characteristic_iff_unit_speed(half_plane):
    on = unit_point(0.0, [0.0, 1.0], 1.0, 0.3)
    assert sym.p_eval(half_plane, on) == pytest.approx(0.0, abs=1e-15)
    off = PhasePoint(0.0, np.array([0.0, 1.0]), 1.0, np.array([0.5, 0.0]))
    assert sym.p_eval(half_plane, off) == pytest.approx(-0.75)


@given(t=st.floats(-2, 2), x1=st.floats(-2, 2), x2=st.floats(0.1, 2),
       tau=st.floats(0.5, 2), th=angles)
def test_phase_point_vector_roundtrip(t, x1, x2, tau, th):
    rho = unit_point(t, [x1, x2], tau, th)
    back = PhasePoint.from_vector(rho.as_vector(), 2)
    assert back.t == rho.t and back.tau == rho.tau
    assert np.array_equal(back.x, rho.x) and np.array_equal(back.xi, rho.xi)


def test_phase_point_dict_roundtrip():
    rho = unit_point(0.5, [1.0, 2.0], -1.0, 1.1)
    back = PhasePoint.from_dict(rho.to_dict())
    assert np.allclose(back.as_vector(), rho.as_vector())


def test_hpz_sign_convention(half_plane):
    inward = PhasePoint(0.0, np.array([0.0, 0.0]), 1.0, np.array([0.0, 1.0]))
    assert sym.hpz(half_plane, inward) == pytest.approx(2.0)
    outward = PhasePoint(0.0, np.array([0.0, 0.0]), 1.0, np.array([0.0, -1.0]))
    assert sym.hpz(half_plane, outward) == pytest.approx(-2.0)


def test_hz2p_and_alpha_flat(half_plane):
    # phi has unit conormal on the wall, so hz2p = 2 and alpha = 1/2
    assert sym.hz2p(half_plane, [0.3, 0.0]) == pytest.approx(2.0)
    assert sym.alpha(half_plane, [0.3, 0.0]) == pytest.approx(0.5)


def test_hp2z_disk_gliding_value(disk):
    # circular gliding at unit speed: phi = 1 - r gives hp2z = -4
    rho = PhasePoint(0.0, np.array([1.0, 0.0]), 1.0, np.array([0.0, 1.0]))
    assert sym.hp2z(disk, rho) == pytest.approx(-4.0, abs=1e-9)


def test_hamiltonian_field_flat(half_plane):
    rho = unit_point(0.0, [0.0, 1.0], 1.0, 0.3)
    upd = sym.hamiltonian_field(half_plane, rho)
    assert upd.dt == pytest.approx(-2.0)
    assert np.allclose(upd.dx, 2.0 * rho.xi)
    assert upd.dtau == 0.0
    assert np.allclose(upd.dxi, 0.0)


# ---------------------------------------------------------------------------
# classification


def test_classify_hyperbolic_pair(half_plane):
    hit = PhasePoint(0.0, np.array([0.2, 0.0]), 1.0, np.array([0.6, -0.8]))
    bc = sym.classify_boundary_point(half_plane, hit)
    assert bc.tag is Tag.HYPERBOLIC_OUT and bc.hpz < 0
    bounced = sym.sigma(half_plane, hit)
    assert sym.classify_boundary_point(half_plane, bounced).tag is Tag.HYPERBOLIC_IN


def test_classify_gliding_vs_diffractive(disk, exterior):
    x = np.array([1.0, 0.0])
    xi = np.array([0.0, 1.0])
    tangent = PhasePoint(0.0, x, 1.0, xi)
    assert sym.classify_boundary_point(disk, tangent).tag is Tag.GLIDING
    assert sym.classify_boundary_point(exterior, tangent).tag is Tag.DIFFRACTIVE


def test_classify_glancing_order_three(strip):
    # flat wall: tangency with hp2z = 0 exactly
    rho = PhasePoint(0.0, np.array([0.0, 0.0]), 1.0, np.array([1.0, 0.0]))
    bc = sym.classify_boundary_point(strip, rho)
    assert bc.tag is Tag.GLANCING3
    assert bc.hpz == 0.0 and bc.hp2z == 0.0


def test_classify_elliptic_tangential(disk):
    # spatial speed below |tau|: p < 0 fails, tangential projection elliptic
    rho = PhasePoint(0.0, np.array([1.0, 0.0]), 1.0, np.array([0.0, 0.2]))
    with pytest.raises(NotCharacteristic):
        sym.classify_boundary_point(disk, rho)
    fat = PhasePoint(0.0, np.array([1.0, 0.0]), 0.1, np.array([0.0, 1.0]))
    assert sym.classify_boundary_point(disk, fat).tag is Tag.ELLIPTIC_TANGENTIAL


def test_classify_requires_boundary(disk):
    with pytest.raises(NotOnBoundary):
        sym.classify_boundary_point(disk, unit_point(0.0, [0.0, 0.0], 1.0, 0.0))


# ---------------------------------------------------------------------------
# reflection


@given(x1=st.floats(-1, 1), th=st.floats(0.1, np.pi - 0.1), tau=st.floats(0.5, 1.5))
def test_sigma_is_an_involution(half_plane, x1, th, tau):
    rho = PhasePoint(
        0.0, np.array([x1, 0.0]), tau,
        tau * np.array([np.cos(th), -np.sin(th)]),
    )
    twice = sym.sigma(half_plane, sym.sigma(half_plane, rho))
    assert np.allclose(twice.as_vector(), rho.as_vector(), atol=1e-14)


@given(phase=angles, th=st.floats(0.15, np.pi - 0.15))
def test_sigma_disk_preserves_angle_and_energy(disk, phase, th):
    x = np.array([np.cos(phase), np.sin(phase)])
    n, n_star = np.array([-np.cos(phase), -np.sin(phase)]), None
    tangent = np.array([-np.sin(phase), np.cos(phase)])
    xi = np.cos(th) * tangent - np.sin(th) * n  # outgoing toward the wall
    rho = PhasePoint(0.0, x, 1.0, xi)
    out = sym.sigma(disk, rho)
    assert float(out.xi @ tangent) == pytest.approx(float(xi @ tangent), abs=1e-12)
    assert float(out.xi @ n) == pytest.approx(-float(xi @ n), abs=1e-12)
    assert np.linalg.norm(out.xi) == pytest.approx(np.linalg.norm(xi), abs=1e-12)


def test_project_parallel_kills_normal_component(disk):
    x = np.array([np.cos(0.4), np.sin(0.4)])
    rho = PhasePoint(0.0, x, 1.0, np.array([0.3, 0.9]))
    par = sym.project_parallel(disk, rho)
    assert abs(sym.hpz(disk, par)) < 1e-12


def test_hyperbolic_lifts_orientation_and_sigma(disk):
    x = np.array([np.cos(0.4), np.sin(0.4)])
    rho = PhasePoint(0.0, x, 1.0, np.array([0.3, 0.9]))
    par = sym.project_parallel(disk, rho)
    minus, plus = sym.hyperbolic_lifts(disk, par)
    assert sym.hpz(disk, minus) < 0 < sym.hpz(disk, plus)
    for lift in (minus, plus):
        assert abs(sym.p_eval(disk, lift)) < 1e-12
    assert np.allclose(sym.sigma(disk, minus).as_vector(), plus.as_vector(), atol=1e-12)


def test_hyperbolic_lifts_reject_elliptic(disk):
    x = np.array([1.0, 0.0])
    par = PhasePoint(0.0, x, 0.5, np.array([0.0, 1.0]))  # |xi_par| > |tau|
    with pytest.raises(EllipticPoint):
        sym.hyperbolic_lifts(disk, par)


# ---------------------------------------------------------------------------
# gliding field


def test_gliding_field_tangent_to_constraints(disk):
    rho = PhasePoint(0.0, np.array([1.0, 0.0]), 1.0, np.array([0.0, 1.0]))
    upd = sym.gliding_field(disk, rho)
    h = 1e-6
    moved = PhasePoint.from_vector(rho.as_vector() + h * upd.as_vector(), 2)
    assert abs(disk.boundary.phi(moved.x)) < 5e-12  # second order in h
    assert abs(sym.hpz(disk, moved)) < 5e-6
    assert abs(sym.p_eval(disk, moved)) < 5e-6


def test_gliding_field_phi_derivative_is_hpz(disk):
    # off the constraint set the field still moves phi at rate hpz
    rho = PhasePoint(0.0, np.array([0.98, 0.0]), 1.0, np.array([0.1, 1.0]))
    upd = sym.gliding_field(disk, rho)
    dphi = np.asarray(disk.boundary.dphi(rho.x))
    assert float(dphi @ upd.dx) == pytest.approx(sym.hpz(disk, rho), rel=1e-9)


def test_gliding_field_outside_band_rejected(disk):
    rho = PhasePoint(0.0, np.array([0.2, 0.0]), 1.0, np.array([0.0, 1.0]))
    with pytest.raises(NotOnBoundary):
        sym.gliding_field(disk, rho)
