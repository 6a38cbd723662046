"""Localized fiber rotations: profiles, diffeomorphism guards, Jacobians."""

import math

import numpy as np
import pytest

from skewlab.rotations import (MAX_TWIST, SHEAR_COEF, LocalizedRotation,
                               RotationComposition, bump, bump_deriv,
                               shear_margin, smoothstep, smoothstep_deriv)
from skewlab.torus import TorusPoint2, displacement, torus_dist


def _rot(cx=0.5, cy=0.5, rho=0.2, theta=0.25):
    return LocalizedRotation(center=TorusPoint2(cx, cy), rho=rho, theta=theta)


# ---------------------------------------------------------------------------
# radial profiles

def test_smoothstep_endpoints_and_monotonicity():
    assert smoothstep(0.0) == 0.0
    assert smoothstep(1.0) == 1.0
    assert smoothstep(0.5) == pytest.approx(0.5, abs=1e-15)
    assert smoothstep(-3.0) == 0.0 and smoothstep(7.0) == 1.0
    t = np.linspace(0, 1, 1001)
    assert np.all(np.diff(smoothstep(t)) >= 0.0)


def test_smoothstep_deriv_matches_finite_differences():
    t = np.linspace(0.01, 0.99, 200)
    h = 1e-6
    fd = (smoothstep(t + h) - smoothstep(t - h)) / (2 * h)
    np.testing.assert_allclose(smoothstep_deriv(t), fd, atol=1e-8)


def test_bump_plateau_and_support():
    rho = 0.1
    r = np.array([0.0, 0.05, rho])
    assert np.all(bump(r, rho) == 1.0)
    assert np.all(bump(np.array([2 * rho, 0.3, 10.0]), rho) == 0.0)
    mid = np.linspace(rho, 2 * rho, 100)
    assert np.all(np.diff(bump(mid, rho)) <= 0.0)


def test_bump_deriv_matches_finite_differences():
    rho = 0.12
    r = np.linspace(0.0, 0.3, 400)
    h = 1e-7
    fd = (bump(r + h, rho) - bump(np.maximum(r - h, 0.0), rho)) / (2 * h)
    # Skip the two profile seams where the quintic's third derivative jumps.
    mask = (np.abs(r - rho) > 1e-3) & (np.abs(r - 2 * rho) > 1e-3)
    np.testing.assert_allclose(bump_deriv(r, rho)[mask], fd[mask], atol=1e-5)


def test_shear_coef_is_sup_of_radial_twist():
    # |d/dr bump(r, rho)| * r peaks at SHEAR_COEF regardless of rho.
    for rho in (0.05, 0.1, 0.2):
        r = np.linspace(rho, 2 * rho, 200001)
        peak = np.max(np.abs(bump_deriv(r, rho)) * r)
        assert peak == pytest.approx(SHEAR_COEF, abs=1e-6)
    assert shear_margin(0.2) == pytest.approx(0.2 * SHEAR_COEF, abs=1e-15)


# ---------------------------------------------------------------------------
# LocalizedRotation construction guards

def test_rotation_rejects_oversized_support():
    with pytest.raises(ValueError):
        _rot(rho=0.25)  # 2*rho == 0.5: support no longer embeds
    with pytest.raises(ValueError):
        _rot(rho=0.0)


def test_rotation_rejects_folding_twist():
    # Twist steep enough to fold the annulus must be refused at construction.
    bad = MAX_TWIST / SHEAR_COEF + 1e-6
    with pytest.raises(ValueError):
        _rot(theta=bad)
    _rot(theta=bad - 2e-6)  # just inside the bound constructs fine


# ---------------------------------------------------------------------------
# LocalizedRotation behavior

def test_zero_angle_is_bit_exact_identity():
    r = _rot(theta=0.0)
    pts = np.random.default_rng(0).random((50, 2))
    assert np.array_equal(r.apply(pts), pts)


def test_rotation_is_pure_rotation_inside_plateau():
    th = 0.25
    r = _rot(theta=th)
    p = np.array([0.5 + 0.1, 0.5])  # radius 0.1 < rho
    out = r.apply(p)
    expect = np.array([0.5 + 0.1 * math.cos(th), 0.5 + 0.1 * math.sin(th)])
    np.testing.assert_allclose(out, expect, atol=1e-14)


def test_scale_multiplies_the_effective_angle():
    th = 0.25
    r = _rot(theta=th)
    p = np.array([[0.5 + 0.1, 0.5]])
    half = LocalizedRotation(TorusPoint2(0.5, 0.5), 0.2, th / 2).apply(p)
    np.testing.assert_allclose(r.apply(p, scale=0.5), half, atol=1e-14)


def test_rotation_preserves_radii():
    r = _rot()
    rng = np.random.default_rng(1)
    pts = rng.random((300, 2))
    c = np.array([0.5, 0.5])
    before = torus_dist(c, pts)
    after = torus_dist(c, r.apply(pts))
    np.testing.assert_allclose(after, before, atol=1e-12)


def test_rotation_fixes_points_outside_support():
    r = _rot(rho=0.05)  # support radius 0.1 around (0.5, 0.5)
    pts = np.array([[0.0, 0.0], [0.9, 0.5], [0.5, 0.95], [0.2, 0.8]])
    # Reconstruction via center + displacement may drift by an ulp.
    assert np.abs(displacement(r.apply(pts), pts)).max() < 1e-15


def test_rotation_inverse_roundtrip():
    r = _rot()
    rng = np.random.default_rng(2)
    pts = rng.random((300, 2))
    err = np.abs(displacement(r.apply_inverse(r.apply(pts)), pts))
    assert err.max() < 1e-12


def test_rotation_jacobian_is_area_preserving():
    r = _rot()
    rng = np.random.default_rng(3)
    jac = r.jacobian(rng.random((300, 2)))
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    np.testing.assert_allclose(det, 1.0, atol=1e-12)


def test_rotation_jacobian_matches_finite_differences():
    r = _rot()
    rng = np.random.default_rng(4)
    pts = rng.random((100, 2))
    jac = r.jacobian(pts)
    h = 1e-6
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = h
        col = displacement(r.apply(pts - e), r.apply(pts + e)) / (2 * h)
        np.testing.assert_allclose(jac[:, :, axis], col, atol=1e-5)


# ---------------------------------------------------------------------------
# RotationComposition

def _comp():
    return RotationComposition((_rot(0.3, 0.3, 0.15, 0.2),
                                _rot(0.7, 0.6, 0.2, -0.25)))


def test_composition_order_first_factor_acts_first():
    comp = _comp()
    f0, f1 = comp.factors
    pts = np.random.default_rng(5).random((40, 2))
    np.testing.assert_array_equal(comp.apply(pts), f1.apply(f0.apply(pts)))


def test_composition_inverse_roundtrip():
    comp = _comp()
    pts = np.random.default_rng(6).random((200, 2))
    err = np.abs(displacement(comp.apply_inverse(comp.apply(pts)), pts))
    assert err.max() < 1e-12
    err2 = np.abs(displacement(comp.inverse().apply(comp.apply(pts)), pts))
    assert err2.max() < 1e-12


def test_compose_after_matches_sequential_application():
    a, b = _comp(), RotationComposition((_rot(0.1, 0.8, 0.1, 0.1),))
    pts = np.random.default_rng(7).random((40, 2))
    np.testing.assert_array_equal(a.compose_after(b).apply(pts),
                                  a.apply(b.apply(pts)))


def test_composition_jacobian_matches_finite_differences():
    comp = _comp()
    rng = np.random.default_rng(8)
    pts = rng.random((80, 2))
    jac = comp.jacobian(pts)
    h = 1e-6
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = h
        col = displacement(comp.apply(pts - e), comp.apply(pts + e)) / (2 * h)
        np.testing.assert_allclose(jac[:, :, axis], col, atol=1e-5)


def test_c0_bound_dominates_observed_displacement():
    comp = _comp()
    expected = 2 * 0.15 * 0.2 + 2 * 0.2 * 0.25
    assert comp.c0_bound() == pytest.approx(expected, abs=1e-15)
    pts = np.random.default_rng(9).random((500, 2))
    moved = torus_dist(comp.apply(pts), pts)
    assert np.all(moved <= comp.c0_bound() + 1e-12)
