"""Skew product construction, evaluation, Jacobians, and serialization."""

import numpy as np
import pytest

from skewlab.errors import ConditionError
from skewlab.presets import soft_system
from skewlab.rotations import LocalizedRotation, RotationComposition
from skewlab.systems import (FiberPerturbation, SkewProductSystem,
                             make_product, system_from_dict, system_hash,
                             system_to_dict)
from skewlab.torus import (IntMatrix2, TorusPoint2, TorusPoint4, displacement,
                           torus_dist)

A = IntMatrix2(2, 1, 1, 1)
B = IntMatrix2(89, 55, 55, 34)


def _one_gate_system(theta=0.2):
    """Product plus a single narrow gate and a single small rotation."""
    rot = RotationComposition((LocalizedRotation(TorusPoint2(0.5, 0.5),
                                                 0.1, theta),))
    pert = FiberPerturbation(gate_center=TorusPoint2(0.25, 0.25),
                             gate_radius=0.05, rotations=rot)
    return SkewProductSystem(base=B, fiber=A, perturbations=(pert,))


# ---------------------------------------------------------------------------
# construction

def test_make_product_accepts_dominated_pairs():
    sys_ = make_product(B, A)
    assert sys_.is_product
    assert sys_.perturbations == ()
    make_product(IntMatrix2(5, 2, 2, 1), A)  # lambda_u = 3+2*sqrt(2) > golden^2


def test_make_product_rejects_equal_rates():
    with pytest.raises(ConditionError, match="domination"):
        make_product(A, A)


def test_make_product_rejects_reversed_domination():
    with pytest.raises(ConditionError, match="domination"):
        make_product(A, B)


def test_system_rejects_non_unimodular_and_non_hyperbolic():
    with pytest.raises(ValueError):
        SkewProductSystem(base=IntMatrix2(2, 0, 0, 2), fiber=A)
    with pytest.raises(ConditionError):
        SkewProductSystem(base=IntMatrix2.identity(), fiber=A)


# ---------------------------------------------------------------------------
# apply

def test_apply_example_point(product):
    p = np.array([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(product.apply(p), [0.9, 0.3, 0.0, 0.7],
                               rtol=0, atol=1e-12)


def test_apply_point_typed_wrapper(product):
    q = product.apply_point(TorusPoint4.of(0.1, 0.2, 0.3, 0.4))
    assert isinstance(q, TorusPoint4)
    np.testing.assert_allclose([q.base.x, q.base.y, q.fiber.x, q.fiber.y],
                               [0.9, 0.3, 0.0, 0.7], rtol=0, atol=1e-12)


def test_origin_fixed_by_product(product):
    assert np.array_equal(product.apply(np.zeros(4)), np.zeros(4))


def test_zero_angle_perturbation_equals_product(product):
    sys0 = _one_gate_system(theta=0.0)
    pts = np.random.default_rng(0).random((200, 4))
    assert np.array_equal(sys0.apply(pts), product.apply(pts))


def test_skew_structure_base_independent_of_fiber(broken):
    rng = np.random.default_rng(1)
    base = rng.random((50, 2))
    f1, f2 = rng.random((2, 50, 2))
    out1 = broken.apply(np.concatenate([base, f1], axis=1))
    out2 = broken.apply(np.concatenate([base, f2], axis=1))
    assert np.array_equal(out1[:, :2], out2[:, :2])


def test_roundtrip_product(product):
    pts = np.random.default_rng(2).random((1000, 4))
    fwd = product.apply(product.apply_inverse(pts))
    assert np.abs(displacement(fwd, pts)).max() < 1e-12
    # The reverse order re-expands wrap rounding by the inverse base norm.
    back = product.apply_inverse(product.apply(pts))
    assert np.abs(displacement(back, pts)).max() < 1e-10


@pytest.mark.parametrize("fixture_name", ["broken", "soft"])
def test_roundtrip_perturbed(request, fixture_name):
    sys_ = request.getfixturevalue(fixture_name)
    pts = np.random.default_rng(3).random((10_000, 4))
    back = sys_.apply_inverse(sys_.apply(pts))
    assert np.abs(displacement(back, pts)).max() < 1e-10
    fwd = sys_.apply(sys_.apply_inverse(pts))
    assert np.abs(displacement(fwd, pts)).max() < 1e-10


# ---------------------------------------------------------------------------
# perturbation locality

def test_apply_matches_product_outside_gate(product):
    sys_ = _one_gate_system()
    rng = np.random.default_rng(4)
    pts = rng.random((500, 4))
    clear = torus_dist(np.array([0.25, 0.25]), pts[:, :2]) > 2 * 0.05
    pts = pts[clear]
    assert np.array_equal(sys_.apply(pts), product.apply(pts))


def test_fiber_map_fixes_points_outside_rotation_support(product):
    sys_ = _one_gate_system()
    gated = np.array([0.25, 0.25])  # gate weight 1 here
    rng = np.random.default_rng(5)
    xs = rng.random((500, 2))
    far = torus_dist(np.array([0.5, 0.5]), xs) > 2 * 0.1
    xs = xs[far]
    ours = sys_.fiber_apply(gated, xs)
    linear = product.fiber_apply(gated, xs)
    assert np.abs(displacement(ours, linear)).max() < 1e-15


# ---------------------------------------------------------------------------
# Jacobians

def test_product_jacobian_is_constant_block_diagonal(product):
    pts = np.random.default_rng(6).random((20, 4))
    jac = product.jacobian(pts)
    expect = np.zeros((4, 4))
    expect[:2, :2] = B.as_array()
    expect[2:, 2:] = A.as_array()
    assert np.array_equal(jac, np.broadcast_to(expect, (20, 4, 4)))


def test_jacobian_upper_right_block_vanishes(broken):
    pts = np.random.default_rng(7).random((200, 4))
    jac = broken.jacobian(pts)
    assert np.array_equal(jac[:, :2, 2:], np.zeros((200, 2, 2)))


@pytest.mark.parametrize("fixture_name", ["broken", "soft"])
def test_jacobian_matches_central_finite_differences(request, fixture_name):
    sys_ = request.getfixturevalue(fixture_name)
    rng = np.random.default_rng(8)
    pts = rng.random((1000, 4))
    jac = sys_.jacobian(pts)
    h = 1e-6
    for axis in range(4):
        e = np.zeros(4)
        e[axis] = h
        col = displacement(sys_.apply(pts - e), sys_.apply(pts + e)) / (2 * h)
        rel = np.abs(jac[:, :, axis] - col) / np.abs(jac).max()
        assert rel.max() < 1e-5


def test_jacobian_point_typed_wrapper(product):
    jac = product.jacobian_point(TorusPoint4.of(0.1, 0.2, 0.3, 0.4))
    assert jac.shape == (4, 4)
    assert np.array_equal(jac[2:, 2:], A.as_array())


# ---------------------------------------------------------------------------
# serialization

def test_dict_roundtrip_preserves_behavior(broken):
    clone = system_from_dict(system_to_dict(broken))
    pts = np.random.default_rng(9).random((100, 4))
    assert np.array_equal(clone.apply(pts), broken.apply(pts))
    assert system_hash(clone) == system_hash(broken)


def test_dict_roundtrip_product(product):
    doc = system_to_dict(product)
    assert doc == {"base": [[89, 55], [55, 34]], "fiber": [[2, 1], [1, 1]]}
    clone = system_from_dict(doc)
    assert clone.is_product


def test_from_dict_rejects_unknown_keys(product):
    doc = system_to_dict(product)
    doc["extra"] = 1
    with pytest.raises(ValueError, match="extra"):
        system_from_dict(doc)


def test_hash_distinguishes_systems(product):
    assert system_hash(product) != system_hash(soft_system())
    assert system_hash(product) == system_hash(make_product(B, A))
