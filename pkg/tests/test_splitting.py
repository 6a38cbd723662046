"""Invariant-bundle estimation, sampled expansion rates, class conditions."""

import math

import numpy as np
import pytest

from skewlab.errors import NonConvergenceError
from skewlab.holonomy import geometric_ratio
from skewlab.rng import stream
from skewlab.splitting import (
    ChiBounds,
    _line_angle,
    condition_report,
    estimate_bundle_batch,
    estimate_direction,
    estimate_splitting,
    expansion_rates,
    grid_points,
    verify_conditions,
)
from skewlab.systems import SkewProductSystem, make_product
from skewlab.torus import Direction, IntMatrix2

LAM = (3.0 + math.sqrt(5.0)) / 2.0
A = IntMatrix2(2, 1, 1, 1)

# eigendirections of A: expanding at atan((sqrt(5)-1)/2), contracting at
# the perpendicular-conjugate angle in [0, pi)
ANGLE_U = math.atan((math.sqrt(5.0) - 1.0) / 2.0)
ANGLE_S = (math.pi + math.atan(-(1.0 + math.sqrt(5.0)) / 2.0)) % math.pi


class TestProductRates:
    def test_chi_matches_closed_forms(self, product):
        rep = condition_report(product, grid_n=2)
        closed = {"ss": LAM ** -5, "ws": 1.0 / LAM, "wu": LAM, "uu": LAM ** 5}
        for name, value in closed.items():
            lo = getattr(rep.bounds, name + "_min")
            hi = getattr(rep.bounds, name + "_max")
            assert abs(lo - value) < 1e-9
            assert abs(hi - value) < 1e-9

    def test_margins_match_closed_forms(self, product):
        rep = condition_report(product, grid_n=2)
        expect_a = (1.0 / LAM - LAM ** -5, 1.0 - 1.0 / LAM,
                    LAM - 1.0, LAM ** 5 - LAM)
        for got, want in zip(rep.margins_a, expect_a):
            assert abs(got - want) < 1e-9
        assert abs(rep.margins_b[0] - (LAM ** -4 - LAM ** -5)) < 1e-9
        assert abs(rep.margins_b[1] - (LAM ** 5 - LAM ** 4)) < 1e-9
        assert abs(rep.c_lhs - 0.2) < 1e-9
        assert abs(rep.c_rhs - 0.8) < 1e-9
        assert abs(rep.margin_c - 0.6) < 1e-9

    def test_all_conditions_hold_at_default_grid(self, product):
        rep = condition_report(product)
        assert rep.cond_a and rep.cond_b and rep.cond_c
        assert rep.ok
        assert rep.bounds.grid_points == 8 ** 4

    def test_report_round_trips_to_dict(self, product):
        d = condition_report(product, grid_n=2).as_dict()
        assert d["ok"] is True
        assert set(d["bounds"]) >= {"ss_min", "uu_max", "grid_points"}
        assert len(d["margins_a"]) == 4 and len(d["margins_b"]) == 2


class TestConditionFailures:
    def test_swapped_layers_fail_everything(self):
        # fiber expands faster than the base: no domination anywhere
        rep = condition_report(SkewProductSystem(base=A, fiber=A.power(5)),
                               grid_n=2)
        assert not rep.cond_a
        assert not rep.cond_b
        assert not rep.cond_c
        assert not rep.ok
        assert rep.c_lhs > rep.c_rhs

    def test_square_base_fails_bunching(self):
        # base expansion lam^2 dominates the fiber but not its square
        rep = condition_report(make_product(A.power(2), A), grid_n=2)
        assert rep.cond_a
        assert not rep.cond_b
        assert abs(rep.margins_b[0] - (LAM ** -4 - LAM ** -2)) < 1e-12
        assert rep.margins_b[0] < 0.0
        # exponent comparison degenerates to 1/2 < 1/2
        assert not rep.cond_c
        assert abs(rep.c_lhs - 0.5) < 1e-9
        assert abs(rep.c_rhs - 0.5) < 1e-9

    def test_verify_conditions_formulae(self):
        bounds = ChiBounds(ss_min=0.01, ss_max=0.01, ws_min=0.4, ws_max=0.4,
                           wu_min=2.0, wu_max=2.0, uu_min=100.0, uu_max=100.0,
                           grid_points=1, residual_max=0.0, iterations_max=1)
        rep = verify_conditions(bounds)
        assert rep.margins_a == (0.4 - 0.01, 1.0 - 0.4, 2.0 - 1.0, 100.0 - 2.0)
        assert abs(rep.margins_b[0] - (0.2 ** 2 - 0.01)) < 1e-15
        assert abs(rep.margins_b[1] - (100.0 - 0.2 ** -2)) < 1e-12
        assert abs(rep.c_lhs - math.log(0.4) / math.log(0.01)) < 1e-15
        assert abs(rep.c_rhs - (math.log(100.0) - math.log(2.0))
                   / (-math.log(0.01))) < 1e-15
        assert rep.ok


class TestPerturbedRates:
    def test_wide_gate_bounds_bracket_the_product(self, soft):
        b = expansion_rates(soft, grid_points(4))
        # the base layer is untouched by fiber perturbations
        assert abs(b.uu_min - LAM ** 5) < 2e-3
        assert abs(b.uu_max - LAM ** 5) < 2e-3
        assert 0.0078 < b.ss_min <= b.ss_max < 0.0092
        # fiber rates spread by the rotation shear around the product values
        assert 0.33 < b.ws_min <= b.ws_max < 0.42
        assert b.ws_min < 1.0 / LAM < b.ws_max
        assert 2.25 < b.wu_min <= b.wu_max < 3.0
        assert b.wu_min < LAM < b.wu_max

    def test_wide_gate_conditions_hold(self, soft):
        rep = verify_conditions(expansion_rates(soft, grid_points(4)))
        assert rep.cond_a and rep.cond_b and rep.cond_c

    def test_narrow_gate_one_step_spread(self, broken):
        # strong rotations on tiny supports keep the asymptotic base rates
        # intact but spread the one-step fiber rates beyond the sampled
        # bunching margin: ordering and the exponent comparison survive,
        # the pointwise bunching check does not
        rep = condition_report(broken, grid_n=4)
        assert abs(rep.bounds.uu_min - LAM ** 5) < 2e-2
        assert rep.cond_a
        assert not rep.cond_b
        assert rep.cond_c
        assert rep.margin_c > 0.0


class TestDirections:
    def test_product_center_directions(self, product):
        est = estimate_splitting(product, np.array([0.12, 0.34, 0.56, 0.78]))
        assert est.e_ws.distance(Direction(ANGLE_S)) < 1e-8
        assert est.e_wu.distance(Direction(ANGLE_U)) < 1e-8
        assert est.residual < 1e-10

    def test_product_strong_directions_live_in_the_base(self, product):
        est = estimate_splitting(product, np.array([0.12, 0.34, 0.56, 0.78]))
        assert np.max(np.abs(est.e_uu[2:])) < 1e-10
        assert np.max(np.abs(est.e_ss[2:])) < 1e-10
        uu_dir = Direction.from_vector(est.e_uu[:2])
        ss_dir = Direction.from_vector(est.e_ss[:2])
        assert uu_dir.distance(Direction(ANGLE_U)) < 1e-8
        assert ss_dir.distance(Direction(ANGLE_S)) < 1e-8

    def test_ws_field_is_equivariant(self, soft, broken):
        for sys_ in (soft, broken):
            r = stream(21, "split:wsequiv", 0)
            pts = r.random((1000, 4))
            here = estimate_bundle_batch(sys_, pts, "ws")
            image = estimate_bundle_batch(sys_, sys_.apply(pts), "ws")
            jf = sys_.fiber_jacobian(pts[:, :2], pts[:, 2:])
            pushed = np.einsum("nij,nj->ni", jf, here.vectors)
            pushed /= np.linalg.norm(pushed, axis=-1, keepdims=True)
            assert here.converged.all() and image.converged.all()
            assert float(np.max(_line_angle(pushed, image.vectors))) < 1e-9

    def test_wu_field_equivariance_within_float_floor(self, soft):
        # wu estimates follow backward orbits, whose float noise grows with
        # the base expansion per step; accuracy floors out near 1e-6
        r = stream(22, "split:wuequiv", 0)
        pts = r.random((300, 4))
        here = estimate_bundle_batch(soft, pts, "wu")
        image = estimate_bundle_batch(soft, soft.apply(pts), "wu")
        jf = soft.fiber_jacobian(pts[:, :2], pts[:, 2:])
        pushed = np.einsum("nij,nj->ni", jf, here.vectors)
        pushed /= np.linalg.norm(pushed, axis=-1, keepdims=True)
        assert float(np.max(_line_angle(pushed, image.vectors))) < 1e-4

    def test_uu_iteration_converges_at_theory_rate(self, product):
        batch = estimate_bundle_batch(product, grid_points(2), "uu")
        ratio = geometric_ratio(batch.history.max(axis=1))
        assert ratio is not None
        assert 0.0 < ratio <= LAM ** -4 + 0.05

    def test_batch_is_deterministic(self, soft):
        a = estimate_bundle_batch(soft, grid_points(2), "ws")
        b = estimate_bundle_batch(soft, grid_points(2), "ws")
        assert np.array_equal(a.vectors, b.vectors)
        assert a.iterations == b.iterations


class TestGuards:
    def test_iteration_cap_raises(self, product):
        with pytest.raises(NonConvergenceError) as exc:
            estimate_direction(product, np.array([0.1, 0.2, 0.3, 0.4]), "uu",
                               max_iter=1)
        assert exc.value.residual > 0.0

    def test_unknown_bundle_rejected(self, product):
        with pytest.raises(ValueError, match="bundle"):
            estimate_bundle_batch(product, np.zeros((1, 4)), "zz")

    def test_direction_property_needs_a_center_bundle(self, product):
        est = estimate_direction(product, np.array([0.1, 0.2, 0.3, 0.4]), "uu")
        with pytest.raises(ValueError, match="center"):
            est.direction

    def test_grid_points_layout(self):
        g = grid_points(2)
        assert g.shape == (16, 4)
        assert np.array_equal(np.unique(g), np.array([0.25, 0.75]))
        assert np.array_equal(g[0], np.full(4, 0.25))
