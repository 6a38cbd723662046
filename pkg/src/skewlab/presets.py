"""Canonical example systems used by the test suite and the CLI defaults.

Two systems anchor every experiment:

* the rigid product with base [[89,55],[55,34]] (the fifth power of the
  fiber matrix) and fiber [[2,1],[1,1]]; its expansion rates are the closed
  forms lambda^-5, lambda^-1, lambda, lambda^5 for lambda = (3+sqrt(5))/2,
  and every holonomy is the identity;

* the rigidity-broken system: the same product with three gated fiber
  corrections at points of the strong-unstable base leaf of p_u = (0,0),
  transplanted from a successful transversality search. The defaults below
  (leaf parameters, gate radius, search seed) were calibrated once so that
  the gates are pairwise disjoint and clear of the relevant base orbits.
"""

from __future__ import annotations

import numpy as np

from .breaking import build_rigidity_breaking
from .linefields import LineField, SearchResult, search_perturbation
from .rotations import LocalizedRotation, RotationComposition
from .systems import FiberPerturbation, SkewProductSystem, make_product
from .torus import IntMatrix2, TorusPoint2, wrap

__all__ = [
    "FIBER_MATRIX",
    "BASE_MATRIX",
    "LAMBDA",
    "product_system",
    "canonical_leaf_points",
    "canonical_search",
    "broken_system",
    "soft_system",
]

FIBER_MATRIX = IntMatrix2(2, 1, 1, 1)
BASE_MATRIX = FIBER_MATRIX.power(5)          # [[89, 55], [55, 34]]
LAMBDA = (3.0 + np.sqrt(5.0)) / 2.0

DEFAULT_LEAF_TS = (0.16, 0.36, 0.55)
DEFAULT_GATE_RADIUS = 0.03
DEFAULT_SEARCH_SEED = 20260816
DEFAULT_THETA_MAX = 0.3


def product_system() -> SkewProductSystem:
    """The rigid product: base = fiber^5, fiber = [[2,1],[1,1]]."""
    return make_product(BASE_MATRIX, FIBER_MATRIX)


def canonical_leaf_points(sys: SkewProductSystem, p_u: TorusPoint2,
                          ts=DEFAULT_LEAF_TS) -> list[TorusPoint2]:
    """Points p_u + t*e_u on the base unstable leaf, wrapped."""
    e_u = sys.base_split.dir_u.vector()
    base = p_u.as_array()
    return [TorusPoint2(*wrap(base + t * e_u)) for t in ts]


def canonical_search(theta_max: float = DEFAULT_THETA_MAX,
                     seed: int = DEFAULT_SEARCH_SEED,
                     n: int = 64, budget: int = 10_000) -> SearchResult:
    """Transversality search on the product's line fields.

    For the rigid product all four input fields equal the constant weak-stable
    field: the holonomies are identities, so the transported fields coincide
    with the field at p_u.
    """
    sys = product_system()
    W = LineField.constant(sys.fiber_split.dir_s.angle, n)
    return search_perturbation(W, W, W, W, k=16, theta_max=theta_max,
                               budget=budget, seed=seed)


def broken_system(theta_max: float = DEFAULT_THETA_MAX,
                  seed: int = DEFAULT_SEARCH_SEED,
                  gate_radius: float = DEFAULT_GATE_RADIUS,
                  ts=DEFAULT_LEAF_TS,
                  holonomy_tol: float = 1e-9) -> SkewProductSystem:
    """The canonical rigidity-broken system (deterministic in the seed)."""
    sys = product_system()
    search = canonical_search(theta_max=theta_max, seed=seed)
    if not search.success:
        raise RuntimeError("canonical transversality search failed; "
                           "adjust seed or budget")
    p_u = TorusPoint2(0.0, 0.0)
    qs = canonical_leaf_points(sys, p_u, ts)
    hs = (search.h1, search.h2, search.h3)
    return build_rigidity_breaking(sys, p_u, qs, hs, holonomy_tol=holonomy_tol,
                                   gate_radius=gate_radius)


def soft_system(theta: float = 0.2, gate_radius: float = 0.24) -> SkewProductSystem:
    """Product plus one near-maximal gate: the rate-law workbench.

    The sharply gated system's holonomy legs stop meeting gates after
    finitely many steps, so its approximants converge exactly and no
    per-depth decay is observable. Here the gate's slope annulus covers
    about half the base torus, the legs feel a correction mismatch at
    almost every depth, and the increment sequence realizes the geometric
    envelope chi^wu/chi^uu = lambda^-4 that certifies holonomy convergence.
    """
    sys = product_system()
    rots = RotationComposition(tuple(
        LocalizedRotation(center=TorusPoint2(cx, cy), rho=0.2,
                          theta=sign * theta)
        for (cx, cy), sign in (((0.25, 0.25), 1.0), ((0.25, 0.75), -1.0),
                               ((0.75, 0.25), 1.0), ((0.75, 0.75), -1.0))))
    pert = FiberPerturbation(gate_center=TorusPoint2(0.5, 0.5),
                             gate_radius=gate_radius, rotations=rots)
    return SkewProductSystem(base=sys.base, fiber=sys.fiber,
                             perturbations=(pert,))
