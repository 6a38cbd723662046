"""Rigidity-breaking construction: gate fiber corrections at leaf points.

Given an in-class system f, a base point p_u, base points q_1..q_k on the
strong-unstable leaf of p_u, and fiber rotation compositions h_1..h_k, this
module builds the perturbed system g equal to f outside small gated base
neighborhoods of the q_i and whose fiber map over q_i realizes

    g over q_i  =  (f over q_i) o H[q_i -> p_u]^-1 o h_i^-1 o H[q_i -> p_u],

with H the unstable holonomy of f between the two center fibers. The gate
correction is stored as the exact rotation composition h_i^-1; the holonomy
conjugation is then verified numerically, because for the construction to
have the intended effect the holonomy legs must not themselves cross the
gates. That is guarded by explicit disjointness and orbit-avoidance checks:
gate supports pairwise disjoint, and forward/backward base images of every
gate center stay outside all supports up to a configurable depth (deeper
encounters influence the relevant cocycles below float resolution).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BuildError
from .holonomy import _u_holonomy_batch, leaf_parameter
from .rotations import RotationComposition
from .systems import FiberPerturbation, SkewProductSystem
from .torus import point_array, torus_dist

__all__ = [
    "GateGeometry",
    "check_gate_geometry",
    "gate_identity_defect",
    "build_rigidity_breaking",
]

DEFAULT_GATE_RADIUS = 0.02
DEFAULT_ORBIT_DEPTH = 12


@dataclass(frozen=True)
class GateGeometry:
    """Distances governing gate locality (all minima over the checked sets)."""

    leaf_ts: tuple[float, ...]
    min_pairwise: float        # min torus distance between gate centers
    min_orbit_clearance: float  # min distance of orbit images to any center
    min_anchor_clearance: float  # min distance of p_u's orbit to any center
    gate_radius: float
    orbit_depth: int

    @property
    def supports_disjoint(self) -> bool:
        return self.min_pairwise > 4.0 * self.gate_radius

    @property
    def orbits_clear(self) -> bool:
        return (self.min_orbit_clearance > 2.0 * self.gate_radius
                and self.min_anchor_clearance > 2.0 * self.gate_radius)


def check_gate_geometry(sys: SkewProductSystem, p_u, qs, gate_radius: float,
                        orbit_depth: int = DEFAULT_ORBIT_DEPTH) -> GateGeometry:
    """Leaf membership, support disjointness, and orbit avoidance in one pass.

    Raises ConditionError when some q_i is off the unstable leaf of p_u;
    returns the geometry report (callers decide whether to reject).
    """
    p1 = point_array(p_u)[..., :2]
    centers = np.stack([point_array(q)[..., :2] for q in qs])
    ts = tuple(float(leaf_parameter(sys, p1, q)) for q in centers)

    k = centers.shape[0]
    pair = np.inf
    for i in range(k):
        for j in range(i + 1, k):
            pair = min(pair, float(torus_dist(centers[i], centers[j])))

    fwd = centers.copy()
    bwd = centers.copy()
    anchor_f = p1.copy()
    anchor_b = p1.copy()
    orbit = np.inf
    anchor = min(float(torus_dist(anchor_f, c)) for c in centers)
    for _ in range(orbit_depth):
        fwd = sys.base_apply(fwd)
        bwd = sys.base_apply_inverse(bwd)
        anchor_f = sys.base_apply(anchor_f)
        anchor_b = sys.base_apply_inverse(anchor_b)
        for img in (fwd, bwd):
            orbit = min(orbit, float(np.min(torus_dist(img[:, None, :], centers[None, :, :]))))
        for img in (anchor_f, anchor_b):
            anchor = min(anchor, min(float(torus_dist(img, c)) for c in centers))

    return GateGeometry(leaf_ts=ts, min_pairwise=pair, min_orbit_clearance=orbit,
                        min_anchor_clearance=anchor, gate_radius=float(gate_radius),
                        orbit_depth=int(orbit_depth))


def _holonomy_points(sys: SkewProductSystem, src, dst, xs: np.ndarray,
                     tol: float, max_depth: int) -> np.ndarray:
    """Unstable holonomy of sys from the fiber over src to the fiber over dst."""
    n = xs.shape[0]
    batch = _u_holonomy_batch(sys, src, np.broadcast_to(point_array(dst), (n, 2)),
                              xs, tol, max_depth, want_jacobian=False)
    if not bool(np.all(batch.converged)):
        raise BuildError(
            "holonomy leg did not converge while verifying a gate "
            f"(max increment {float(np.max(batch.increments[-1])):.3e})")
    return batch.points


def gate_identity_defect(g: SkewProductSystem, f: SkewProductSystem, p_u, qs,
                         hs, holonomy_tol: float = 1e-9, grid_n: int = 8,
                         max_depth: int = 60) -> float:
    """Sup distance between g's gate fiber maps and the holonomy composition.

    Evaluates, on an offset fiber grid over each q_i, the reference map
    f o H[u->i] o h_i^-1 o H[i->u] with numerically computed holonomies of f,
    and compares with g's own fiber map over q_i. The evaluation tolerance is
    kept a decade below the comparison tolerance.
    """
    p1 = point_array(p_u)[..., :2]
    tol = min(holonomy_tol * 0.1, 1e-10)
    offs = (np.arange(grid_n) + 0.5) / grid_n
    xs = np.stack(np.meshgrid(offs, offs, indexing="ij"), axis=-1).reshape(-1, 2)

    defect = 0.0
    for q, h in zip(qs, hs):
        q1 = point_array(q)[..., :2]
        got = g.fiber_apply(np.broadcast_to(q1, xs.shape), xs)
        moved = _holonomy_points(f, q1, p1, xs, tol, max_depth)
        moved = h.inverse().apply(moved)
        moved = _holonomy_points(f, p1, q1, moved, tol, max_depth)
        want = f.fiber_apply(np.broadcast_to(q1, moved.shape), moved)
        defect = max(defect, float(np.max(torus_dist(got, want))))
    return defect


def build_rigidity_breaking(f: SkewProductSystem, p_u, qs, hs,
                            holonomy_tol: float = 1e-9,
                            gate_radius: float = DEFAULT_GATE_RADIUS,
                            orbit_depth: int = DEFAULT_ORBIT_DEPTH,
                            identity_grid_n: int = 8,
                            max_depth: int = 60) -> SkewProductSystem:
    """Gate the corrections h_i^-1 at the q_i and verify the construction.

    qs and hs must have equal length (the canonical construction uses three).
    Raises ConditionError for off-leaf points, BuildError for overlapping or
    orbit-crossing gates and for a failed identity verification.
    """
    if len(qs) != len(hs) or not qs:
        raise ValueError("need equally many gate points and corrections (>= 1)")
    for h in hs:
        if not isinstance(h, RotationComposition):
            raise TypeError("corrections must be rotation compositions")

    geom = check_gate_geometry(f, p_u, qs, gate_radius, orbit_depth)
    if not geom.supports_disjoint:
        raise BuildError(
            f"gate supports overlap: min center distance {geom.min_pairwise:.4f} "
            f"<= 4*gate_radius = {4 * gate_radius:.4f}")
    if not geom.orbits_clear:
        raise BuildError(
            "gate supports meet a base orbit of a gate center or of p_u within "
            f"depth {orbit_depth}: clearance "
            f"{min(geom.min_orbit_clearance, geom.min_anchor_clearance):.4f} "
            f"<= 2*gate_radius = {2 * gate_radius:.4f}")

    perts = tuple(
        FiberPerturbation(
            gate_center=_as_point2(q),
            gate_radius=float(gate_radius),
            rotations=h.inverse(),
        )
        for q, h in zip(qs, hs))
    g = SkewProductSystem(f.base, f.fiber, f.perturbations + perts)

    defect = gate_identity_defect(g, f, p_u, qs, hs, holonomy_tol,
                                  identity_grid_n, max_depth)
    if defect > holonomy_tol:
        raise BuildError(
            f"gate fiber maps deviate from the holonomy composition by {defect:.3e} "
            f"> holonomy_tol = {holonomy_tol:.1e} (holonomy legs likely cross a gate)")
    return g


def _as_point2(q):
    from .torus import TorusPoint2

    arr = point_array(q)[..., :2]
    return TorusPoint2(float(arr[0]), float(arr[1]))
