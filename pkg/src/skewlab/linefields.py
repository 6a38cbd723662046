"""Line fields on the 2-torus, pushforwards, and the transversality search.

A line field assigns a projective direction (angle mod pi) to each point of
the fiber torus. Fields are stored on a uniform n x n grid and evaluated by
projective bilinear interpolation: inside each cell the four corner angles
are lifted to a common branch before averaging, so the interpolant is
continuous across the mod-pi seam as long as the field varies by less than a
quarter turn per cell.

The rigidity mechanism needs two things from this module: a check that four
line fields have no common point of coincidence (empty intersection of the
projective classes at every point), and a randomized search for gated
rotation compositions whose pushforwards achieve that emptiness. The search
replaces a dense-parameter transversality argument: solutions are dense in
parameter space, so uniform sampling with post-hoc verification finds one
quickly; failures return the best candidate flagged rather than raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream
from .systems import SkewProductSystem
from .torus import (
    Direction,
    TorusPoint2,
    angle_dist,
    point_array,
    push_angles,
    wrap,
)
from .rotations import MAX_SAFE_THETA, LocalizedRotation, RotationComposition

__all__ = [
    "LineField",
    "IntersectionReport",
    "pushforward_linefield",
    "check_empty_intersection",
    "SearchResult",
    "covering_centers",
    "search_perturbation",
    "alpha_angle",
    "alpha_field",
    "alpha_min",
]

DEFAULT_ANGLE_TOL = 1e-3
REFINE_FACTOR = 4     # near-coincidence cells are re-scanned this much finer
NEAR_FACTOR = 3.0     # cells within NEAR_FACTOR*tol of coincidence get refined


def _lift_about(a, ref):
    """Representative of a (mod pi) within [-pi/2, pi/2) of ref."""
    d = np.mod(a - ref + np.pi / 2, np.pi) - np.pi / 2
    return ref + d


@dataclass(frozen=True)
class LineField:
    """Angles mod pi on the uniform grid (i/n, j/n); projective bilinear."""

    angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
            raise ValueError("angles must be a square grid of size >= 2")
        object.__setattr__(self, "angles", np.mod(a, np.pi))

    @property
    def n(self) -> int:
        return self.angles.shape[0]

    @classmethod
    def constant(cls, angle: float, n: int) -> "LineField":
        return cls(np.full((n, n), float(angle)))

    @classmethod
    def from_function(cls, fn, n: int) -> "LineField":
        """Sample fn(pts (N,2)) -> angles (N,) at the grid nodes."""
        offs = np.arange(n) / n
        g = np.stack(np.meshgrid(offs, offs, indexing="ij"), axis=-1)
        return cls(np.asarray(fn(g.reshape(-1, 2)), dtype=float).reshape(n, n))

    def direction_at(self, i: int, j: int) -> Direction:
        return Direction(float(self.angles[i, j]))

    def evaluate(self, pts) -> np.ndarray:
        """Interpolated angles in [0, pi) at pts (...,2)."""
        p = wrap(np.asarray(pts, dtype=float))
        n = self.n
        f = p * n
        i0 = np.floor(f[..., 0]).astype(int) % n
        j0 = np.floor(f[..., 1]).astype(int) % n
        fx = f[..., 0] - np.floor(f[..., 0])
        fy = f[..., 1] - np.floor(f[..., 1])
        i1 = (i0 + 1) % n
        j1 = (j0 + 1) % n
        a00 = self.angles[i0, j0]
        a10 = _lift_about(self.angles[i1, j0], a00)
        a01 = _lift_about(self.angles[i0, j1], a00)
        a11 = _lift_about(self.angles[i1, j1], a00)
        val = (a00 * (1 - fx) * (1 - fy) + a10 * fx * (1 - fy)
               + a01 * (1 - fx) * fy + a11 * fx * fy)
        return np.mod(val, np.pi)


def pushforward_linefield(h, V: LineField, n: int | None = None) -> LineField:
    """Grid field of the pushforward (h_*V)(x) = [Dh(h^-1 x) v(h^-1 x)].

    h must provide apply_inverse(pts) and jacobian(pts); rotation
    compositions and plain localized rotations both qualify.
    """
    n = V.n if n is None else int(n)
    offs = np.arange(n) / n
    g = np.stack(np.meshgrid(offs, offs, indexing="ij"), axis=-1).reshape(-1, 2)
    pre = h.apply_inverse(g)
    jac = h.jacobian(pre)
    ang = push_angles(jac, V.evaluate(pre))
    return LineField(ang.reshape(n, n))


@dataclass(frozen=True)
class IntersectionReport:
    """Coincidence scan of four line fields at one tolerance."""

    empty: bool
    witnesses: np.ndarray        # (K,2) points where all four coincide
    witness_angles: np.ndarray   # (K,4) the four angles at each witness
    min_separation: float        # min over scan of max pairwise angular gap
    angle_tol: float
    n: int
    refined_cells: int

    def as_dict(self) -> dict:
        return {
            "empty": self.empty,
            "witness_count": int(self.witnesses.shape[0]),
            "witnesses": self.witnesses.tolist(),
            "witness_angles": self.witness_angles.tolist(),
            "min_separation": self.min_separation,
            "angle_tol": self.angle_tol,
            "n": self.n,
            "refined_cells": self.refined_cells,
        }


_PAIRS = [(a, b) for a in range(4) for b in range(a + 1, 4)]


def _separation(angles: np.ndarray) -> np.ndarray:
    """Max pairwise projective distance; angles shaped (4, ...)."""
    return np.max(np.stack([angle_dist(angles[a], angles[b])
                            for a, b in _PAIRS]), axis=0)


def check_empty_intersection(W: LineField, V1: LineField, V2: LineField,
                             V3: LineField,
                             angle_tol: float = DEFAULT_ANGLE_TOL) -> IntersectionReport:
    """Scan for points where all four fields coincide within angle_tol.

    Grid nodes whose separation falls within NEAR_FACTOR*angle_tol are
    re-scanned at REFINE_FACTOR times finer resolution over their cell
    neighborhood, so isolated coincidences between nodes are still caught.
    """
    fields = (W, V1, V2, V3)
    n = W.n
    if any(V.n != n for V in fields):
        raise ValueError("all four line fields must share one grid resolution")

    node_angles = np.stack([V.angles for V in fields])      # (4,n,n)
    sep = _separation(node_angles)                          # (n,n)
    min_sep = float(sep.min())

    near = np.argwhere(sep <= NEAR_FACTOR * angle_tol)
    pts_list = []
    if near.size:
        # Local lattice covering each flagged node's cell neighborhood.
        r = REFINE_FACTOR
        loc = np.arange(-r, r + 1) / (r * n)                # +- one cell, 4x fine
        dx, dy = np.meshgrid(loc, loc, indexing="ij")
        offsets = np.stack([dx, dy], axis=-1).reshape(-1, 2)
        centers = near.astype(float) / n
        pts_list.append(wrap((centers[:, None, :] + offsets[None, :, :]).reshape(-1, 2)))

    # Any node with sep <= angle_tol is also <= NEAR_FACTOR*angle_tol, so the
    # refined scan (which includes each flagged node itself) sees every
    # candidate witness; no separate node pass is needed.
    witnesses = np.empty((0, 2))
    witness_angles = np.empty((0, 4))
    if pts_list:
        pts = np.concatenate(pts_list)
        fine = np.stack([V.evaluate(pts) for V in fields])  # (4,K)
        fine_sep = _separation(fine)
        min_sep = min(min_sep, float(fine_sep.min()))
        hit = fine_sep <= angle_tol
        if np.any(hit):
            # Collapse duplicates: coincidence points are isolated, so keep
            # one representative per coarse cell.
            hp = pts[hit]
            ha = fine[:, hit].T
            cell = np.floor(hp * n).astype(int)
            _, keep = np.unique(cell[:, 0] * n + cell[:, 1], return_index=True)
            witnesses = hp[np.sort(keep)]
            witness_angles = ha[np.sort(keep)]

    return IntersectionReport(
        empty=witnesses.shape[0] == 0,
        witnesses=witnesses,
        witness_angles=witness_angles,
        min_separation=min_sep,
        angle_tol=float(angle_tol),
        n=n,
        refined_cells=int(near.shape[0]),
    )


def covering_centers(k: int) -> np.ndarray:
    """k rotation centers on a sqrt(k) x sqrt(k) offset lattice, (k,2)."""
    s = round(k ** 0.5)
    if s * s != k:
        raise ValueError("k must be a perfect square (covering grid)")
    offs = (np.arange(s) + 0.5) / s
    return np.stack(np.meshgrid(offs, offs, indexing="ij"), axis=-1).reshape(-1, 2)


@dataclass(frozen=True)
class SearchResult:
    """Outcome of the randomized transversality search."""

    success: bool
    h1: RotationComposition
    h2: RotationComposition
    h3: RotationComposition
    report: IntersectionReport
    trial: int              # index of the returned parameter tuple
    trials_used: int
    angles: np.ndarray      # (3,k) rotation angles of the returned tuple
    centers: np.ndarray     # (k,2)
    rho: float


def _composition(centers: np.ndarray, angles: np.ndarray, rho: float) -> RotationComposition:
    return RotationComposition(tuple(
        LocalizedRotation(TorusPoint2(c[0], c[1]), rho, float(a))
        for c, a in zip(centers, angles)))


def search_perturbation(W: LineField, V1: LineField, V2: LineField, V3: LineField,
                        k: int = 16, theta_max: float = 0.3, budget: int = 10_000,
                        seed: int = 0, angle_tol: float = DEFAULT_ANGLE_TOL,
                        rho: float = 0.2) -> SearchResult:
    """Randomized search for rotation compositions with empty intersection.

    Trial t draws angles (3,k) uniform in (-theta_max, theta_max) from its own
    counter-based stream (so the outcome depends only on the seed, not on
    scheduling); trial 0 uses all-zero angles to catch already-empty inputs.
    Returns the first trial whose pushforward report is empty, else the best
    candidate by min_separation with success=False.
    """
    if not 0.0 < theta_max < np.pi / 2:
        raise ValueError("theta_max must lie in (0, pi/2)")
    centers = covering_centers(k)
    vs = (V1, V2, V3)

    best: SearchResult | None = None
    for t in range(budget):
        if t == 0:
            ang = np.zeros((3, k))
        else:
            ang = stream(seed, "search_perturbation", t).uniform(
                -theta_max, theta_max, size=(3, k))
        hs = tuple(_composition(centers, ang[i], rho) for i in range(3))
        pushed = tuple(pushforward_linefield(hs[i], vs[i]) for i in range(3))
        report = check_empty_intersection(W, *pushed, angle_tol=angle_tol)
        cand = SearchResult(success=report.empty, h1=hs[0], h2=hs[1], h3=hs[2],
                            report=report, trial=t, trials_used=t + 1,
                            angles=ang, centers=centers, rho=rho)
        if report.empty:
            return cand
        if best is None or report.min_separation > best.report.min_separation:
            best = cand
    assert best is not None
    return SearchResult(success=False, h1=best.h1, h2=best.h2, h3=best.h3,
                        report=best.report, trial=best.trial, trials_used=budget,
                        angles=best.angles, centers=best.centers, rho=best.rho)


def _alpha_batch(sys: SkewProductSystem, p_u, q, xs: np.ndarray,
                 tol: float = 1e-9, max_depth: int = 60) -> np.ndarray:
    """Angles between E^ws at (p_u, x) and the holonomy-returned E^ws, (N,)."""
    from .holonomy import _u_holonomy_batch
    from .splitting import estimate_bundle_batch

    p1 = point_array(p_u)[..., :2]
    q1 = point_array(q)[..., :2]
    n = xs.shape[0]

    fwd = _u_holonomy_batch(sys, p1, np.broadcast_to(q1, (n, 2)), xs,
                            tol, max_depth, want_jacobian=False)
    ys = fwd.points
    back = _u_holonomy_batch(sys, q1, np.broadcast_to(p1, (n, 2)), ys,
                             tol, max_depth, want_jacobian=True)

    there = np.concatenate([np.broadcast_to(q1, (n, 2)), ys], axis=1)
    here = np.concatenate([np.broadcast_to(p1, (n, 2)), xs], axis=1)
    ws_there = estimate_bundle_batch(sys, there, "ws").vectors
    ws_here = estimate_bundle_batch(sys, here, "ws").vectors

    moved = np.einsum("nij,nj->ni", back.jacobians, ws_there)
    a1 = np.mod(np.arctan2(moved[:, 1], moved[:, 0]), np.pi)
    a0 = np.mod(np.arctan2(ws_here[:, 1], ws_here[:, 0]), np.pi)
    return angle_dist(a0, a1)


def alpha_angle(sys: SkewProductSystem, p_u, q, x, tol: float = 1e-9,
                max_depth: int = 60) -> float:
    """Holonomy twist angle of the weak-stable direction at one fiber point.

    Transports E^ws from over q back to over p_u along the strong-unstable
    leaf and measures its projective distance from E^ws in place. Zero for
    every rigid product; strictly positive somewhere after a successful
    rigidity-breaking transplant.
    """
    xs = point_array(x).reshape(1, 2)
    return float(_alpha_batch(sys, p_u, q, xs, tol, max_depth)[0])


def alpha_field(sys: SkewProductSystem, p_u, qs, n: int = 64,
                tol: float = 1e-9, max_depth: int = 60) -> np.ndarray:
    """max-over-q alpha angles on the offset fiber grid, shape (n, n)."""
    offs = (np.arange(n) + 0.5) / n
    g = np.stack(np.meshgrid(offs, offs, indexing="ij"), axis=-1).reshape(-1, 2)
    per_q = [_alpha_batch(sys, p_u, q, g, tol, max_depth) for q in qs]
    return np.max(np.stack(per_q), axis=0).reshape(n, n)


def alpha_min(sys: SkewProductSystem, p_u, qs, n: int = 64,
              tol: float = 1e-9, max_depth: int = 60) -> float:
    """Sampled lower bound for the transversality angle: min over the grid."""
    return float(alpha_field(sys, p_u, qs, n, tol, max_depth).min())
