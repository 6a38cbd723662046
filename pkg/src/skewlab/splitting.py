"""Invariant-splitting estimation and expansion-rate sampling.

Each of the four invariant bundles is estimated by power iteration of the
relevant cocycle: the full 4x4 derivative along backward orbits for the
strongest expansion, its inverse along forward orbits for the strongest
contraction, and the 2x2 fiber blocks for the two center bundles. The
accumulated cocycle matrix is renormalized every step, so depth is limited
only by the residual tolerance, never by overflow.

Rates are then sampled on a uniform grid of the 4-torus: for each grid point
and bundle, the growth of the derivative along the estimated direction. The
resulting min/max per bundle are coarse sampled bounds (never certified) that
feed the class-membership checks: the spectral ordering (a), the 2-center
bunching (b), and the exponent-comparison inequality (c).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceError
from .systems import SkewProductSystem
from .torus import Direction, inv2

__all__ = [
    "BundleEstimate",
    "SplittingEstimate",
    "BundleBatch",
    "estimate_direction",
    "estimate_splitting",
    "estimate_bundle_batch",
    "grid_points",
    "ChiBounds",
    "expansion_rates",
    "ConditionReport",
    "verify_conditions",
    "condition_report",
]

BUNDLES = ("ss", "ws", "wu", "uu")

# Fixed generic start vectors; any vector outside the complementary invariant
# subspaces works, and fixed constants keep runs reproducible.
_V0_2 = np.array([0.8, 0.6])
_V0_4 = np.array([0.52, 0.40, 0.61, 0.45])


def _line_angle(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Angle between the lines spanned by unit vectors v and w, in [0, pi/2].

    arctan2 of the orthogonal-residual norm against |v.w|: arccos alone
    bottoms out near sqrt(eps) ~ 1e-8 for nearly parallel lines, far above
    the convergence tolerances used here.
    """
    dot = np.sum(v * w, axis=-1)
    ortho = v - dot[..., None] * w
    return np.arctan2(np.linalg.norm(ortho, axis=-1), np.abs(dot))


@dataclass
class BundleBatch:
    """Batched single-bundle estimate."""

    vectors: np.ndarray     # (N,d) unit vectors
    iterations: int
    residuals: np.ndarray   # (N,) last angular change
    history: np.ndarray     # (iterations, N) residual history
    converged: np.ndarray   # (N,) bool


@dataclass(frozen=True)
class BundleEstimate:
    """Single-point estimate of one invariant direction."""

    bundle: str
    vector: np.ndarray
    iterations: int
    residual: float
    converged: bool

    @property
    def direction(self) -> Direction:
        if self.vector.shape[-1] != 2:
            raise ValueError("direction is only defined for the 2d center bundles")
        return Direction.from_vector(self.vector)


@dataclass(frozen=True)
class SplittingEstimate:
    """All four bundles at one point."""

    e_ss: np.ndarray
    e_uu: np.ndarray
    e_ws: Direction
    e_wu: Direction
    iterations: int
    residual: float


def _cocycle_power(factors, v0: np.ndarray, n: int, tol: float, max_iter: int) -> BundleBatch:
    """Power iteration on a right-appended matrix cocycle.

    `factors` yields the (N,d,d) matrix of each successive step; the product
    is renormalized per sample so arbitrarily strong expansion cannot
    overflow. Residual = projective angle between successive estimates.
    """
    d = v0.shape[0]
    M = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    v_prev = np.broadcast_to(v0 / np.linalg.norm(v0), (n, d))
    history = []
    k = 0
    for k in range(1, max_iter + 1):
        M = M @ next(factors)
        M /= np.max(np.abs(M), axis=(-2, -1))[..., None, None]
        v = M @ v0
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        res = _line_angle(v, v_prev)
        history.append(res)
        v_prev = v
        if np.max(res) < tol:
            break
    hist = np.asarray(history)
    return BundleBatch(vectors=v_prev, iterations=k, residuals=hist[-1],
                       history=hist, converged=hist[-1] < tol)


def _factors_uu(sys: SkewProductSystem, pts: np.ndarray):
    cur = pts.copy()
    while True:
        cur = sys.apply_inverse(cur)
        yield sys.jacobian(cur)


def _factors_ss(sys: SkewProductSystem, pts: np.ndarray):
    cur = pts.copy()
    while True:
        jac = sys.jacobian(cur)
        # Lower-block-triangular inverse: [[B,0],[C,D]]^-1.
        binv = np.broadcast_to(sys.base.inverse().as_array(), jac[..., :2, :2].shape)
        dinv = inv2(jac[..., 2:, 2:])
        out = np.zeros_like(jac)
        out[..., :2, :2] = binv
        out[..., 2:, 2:] = dinv
        out[..., 2:, :2] = -dinv @ jac[..., 2:, :2] @ binv
        yield out
        cur = sys.apply(cur)


def _factors_wu(sys: SkewProductSystem, pts: np.ndarray):
    cur = pts.copy()
    while True:
        cur = sys.apply_inverse(cur)
        yield sys.fiber_jacobian(cur[..., :2], cur[..., 2:])


def _factors_ws(sys: SkewProductSystem, pts: np.ndarray):
    cur = pts.copy()
    while True:
        yield inv2(sys.fiber_jacobian(cur[..., :2], cur[..., 2:]))
        cur = sys.apply(cur)


def estimate_bundle_batch(sys: SkewProductSystem, pts, bundle: str,
                          tol: float = 1e-10, max_iter: int = 200) -> BundleBatch:
    """Estimate one bundle over a batch of points pts (N,4)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = pts.shape[0]
    if bundle == "uu":
        return _cocycle_power(_factors_uu(sys, pts), _V0_4, n, tol, max_iter)
    if bundle == "ss":
        return _cocycle_power(_factors_ss(sys, pts), _V0_4, n, tol, max_iter)
    if bundle == "wu":
        return _cocycle_power(_factors_wu(sys, pts), _V0_2, n, tol, max_iter)
    if bundle == "ws":
        return _cocycle_power(_factors_ws(sys, pts), _V0_2, n, tol, max_iter)
    raise ValueError(f"unknown bundle {bundle!r}; expected one of {BUNDLES}")


def estimate_direction(sys: SkewProductSystem, p, bundle: str,
                       tol: float = 1e-10, max_iter: int = 200) -> BundleEstimate:
    """Single-point bundle estimate; raises NonConvergenceError at the cap."""
    arr = p.as_array() if hasattr(p, "as_array") else np.asarray(p, dtype=float)
    batch = estimate_bundle_batch(sys, arr[None, :], bundle, tol, max_iter)
    if not bool(batch.converged[0]):
        raise NonConvergenceError(
            f"{bundle} estimate did not reach tol={tol} in {max_iter} iterations",
            residual=float(batch.residuals[0]),
        )
    return BundleEstimate(bundle=bundle, vector=batch.vectors[0],
                          iterations=batch.iterations,
                          residual=float(batch.residuals[0]), converged=True)


def estimate_splitting(sys: SkewProductSystem, p, tol: float = 1e-10,
                       max_iter: int = 200) -> SplittingEstimate:
    ss = estimate_direction(sys, p, "ss", tol, max_iter)
    uu = estimate_direction(sys, p, "uu", tol, max_iter)
    ws = estimate_direction(sys, p, "ws", tol, max_iter)
    wu = estimate_direction(sys, p, "wu", tol, max_iter)
    return SplittingEstimate(
        e_ss=ss.vector, e_uu=uu.vector,
        e_ws=ws.direction, e_wu=wu.direction,
        iterations=max(e.iterations for e in (ss, uu, ws, wu)),
        residual=max(e.residual for e in (ss, uu, ws, wu)),
    )


def grid_points(n: int) -> np.ndarray:
    """Uniform n^4 lattice offset by half a cell (avoids fixed points), (n^4, 4)."""
    offs = (np.arange(n) + 0.5) / n
    g = np.stack(np.meshgrid(offs, offs, offs, offs, indexing="ij"), axis=-1)
    return g.reshape(-1, 4)


@dataclass(frozen=True)
class ChiBounds:
    """Sampled per-bundle growth bounds over a grid (coarse, never certified)."""

    ss_min: float
    ss_max: float
    ws_min: float
    ws_max: float
    wu_min: float
    wu_max: float
    uu_min: float
    uu_max: float
    grid_points: int
    residual_max: float
    iterations_max: int

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "ss_min", "ss_max", "ws_min", "ws_max", "wu_min", "wu_max",
            "uu_min", "uu_max", "grid_points", "residual_max", "iterations_max")}


def expansion_rates(sys: SkewProductSystem, pts, tol: float = 1e-10,
                    max_iter: int = 200) -> ChiBounds:
    """Sampled ||Df restricted to each bundle|| bounds over the given points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    estimates = {b: estimate_bundle_batch(sys, pts, b, tol, max_iter) for b in BUNDLES}
    bad = [b for b, e in estimates.items() if not bool(np.all(e.converged))]
    if bad:
        worst = max(float(np.max(estimates[b].residuals)) for b in bad)
        raise NonConvergenceError(
            f"bundle estimates did not converge on the grid: {bad}", residual=worst)

    jac4 = sys.jacobian(pts)
    rates: dict[str, np.ndarray] = {}
    for b in ("ss", "uu"):
        img = np.einsum("nij,nj->ni", jac4, estimates[b].vectors)
        rates[b] = np.linalg.norm(img, axis=-1)
    jfib = sys.fiber_jacobian(pts[..., :2], pts[..., 2:])
    for b in ("ws", "wu"):
        img = np.einsum("nij,nj->ni", jfib, estimates[b].vectors)
        rates[b] = np.linalg.norm(img, axis=-1)

    return ChiBounds(
        ss_min=float(rates["ss"].min()), ss_max=float(rates["ss"].max()),
        ws_min=float(rates["ws"].min()), ws_max=float(rates["ws"].max()),
        wu_min=float(rates["wu"].min()), wu_max=float(rates["wu"].max()),
        uu_min=float(rates["uu"].min()), uu_max=float(rates["uu"].max()),
        grid_points=pts.shape[0],
        residual_max=max(float(np.max(e.residuals)) for e in estimates.values()),
        iterations_max=max(e.iterations for e in estimates.values()),
    )


@dataclass(frozen=True)
class ConditionReport:
    """Sampled-bounds verdict for the three class conditions."""

    bounds: ChiBounds
    cond_a: bool
    cond_b: bool
    cond_c: bool
    margins_a: tuple[float, float, float, float]
    margins_b: tuple[float, float]
    margin_c: float
    c_lhs: float
    c_rhs: float

    @property
    def ok(self) -> bool:
        return self.cond_a and self.cond_b and self.cond_c

    def as_dict(self) -> dict:
        return {
            "bounds": self.bounds.as_dict(),
            "cond_a": self.cond_a,
            "cond_b": self.cond_b,
            "cond_c": self.cond_c,
            "margins_a": list(self.margins_a),
            "margins_b": list(self.margins_b),
            "margin_c": self.margin_c,
            "c_lhs": self.c_lhs,
            "c_rhs": self.c_rhs,
            "ok": self.ok,
        }


def verify_conditions(bounds: ChiBounds) -> ConditionReport:
    """Evaluate the spectral ordering, 2-center bunching, and exponent inequality.

    (a)  ss_max < ws_min <= ws_max < 1 < wu_min <= wu_max < uu_min
    (b)  ss_max < (ws_min/wu_max)^2   and   (wu_max/ws_min)^2 < uu_min
    (c)  log(ws_min)/log(ss_max) < (log(uu_min) - log(wu_max)) / (-log(ss_min))
    """
    a_slacks = (
        bounds.ws_min - bounds.ss_max,
        1.0 - bounds.ws_max,
        bounds.wu_min - 1.0,
        bounds.uu_min - bounds.wu_max,
    )
    cond_a = all(s > 0.0 for s in a_slacks)

    ratio = bounds.ws_min / bounds.wu_max
    b_slacks = (ratio * ratio - bounds.ss_max, bounds.uu_min - 1.0 / (ratio * ratio))
    cond_b = all(s > 0.0 for s in b_slacks)

    # (c) only makes sense when the logs have the expected signs.
    if bounds.ws_min < 1.0 and bounds.ss_max < 1.0 and bounds.ss_min < 1.0 and bounds.uu_min > 0:
        lhs = math.log(bounds.ws_min) / math.log(bounds.ss_max)
        rhs = (math.log(bounds.uu_min) - math.log(bounds.wu_max)) / (-math.log(bounds.ss_min))
        cond_c = lhs < rhs
        margin_c = rhs - lhs
    else:
        lhs = math.nan
        rhs = math.nan
        cond_c = False
        margin_c = math.nan

    return ConditionReport(bounds=bounds, cond_a=cond_a, cond_b=cond_b, cond_c=cond_c,
                           margins_a=a_slacks, margins_b=b_slacks, margin_c=margin_c,
                           c_lhs=lhs, c_rhs=rhs)


def condition_report(sys: SkewProductSystem, grid_n: int = 8, tol: float = 1e-10,
                     max_iter: int = 200) -> ConditionReport:
    """Grid sampling + condition check in one call (the verify pipeline)."""
    return verify_conditions(expansion_rates(sys, grid_points(grid_n), tol, max_iter))
