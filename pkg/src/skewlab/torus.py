"""Flat-torus geometry: points, wrapping, metrics, directions, eigensplittings.

Coordinates are taken in the fundamental domain [0,1)^d. Directions are
projective (angles mod pi), since invariant line fields carry no orientation.
All array helpers broadcast over leading axes so hot loops can stay in numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotHyperbolicError

__all__ = [
    "wrap",
    "torus_dist",
    "displacement",
    "point_array",
    "TorusPoint2",
    "TorusPoint4",
    "IntMatrix2",
    "Direction",
    "EigenSplit",
    "hyperbolic_eigensplit",
    "push_direction",
    "angle_dist",
    "inv2",
]


def point_array(p) -> np.ndarray:
    """Coerce a typed point, tuple, or array to a float ndarray."""
    if hasattr(p, "as_array"):
        return p.as_array()
    return np.asarray(p, dtype=float)


def wrap(x):
    """Reduce coordinates to [0,1).  Idempotent: wrap(wrap(x)) == wrap(x) exactly.

    Accepts scalars or arrays; preserves shape.
    """
    x = np.asarray(x, dtype=float)
    r = x - np.floor(x)
    # x - floor(x) can round to exactly 1.0 for tiny negative inputs; fold it.
    r = np.where(r >= 1.0, r - 1.0, r)
    if r.ndim == 0:
        return float(r)
    return r


def displacement(a, b):
    """Shortest representative of b - a on the torus, componentwise in [-1/2, 1/2)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    return d - np.floor(d + 0.5)


def torus_dist(a, b):
    """Euclidean distance on the flat torus (shortest representative).

    Bounded by sqrt(d)/2 in dimension d.  Broadcasts over leading axes;
    the last axis holds coordinates.
    """
    d = displacement(a, b)
    out = np.sqrt(np.sum(d * d, axis=-1))
    if out.ndim == 0:
        return float(out)
    return out


def angle_dist(a, b):
    """Projective distance between angles mod pi, in [0, pi/2]. Broadcasts."""
    d = np.mod(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)), math.pi)
    out = np.minimum(d, math.pi - d)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class TorusPoint2:
    """Point of T^2; coordinates self-wrap into [0,1)."""

    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", wrap(float(self.x)))
        object.__setattr__(self, "y", wrap(float(self.y)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @staticmethod
    def from_array(v) -> "TorusPoint2":
        v = np.asarray(v, dtype=float)
        return TorusPoint2(float(v[0]), float(v[1]))


@dataclass(frozen=True)
class TorusPoint4:
    """Point of T^2 x T^2 split into base and fiber components."""

    base: TorusPoint2
    fiber: TorusPoint2

    def as_array(self) -> np.ndarray:
        return np.array([self.base.x, self.base.y, self.fiber.x, self.fiber.y])

    @staticmethod
    def from_array(v) -> "TorusPoint4":
        v = np.asarray(v, dtype=float)
        return TorusPoint4(TorusPoint2(float(v[0]), float(v[1])),
                           TorusPoint2(float(v[2]), float(v[3])))

    @staticmethod
    def of(bx: float, by: float, fx: float, fy: float) -> "TorusPoint4":
        return TorusPoint4(TorusPoint2(bx, by), TorusPoint2(fx, fy))


@dataclass(frozen=True)
class IntMatrix2:
    """2x2 integer matrix acting on column vectors: (x,y) |-> (ax+by, cx+dy)."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            v = getattr(self, name)
            if int(v) != v:
                raise ValueError(f"matrix entry {name}={v!r} is not an integer")
            object.__setattr__(self, name, int(v))

    @property
    def det(self) -> int:
        return self.a * self.d - self.b * self.c

    @property
    def trace(self) -> int:
        return self.a + self.d

    def as_array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=float)

    def inverse(self) -> "IntMatrix2":
        det = self.det
        if abs(det) != 1:
            raise ValueError(f"matrix with det={det} has no integer inverse")
        # adjugate over det; det = +-1 so 1/det = det.
        return IntMatrix2(self.d * det, -self.b * det, -self.c * det, self.a * det)

    def __matmul__(self, other: "IntMatrix2") -> "IntMatrix2":
        return IntMatrix2(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def power(self, n: int) -> "IntMatrix2":
        if n < 0:
            return self.inverse().power(-n)
        out = IntMatrix2(1, 0, 0, 1)
        for _ in range(n):
            out = out @ self
        return out

    @staticmethod
    def identity() -> "IntMatrix2":
        return IntMatrix2(1, 0, 0, 1)


@dataclass(frozen=True)
class Direction:
    """Unoriented tangent direction in the plane: an angle in [0, pi)."""

    angle: float

    def __post_init__(self):
        a = math.fmod(float(self.angle), math.pi)
        if a < 0.0:
            a += math.pi
        if a >= math.pi:  # fmod can land exactly on pi after the fold
            a -= math.pi
        object.__setattr__(self, "angle", a)

    def vector(self) -> np.ndarray:
        return np.array([math.cos(self.angle), math.sin(self.angle)])

    @staticmethod
    def from_vector(v) -> "Direction":
        v = np.asarray(v, dtype=float)
        if not np.any(v != 0.0):
            raise ValueError("zero vector has no direction")
        return Direction(math.atan2(v[1], v[0]))

    def distance(self, other: "Direction") -> float:
        return angle_dist(self.angle, other.angle)

    def is_close(self, other: "Direction", tol: float = 1e-9) -> bool:
        return self.distance(other) <= tol


@dataclass(frozen=True)
class EigenSplit:
    """Expanding/contracting eigendata of a hyperbolic 2x2 matrix.

    lambda_u > 1 and lambda_s in (0,1) are the eigenvalue magnitudes, so
    lambda_u * lambda_s == |det| for unimodular matrices.
    """

    lambda_u: float
    lambda_s: float
    dir_u: Direction
    dir_s: Direction


def _eigvec(M: IntMatrix2, mu: float) -> np.ndarray:
    # Kernel of (M - mu I): both rows give a representative; pick the better
    # conditioned one.
    v1 = np.array([M.b, mu - M.a])
    v2 = np.array([mu - M.d, M.c])
    v = v1 if np.hypot(*v1) >= np.hypot(*v2) else v2
    n = np.hypot(*v)
    if n == 0.0:
        raise NotHyperbolicError("eigenvector degenerated; matrix is not hyperbolic")
    return v / n


def hyperbolic_eigensplit(M: IntMatrix2) -> EigenSplit:
    """Closed-form eigensplit of a hyperbolic unimodular integer matrix.

    Requires |det M| = 1 and |trace M| > 2; raises NotHyperbolicError
    otherwise.  Eigenvalues of such matrices are always real and distinct.
    """
    if abs(M.det) != 1:
        raise ValueError(f"expected |det| = 1, got det = {M.det}")
    tr = M.trace
    if abs(tr) <= 2:
        raise NotHyperbolicError(f"|trace| = {abs(tr)} <= 2: not hyperbolic")
    disc = tr * tr - 4 * M.det
    root = math.sqrt(float(disc))
    mu1 = (tr + root) / 2.0
    mu2 = (tr - root) / 2.0
    if abs(mu1) < abs(mu2):
        mu1, mu2 = mu2, mu1
    # mu1 is the expanding eigenvalue (possibly negative); rates are magnitudes.
    return EigenSplit(
        lambda_u=abs(mu1),
        lambda_s=abs(mu2),
        dir_u=Direction.from_vector(_eigvec(M, mu1)),
        dir_s=Direction.from_vector(_eigvec(M, mu2)),
    )


def push_direction(M, d: Direction) -> Direction:
    """Image of a direction under an invertible linear map (projectivized)."""
    A = M.as_array() if isinstance(M, IntMatrix2) else np.asarray(M, dtype=float)
    v = A @ d.vector()
    n = np.hypot(*v)
    if n <= 1e-14 * max(1.0, float(np.abs(A).max())):
        raise ValueError("direction collapsed: matrix is singular along it")
    return Direction(math.atan2(v[1], v[0]))


def push_angles(A: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Vectorized push_direction: A is (...,2,2), angles (...,) mod pi."""
    v = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    w = np.einsum("...ij,...j->...i", A, v)
    return np.mod(np.arctan2(w[..., 1], w[..., 0]), math.pi)


def inv2(m: np.ndarray) -> np.ndarray:
    """Closed-form inverse of a batch of 2x2 matrices, shape (...,2,2)."""
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    out[..., 1, 1] = m[..., 0, 0]
    return out / det[..., None, None]
