"""Rigid skew products on T^2 x T^2 with gated fiber perturbations.

A system is f(b, x) = (M_base b, fiber(b, x)) where the fiber map is a fixed
hyperbolic linear automorphism preceded by a list of fiber perturbations.
Each perturbation is a composition of localized rotations whose effective
angles are scaled by a gate factor beta(b) in [0,1]: beta is 1 inside a disc
around the gate center, fades with the quintic profile, and vanishes beyond
twice the gate radius. With no perturbations the system is an exact product
and the fiber map does not depend on the base point at all.

Base maps are restricted to linear hyperbolic toral automorphisms, so base
orbits, their inverses, and the base derivative are exact.

Perturbations are evaluated only on the points whose gate factor is nonzero;
outside every gate the fiber map agrees with the unperturbed one bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConditionError
from .rotations import LocalizedRotation, RotationComposition, bump, bump_deriv
from .torus import (
    EigenSplit,
    IntMatrix2,
    TorusPoint2,
    TorusPoint4,
    displacement,
    hyperbolic_eigensplit,
    wrap,
)

__all__ = [
    "FiberPerturbation",
    "SkewProductSystem",
    "make_product",
    "system_to_dict",
    "system_from_dict",
    "system_hash",
]


@dataclass(frozen=True)
class FiberPerturbation:
    """Fiber rotations applied with angle scaled by a base-point gate."""

    gate_center: TorusPoint2
    gate_radius: float
    rotations: RotationComposition

    def __post_init__(self):
        if not 0.0 < 2.0 * self.gate_radius < 0.5:
            raise ValueError(
                f"need 0 < 2*gate_radius < 1/2; gate_radius={self.gate_radius}"
            )
        if len(self.rotations) == 0:
            raise ValueError("perturbation needs at least one rotation")

    def gate(self, base_pts):
        """beta(b) in [0,1], vanishing outside the 2*gate_radius disc."""
        d = displacement(self.gate_center.as_array(), np.asarray(base_pts, dtype=float))
        r = np.sqrt(np.sum(d * d, axis=-1))
        return bump(r, self.gate_radius)

    def gate_grad(self, base_pts):
        """Gradient of the gate in the base coordinates, shape (...,2)."""
        d = displacement(self.gate_center.as_array(), np.asarray(base_pts, dtype=float))
        r = np.sqrt(np.sum(d * d, axis=-1))
        db = bump_deriv(r, self.gate_radius)
        with np.errstate(invalid="ignore", divide="ignore"):
            fac = np.where(r > 0.0, db / np.where(r > 0.0, r, 1.0), 0.0)
        return fac[..., None] * d


def _flatten_pair(b, x):
    """Broadcast base/fiber batches to a common shape and flatten to (N,2).

    The fiber side is always a fresh array: callers mutate it in place, and
    a view of (or alias to) the input would leak those writes back out.
    """
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    shape = np.broadcast_shapes(b.shape, x.shape)
    b2 = np.ascontiguousarray(np.broadcast_to(b, shape).reshape(-1, 2))
    x2 = np.broadcast_to(x, shape).reshape(-1, 2).copy()
    return b2, x2, shape


@dataclass(frozen=True)
class SkewProductSystem:
    """f(b, x) = (base @ b, fiber @ (gated corrections)(b, x)) on T^4."""

    base: IntMatrix2
    fiber: IntMatrix2
    perturbations: tuple[FiberPerturbation, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "perturbations", tuple(self.perturbations))
        for name, M in (("base", self.base), ("fiber", self.fiber)):
            if abs(M.det) != 1:
                raise ValueError(f"{name} matrix must have |det| = 1, got {M.det}")
            if abs(M.trace) <= 2:
                raise ConditionError(f"{name} matrix is not hyperbolic (|trace| <= 2)")

    @property
    def is_product(self) -> bool:
        return len(self.perturbations) == 0

    @cached_property
    def base_split(self) -> EigenSplit:
        return hyperbolic_eigensplit(self.base)

    @cached_property
    def fiber_split(self) -> EigenSplit:
        return hyperbolic_eigensplit(self.fiber)

    # -- base factor --------------------------------------------------------

    def base_apply(self, b):
        b = np.asarray(b, dtype=float)
        return wrap(b @ self.base.as_array().T)

    def base_apply_inverse(self, b):
        b = np.asarray(b, dtype=float)
        return wrap(b @ self.base.inverse().as_array().T)

    # -- fiber factor -------------------------------------------------------

    def fiber_apply(self, b, x):
        """Fiber map over base point(s) b applied to fiber point(s) x."""
        b2, z, shape = _flatten_pair(b, x)
        for pert in self.perturbations:
            beta = pert.gate(b2)
            m = beta > 0.0
            if m.any():
                z[m] = pert.rotations.apply(z[m], beta[m])
        return wrap(z @ self.fiber.as_array().T).reshape(shape)

    def fiber_apply_inverse(self, b, y):
        """Inverse of the fiber map over b; exact (rotations invert exactly)."""
        b2, y2, shape = _flatten_pair(b, y)
        z = wrap(y2 @ self.fiber.inverse().as_array().T)
        for pert in reversed(self.perturbations):
            beta = pert.gate(b2)
            m = beta > 0.0
            if m.any():
                z[m] = pert.rotations.apply_inverse(z[m], beta[m])
        return z.reshape(shape)

    def fiber_jacobian(self, b, x):
        """d(fiber image)/dx, shape (...,2,2)."""
        b2, z, shape = _flatten_pair(b, x)
        jac = np.broadcast_to(np.eye(2), (z.shape[0], 2, 2)).copy()
        for pert in self.perturbations:
            beta = pert.gate(b2)
            m = beta > 0.0
            if m.any():
                jac[m] = pert.rotations.jacobian(z[m], beta[m]) @ jac[m]
                z[m] = pert.rotations.apply(z[m], beta[m])
        return (self.fiber.as_array() @ jac).reshape(shape[:-1] + (2, 2))

    def fiber_blocks(self, b, x):
        """(d/dx, d/db) of the fiber image: the diagonal and coupling blocks."""
        b2, z, shape = _flatten_pair(b, x)
        jac = np.broadcast_to(np.eye(2), (z.shape[0], 2, 2)).copy()
        coup = np.zeros((z.shape[0], 2, 2))
        for pert in self.perturbations:
            beta = pert.gate(b2)
            m = beta > 0.0
            if m.any():
                grad = pert.gate_grad(b2[m])
                jf, dsc = pert.rotations.jacobian_and_dscale(z[m], beta[m])
                coup[m] = jf @ coup[m] + dsc[..., :, None] * grad[..., None, :]
                jac[m] = jf @ jac[m]
                z[m] = pert.rotations.apply(z[m], beta[m])
        F = self.fiber.as_array()
        return (F @ jac).reshape(shape[:-1] + (2, 2)), (F @ coup).reshape(shape[:-1] + (2, 2))

    # -- full map -------------------------------------------------------------

    def apply(self, p):
        """One step of the skew product on points p of shape (...,4)."""
        p = np.asarray(p, dtype=float)
        b, x = p[..., :2], p[..., 2:]
        return np.concatenate([self.base_apply(b), self.fiber_apply(b, x)], axis=-1)

    def apply_inverse(self, q):
        q = np.asarray(q, dtype=float)
        b = self.base_apply_inverse(q[..., :2])
        x = self.fiber_apply_inverse(b, q[..., 2:])
        return np.concatenate([b, x], axis=-1)

    def jacobian(self, p):
        """Df at p, shape (...,4,4): [[base, 0], [coupling, fiber]]."""
        p = np.asarray(p, dtype=float)
        b, x = p[..., :2], p[..., 2:]
        dfib, coup = self.fiber_blocks(b, x)
        out = np.zeros(p.shape[:-1] + (4, 4))
        out[..., :2, :2] = self.base.as_array()
        out[..., 2:, :2] = coup
        out[..., 2:, 2:] = dfib
        return out

    # -- typed scalar wrappers ------------------------------------------------

    def apply_point(self, p: TorusPoint4) -> TorusPoint4:
        return TorusPoint4.from_array(self.apply(p.as_array()))

    def apply_inverse_point(self, p: TorusPoint4) -> TorusPoint4:
        return TorusPoint4.from_array(self.apply_inverse(p.as_array()))

    def jacobian_point(self, p: TorusPoint4) -> np.ndarray:
        return self.jacobian(p.as_array())


def make_product(base: IntMatrix2, fiber: IntMatrix2) -> SkewProductSystem:
    """Exact product system; requires the base to dominate the fiber.

    Domination means the base expands more and contracts more than the fiber:
    lambda_u(base) > lambda_u(fiber) and lambda_s(base) < lambda_s(fiber).
    """
    bs = hyperbolic_eigensplit(base)
    fs = hyperbolic_eigensplit(fiber)
    if not (bs.lambda_u > fs.lambda_u and bs.lambda_s < fs.lambda_s):
        raise ConditionError(
            "domination violated: base rates must strictly dominate fiber rates "
            f"(base {bs.lambda_s:.6g}..{bs.lambda_u:.6g}, "
            f"fiber {fs.lambda_s:.6g}..{fs.lambda_u:.6g})"
        )
    return SkewProductSystem(base=base, fiber=fiber)


# -- serialization -----------------------------------------------------------


def system_to_dict(sys: SkewProductSystem) -> dict:
    d: dict = {
        "base": [[sys.base.a, sys.base.b], [sys.base.c, sys.base.d]],
        "fiber": [[sys.fiber.a, sys.fiber.b], [sys.fiber.c, sys.fiber.d]],
    }
    if sys.perturbations:
        d["perturbations"] = [
            {
                "gate_center": [p.gate_center.x, p.gate_center.y],
                "gate_radius": p.gate_radius,
                "rotations": [
                    {"center": [r.center.x, r.center.y], "radius": r.rho, "angle": r.theta}
                    for r in p.rotations.factors
                ],
            }
            for p in sys.perturbations
        ]
    return d


def _as_int_matrix(rows, name: str) -> IntMatrix2:
    arr = np.asarray(rows)
    if arr.shape != (2, 2):
        raise ValueError(f"{name} must be a 2x2 integer matrix")
    return IntMatrix2(int(arr[0, 0]), int(arr[0, 1]), int(arr[1, 0]), int(arr[1, 1]))


def system_from_dict(d: dict) -> SkewProductSystem:
    known = {"base", "fiber", "perturbations"}
    extra = set(d) - known
    if extra:
        raise ValueError(f"unknown system keys: {sorted(extra)}")
    perts = []
    for pd in d.get("perturbations", []):
        pextra = set(pd) - {"gate_center", "gate_radius", "rotations"}
        if pextra:
            raise ValueError(f"unknown perturbation keys: {sorted(pextra)}")
        rots = tuple(
            LocalizedRotation(
                center=TorusPoint2(float(rd["center"][0]), float(rd["center"][1])),
                rho=float(rd["radius"]),
                theta=float(rd["angle"]),
            )
            for rd in pd["rotations"]
        )
        perts.append(
            FiberPerturbation(
                gate_center=TorusPoint2(float(pd["gate_center"][0]), float(pd["gate_center"][1])),
                gate_radius=float(pd["gate_radius"]),
                rotations=RotationComposition(rots),
            )
        )
    return SkewProductSystem(
        base=_as_int_matrix(d["base"], "base"),
        fiber=_as_int_matrix(d["fiber"], "fiber"),
        perturbations=tuple(perts),
    )


def system_hash(sys: SkewProductSystem) -> str:
    """Stable content hash of a system (canonical JSON, sha256 hex)."""
    blob = json.dumps(system_to_dict(sys), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
