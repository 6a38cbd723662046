"""Localized fiber rotations and their compositions.

A localized rotation turns the disc of radius rho about a center by a fixed
angle, interpolates the angle down to zero across the annulus rho..2*rho with
a quintic smoothstep (C^2 at both seams), and is the identity outside. In
polar coordinates about the center it is the twist (r, phi) |-> (r, phi +
theta*psi(r)), so it preserves radii and areas exactly; the inverse is the
same rotation with negated angle, and the Jacobian determinant is exactly 1.

Rotations also accept a per-point scale factor in [0,1] for the effective
angle; skew-product systems use it to gate fiber perturbations by base point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .torus import TorusPoint2, displacement, wrap

__all__ = [
    "smoothstep",
    "bump",
    "bump_deriv",
    "SHEAR_COEF",
    "MAX_TWIST",
    "MAX_SAFE_THETA",
    "shear_margin",
    "LocalizedRotation",
    "RotationComposition",
]


def smoothstep(t):
    """Quintic smoothstep on [0,1]: 10t^3 - 15t^4 + 6t^5, clamped outside."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def smoothstep_deriv(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    d = 30.0 * tc * tc * (1.0 - tc) * (1.0 - tc)
    return np.where(inside, d, 0.0)


def bump(r, rho: float):
    """Radial profile: 1 on [0, rho], quintic fade to 0 on [rho, 2*rho]."""
    r = np.asarray(r, dtype=float)
    return 1.0 - smoothstep((r - rho) / rho)


def bump_deriv(r, rho: float):
    r = np.asarray(r, dtype=float)
    return -smoothstep_deriv((r - rho) / rho) / rho


def _shear_coef() -> float:
    # sup over the annulus of |psi'(r)|*r = max_{t in [0,1]} S'(t)*(1+t); the
    # maximizer is the root of 5t^3 - 4t^2 - 3t + 2 in (0,1).
    roots = np.roots([5.0, -4.0, -3.0, 2.0])
    real = roots[np.abs(roots.imag) < 1e-12].real
    t = float(real[(real > 0.0) & (real < 1.0)][0])
    return float(30.0 * t * t * (1.0 - t) ** 2 * (1.0 + t))


SHEAR_COEF = _shear_coef()  # ~2.8508

# The rank-one shear in the Jacobian has norm |theta*psi'(r)|*r; keeping it
# under 0.9 keeps every localized rotation uniformly bi-Lipschitz.
MAX_TWIST = 0.9

# Largest |theta| the constructor accepts (strictly below the bound above).
MAX_SAFE_THETA = float(np.nextafter(MAX_TWIST / _shear_coef(), 0.0))


def shear_margin(theta: float) -> float:
    """Sup over the annulus of the Jacobian shear for angle theta."""
    return abs(theta) * SHEAR_COEF


@dataclass(frozen=True)
class LocalizedRotation:
    """Rotation by `theta` about `center`, supported in the 2*rho disc."""

    center: TorusPoint2
    rho: float
    theta: float

    def __post_init__(self):
        if not 0.0 < 2.0 * self.rho < 0.5:
            raise ValueError(f"need 0 < 2*rho < 1/2 so the support embeds; rho={self.rho}")
        if abs(self.theta) >= np.pi:
            raise ValueError(f"|theta| must be < pi, got {self.theta}")
        if shear_margin(self.theta) >= MAX_TWIST:
            raise ValueError(
                f"shear bound violated: |theta|*sup|psi'(r)|*r = "
                f"{shear_margin(self.theta):.4f} >= {MAX_TWIST}"
            )

    def inverse_obj(self) -> "LocalizedRotation":
        return LocalizedRotation(self.center, self.rho, -self.theta)

    def _polar(self, pts):
        u = displacement(self.center.as_array(), np.asarray(pts, dtype=float))
        r = np.sqrt(np.sum(u * u, axis=-1))
        return u, r

    def _angle(self, r, scale):
        th = self.theta * bump(r, self.rho)
        if scale is not None:
            th = th * np.asarray(scale, dtype=float)
        return th

    def apply(self, pts, scale=None):
        """Image of pts (...,2); `scale` multiplies the effective angle."""
        if self.theta == 0.0:
            # Bit-exact identity: reconstructing center + displacement would
            # drift by an ulp and break exact-locality comparisons.
            return wrap(np.asarray(pts, dtype=float))
        u, r = self._polar(pts)
        th = self._angle(r, scale)
        c, s = np.cos(th), np.sin(th)
        ru = np.stack([c * u[..., 0] - s * u[..., 1],
                       s * u[..., 0] + c * u[..., 1]], axis=-1)
        return wrap(self.center.as_array() + ru)

    def apply_inverse(self, pts, scale=None):
        # Radii are preserved, so negating the angle inverts exactly.
        return self.inverse_obj().apply(pts, scale)

    def jacobian(self, pts, scale=None):
        """D(apply) at pts, shape (...,2,2); det == 1 identically."""
        u, r = self._polar(pts)
        th = self._angle(r, scale)
        dpsi = bump_deriv(r, self.rho)
        dth = self.theta * dpsi
        if scale is not None:
            dth = dth * np.asarray(scale, dtype=float)
        c, s = np.cos(th), np.sin(th)
        rot = np.empty(u.shape[:-1] + (2, 2))
        rot[..., 0, 0] = c
        rot[..., 0, 1] = -s
        rot[..., 1, 0] = s
        rot[..., 1, 1] = c
        # DR = Rot(th) + (th'/r) * outer(J Rot(th) u, u); th' = 0 at r = 0.
        w0 = c * u[..., 0] - s * u[..., 1]
        w1 = s * u[..., 0] + c * u[..., 1]
        jw = np.stack([-w1, w0], axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            fac = np.where(r > 0.0, dth / np.where(r > 0.0, r, 1.0), 0.0)
        return rot + fac[..., None, None] * jw[..., :, None] * u[..., None, :]

    def d_scale(self, pts, scale=None):
        """Derivative of apply(pts, scale) in the scale factor, shape (...,2)."""
        u, r = self._polar(pts)
        th = self._angle(r, scale)
        base = self.theta * bump(r, self.rho)  # d(effective angle)/d(scale)
        c, s = np.cos(th), np.sin(th)
        w0 = c * u[..., 0] - s * u[..., 1]
        w1 = s * u[..., 0] + c * u[..., 1]
        return base[..., None] * np.stack([-w1, w0], axis=-1)


@dataclass(frozen=True)
class RotationComposition:
    """Composition of localized rotations; factors[0] acts first."""

    factors: tuple[LocalizedRotation, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    def __len__(self):
        return len(self.factors)

    def inverse(self) -> "RotationComposition":
        return RotationComposition(tuple(f.inverse_obj() for f in reversed(self.factors)))

    def compose_after(self, inner: "RotationComposition") -> "RotationComposition":
        """self o inner (inner acts first)."""
        return RotationComposition(inner.factors + self.factors)

    def apply(self, pts, scale=None):
        z = np.asarray(pts, dtype=float)
        for f in self.factors:
            z = f.apply(z, scale)
        return z

    def apply_inverse(self, pts, scale=None):
        z = np.asarray(pts, dtype=float)
        for f in reversed(self.factors):
            z = f.apply_inverse(z, scale)
        return z

    def jacobian(self, pts, scale=None):
        z = np.asarray(pts, dtype=float)
        jac = np.broadcast_to(np.eye(2), z.shape[:-1] + (2, 2)).copy()
        for f in self.factors:
            jac = f.jacobian(z, scale) @ jac
            z = f.apply(z, scale)
        return jac

    def jacobian_and_dscale(self, pts, scale=None):
        """(D_x, d/d(scale)) of the composition with one shared scale factor."""
        z = np.asarray(pts, dtype=float)
        jac = np.broadcast_to(np.eye(2), z.shape[:-1] + (2, 2)).copy()
        dsc = np.zeros(z.shape)
        for f in self.factors:
            jf = f.jacobian(z, scale)
            dsc = np.einsum("...ij,...j->...i", jf, dsc) + f.d_scale(z, scale)
            jac = jf @ jac
            z = f.apply(z, scale)
        return jac, dsc

    def c0_bound(self) -> float:
        """Upper bound for sup |h(x) - x|: each factor moves points <= 2*rho*|theta|."""
        return float(sum(2.0 * f.rho * abs(f.theta) for f in self.factors))
