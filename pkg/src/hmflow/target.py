"""Embedded target manifolds with closest-point projection.

Every target lives in an ambient coordinate space of dimension
``ambient_dim``.  Operations are batched: points and vectors may be single
``(q,)`` arrays or stacks ``(m, q)``.

Sign conventions: hypersurface normals point outward (spheres, ellipsoid)
or follow the surface parametrization (catenoid band); the vector-valued
second fundamental form satisfies ``II(X, X) = -|X|^2 p`` on the unit
sphere with outward normal, so that the normal part of the ambient
Laplacian of an on-manifold map equals ``II(du, du)``.
"""

from __future__ import annotations

import numpy as np


class ProjectionDomainError(ValueError):
    """Point outside the region where the closest-point projection is defined."""


class ProjectionConvergenceError(RuntimeError):
    """Newton projection failed to converge; carries per-point diagnostics."""

    def __init__(self, message: str, worst_residual: float):
        super().__init__(f"{message} (worst residual {worst_residual:.3e})")
        self.worst_residual = worst_residual


def _as_batch(arr) -> tuple[np.ndarray, bool]:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def _unbatch(arr: np.ndarray, single: bool) -> np.ndarray:
    return arr[0] if single else arr


class EmbeddedTarget:
    """Base class; concrete targets implement the projection and curvature data."""

    kind: str
    ambient_dim: int
    intrinsic_dim: int
    projection_tolerance: float = 1e-12

    def project(self, y):
        points, single = _as_batch(y)
        self._check_dim(points)
        return _unbatch(self._project(points), single)

    def tangent_projector(self, p):
        points, single = _as_batch(p)
        self._check_dim(points)
        self._check_on_manifold(points)
        return _unbatch(self._projector(points), single)

    def apply_projector(self, p, v):
        """P(p) v without forming the projector when a cheaper form exists."""
        points, single = _as_batch(p)
        vecs, _ = _as_batch(v)
        self._check_dim(points)
        return _unbatch(self._apply_projector(points, vecs), single)

    def second_fundamental(self, p, x, y):
        points, single = _as_batch(p)
        xs, _ = _as_batch(x)
        ys, _ = _as_batch(y)
        self._check_dim(points)
        self._check_on_manifold(points)
        xs = self._apply_projector(points, xs)
        ys = self._apply_projector(points, ys)
        return _unbatch(self._second_fundamental(points, xs, ys), single)

    def curvature_bound(self) -> float:
        """Supremum of the sectional curvature (see each target)."""
        raise NotImplementedError

    def on_manifold_error(self, u) -> float:
        points, _ = _as_batch(u)
        return float(np.linalg.norm(self._project(points) - points, axis=1).max())

    def tangent_basis(self, p):
        """Deterministic orthonormal basis of each tangent space, (m, dim, q)."""
        points, single = _as_batch(p)
        proj = self._projector(points)
        # eigenvectors of the symmetric projector with eigenvalue ~1
        w, v = np.linalg.eigh(proj)
        basis = v[:, :, -self.intrinsic_dim:]          # (m, q, dim)
        basis = np.swapaxes(basis, 1, 2)
        return _unbatch(basis, single)

    # -- hooks -------------------------------------------------------------

    def _project(self, points):
        raise NotImplementedError

    def _projector(self, points):
        raise NotImplementedError

    def _apply_projector(self, points, vecs):
        proj = self._projector(points)
        return np.einsum("mij,mj->mi", proj, vecs)

    def _second_fundamental(self, points, xs, ys):
        raise NotImplementedError

    def _check_dim(self, points):
        if points.shape[-1] != self.ambient_dim:
            raise ValueError(
                f"expected ambient dimension {self.ambient_dim}, got {points.shape[-1]}"
            )

    def _check_on_manifold(self, points, factor: float = 1e6):
        err = np.linalg.norm(self._project(points) - points, axis=1).max()
        if err > factor * self.projection_tolerance:
            raise ProjectionDomainError(
                f"point off the target manifold by {err:.3e}"
            )


class Euclidean3(EmbeddedTarget):
    """Flat 3-space as its own target; projection is the identity."""

    kind = "euclidean3"
    ambient_dim = 3
    intrinsic_dim = 3

    def _project(self, points):
        return points

    def _projector(self, points):
        return np.broadcast_to(np.eye(3), (len(points), 3, 3)).copy()

    def _apply_projector(self, points, vecs):
        return vecs

    def _second_fundamental(self, points, xs, ys):
        return np.zeros_like(xs)

    def _check_on_manifold(self, points, factor=1e6):
        pass

    def curvature_bound(self) -> float:
        return 0.0


class Sphere(EmbeddedTarget):
    """Unit round sphere S^(q-1) in ambient q-space (kinds sphere2, sphere3)."""

    def __init__(self, ambient_dim: int):
        self.ambient_dim = ambient_dim
        self.intrinsic_dim = ambient_dim - 1
        self.kind = f"sphere{self.intrinsic_dim}"

    def _project(self, points):
        norms = np.linalg.norm(points, axis=1)
        if (norms < 1e-9).any():
            raise ProjectionDomainError("cannot project the origin to the sphere")
        return points / norms[:, None]

    def _projector(self, points):
        eye = np.eye(self.ambient_dim)
        return eye[None] - np.einsum("mi,mj->mij", points, points)

    def _apply_projector(self, points, vecs):
        return vecs - np.einsum("mi,mi->m", points, vecs)[:, None] * points

    def _second_fundamental(self, points, xs, ys):
        return -np.einsum("mi,mi->m", xs, ys)[:, None] * points

    def curvature_bound(self) -> float:
        return 1.0


class CliffordTorus(EmbeddedTarget):
    """Product of two unit circles in 4-space; flat."""

    kind = "clifford_torus"
    ambient_dim = 4
    intrinsic_dim = 2

    def _project(self, points):
        out = points.copy()
        for sl in (slice(0, 2), slice(2, 4)):
            norms = np.linalg.norm(points[:, sl], axis=1)
            if (norms < 1e-9).any():
                raise ProjectionDomainError(
                    "cannot project a point with a vanishing circle factor"
                )
            out[:, sl] = points[:, sl] / norms[:, None]
        return out

    def _projector(self, points):
        proj = np.zeros((len(points), 4, 4))
        eye2 = np.eye(2)
        for sl in (slice(0, 2), slice(2, 4)):
            pa = points[:, sl]
            proj[:, sl, sl] = eye2[None] - np.einsum("mi,mj->mij", pa, pa)
        return proj

    def _second_fundamental(self, points, xs, ys):
        out = np.zeros_like(xs)
        for sl in (slice(0, 2), slice(2, 4)):
            dot = np.einsum("mi,mi->m", xs[:, sl], ys[:, sl])
            out[:, sl] = -dot[:, None] * points[:, sl]
        return out

    def curvature_bound(self) -> float:
        return 0.0


class CatenoidBand(EmbeddedTarget):
    """Catenoid (cosh v cos w, cosh v sin w, v) truncated to |v| <= band.

    A negative-curvature target at desk scale; the Gauss curvature is
    -1/cosh(v)^4 and the stored curvature bound is its supremum 0.
    """

    kind = "catenoid_band"
    ambient_dim = 3
    intrinsic_dim = 2
    band = 2.0

    def _params_of(self, points):
        v = points[:, 2]
        w = np.arctan2(points[:, 1], points[:, 0])
        return v, w

    def _project(self, points):
        # the height coordinate is the v parameter, so projection reduces to
        # a 1-d damped Newton solve in v for each point
        rho = np.linalg.norm(points[:, :2], axis=1)
        if (rho < 1e-9).any():
            raise ProjectionDomainError("axis points have no unique projection")
        z = points[:, 2]
        v = np.clip(z, -self.band, self.band)
        # minimize g(v) = (cosh v - rho)^2 + (v - z)^2
        for _ in range(60):
            c, s = np.cosh(v), np.sinh(v)
            grad = 2 * (c - rho) * s + 2 * (v - z)
            hess = 2 * (s**2 + (c - rho) * c) + 2
            step = np.where(hess > 1e-12, -grad / hess, -np.sign(grad) * 0.1)
            g0 = (c - rho) ** 2 + (v - z) ** 2
            scale = np.ones_like(v)
            for _ in range(25):
                vt = np.clip(v + scale * step, -self.band, self.band)
                gt = (np.cosh(vt) - rho) ** 2 + (vt - z) ** 2
                worse = gt > g0 + 1e-15
                if not worse.any():
                    break
                scale[worse] /= 2
            vnew = np.clip(v + scale * step, -self.band, self.band)
            if np.abs(vnew - v).max() < 1e-14:
                v = vnew
                break
            v = vnew
        if (np.abs(v) > self.band - 1e-9).any():
            raise ProjectionDomainError(
                "closest point falls on the band edge |v| = "
                f"{self.band}; point outside the projection domain"
            )
        w = np.arctan2(points[:, 1], points[:, 0])
        return np.stack([np.cosh(v) * np.cos(w), np.cosh(v) * np.sin(w), v], axis=1)

    def unit_normal(self, p):
        points, single = _as_batch(p)
        v, w = self._params_of(points)
        nu = np.stack([-np.cos(w), -np.sin(w), np.sinh(v)], axis=1) / np.cosh(v)[:, None]
        return _unbatch(nu, single)

    def _projector(self, points):
        v, w = self._params_of(points)
        nu = np.stack([-np.cos(w), -np.sin(w), np.sinh(v)], axis=1) / np.cosh(v)[:, None]
        return np.eye(3)[None] - np.einsum("mi,mj->mij", nu, nu)

    def _second_fundamental(self, points, xs, ys):
        v, w = self._params_of(points)
        cosh = np.cosh(v)
        nu = np.stack([-np.cos(w), -np.sin(w), np.sinh(v)], axis=1) / cosh[:, None]
        xv = np.stack([np.sinh(v) * np.cos(w), np.sinh(v) * np.sin(w), np.ones_like(v)], axis=1)
        xw = np.stack([-cosh * np.sin(w), cosh * np.cos(w), np.zeros_like(v)], axis=1)
        # shape operator: dnu(xv) = xv / cosh^2, dnu(xw) = -xw / cosh^2
        inv_c2 = 1 / cosh**2
        ax = np.einsum("mi,mi->m", xs, xv) * inv_c2
        bx = np.einsum("mi,mi->m", xs, xw) * inv_c2
        dnu_x = (ax * inv_c2)[:, None] * xv - (bx * inv_c2)[:, None] * xw
        coeff = -np.einsum("mi,mi->m", dnu_x, ys)
        return coeff[:, None] * nu

    def gauss_curvature(self, p):
        points, single = _as_batch(p)
        v = points[:, 2]
        k = -1 / np.cosh(v) ** 4
        return _unbatch(k, single)

    def curvature_bound(self) -> float:
        return 0.0


class Ellipsoid(EmbeddedTarget):
    """Ellipsoid x^2/a^2 + y^2/b^2 + z^2/c^2 = 1 with outward normal.

    Projection solves the Lagrange condition x_i = y_i / (1 + t / a_i^2) by
    a bracketed, damped Newton iteration on the scalar root: on the interval
    t > -min(a_i)^2 the residual is strictly decreasing, so the root is
    unique and yields the closest point.  Points for which no root exists
    (center, medial-axis region) are outside the projection domain.
    """

    kind = "ellipsoid"
    ambient_dim = 3
    intrinsic_dim = 2
    max_newton = 80

    def __init__(self, a: float, b: float, c: float):
        if min(a, b, c) <= 0:
            raise ValueError("semi-axes must be positive")
        self.axes = np.array([a, b, c], dtype=float)

    def _project(self, points):
        g = 1 / self.axes**2
        y2g = points**2 * g[None, :]

        def resid(t):
            return (y2g / (1 + t[:, None] * g[None, :]) ** 2).sum(axis=1) - 1

        m = len(points)
        t_left = -self.axes.min() ** 2
        lo = np.zeros(m)
        hi = np.zeros(m)
        f0 = resid(np.zeros(m))
        outside = f0 > 0
        # outside: root in (0, inf); double hi until bracketed
        hi[outside] = 1.0
        for _ in range(200):
            mask = outside & (resid(hi) > 0)
            if not mask.any():
                break
            hi[mask] *= 2
        # inside: root in (t_left, 0]; shrink toward the singular end
        inside = ~outside
        lo[inside] = t_left * (1 - 1e-12) + 1e-300
        bad = inside & (resid(lo) < 0)
        if bad.any():
            raise ProjectionDomainError(
                f"{int(bad.sum())} point(s) in the medial region of the "
                "ellipsoid; closest point is not unique"
            )

        t = (lo + hi) / 2
        for _ in range(self.max_newton):
            f = resid(t)
            lo = np.where(f > 0, t, lo)
            hi = np.where(f > 0, hi, t)
            df = -2 * (y2g * g[None, :] / (1 + t[:, None] * g[None, :]) ** 3).sum(axis=1)
            step = np.where(np.abs(df) > 1e-300, -f / df, 0.0)
            t_new = t + step
            off = (t_new <= lo) | (t_new >= hi) | ~np.isfinite(t_new)
            t_new[off] = (lo[off] + hi[off]) / 2
            if np.abs(t_new - t).max() <= 1e-16 * (1 + np.abs(t).max()):
                t = t_new
                break
            t = t_new
        x = points / (1 + t[:, None] * g[None, :])
        res = np.abs(resid(t))
        if res.max() > 1e-10:
            raise ProjectionConvergenceError(
                "ellipsoid projection did not converge", float(res.max())
            )
        return x

    def unit_normal(self, p):
        points, single = _as_batch(p)
        grad = points / self.axes[None, :] ** 2
        nu = grad / np.linalg.norm(grad, axis=1, keepdims=True)
        return _unbatch(nu, single)

    def _projector(self, points):
        nu = self.unit_normal(points)
        nu = np.atleast_2d(nu)
        return np.eye(3)[None] - np.einsum("mi,mj->mij", nu, nu)

    def _second_fundamental(self, points, xs, ys):
        g = 1 / self.axes**2
        gnorm = np.linalg.norm(points * g[None, :], axis=1)
        coeff = -np.einsum("mi,mi->m", xs * g[None, :], ys) / gnorm
        nu = np.atleast_2d(self.unit_normal(points))
        return coeff[:, None] * nu

    def curvature_bound(self) -> float:
        a, b, c = sorted(self.axes, reverse=True)
        return float(a**2 / (b**2 * c**2))


_TARGET_KINDS = {
    "euclidean3": lambda **kw: Euclidean3(),
    "sphere2": lambda **kw: Sphere(3),
    "sphere3": lambda **kw: Sphere(4),
    "clifford_torus": lambda **kw: CliffordTorus(),
    "catenoid_band": lambda **kw: CatenoidBand(),
    "ellipsoid": lambda semi_axes=(2.0, 1.0, 1.0), **kw: Ellipsoid(*semi_axes),
}


def make_target(kind: str, **params) -> EmbeddedTarget:
    if kind not in _TARGET_KINDS:
        raise ValueError(
            f"unknown target kind {kind!r}; choose from {sorted(_TARGET_KINDS)}"
        )
    return _TARGET_KINDS[kind](**params)
