"""Coupling data: scalar potential, ambient two-form and its three-form.

All fields live on the ambient space of the target and are restricted to
the manifold by feeding tangent vectors / projecting outputs.  Conventions
use full-sum coefficient arrays: a two-form is an antisymmetric matrix
field ``B_ij(y)`` acting as ``B(x1, x2) = B_ij x1^i x2^j``; a three-form is
a totally antisymmetric array ``O_ijk(y)`` acting analogously.  With these
conventions the exterior derivative is
``(dB)_ijk = d_i B_jk + d_j B_ki + d_k B_ij``.

The bundle map derived from a three-form sends a tangent pair to the
tangent vector ``Z(x1 ^ x2) = P(p) w`` with ``w_i = O_ijk x1^j x2^k``; in
flat 3-space with the volume form scaled by f this is f times the cross
product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .target import EmbeddedTarget, _as_batch, _unbatch


def _levi_civita(q: int) -> np.ndarray:
    eps = np.zeros((q,) * q)
    if q == 3:
        for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            eps[i, j, k] = 1.0
            eps[i, k, j] = -1.0
    elif q == 4:
        from itertools import permutations

        def sign(p):
            s, p = 1, list(p)
            for i in range(len(p)):
                while p[i] != i:
                    j = p[i]
                    p[i], p[j] = p[j], p[i]
                    s = -s
            return s

        for p in permutations(range(4)):
            eps[p] = sign(p)
    else:
        raise ValueError(f"unsupported ambient dimension {q}")
    return eps


class Polynomial:
    """Sparse multivariate polynomial {exponent tuple: coefficient}."""

    def __init__(self, nvars: int, terms: dict[tuple[int, ...], float] | None = None):
        self.nvars = nvars
        self.terms = {
            tuple(e): float(c) for e, c in (terms or {}).items() if c != 0.0
        }

    @classmethod
    def constant(cls, nvars: int, value: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: value})

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(points))
        for expo, coef in self.terms.items():
            term = np.full(len(points), coef)
            for v, e in enumerate(expo):
                if e:
                    term *= points[:, v] ** e
            out += term
        return out

    def diff(self, var: int) -> "Polynomial":
        terms = {}
        for expo, coef in self.terms.items():
            if expo[var] == 0:
                continue
            new = list(expo)
            new[var] -= 1
            key = tuple(new)
            terms[key] = terms.get(key, 0.0) + coef * expo[var]
        return Polynomial(self.nvars, terms)

    def __eq__(self, other) -> bool:
        return isinstance(other, Polynomial) and self.terms == other.terms

    def is_zero(self) -> bool:
        return not self.terms


# -- scalar potentials --------------------------------------------------------


class ScalarPotential:
    kind = "zero"

    def value(self, points):
        pts, single = _as_batch(points)
        return _unbatch(self._value(pts), single)

    def gradient(self, points):
        pts, single = _as_batch(points)
        return _unbatch(self._gradient(pts), single)

    def hessian(self, points):
        pts, single = _as_batch(points)
        return _unbatch(self._hessian(pts), single)

    def _value(self, pts):
        return np.zeros(len(pts))

    def _gradient(self, pts):
        return np.zeros_like(pts)

    def _hessian(self, pts):
        q = pts.shape[1]
        return np.zeros((len(pts), q, q))

    def hessian_sup_bound(self) -> float:
        """Analytic bound on the operator norm of the Hessian."""
        return 0.0


class ZeroPotential(ScalarPotential):
    pass


class LinearPotential(ScalarPotential):
    """V(y) = <a, y> + offset."""

    kind = "linear"

    def __init__(self, a, offset: float = 0.0):
        self.a = np.asarray(a, dtype=float)
        self.offset = float(offset)

    def _value(self, pts):
        return pts @ self.a + self.offset

    def _gradient(self, pts):
        return np.broadcast_to(self.a, pts.shape).copy()


class QuadraticPotential(ScalarPotential):
    """V(y) = c |y - y0|^2."""

    kind = "quadratic"

    def __init__(self, y0, c: float = 1.0):
        self.y0 = np.asarray(y0, dtype=float)
        self.c = float(c)

    def _value(self, pts):
        return self.c * ((pts - self.y0) ** 2).sum(axis=1)

    def _gradient(self, pts):
        return 2 * self.c * (pts - self.y0)

    def _hessian(self, pts):
        q = pts.shape[1]
        return np.broadcast_to(2 * self.c * np.eye(q), (len(pts), q, q)).copy()

    def hessian_sup_bound(self) -> float:
        return 2 * abs(self.c)


class PolyPotential(ScalarPotential):
    """Polynomial potential with exact derivatives."""

    kind = "poly"

    def __init__(self, poly: Polynomial):
        if poly.degree() > 4:
            raise ValueError("polynomial fields are capped at total degree 4")
        self.poly = poly
        self._grads = [poly.diff(v) for v in range(poly.nvars)]
        self._hess = [
            [g.diff(w) for w in range(poly.nvars)] for g in self._grads
        ]

    def _value(self, pts):
        return self.poly(pts)

    def _gradient(self, pts):
        return np.stack([g(pts) for g in self._grads], axis=1)

    def _hessian(self, pts):
        q = pts.shape[1]
        h = np.empty((len(pts), q, q))
        for i in range(q):
            for j in range(q):
                h[:, i, j] = self._hess[i][j](pts)
        return h

    def hessian_sup_bound(self) -> float:
        raise ValueError("no analytic Hessian bound for polynomial potentials")


# -- two-forms ----------------------------------------------------------------


class TwoForm:
    """Antisymmetric matrix field; subclasses provide coefficients."""

    kind = "zero"

    def __init__(self, ambient_dim: int):
        self.ambient_dim = ambient_dim

    def matrix(self, points):
        pts, single = _as_batch(points)
        return _unbatch(self._matrix(pts), single)

    def _matrix(self, pts):
        q = self.ambient_dim
        return np.zeros((len(pts), q, q))

    def exterior_derivative(self) -> "ThreeForm":
        return ZeroThreeForm(self.ambient_dim)


class ZeroTwoForm(TwoForm):
    pass


class RadialTwoForm(TwoForm):
    """B = (f/3) * contraction of the volume form with the position field.

    In coordinates ``B_ij(y) = (f/3) eps_ijk y^k``, so ``dB = f vol``.
    """

    kind = "radial"

    def __init__(self, f: float):
        super().__init__(3)
        self.f = float(f)
        self._eps = _levi_civita(3)

    def _matrix(self, pts):
        return (self.f / 3.0) * np.einsum("ijk,mk->mij", self._eps, pts)

    def exterior_derivative(self) -> "ThreeForm":
        return VolumeThreeForm(self.f)


class ConstantTwoForm(TwoForm):
    """Constant coefficient matrix (antisymmetrized)."""

    kind = "constant"

    def __init__(self, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=float)
        super().__init__(coeffs.shape[0])
        self.coeffs = (coeffs - coeffs.T) / 2

    def _matrix(self, pts):
        return np.broadcast_to(self.coeffs, (len(pts),) + self.coeffs.shape).copy()


class PolyTwoForm(TwoForm):
    """B_ij given as polynomials; exterior derivative is exact."""

    kind = "poly"

    def __init__(self, ambient_dim: int, entries: dict[tuple[int, int], Polynomial]):
        super().__init__(ambient_dim)
        self.entries: dict[tuple[int, int], Polynomial] = {}
        for (i, j), poly in entries.items():
            if poly.degree() > 4:
                raise ValueError("polynomial fields are capped at total degree 4")
            if i == j:
                raise ValueError("diagonal two-form entries must vanish")
            key = (min(i, j), max(i, j))
            sign = 1.0 if (i, j) == key else -1.0
            terms = {e: sign * c for e, c in poly.terms.items()}
            if key in self.entries:
                merged = dict(self.entries[key].terms)
                for e, c in terms.items():
                    merged[e] = merged.get(e, 0.0) + c
                self.entries[key] = Polynomial(self.ambient_dim, merged)
            else:
                self.entries[key] = Polynomial(self.ambient_dim, terms)

    def _matrix(self, pts):
        q = self.ambient_dim
        out = np.zeros((len(pts), q, q))
        for (i, j), poly in self.entries.items():
            vals = poly(pts)
            out[:, i, j] = vals
            out[:, j, i] = -vals
        return out

    def exterior_derivative(self) -> "ThreeForm":
        q = self.ambient_dim
        polys: dict[tuple[int, int, int], Polynomial] = {}
        # full antisymmetric coefficient array of B, differentiated exactly
        b = {}
        for (i, j), poly in self.entries.items():
            b[(i, j)] = poly
            b[(j, i)] = Polynomial(q, {e: -c for e, c in poly.terms.items()})
        zero = Polynomial(q)

        def entry(i, j):
            return b.get((i, j), zero)

        from itertools import combinations

        for i, j, k in combinations(range(q), 3):
            terms: dict[tuple[int, ...], float] = {}
            for poly in (
                entry(j, k).diff(i),
                entry(k, i).diff(j),
                entry(i, j).diff(k),
            ):
                for e, c in poly.terms.items():
                    terms[e] = terms.get(e, 0.0) + c
            polys[(i, j, k)] = Polynomial(q, terms)
        return PolyThreeForm(q, polys)


# -- three-forms --------------------------------------------------------------


class ThreeForm:
    kind = "zero"

    def __init__(self, ambient_dim: int):
        self.ambient_dim = ambient_dim

    def coefficients(self, points):
        """Totally antisymmetric coefficient array, shape (m, q, q, q)."""
        pts, single = _as_batch(points)
        return _unbatch(self._coefficients(pts), single)

    def _coefficients(self, pts):
        q = self.ambient_dim
        return np.zeros((len(pts), q, q, q))

    def apply(self, points, x1, x2):
        """Contraction w_i = O_ijk x1^j x2^k, shape (m, q)."""
        pts, single = _as_batch(points)
        x1b, _ = _as_batch(x1)
        x2b, _ = _as_batch(x2)
        return _unbatch(self._apply(pts, x1b, x2b), single)

    def _apply(self, pts, x1, x2):
        coeff = self._coefficients(pts)
        return np.einsum("mijk,mj,mk->mi", coeff, x1, x2)

    def is_zero(self) -> bool:
        return self.kind == "zero"


class ZeroThreeForm(ThreeForm):
    pass


class VolumeThreeForm(ThreeForm):
    """f times the volume form of 3-space (constant f)."""

    kind = "volume"

    def __init__(self, f: float):
        super().__init__(3)
        self.f = float(f)
        self._eps = _levi_civita(3)

    def _coefficients(self, pts):
        return self.f * np.broadcast_to(self._eps, (len(pts), 3, 3, 3)).copy()

    def _apply(self, pts, x1, x2):
        return self.f * np.cross(x1, x2)

    def is_zero(self) -> bool:
        return self.f == 0.0


class PolyVolumeThreeForm(ThreeForm):
    """g(y) times the volume form of 3-space, polynomial g."""

    kind = "poly_volume"

    def __init__(self, g: Polynomial):
        super().__init__(3)
        self.g = g
        self._eps = _levi_civita(3)

    def _coefficients(self, pts):
        return self.g(pts)[:, None, None, None] * self._eps[None]

    def _apply(self, pts, x1, x2):
        return self.g(pts)[:, None] * np.cross(x1, x2)


class RadialContractionFourSpace(ThreeForm):
    """Contraction of the 4-space volume form with the radial unit field."""

    kind = "radial4"

    def __init__(self, f: float = 1.0):
        super().__init__(4)
        self.f = float(f)
        self._eps = _levi_civita(4)

    def _coefficients(self, pts):
        nu = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        return self.f * np.einsum("lijk,ml->mijk", self._eps, nu)


class PolyThreeForm(ThreeForm):
    """Coefficients on i<j<k given as polynomials."""

    kind = "poly"

    def __init__(self, ambient_dim: int, entries: dict[tuple[int, int, int], Polynomial]):
        super().__init__(ambient_dim)
        self.entries = entries

    def _coefficients(self, pts):
        from itertools import permutations

        q = self.ambient_dim
        out = np.zeros((len(pts), q, q, q))
        for (i, j, k), poly in self.entries.items():
            vals = poly(pts)
            base = (i, j, k)
            for perm in permutations(range(3)):
                sign = 1.0 if perm in ((0, 1, 2), (1, 2, 0), (2, 0, 1)) else -1.0
                out[:, base[perm[0]], base[perm[1]], base[perm[2]]] = sign * vals
        return out

    def is_zero(self) -> bool:
        return all(p.is_zero() for p in self.entries.values())


# -- the assembled pack -------------------------------------------------------


@dataclass
class FieldPack:
    """Scalar potential plus two-form/three-form couplings.

    ``two_form`` may be None (only the three-form supplied); the pullback
    energy term is then unavailable while the flow remains well defined.
    ``omega_is_exact`` asserts that the supplied three-form is the exterior
    derivative of the supplied two-form.
    """

    potential: ScalarPotential = field(default_factory=ZeroPotential)
    two_form: TwoForm | None = None
    three_form: ThreeForm | None = None
    omega_is_exact: bool = False

    @property
    def has_two_form(self) -> bool:
        return self.two_form is not None

    def omega(self) -> ThreeForm:
        if self.three_form is not None:
            return self.three_form
        if self.two_form is not None:
            return self.two_form.exterior_derivative()
        return ZeroThreeForm(3)

    @classmethod
    def zero(cls, ambient_dim: int = 3) -> "FieldPack":
        return cls(
            potential=ZeroPotential(),
            two_form=ZeroTwoForm(ambient_dim),
            three_form=ZeroThreeForm(ambient_dim),
            omega_is_exact=True,
        )


def eval_B(pack: FieldPack, points, x1, x2):
    """Pullback integrand B(x1, x2) at each point; antisymmetric in (x1, x2)."""
    if not pack.has_two_form:
        raise ValueError("no two-form supplied; pullback term unavailable")
    pts, single = _as_batch(points)
    x1b, _ = _as_batch(x1)
    x2b, _ = _as_batch(x2)
    mat = np.atleast_3d(pack.two_form.matrix(pts))
    if mat.ndim == 2:
        mat = mat[None]
    vals = np.einsum("mij,mi,mj->m", mat, x1b, x2b)
    return _unbatch(vals, single)


def eval_Z(pack: FieldPack, target: EmbeddedTarget, points, x1, x2):
    """Tangent vector Z(x1 ^ x2) defined by <Z(x1^x2), e> = Omega(e, x1, x2)."""
    pts, single = _as_batch(points)
    x1b, _ = _as_batch(x1)
    x2b, _ = _as_batch(x2)
    omega = pack.omega()
    if omega.is_zero():
        return _unbatch(np.zeros_like(pts), single)
    x1t = target.apply_projector(pts, x1b)
    x2t = target.apply_projector(pts, x2b)
    raw = omega._apply(pts, np.atleast_2d(x1t), np.atleast_2d(x2t))
    out = target.apply_projector(pts, raw)
    return _unbatch(np.atleast_2d(out), single)


def grad_V(pack: FieldPack, target: EmbeddedTarget, points):
    """Tangential gradient of the potential at on-manifold points."""
    pts, single = _as_batch(points)
    grad = pack.potential._gradient(pts)
    out = target.apply_projector(pts, grad)
    return _unbatch(np.atleast_2d(out), single)


def hess_V(pack: FieldPack, target: EmbeddedTarget, points, x, y):
    """Intrinsic Hessian <X, Hess~V Y> - <grad~V, II(X, Y)> (scalar per point)."""
    pts, single = _as_batch(points)
    xb, _ = _as_batch(x)
    yb, _ = _as_batch(y)
    xb = np.atleast_2d(target.apply_projector(pts, xb))
    yb = np.atleast_2d(target.apply_projector(pts, yb))
    hess = pack.potential._hessian(pts)
    vals = np.einsum("mi,mij,mj->m", xb, hess, yb)
    if target.intrinsic_dim < target.ambient_dim:
        grad = pack.potential._gradient(pts)
        sec = np.atleast_2d(target.second_fundamental(pts, xb, yb))
        vals = vals - np.einsum("mi,mi->m", grad, sec)
    return _unbatch(vals, single)


def nabla_Z(pack: FieldPack, target: EmbeddedTarget, points, xi, x1, x2,
            step: float = 1e-5):
    """Covariant derivative of Z along xi by Richardson-extrapolated differences.

    Differentiates t -> P(p) Z(p_t; P(p_t) x1 ^ P(p_t) x2) along the
    projected curve p_t = project(p + t xi).
    """
    pts, single = _as_batch(points)
    xib, _ = _as_batch(xi)
    x1b, _ = _as_batch(x1)
    x2b, _ = _as_batch(x2)
    omega = pack.omega()
    if omega.is_zero():
        return _unbatch(np.zeros_like(pts), single)

    def probe(t):
        moved = target.project(pts + t * xib)
        moved = np.atleast_2d(moved)
        z = eval_Z(pack, target, moved, x1b, x2b)
        return np.atleast_2d(target.apply_projector(pts, np.atleast_2d(z)))

    def central(h):
        return (probe(h) - probe(-h)) / (2 * h)

    d_h = central(step)
    d_h2 = central(step / 2)
    out = (4 * d_h2 - d_h) / 3
    return _unbatch(out, single)


def sup_norm_B(pack: FieldPack, target: EmbeddedTarget, samples: int,
               seed: int = 0) -> float:
    """Seeded sup over the target of the tangent-restricted two-form norm.

    The norm at a point is the largest singular value of P B P, which equals
    the sup of |B(t1, t2)| over orthonormal tangent pairs.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    if not pack.has_two_form:
        raise ValueError("no two-form supplied")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((samples, target.ambient_dim))
    if target.kind == "euclidean3":
        pts = 2.0 * raw      # flat target: sample a fixed ambient box
    else:
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        raw = np.where(norms < 1e-6, 1.0, raw)
        pts = np.atleast_2d(target.project(raw))
    proj = target._projector(pts)
    mat = pack.two_form.matrix(pts)
    if mat.ndim == 2:
        mat = mat[None]
    restricted = np.einsum("mij,mjk,mkl->mil", proj, mat, proj)
    svals = np.linalg.svd(restricted, compute_uv=False)
    return float(svals[:, 0].max())


def fd_exterior_derivative(two_form: TwoForm, points, step: float = 1e-5):
    """Finite-difference dB coefficients at given points, shape (m, q, q, q)."""
    pts, single = _as_batch(points)
    q = two_form.ambient_dim
    m = len(pts)
    partials = np.empty((m, q, q, q))    # partials[:, l, i, j] = d_l B_ij
    for l in range(q):
        e = np.zeros(q)
        e[l] = step
        bp = np.atleast_3d(two_form.matrix(pts + e))
        bm = np.atleast_3d(two_form.matrix(pts - e))
        partials[:, l] = (bp - bm) / (2 * step)
    d = (
        partials
        + np.einsum("mjki->mijk", partials)
        + np.einsum("mkij->mijk", partials)
    )
    return _unbatch(d, single)
