import numpy as np
import pytest

from hmflow import build_sphere
from hmflow.target import (
    ProjectionDomainError,
    make_target,
)

ALL_KINDS = ["euclidean3", "sphere2", "sphere3", "clifford_torus",
             "catenoid_band", "ellipsoid"]


def sample_points(target, count, seed=0):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((count, target.ambient_dim))
    if target.kind == "catenoid_band":
        v = rng.uniform(-1.5, 1.5, count)
        w = rng.uniform(0, 2 * np.pi, count)
        return np.stack([np.cosh(v) * np.cos(w), np.cosh(v) * np.sin(w), v], axis=1)
    if target.kind == "euclidean3":
        return raw
    return np.atleast_2d(target.project(raw))


def test_projection_examples():
    assert np.allclose(make_target("sphere2").project([2.0, 0, 0]), [1, 0, 0])
    assert np.allclose(
        make_target("clifford_torus").project([2.0, 0, 0, 3.0]), [1, 0, 0, 1]
    )
    y = np.array([0.3, -1.2, 0.7])
    assert np.allclose(make_target("euclidean3").project(y), y)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_projection_idempotent(kind):
    t = make_target(kind)
    pts = sample_points(t, 50, seed=3)
    near = pts + 0.01 * np.random.default_rng(4).standard_normal(pts.shape)
    proj = np.atleast_2d(t.project(near))
    again = np.atleast_2d(t.project(proj))
    assert np.linalg.norm(again - proj, axis=1).max() <= 10 * t.projection_tolerance


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_tangent_projector_invariants(kind):
    t = make_target(kind)
    pts = sample_points(t, 20, seed=5)
    proj = np.atleast_3d(t.tangent_projector(pts))
    sym = np.abs(proj - np.swapaxes(proj, 1, 2)).max()
    idem = np.abs(np.einsum("mij,mjk->mik", proj, proj) - proj).max()
    ranks = np.trace(proj, axis1=1, axis2=2)
    assert sym < 1e-12
    assert idem < 1e-10
    assert np.allclose(ranks, t.intrinsic_dim, atol=1e-8)


def test_tangent_projector_closed_forms():
    s2 = make_target("sphere2")
    assert np.allclose(s2.tangent_projector([1.0, 0, 0]), np.diag([0, 1, 1]))
    e3 = make_target("euclidean3")
    assert np.allclose(e3.tangent_projector([0.3, 1, 2]), np.eye(3))
    s3 = make_target("sphere3")
    p = [1.0, 0, 0, 0]
    assert np.allclose(s3.apply_projector(p, [1.0, 0, 0, 0]), 0)
    assert np.allclose(s3.apply_projector(p, [0, 1.0, 0, 0]), [0, 1, 0, 0])


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_second_fundamental_normal_and_bilinear(kind):
    t = make_target(kind)
    pts = sample_points(t, 20, seed=6)
    rng = np.random.default_rng(7)
    x = np.atleast_2d(t.apply_projector(pts, rng.standard_normal(pts.shape)))
    y = np.atleast_2d(t.apply_projector(pts, rng.standard_normal(pts.shape)))
    ii_xy = np.atleast_2d(t.second_fundamental(pts, x, y))
    ii_yx = np.atleast_2d(t.second_fundamental(pts, y, x))
    ii_2x = np.atleast_2d(t.second_fundamental(pts, 2 * x, y))
    tangential = np.atleast_2d(t.apply_projector(pts, ii_xy))
    assert np.abs(tangential).max() < 1e-8
    assert np.allclose(ii_xy, ii_yx, atol=1e-12)
    assert np.allclose(ii_2x, 2 * ii_xy, atol=1e-10)


def test_second_fundamental_sphere_closed_form():
    # derived by differentiating the radial projection: II(X, Y) = -<X, Y> p
    s2 = make_target("sphere2")
    out = s2.second_fundamental([1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0])
    assert np.allclose(out, [-1.0, 0, 0], atol=1e-12)
    e3 = make_target("euclidean3")
    assert np.allclose(e3.second_fundamental([0.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0]), 0)


def test_second_fundamental_matches_projector_differential():
    # finite-difference oracle: II(X, X) = normal part of the second
    # derivative of t -> project(p + t X)
    for kind in ("sphere2", "ellipsoid", "catenoid_band", "clifford_torus"):
        t = make_target(kind)
        pts = sample_points(t, 8, seed=8)
        rng = np.random.default_rng(9)
        x = np.atleast_2d(t.apply_projector(pts, rng.standard_normal(pts.shape)))
        h = 1e-4
        plus = np.atleast_2d(t.project(pts + h * x))
        minus = np.atleast_2d(t.project(pts - h * x))
        second = (plus - 2 * pts + minus) / h**2
        ii = np.atleast_2d(t.second_fundamental(pts, x, x))
        assert np.abs(second - ii).max() < 5e-4 * max(1.0, np.abs(ii).max())


def test_curvature_bounds():
    assert make_target("euclidean3").curvature_bound() == 0.0
    assert make_target("sphere2").curvature_bound() == 1.0
    assert make_target("sphere3").curvature_bound() == 1.0
    assert make_target("clifford_torus").curvature_bound() == 0.0
    assert make_target("catenoid_band").curvature_bound() == 0.0
    el = make_target("ellipsoid", semi_axes=(2.0, 1.0, 0.5))
    assert el.curvature_bound() == pytest.approx(4.0 / (1.0 * 0.25))


def test_catenoid_gauss_curvature_closed_form():
    # oracle: K from the finite-difference shape operator via the normal map
    cat = make_target("catenoid_band")
    pts = sample_points(cat, 10, seed=10)
    k_closed = np.atleast_1d(cat.gauss_curvature(pts))
    assert (k_closed < 0).all()
    h = 1e-5
    for i, p in enumerate(pts):
        basis = np.atleast_2d(cat.tangent_basis(p))
        shape = np.empty((2, 2))
        for a in range(2):
            nu_p = cat.unit_normal(cat.project(p + h * basis[a]))
            nu_m = cat.unit_normal(cat.project(p - h * basis[a]))
            dnu = (nu_p - nu_m) / (2 * h)
            for b in range(2):
                shape[a, b] = -dnu @ basis[b]
        k_fd = np.linalg.det(shape)
        assert k_fd == pytest.approx(k_closed[i], rel=1e-3)


def test_normal_part_of_laplacian_matches_second_fundamental():
    # discrete composition identity at refining resolution
    sups = []
    for subdiv in (3, 4):
        s = build_sphere(subdiv)
        t = make_target("sphere2")
        u = s.positions.copy()
        lap = s.laplacian(u)
        proj = np.atleast_2d(t.apply_projector(u, lap))
        normal_part = lap - proj
        d1, d2 = s.gradient_frame(u)
        cells = np.atleast_2d(t.project(s.cell_corner_mean(u)))
        ii = np.atleast_2d(t.second_fundamental(cells, d1, d1))
        ii = ii + np.atleast_2d(t.second_fundamental(cells, d2, d2))
        ii_vertex = s.cells_to_vertices(ii)
        sups.append(np.linalg.norm(normal_part - ii_vertex, axis=1).max())
    assert sups[0] > sups[1]
    assert sups[1] < 0.2


@pytest.mark.parametrize("kind", ["sphere2", "ellipsoid", "catenoid_band"])
def test_projection_decreases_distance(kind):
    t = make_target(kind)
    on_surface = sample_points(t, 200, seed=11)
    y = sample_points(t, 10, seed=12) + 0.1
    proj = np.atleast_2d(t.project(y))
    for i in range(len(y)):
        d_proj = np.linalg.norm(proj[i] - y[i])
        d_samples = np.linalg.norm(on_surface - y[i], axis=1).min()
        assert d_proj <= d_samples + 1e-9


def test_projector_commutes_with_projection_differential():
    # P(p) equals the differential of the projection at on-manifold points
    for kind in ("sphere2", "ellipsoid", "clifford_torus"):
        t = make_target(kind)
        pts = sample_points(t, 5, seed=13)
        rng = np.random.default_rng(14)
        h = 1e-6
        for p in pts:
            proj = np.atleast_2d(t.tangent_projector(p))[0]
            for _ in range(3):
                v = rng.standard_normal(t.ambient_dim)
                dproj = (np.asarray(t.project(p + h * v)) - np.asarray(t.project(p - h * v))) / (2 * h)
                assert np.abs(dproj - proj @ v).max() < 1e-6 * (1 + np.abs(v).max())


def test_projection_domain_errors():
    with pytest.raises(ProjectionDomainError):
        make_target("sphere2").project([0.0, 0, 0])
    with pytest.raises(ProjectionDomainError):
        make_target("clifford_torus").project([0.0, 0, 1, 0])
    with pytest.raises(ProjectionDomainError):
        make_target("catenoid_band").project([20.0, 0, 30.0])   # nearest at band edge
    with pytest.raises(ProjectionDomainError):
        make_target("ellipsoid").project([0.0, 0, 0])


def test_off_manifold_point_rejected():
    s2 = make_target("sphere2")
    with pytest.raises(ProjectionDomainError):
        s2.tangent_projector([2.0, 0, 0])
    with pytest.raises(ValueError):
        s2.project([1.0, 0, 0, 0])     # wrong ambient dimension


def test_tangent_basis_orthonormal():
    for kind in ALL_KINDS:
        t = make_target(kind)
        pts = sample_points(t, 6, seed=15)
        basis = np.atleast_3d(t.tangent_basis(pts))
        gram = np.einsum("mai,mbi->mab", basis, basis)
        eye = np.eye(t.intrinsic_dim)
        assert np.abs(gram - eye).max() < 1e-10
