import numpy as np
import pytest
import scipy.sparse as sp

from conftest import lshape_family
from neumann_ocp.assembly import (
    CornerQuad,
    assemble_adjoint_direct,
    assemble_boundary_load,
    assemble_boundary_mass,
    assemble_boundary_weighted_mass,
    assemble_load,
    assemble_mass,
    assemble_state,
    assemble_stiffness,
    coercive_coefficients,
    corner_adapted_quadrature,
    edge_normals,
    integrate,
    p1_gradients,
    read_coo,
    write_coo,
)
from neumann_ocp.coeffs import CoefficientSet, constant_field
from neumann_ocp.domain import make_polygon, make_unit_square
from neumann_ocp.mesh import build_graded_mesh, coarse_trimesh
from neumann_ocp.solver import solve


def _const_b(v):
    return lambda x: np.broadcast_to(np.asarray(v, float), np.asarray(x).shape).copy()


@pytest.fixture(scope="module")
def unit_tri():
    m = coarse_trimesh(make_polygon([(0, 0), (1, 0), (0, 1)]))
    assert m.n_triangles == 1
    return m


def test_unit_triangle_stiffness(unit_tri):
    K = assemble_stiffness(unit_tri).toarray()
    # reorder to the vertex order (0,0), (1,0), (0,1)
    order = [int(np.flatnonzero(np.all(unit_tri.nodes == p, axis=1))[0]) for p in ([0, 0], [1, 0], [0, 1])]
    expected = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    np.testing.assert_allclose(K[np.ix_(order, order)], expected, atol=1e-15)
    np.testing.assert_allclose(assemble_state(unit_tri, CoefficientSet()).toarray(), K, atol=1e-15)


def test_unit_triangle_convection_block(unit_tri):
    cs = CoefficientSet(b=_const_b([1.0, 0.0]), div_b=constant_field(0.0))
    C = assemble_state(unit_tri, cs).toarray() - assemble_stiffness(unit_tri).toarray()
    g, area = p1_gradients(unit_tri)
    tri = unit_tri.triangles[0]
    # int (b . grad phi_j) phi_i = (area / 3) d1 phi_j
    expected = np.tile(area[0] / 3.0 * g[0, :, 0], (3, 1))
    np.testing.assert_allclose(C[np.ix_(tri, tri)], expected, atol=1e-15)


def test_constants_in_kernel_of_diffusion():
    m = lshape_family(0.5, 4)[-1]
    K = assemble_state(m, CoefficientSet())
    assert np.abs(K @ np.ones(m.n_nodes)).max() < 1e-12
    np.testing.assert_allclose(K.toarray(), assemble_stiffness(m).toarray(), atol=1e-13)


def test_mass_matrix():
    m = lshape_family(1.0, 3)[-1]
    M = assemble_mass(m)
    assert M.sum() == pytest.approx(3.0, abs=1e-13)
    assert np.abs(M - M.T).max() == 0.0
    # exact for the P1 function 1 + x1
    u = 1.0 + m.nodes[:, 0]
    exact = integrate(m, lambda p: (1.0 + p[..., 0]) ** 2)
    assert u @ M @ u == pytest.approx(exact, rel=1e-13)


def test_symmetric_without_convection():
    m = lshape_family(1.0, 3)[-1]
    cs = CoefficientSet(a0=lambda x: 1.0 + x[..., 0] ** 2)
    K = assemble_state(m, cs)
    assert abs(K - K.T).max() < 1e-15
    D = assemble_adjoint_direct(m, cs)
    assert abs(D - K).max() < 1e-15


def test_adjoint_direct_exact_for_constant_convection():
    m = lshape_family(1.0, 3)[-1]
    cs = CoefficientSet(b=_const_b([0.7, -1.3]), div_b=constant_field(0.0), a0=constant_field(1.0))
    K = assemble_state(m, cs)
    D = assemble_adjoint_direct(m, cs)
    assert abs(D - K.T).max() < 1e-13


def test_adjoint_direct_converges_with_degree():
    m = lshape_family(1.0, 3)[-1]
    cs = CoefficientSet(b=lambda x: np.stack([np.sin(3 * x[..., 0] * x[..., 1]), np.exp(x[..., 0])], -1),
                        div_b=lambda x: 3 * x[..., 1] * np.cos(3 * x[..., 0] * x[..., 1]))
    K = assemble_state(m, cs, degree=10)
    gap = [abs(assemble_adjoint_direct(m, cs, degree=d) - K.T).max() for d in (4, 8)]
    assert gap[1] <= gap[0] / 10


def test_adjoint_direct_manufactured(case):
    m = lshape_family(1.0, 3)[-1]
    cs = case.coefficients
    gap = [abs(assemble_adjoint_direct(m, cs, degree=d) - assemble_state(m, cs, degree=d).T).max()
           for d in (4, 8)]
    assert gap[1] <= gap[0] / 10


def test_boundary_mass():
    m = lshape_family(0.66, 4)[-1]
    B, h = assemble_boundary_mass(m)
    assert B.shape == (m.n_nodes, m.n_boundary_edges)
    assert h.sum() == pytest.approx(8.0, abs=1e-13)
    colsum = np.asarray(B.sum(axis=0)).ravel()
    np.testing.assert_allclose(colsum, h, atol=1e-15)
    e = m.boundary_edges
    np.testing.assert_allclose(B[e[:, 0], np.arange(len(h))].A1, h / 2, atol=1e-15)
    # B u for u = 1 equals the boundary load of g = 1
    np.testing.assert_allclose(B @ np.ones(len(h)), assemble_boundary_load(m, lambda x, n: np.ones(x.shape[:-1])),
                               atol=1e-14)


def test_boundary_weighted_mass_total():
    m = lshape_family(1.0, 3)[-1]
    W = assemble_boundary_weighted_mass(m, lambda x, n: np.ones(x.shape[:-1]))
    assert W.sum() == pytest.approx(8.0, abs=1e-13)


def test_edge_normals_unit_outward():
    m = lshape_family(1.0, 3)[-1]
    n = edge_normals(m)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0)
    p = m.nodes[m.boundary_edges]
    t = p[:, 1] - p[:, 0]
    # outward: counterclockwise tangent rotated clockwise
    assert np.all(t[:, 0] * n[:, 1] - t[:, 1] * n[:, 0] < 0)


@pytest.mark.parametrize("domain", ["lshape", "square"])
def test_linear_patch_reproduced(domain):
    if domain == "lshape":
        m = lshape_family(0.5, 3)[-1]
    else:
        m = build_graded_mesh(make_unit_square(), 3)
    exact = lambda x: 3.0 + x[..., 0] + 2.0 * x[..., 1]
    K = assemble_state(m, coercive_coefficients())
    rhs = assemble_load(m, exact) + assemble_boundary_load(m, lambda x, n: n[..., 0] + 2.0 * n[..., 1])
    y, _ = solve(K, rhs)
    assert np.abs(y - exact(m.nodes)).max() <= 1e-9


def test_coercive_form_positive_definite():
    m = lshape_family(1.0, 2)[-1]
    cs = CoefficientSet(b=_const_b([0.3, 0.2]), div_b=constant_field(0.0), a0=constant_field(1.0))
    K = assemble_state(m, cs).toarray()
    assert np.linalg.eigvalsh(K + K.T).min() > 0


def test_corner_quadrature_on_mesh(case):
    # int_Omega a0 = int r^alpha: the sum of the corner-graded element rules
    m = lshape_family(1.0, 2)[-1]
    val = integrate(m, case.coefficients.a0, case.coefficients.singular_points)
    fine = integrate(m, case.coefficients.a0, case.coefficients.singular_points,
                     corner=CornerQuad(depth=30))
    assert val == pytest.approx(fine, rel=1e-10)
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    f = lambda x: np.hypot(x[..., 0], x[..., 1]) ** -1.25
    # radial oracle: int_0^{pi/2} int_0^{R(t)} r^-0.25 dr dt with R = 1/(cos t + sin t)
    from scipy.integrate import quad
    ref = quad(lambda t: (1.0 / (np.cos(t) + np.sin(t))) ** 0.75 / 0.75, 0, np.pi / 2,
               epsabs=1e-14, epsrel=1e-13)[0]
    assert corner_adapted_quadrature(tri, f) == pytest.approx(ref, rel=1e-9)


def test_coo_roundtrip(tmp_path, case):
    m = lshape_family(1.0, 2)[-1]
    K = assemble_state(m, case.coefficients)
    write_coo(tmp_path / "K.coo", K)
    head = (tmp_path / "K.coo").read_text().splitlines()[0].split()
    assert head == [str(m.n_nodes), str(K.nnz)]
    R = read_coo(tmp_path / "K.coo")
    assert (R != K).nnz == 0
    write_coo(tmp_path / "Z.coo", sp.csr_matrix((3, 3)))
    assert read_coo(tmp_path / "Z.coo").nnz == 0
