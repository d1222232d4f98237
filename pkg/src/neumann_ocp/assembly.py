"""P1 assembly of the state operator, mass matrices and load vectors.

Row/column convention: ``K[i, j] = a(phi_j, phi_i)`` with ``j`` the trial
and ``i`` the test index, so the state solve uses ``K`` and the discrete
adjoint uses ``K.T``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .coeffs import CoefficientSet, constant_field
from .mesh import TriMesh
from .quadrature import (
    DEFAULT_CORNER_DEGREE,
    DEFAULT_CORNER_DEPTH,
    DEFAULT_CORNER_RATIO,
    QuadratureRule,
    corner_rule,
    edge_rule,
    triangle_rule,
)

__all__ = [
    "AssembledSystem",
    "CornerQuad",
    "p1_gradients",
    "element_groups",
    "assemble_state",
    "assemble_adjoint_direct",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_h1_metric",
    "assemble_load",
    "assemble_boundary_load",
    "assemble_boundary_mass",
    "assemble_boundary_weighted_mass",
    "assemble_system",
    "integrate",
    "corner_adapted_quadrature",
    "edge_normals",
    "write_coo",
    "read_coo",
]


@dataclass(frozen=True)
class CornerQuad:
    depth: int = DEFAULT_CORNER_DEPTH
    ratio: float = DEFAULT_CORNER_RATIO
    degree: int = DEFAULT_CORNER_DEGREE


@dataclass
class AssembledSystem:
    K: sp.csr_matrix
    M_omega: sp.csr_matrix
    M_gamma: sp.csr_matrix
    edge_h: np.ndarray
    load_f: np.ndarray | None = None
    load_g: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.K.shape[0]


def p1_gradients(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Constant basis gradients ``(T, 3, 2)`` and areas ``(T,)``."""
    p = mesh.tri_xy
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    g = np.empty((len(p), 3, 2))
    for k in range(3):
        k1, k2 = (k + 1) % 3, (k + 2) % 3
        g[:, k, 0] = (y[:, k1] - y[:, k2]) / det
        g[:, k, 1] = (x[:, k2] - x[:, k1]) / det
    return g, 0.5 * det


def element_groups(mesh: TriMesh, singular_points=(), degree: int = 4,
                   corner: CornerQuad | None = None) -> list[tuple[np.ndarray, QuadratureRule]]:
    """Split elements into (indices, rule) groups.

    Elements with a vertex on a singular point get the corner-graded rule
    oriented at that vertex; all others the plain rule of ``degree``.
    """
    corner = corner or CornerQuad()
    nt = mesh.n_triangles
    local = np.full(nt, -1)
    for sp_pt in singular_points:
        hit = np.flatnonzero(np.all(np.abs(mesh.nodes - np.asarray(sp_pt)) < 1e-14, axis=1))
        for node in hit:
            tt, kk = np.nonzero(mesh.triangles == node)
            local[tt] = kk
    groups = []
    plain = np.flatnonzero(local < 0)
    if plain.size:
        groups.append((plain, triangle_rule(degree)))
    for k in range(3):
        idx = np.flatnonzero(local == k)
        if idx.size:
            groups.append((idx, corner_rule(k, corner.depth, corner.ratio, max(corner.degree, degree))))
    return groups


def _coo(nt_idx, tris, local, n):
    rows = np.repeat(tris[nt_idx], 3, axis=1).ravel()
    cols = np.tile(tris[nt_idx], (1, 3)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def _operator(mesh: TriMesh, coeffs: CoefficientSet, degree: int, corner, b_sign: float,
              use_div_b: bool) -> sp.csr_matrix:
    grads, areas = p1_gradients(mesh)
    tri_xy = mesh.tri_xy
    n = mesh.n_nodes
    parts = []
    for idx, rule in element_groups(mesh, coeffs.singular_points, degree, corner):
        x = rule.points_on(tri_xy[idx])
        A = np.ascontiguousarray(coeffs.eval_a(x))
        b = b_sign * coeffs.eval_b(x)
        c = coeffs.eval_a0(x)
        if use_div_b:
            c = c - coeffs.eval_div_b(x)
        loc = _kernels.element_matrices(grads[idx], areas[idx], rule.bary, rule.weights, A, b, c)
        parts.append(_coo(idx, mesh.triangles, loc, n))
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out.tocsr()


def assemble_state(mesh: TriMesh, coeffs: CoefficientSet, degree: int = 4,
                   corner: CornerQuad | None = None) -> sp.csr_matrix:
    """``K[i, j] = int a grad phi_j . grad phi_i + (b . grad phi_j) phi_i + a0 phi_j phi_i``."""
    return _operator(mesh, coeffs, degree, corner, 1.0, False)


def edge_normals(mesh: TriMesh) -> np.ndarray:
    """Outward unit normal of each boundary edge (from its polygon side)."""
    if mesh.domain is not None:
        return mesh.domain.side_normals()[mesh.boundary_side]
    p = mesh.nodes[mesh.boundary_edges]
    t = p[:, 1] - p[:, 0]
    t /= np.linalg.norm(t, axis=1)[:, None]
    return np.column_stack([t[:, 1], -t[:, 0]])


def _edge_points(mesh: TriMesh, npts: int):
    s, w = edge_rule(npts)
    p = mesh.nodes[mesh.boundary_edges]
    x = p[:, None, 0, :] * (1.0 - s)[None, :, None] + p[:, None, 1, :] * s[None, :, None]
    return x, s, w, mesh.edge_lengths


def _edge_npts(degree: int) -> int:
    return max(4, degree // 2 + 1)


def assemble_boundary_weighted_mass(mesh: TriMesh, weight: Callable, npts: int = 4) -> sp.csr_matrix:
    """``int_Gamma weight(x, n) phi_i phi_j`` over the boundary edges."""
    x, s, w, h = _edge_points(mesh, npts)
    normals = np.broadcast_to(edge_normals(mesh)[:, None, :], x.shape)
    c = weight(x, normals)
    phi = np.column_stack([1.0 - s, s])
    loc = np.einsum("eq,qi,qj,q->eij", c, phi, phi, w) * h[:, None, None]
    e = mesh.boundary_edges
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_adjoint_direct(mesh: TriMesh, coeffs: CoefficientSet, degree: int = 4,
                            corner: CornerQuad | None = None) -> sp.csr_matrix:
    """Adjoint form assembled after integrating the convection by parts.

    ``D[i, j] = int a grad phi_i . grad phi_j - phi_i phi_j div b
    - phi_i b . grad phi_j + a0 phi_i phi_j + int_Gamma phi_i phi_j b . n``.
    Only a cross-check: ``D`` agrees with ``K.T`` up to quadrature error.
    """
    vol = _operator(mesh, coeffs, degree, corner, -1.0, True)
    bnd = assemble_boundary_weighted_mass(mesh, coeffs.b_dot_n, _edge_npts(degree))
    return (vol + bnd).tocsr()


def assemble_mass(mesh: TriMesh) -> sp.csr_matrix:
    """Exact P1 mass matrix ``int phi_i phi_j``."""
    _, areas = p1_gradients(mesh)
    loc = (np.ones((3, 3)) + np.eye(3))[None] * (areas / 12.0)[:, None, None]
    return _coo(np.arange(mesh.n_triangles), mesh.triangles, loc, mesh.n_nodes).tocsr()


def assemble_stiffness(mesh: TriMesh) -> sp.csr_matrix:
    grads, areas = p1_gradients(mesh)
    loc = np.einsum("tid,tjd->tij", grads, grads) * areas[:, None, None]
    return _coo(np.arange(mesh.n_triangles), mesh.triangles, loc, mesh.n_nodes).tocsr()


def assemble_h1_metric(mesh: TriMesh) -> sp.csr_matrix:
    """Gram matrix of the full H1 inner product on P1."""
    return (assemble_stiffness(mesh) + assemble_mass(mesh)).tocsr()


def assemble_load(mesh: TriMesh, f: Callable, singular_points=(), degree: int = 4,
                  corner: CornerQuad | None = None) -> np.ndarray:
    """``int_Omega f phi_i``."""
    _, areas = p1_gradients(mesh)
    tri_xy = mesh.tri_xy
    out = np.zeros(mesh.n_nodes)
    for idx, rule in element_groups(mesh, singular_points, degree, corner):
        fx = f(rule.points_on(tri_xy[idx]))
        loc = _kernels.element_loads(areas[idx], rule.bary, rule.weights, fx)
        np.add.at(out, mesh.triangles[idx], loc)
    return out


def assemble_boundary_load(mesh: TriMesh, g: Callable, npts: int = 4) -> np.ndarray:
    """``int_Gamma g(x, n) phi_i`` with Gauss points on every boundary edge."""
    x, s, w, h = _edge_points(mesh, npts)
    normals = np.broadcast_to(edge_normals(mesh)[:, None, :], x.shape)
    gx = g(x, normals)
    loc = np.column_stack([(gx * (1.0 - s) * w).sum(axis=1), (gx * s * w).sum(axis=1)]) * h[:, None]
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.boundary_edges, loc)
    return out


def assemble_boundary_mass(mesh: TriMesh) -> tuple[sp.csr_matrix, np.ndarray]:
    """Control-to-load map and edge lengths.

    Column ``E`` of the first matrix holds ``int_E phi_i = h_E / 2`` at the
    two endpoints of edge ``E``; ``diag(h_E)`` is the lumped L2(Gamma) mass
    of piecewise-constant controls.
    """
    h = mesh.edge_lengths
    ne = len(h)
    e = mesh.boundary_edges
    rows = e.ravel()
    cols = np.repeat(np.arange(ne), 2)
    vals = np.repeat(0.5 * h, 2)
    return sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, ne)).tocsr(), h


def assemble_system(mesh: TriMesh, coeffs: CoefficientSet, f: Callable | None = None,
                    g: Callable | None = None, degree: int = 4,
                    corner: CornerQuad | None = None) -> AssembledSystem:
    K = assemble_state(mesh, coeffs, degree, corner)
    M = assemble_mass(mesh)
    B, h = assemble_boundary_mass(mesh)
    lf = assemble_load(mesh, f, coeffs.singular_points, degree, corner) if f is not None else None
    lg = assemble_boundary_load(mesh, g, _edge_npts(degree)) if g is not None else None
    return AssembledSystem(K, M, B, h, lf, lg)


def integrate(mesh: TriMesh, f: Callable, singular_points=(), degree: int = 4,
              corner: CornerQuad | None = None) -> float:
    """``int_Omega f`` with the same element rules as assembly."""
    _, areas = p1_gradients(mesh)
    tri_xy = mesh.tri_xy
    total = 0.0
    for idx, rule in element_groups(mesh, singular_points, degree, corner):
        fx = f(rule.points_on(tri_xy[idx]))
        total += float(np.sum((fx @ rule.weights) * areas[idx]))
    return total


def corner_adapted_quadrature(tri: np.ndarray, f: Callable, vertex: int = 0,
                              depth: int = DEFAULT_CORNER_DEPTH,
                              ratio: float = DEFAULT_CORNER_RATIO,
                              degree: int = DEFAULT_CORNER_DEGREE) -> float:
    """``int_T f`` graded toward local vertex ``vertex`` of the triangle ``tri``."""
    tri = np.asarray(tri, dtype=float)
    rule = corner_rule(vertex, depth, ratio, degree)
    x = rule.bary @ tri
    d1, d2 = tri[1] - tri[0], tri[2] - tri[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    return float(area * np.dot(rule.weights, f(x)))


def write_coo(path, A) -> None:
    """Coordinate text dump: header ``n nnz`` then ``i j value`` (0-based)."""
    A = sp.coo_matrix(A)
    A.sum_duplicates()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]} {A.nnz}\n")
        order = np.lexsort((A.col, A.row))
        for i, j, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{i} {j} {float(v)!r}\n")


def read_coo(path) -> sp.csr_matrix:
    with open(path) as fh:
        n, nnz = (int(t) for t in fh.readline().split())
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    return sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=(n, n)).tocsr()


def coercive_coefficients() -> CoefficientSet:
    """``a = I``, ``b = 0``, ``a0 = 1``: the H1 inner product as a form."""
    return CoefficientSet(a0=constant_field(1.0))
