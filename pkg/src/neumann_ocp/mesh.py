"""Conforming triangulations graded toward polygon corners.

Meshes are refined by newest-vertex bisection. Every triangle is stored as
``(newest, b, c)`` in counterclockwise order, so its refinement edge is
``(b, c)``. Refinement is vectorized: marked refinement edges are closed
under the rule "a triangle with any cut edge must cut its refinement edge",
then all triangles are bisected until none has a cut refinement edge left.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import PolygonDomain

__all__ = [
    "GradingSpec",
    "TriMesh",
    "coarse_mesh",
    "coarse_trimesh",
    "bisect",
    "build_graded_mesh",
    "build_mesh_family",
    "boundary_segmentation",
    "size_targets",
    "mesh_quality_report",
    "check_conformity",
    "write_mesh",
    "read_mesh",
]

_SIZE_RTOL = 1e-10


@dataclass(frozen=True)
class GradingSpec:
    """Element-size law ``diam(T) <= c_g * h * r_T**(1 - mu_j)`` near corner j.

    ``r_T`` is the barycenter-to-corner distance, taken as 0 when the corner
    is a vertex of ``T`` (target ``c_g * h**(1/mu_j)`` there). Outside every
    radius ``R_g`` the target is ``c_g * h``.
    """

    mu: tuple[float, ...]
    radius: tuple[float, ...]
    c_g: float = 1.0

    def __post_init__(self):
        if len(self.mu) != len(self.radius):
            raise ValueError("mu and radius need one entry per corner")
        for m in self.mu:
            if not 0.0 < m <= 1.0:
                raise ValueError(f"grading parameter mu={m} outside (0, 1]")
        for r in self.radius:
            if not r > 0.0:
                raise ValueError(f"grading radius must be positive, got {r}")
        if not self.c_g > 0.0:
            raise ValueError("c_g must be positive")

    @classmethod
    def from_domain(cls, domain: PolygonDomain, radius: float = 0.5, c_g: float = 1.0):
        mu = tuple(c.mu for c in domain.corners)
        return cls(mu, (float(radius),) * len(mu), c_g)

    @property
    def quasi_uniform(self) -> bool:
        return all(m == 1.0 for m in self.mu)


@dataclass(frozen=True)
class TriMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_side: np.ndarray
    corner_nodes: np.ndarray
    level: int = 1
    h_nominal: float = 1.0
    h0: float = 1.0
    domain: PolygonDomain | None = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_boundary_edges(self) -> int:
        return len(self.boundary_edges)

    @property
    def tri_xy(self) -> np.ndarray:
        return self.nodes[self.triangles]

    @property
    def areas(self) -> np.ndarray:
        p = self.tri_xy
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def diameters(self) -> np.ndarray:
        p = self.tri_xy
        e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    @property
    def edge_lengths(self) -> np.ndarray:
        """``h_E`` of every boundary edge."""
        p = self.nodes[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def min_angles(self) -> np.ndarray:
        """Smallest interior angle of each triangle, in degrees."""
        p = self.tri_xy
        ang = []
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            w = p[:, (k + 2) % 3] - p[:, k]
            c = np.einsum("td,td->t", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
            ang.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
        return np.min(ang, axis=0)


_KEY_SHIFT = 31


def _key(i, j):
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    return (np.minimum(i, j) << _KEY_SHIFT) | np.maximum(i, j)


def _edge_keys(tris: np.ndarray) -> np.ndarray:
    """Integer keys of edges (b,c), (c,a), (a,b) for each triangle (a,b,c)."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    return np.stack([_key(b, c), _key(c, a), _key(a, b)], axis=1)


def _lshape_coarse():
    nodes = np.array([[0, 0], [1, 0], [1, 1], [-1, 1], [-1, -1], [0, -1], [0, 1], [-1, 0]], float)
    tris = np.array([[0, 1, 6], [2, 6, 1], [0, 6, 7], [3, 7, 6], [0, 7, 5], [4, 5, 7]])
    bnd = np.array([[0, 1], [1, 2], [2, 6], [6, 3], [3, 7], [7, 4], [4, 5], [5, 0]])
    side = np.array([0, 1, 2, 2, 3, 3, 4, 5])
    return nodes, tris, bnd, side


def _square_coarse():
    nodes = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    tris = np.array([[1, 2, 0], [3, 0, 2]])
    bnd = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    return nodes, tris, bnd, np.arange(4)


def _ear_clip(v: np.ndarray) -> np.ndarray:
    """Triangulate a simple counterclockwise polygon by ear clipping."""
    idx = list(range(len(v)))
    out = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(v) ** 2:
            raise ValueError("ear clipping failed; polygon may be degenerate")
        best = None
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            if cross(v[i0], v[i1], v[i2]) <= 0:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = v[j]
                if (cross(v[i0], v[i1], p) >= 0 and cross(v[i1], v[i2], p) >= 0
                        and cross(v[i2], v[i0], p) >= 0):
                    inside = True
                    break
            if inside:
                continue
            # prefer the fattest ear
            tri = v[[i0, i1, i2]]
            e = np.linalg.norm(tri - np.roll(tri, 1, axis=0), axis=1)
            quality = cross(v[i0], v[i1], v[i2]) / (e ** 2).sum()
            if best is None or quality > best[0]:
                best = (quality, k, (i0, i1, i2))
        if best is None:
            raise ValueError("ear clipping failed; polygon may be degenerate")
        out.append(best[2])
        del idx[best[1]]
    out.append(tuple(idx))
    return np.array(out)


def coarse_mesh(domain: PolygonDomain):
    """Fixed initial triangulation: nodes, triangles, boundary edges, side ids.

    Polygon vertex ``j`` is always node ``j``.
    """
    if domain.name == "lshape":
        return _lshape_coarse()
    if domain.name == "unit-square":
        return _square_coarse()
    v = np.asarray(domain.vertices)
    tris = _ear_clip(v)
    # newest vertex opposite the longest edge
    p = v[tris]
    lengths = np.stack([np.linalg.norm(p[:, (k + 2) % 3] - p[:, (k + 1) % 3], axis=1) for k in range(3)], axis=1)
    first = np.argmax(lengths, axis=1)
    tris = np.stack([tris[np.arange(len(tris)), (first + k) % 3] for k in range(3)], axis=1)
    m = len(v)
    bnd = np.column_stack([np.arange(m), (np.arange(m) + 1) % m])
    return v.copy(), tris, bnd, np.arange(m)


def bisect(nodes, tris, bnd, side, marked):
    """Newest-vertex bisection of the marked triangles plus conforming closure."""
    n = len(nodes)
    keys = _edge_keys(tris)
    cut = np.unique(keys[marked, 0])
    while True:
        has = np.isin(keys, cut)
        need = (has[:, 1] | has[:, 2]) & ~has[:, 0]
        if not need.any():
            break
        cut = np.union1d(cut, keys[need, 0])
    if cut.size == 0:
        return nodes, tris, bnd, side

    i, j = cut >> _KEY_SHIFT, cut & ((1 << _KEY_SHIFT) - 1)
    mid_ids = n + np.arange(cut.size)
    nodes = np.vstack([nodes, 0.5 * (nodes[i] + nodes[j])])

    tris = tris.copy()
    ref = keys[:, 0].copy()
    while True:
        pos = np.searchsorted(cut, ref)
        pos = np.minimum(pos, cut.size - 1)
        hit = np.flatnonzero(cut[pos] == ref)
        if hit.size == 0:
            break
        m = mid_ids[pos[hit]]
        a, b, c = tris[hit, 0], tris[hit, 1], tris[hit, 2]
        left = np.column_stack([m, a, b])
        right = np.column_stack([m, c, a])
        tris[hit] = left
        tris = np.vstack([tris, right])
        # the children's refinement edges are old edges (a,b) and (c,a); the
        # other edges contain the fresh midpoint and are never cut this round
        ref[hit] = _key(a, b)
        ref = np.concatenate([ref, _key(c, a)])

    bk = _key(bnd[:, 0], bnd[:, 1])
    pos = np.minimum(np.searchsorted(cut, bk), cut.size - 1)
    split = cut[pos] == bk
    reps = np.where(split, 2, 1)
    new_bnd = np.repeat(bnd, reps, axis=0)
    new_side = np.repeat(side, reps)
    first = np.cumsum(reps) - reps
    s_first = first[split]
    mm = mid_ids[pos[split]]
    new_bnd[s_first, 1] = mm
    new_bnd[s_first + 1, 0] = mm
    return nodes, tris, new_bnd, new_side


def size_targets(nodes, tris, corner_nodes, vertices, grading: GradingSpec, h: float):
    """Target diameter of every triangle under the grading law."""
    p = nodes[tris]
    bary = p.mean(axis=1)
    target = np.full(len(tris), grading.c_g * h)
    graded_any = np.zeros(len(tris), dtype=bool)
    for j, (mu, rg) in enumerate(zip(grading.mu, grading.radius)):
        if mu == 1.0:
            continue
        touches = np.any(tris == corner_nodes[j], axis=1)
        r = np.linalg.norm(bary - vertices[j], axis=1)
        graded = touches | (r <= rg)
        tj = np.where(touches, grading.c_g * h ** (1.0 / mu),
                      grading.c_g * h * np.where(touches, 1.0, r) ** (1.0 - mu))
        # several graded corners within reach: the strictest law wins
        target = np.where(graded, np.minimum(tj, np.where(graded_any, target, np.inf)), target)
        graded_any |= graded
    return target


def _diameters(nodes, tris):
    p = nodes[tris]
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    return np.linalg.norm(e, axis=2).max(axis=1)


def _refine_to_targets(nodes, tris, bnd, side, corner_nodes, vertices, grading, h, max_sweeps=200):
    for _ in range(max_sweeps):
        target = size_targets(nodes, tris, corner_nodes, vertices, grading, h)
        bad = _diameters(nodes, tris) > target * (1.0 + _SIZE_RTOL)
        if not bad.any():
            return nodes, tris, bnd, side
        nodes, tris, bnd, side = bisect(nodes, tris, bnd, side, bad)
    raise RuntimeError("grading refinement did not terminate")


def build_mesh_family(domain: PolygonDomain, max_level: int, grading: GradingSpec | None = None):
    """Meshes for levels ``1..max_level``, each refining the previous one.

    Level ``j`` has nominal size ``h = h0 * 2**-(j-1)`` with ``h0`` half the
    largest diameter of the coarse triangulation, which plays level 0.
    Existing nodes are never moved or renumbered, so each level's node list
    is a prefix of the next.
    """
    if max_level < 1:
        raise ValueError("level must be >= 1")
    if grading is None:
        grading = GradingSpec.from_domain(domain)
    if len(grading.mu) != domain.m:
        raise ValueError("grading spec must have one entry per corner")
    nodes, tris, bnd, side = coarse_mesh(domain)
    vertices = np.asarray(domain.vertices)
    corner_nodes = np.arange(domain.m)
    # the coarse triangulation is level 0; level 1 halves its largest diameter
    h0 = 0.5 * float(_diameters(nodes, tris).max())
    out = []
    for level in range(1, max_level + 1):
        h = h0 * 2.0 ** -(level - 1)
        nodes, tris, bnd, side = _refine_to_targets(nodes, tris, bnd, side, corner_nodes, vertices, grading, h)
        out.append(TriMesh(nodes.copy(), tris.copy(), bnd.copy(), side.copy(), corner_nodes,
                           level=level, h_nominal=h, h0=h0, domain=domain))
    return out


def coarse_trimesh(domain: PolygonDomain) -> TriMesh:
    """The fixed initial triangulation as a level-0 mesh."""
    nodes, tris, bnd, side = coarse_mesh(domain)
    h = float(_diameters(nodes, tris).max())
    return TriMesh(nodes, tris, bnd, side, np.arange(domain.m), level=0, h_nominal=h,
                   h0=0.5 * h, domain=domain)


def build_graded_mesh(domain: PolygonDomain, level: int, grading: GradingSpec | None = None) -> TriMesh:
    return build_mesh_family(domain, level, grading)[-1]


def boundary_segmentation(mesh: TriMesh):
    """Boundary edges ordered counterclockwise along the boundary.

    Returns ``(edges, side, h_E)`` with ``edges[k] = (start, end)``.
    """
    v = np.asarray(mesh.domain.vertices) if mesh.domain is not None else mesh.nodes[mesh.corner_nodes]
    start = mesh.nodes[mesh.boundary_edges[:, 0]]
    s = np.linalg.norm(start - v[mesh.boundary_side], axis=1)
    order = np.lexsort((s, mesh.boundary_side))
    edges = mesh.boundary_edges[order]
    side = mesh.boundary_side[order]
    return edges, side, mesh.edge_lengths[order]


def check_conformity(mesh: TriMesh) -> list[str]:
    """Problems found in the mesh topology; an empty list means conforming."""
    problems = []
    if np.any(mesh.areas <= 0.0):
        problems.append("non-positive triangle area")
    keys = _edge_keys(mesh.triangles).ravel()
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 2):
        problems.append("edge shared by more than two triangles")
    single = np.sort(uniq[counts == 1])
    b = mesh.boundary_edges
    bk = np.sort(_key(b[:, 0], b[:, 1]))
    if single.shape != bk.shape or np.any(single != bk):
        problems.append("edges with a single triangle do not match the boundary edges (hanging node?)")
    # every boundary edge lies on its polygon side
    if mesh.domain is not None:
        v = np.asarray(mesh.domain.vertices)
        m = len(v)
        a = v[mesh.boundary_side]
        t = v[(mesh.boundary_side + 1) % m] - a
        for k in range(2):
            q = mesh.nodes[b[:, k]] - a
            dist = np.abs(t[:, 0] * q[:, 1] - t[:, 1] * q[:, 0]) / np.linalg.norm(t, axis=1)
            if np.any(dist > 1e-12):
                problems.append("boundary edge off its polygon side")
                break
    return problems


def mesh_quality_report(mesh: TriMesh, grading: GradingSpec) -> dict:
    v = np.asarray(mesh.domain.vertices) if mesh.domain is not None else mesh.nodes[mesh.corner_nodes]
    diam = mesh.diameters
    target = size_targets(mesh.nodes, mesh.triangles, mesh.corner_nodes, v, grading, mesh.h_nominal)
    viol = diam > target * (1.0 + _SIZE_RTOL)
    per_corner = []
    for j, mu in enumerate(grading.mu):
        touches = np.any(mesh.triangles == mesh.corner_nodes[j], axis=1)
        r = np.linalg.norm(mesh.tri_xy.mean(axis=1) - v[j], axis=1)
        near = touches | (r <= grading.radius[j])
        per_corner.append({
            "corner": j,
            "mu": mu,
            "elements": int(near.sum()),
            "violations": int((viol & near).sum()),
            "corner_diam": float(diam[touches].max()) if touches.any() else float("nan"),
        })
    ang = mesh.min_angles()
    return {
        "level": mesh.level,
        "h": mesh.h_nominal,
        "nodes": mesh.n_nodes,
        "elements": mesh.n_triangles,
        "boundary_edges": mesh.n_boundary_edges,
        "min_angle_deg": float(ang.min()),
        "max_diam": float(diam.max()),
        "min_diam": float(diam.min()),
        "violations": int(viol.sum()),
        "corners": per_corner,
        "conformity": check_conformity(mesh),
    }


def write_mesh(mesh: TriMesh, path) -> list[Path]:
    """Write ``<path>.nodes``, ``<path>.tri`` and ``<path>.bedges`` text tables."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = [path.with_suffix(".nodes"), path.with_suffix(".tri"), path.with_suffix(".bedges")]
    with open(out[0], "w") as fh:
        for i, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{i} {float(x)!r} {float(y)!r}\n")
    with open(out[1], "w") as fh:
        for i, (a, b, c) in enumerate(mesh.triangles):
            fh.write(f"{i} {a} {b} {c}\n")
    with open(out[2], "w") as fh:
        for (a, b), s in zip(mesh.boundary_edges, mesh.boundary_side):
            fh.write(f"{a} {b} {s}\n")
    return out


def read_mesh(path, domain: PolygonDomain | None = None) -> TriMesh:
    path = Path(path)
    nodes = np.loadtxt(path.with_suffix(".nodes"), ndmin=2)[:, 1:]
    tris = np.loadtxt(path.with_suffix(".tri"), dtype=np.int64, ndmin=2)[:, 1:]
    be = np.loadtxt(path.with_suffix(".bedges"), dtype=np.int64, ndmin=2)
    m = domain.m if domain is not None else 0
    return TriMesh(nodes, tris, be[:, :2], be[:, 2], np.arange(m), domain=domain)
