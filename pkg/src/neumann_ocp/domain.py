"""Polygonal domains, their corners and corner singular exponents.

A domain is a simple polygon listed counterclockwise. Corner ``j`` sits at
vertex ``j`` between side ``j-1`` (incoming) and side ``j`` (outgoing); side
``j`` runs from vertex ``j`` to vertex ``j+1``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "CornerData",
    "PolygonDomain",
    "DomainError",
    "interior_angle",
    "singular_exponent",
    "make_polygon",
    "make_lshape",
    "make_unit_square",
    "domain_from_preset",
]


class DomainError(ValueError):
    """Invalid polygon or corner data."""


@dataclass(frozen=True)
class CornerData:
    """Per-corner data.

    ``t_out`` and ``t_in`` are unit tangents pointing from the corner along
    the outgoing and incoming sides; they fix the corner orientation, which
    matters once the diffusion matrix is anisotropic.
    """

    omega: float
    lam: float
    mu: float = 1.0
    beta: float | None = None
    t_out: tuple[float, float] = (1.0, 0.0)
    t_in: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0.0 < self.omega < 2.0 * np.pi:
            raise DomainError(f"corner angle {self.omega} outside (0, 2pi)")
        if not self.lam > 0.0:
            raise DomainError(f"singular exponent must be positive, got {self.lam}")
        if not 0.0 < self.mu <= 1.0:
            raise DomainError(f"grading parameter mu={self.mu} outside (0, 1]")
        if self.beta is not None and not 0.0 <= self.beta < 1.0:
            raise DomainError(f"weight beta={self.beta} outside [0, 1)")
        t_out = np.asarray(self.t_out, dtype=float)
        t_out = t_out / np.linalg.norm(t_out)
        object.__setattr__(self, "t_out", (float(t_out[0]), float(t_out[1])))
        if self.t_in is None:
            # rotate t_out counterclockwise by the opening angle
            c, s = np.cos(self.omega), np.sin(self.omega)
            t_in = np.array([c * t_out[0] - s * t_out[1], s * t_out[0] + c * t_out[1]])
        else:
            t_in = np.asarray(self.t_in, dtype=float)
            t_in = t_in / np.linalg.norm(t_in)
            if abs(_ccw_angle(t_out, t_in) - self.omega) > 1e-10:
                raise DomainError("corner tangents do not enclose the stated angle omega")
        object.__setattr__(self, "t_in", (float(t_in[0]), float(t_in[1])))


@dataclass(frozen=True)
class PolygonDomain:
    vertices: np.ndarray
    corners: tuple[CornerData, ...]
    name: str = "polygon"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        validate_polygon(v)
        if len(self.corners) != len(v):
            raise DomainError("need one CornerData per vertex")
        for j, c in enumerate(self.corners):
            w = interior_angle(v, j)
            if abs(w - c.omega) > 1e-12:
                raise DomainError(
                    f"corner {j}: stored angle {c.omega} differs from geometry {w}"
                )

    @property
    def m(self) -> int:
        return len(self.vertices)

    @property
    def sides(self) -> list[tuple[np.ndarray, np.ndarray]]:
        v = self.vertices
        return [(v[j], v[(j + 1) % self.m]) for j in range(self.m)]

    @property
    def lam_min(self) -> float:
        return min(c.lam for c in self.corners)

    @property
    def perimeter(self) -> float:
        v = self.vertices
        return float(np.sum(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)))

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    def side_tangent(self, j: int) -> np.ndarray:
        a, b = self.sides[j]
        t = b - a
        return t / np.linalg.norm(t)

    def side_normal(self, j: int) -> np.ndarray:
        """Outward unit normal of side ``j``."""
        t = self.side_tangent(j)
        return np.array([t[1], -t[0]])

    def side_normals(self) -> np.ndarray:
        return np.array([self.side_normal(j) for j in range(self.m)])

    def with_mu(self, mu) -> "PolygonDomain":
        """Copy with new grading parameters.

        A scalar is applied to every reentrant-type corner (``lam < 1``);
        corners without a singularity keep ``mu = 1``. A sequence must give
        one value per corner.
        """
        if np.ndim(mu) == 0:
            mus = [float(mu) if c.lam < 1.0 else 1.0 for c in self.corners]
        else:
            mus = [float(x) for x in mu]
            if len(mus) != self.m:
                raise DomainError(f"mu list has {len(mus)} entries, domain has {self.m} corners")
        corners = tuple(replace(c, mu=m_) for c, m_ in zip(self.corners, mus))
        return PolygonDomain(self.vertices, corners, self.name)


def signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - 1e-14 <= c[0] <= max(a[0], b[0]) + 1e-14
                and min(a[1], b[1]) - 1e-14 <= c[1] <= max(a[1], b[1]) + 1e-14)

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 != 0 and d3 * d4 != 0:
        return True
    return ((d1 == 0 and on_seg(q1, q2, p1)) or (d2 == 0 and on_seg(q1, q2, p2))
            or (d3 == 0 and on_seg(p1, p2, q1)) or (d4 == 0 and on_seg(p1, p2, q2)))


def validate_polygon(v: np.ndarray) -> None:
    if v.ndim != 2 or v.shape[1] != 2:
        raise DomainError("vertices must be an (m, 2) array")
    m = len(v)
    if m < 3:
        raise DomainError("a polygon needs at least 3 vertices")
    if not np.all(np.isfinite(v)):
        raise DomainError("non-finite vertex coordinates")
    if np.any(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1) == 0.0):
        raise DomainError("consecutive vertices coincide")
    for i in range(m):
        for j in range(i + 1, m):
            if j == i + 1 or (i == 0 and j == m - 1):
                continue
            if _segments_intersect(v[i], v[(i + 1) % m], v[j], v[(j + 1) % m]):
                raise DomainError(f"sides {i} and {j} intersect: polygon is not simple")
    if signed_area(v) <= 0.0:
        raise DomainError("vertices must be ordered counterclockwise (positive signed area)")


def _ccw_angle(u: np.ndarray, w: np.ndarray) -> float:
    """Angle swept counterclockwise from ``u`` to ``w``, in (0, 2pi)."""
    ang = np.arctan2(u[0] * w[1] - u[1] * w[0], u[0] * w[0] + u[1] * w[1])
    return float(ang if ang > 0 else ang + 2.0 * np.pi)


def interior_angle(v: np.ndarray, j: int) -> float:
    m = len(v)
    t_out = v[(j + 1) % m] - v[j]
    t_in = v[(j - 1) % m] - v[j]
    return _ccw_angle(t_out, t_in)


def singular_exponent(corner: CornerData, a_corner=None) -> float:
    """Leading singular exponent of the corner for the operator -div(a grad).

    The corner is mapped by ``x -> a^{-1/2} x``, which turns the operator into
    the Laplacian; the exponent is pi over the transformed opening angle.
    """
    if a_corner is None:
        return float(np.pi / corner.omega)
    a = np.asarray(a_corner, dtype=float)
    if a.shape != (2, 2) or not np.allclose(a, a.T, rtol=0, atol=1e-14 * np.abs(a).max()):
        raise DomainError("diffusion matrix at the corner must be symmetric 2x2")
    evals, evecs = np.linalg.eigh(a)
    if evals[0] <= 0.0:
        raise DomainError("diffusion matrix at the corner is not positive definite")
    inv_sqrt = evecs @ np.diag(evals ** -0.5) @ evecs.T
    u = inv_sqrt @ np.asarray(corner.t_out)
    w = inv_sqrt @ np.asarray(corner.t_in)
    return float(np.pi / _ccw_angle(u, w))


def make_polygon(vertices, mu=1.0, beta=None, name="polygon", a_corner=None) -> PolygonDomain:
    """Polygon from a counterclockwise vertex list with exponents filled in."""
    v = np.asarray(vertices, dtype=float)
    validate_polygon(v)
    m = len(v)
    mus = [mu] * m if np.ndim(mu) == 0 else list(mu)
    if len(mus) != m:
        raise DomainError(f"mu list has {len(mus)} entries, domain has {m} corners")
    corners = []
    for j in range(m):
        t_out = v[(j + 1) % m] - v[j]
        t_in = v[(j - 1) % m] - v[j]
        t_out, t_in = t_out / np.linalg.norm(t_out), t_in / np.linalg.norm(t_in)
        omega = interior_angle(v, j)
        probe = CornerData(omega=omega, lam=1.0, t_out=tuple(t_out), t_in=tuple(t_in))
        lam = singular_exponent(probe, a_corner)
        corners.append(replace(probe, lam=lam, mu=float(mus[j]), beta=beta))
    return PolygonDomain(v, tuple(corners), name)


def make_lshape(mu=1.0) -> PolygonDomain:
    """The L-shape (-1,1)^2 minus the open fourth quadrant.

    The reentrant corner at the origin is vertex 0 and side 0 runs along the
    positive x1-axis, so the polar angle measured from that side ranges over
    [0, 3pi/2] inside the domain. A scalar ``mu`` grades only the reentrant
    corner.
    """
    v = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (0.0, -1.0)]
    dom = make_polygon(v, name="lshape")
    return dom.with_mu(mu)


def make_unit_square(mu=1.0) -> PolygonDomain:
    dom = make_polygon([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], name="unit-square")
    return dom.with_mu(mu)


_PRESETS = {"lshape": make_lshape, "unit-square": make_unit_square}


def domain_from_preset(name_or_vertices, mu=1.0) -> PolygonDomain:
    if isinstance(name_or_vertices, str):
        try:
            return _PRESETS[name_or_vertices](mu)
        except KeyError:
            raise DomainError(
                f"unknown domain preset {name_or_vertices!r}; choose from {sorted(_PRESETS)}"
            ) from None
    return make_polygon(name_or_vertices).with_mu(mu)
