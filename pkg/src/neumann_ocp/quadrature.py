"""Quadrature rules on triangles and edges.

Triangle rules live on the reference triangle with vertices (0,0), (1,0),
(0,1) and are stored in barycentric form with weights summing to one, so
``area * sum(w * f(x_q))`` approximates an integral over any triangle.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

__all__ = [
    "QuadratureRule",
    "triangle_rule",
    "edge_rule",
    "corner_rule",
    "DEFAULT_CORNER_DEPTH",
    "DEFAULT_CORNER_RATIO",
    "DEFAULT_CORNER_DEGREE",
]

DEFAULT_CORNER_DEPTH = 20
DEFAULT_CORNER_RATIO = 0.25
DEFAULT_CORNER_DEGREE = 19


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points ``(nq, 3)`` and weights ``(nq,)`` summing to 1."""

    bary: np.ndarray
    weights: np.ndarray
    degree: int
    depth: int = 0
    ratio: float = 1.0

    @property
    def n(self) -> int:
        return len(self.weights)

    def points_on(self, tri_xy: np.ndarray) -> np.ndarray:
        """Physical points for triangles ``(nt, 3, 2)`` -> ``(nt, nq, 2)``."""
        return np.einsum("qk,tkd->tqd", self.bary, tri_xy)


def _dunavant4() -> tuple[np.ndarray, np.ndarray]:
    s = np.sqrt
    a = (8.0 - s(10.0) + s(38.0 - 44.0 * s(2.0 / 5.0))) / 18.0
    b = (8.0 - s(10.0) - s(38.0 - 44.0 * s(2.0 / 5.0))) / 18.0
    wa = (620.0 + s(213125.0 - 53320.0 * s(10.0))) / 3720.0
    wb = (620.0 - s(213125.0 - 53320.0 * s(10.0))) / 3720.0
    bary = np.array([
        [a, a, 1 - 2 * a], [a, 1 - 2 * a, a], [1 - 2 * a, a, a],
        [b, b, 1 - 2 * b], [b, 1 - 2 * b, b], [1 - 2 * b, b, b],
    ])
    w = np.array([wa] * 3 + [wb] * 3)
    return bary, w / w.sum()


def _conical_product(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule exact to ``degree``."""
    n = max(1, (degree + 2) // 2)
    xs, ws = roots_jacobi(n, 1.0, 0.0)  # weight (1 - x) on [-1, 1]
    xt, wt = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (xs + 1.0)
    t = 0.5 * (xt + 1.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    x = S
    y = (1.0 - S) * T
    bary = np.column_stack([1.0 - x.ravel() - y.ravel(), x.ravel(), y.ravel()])
    w = W.ravel()
    return bary, w / w.sum()


@lru_cache(maxsize=None)
def triangle_rule(degree: int = 4) -> QuadratureRule:
    """Interior-point rule exact for polynomials of the given degree.

    Degree <= 4 uses the symmetric 6-point rule; higher degrees use a
    collapsed (conical) product rule.
    """
    if degree <= 4:
        bary, w = _dunavant4()
        return QuadratureRule(bary, w, 4)
    bary, w = _conical_product(degree)
    return QuadratureRule(bary, w, degree)


@lru_cache(maxsize=None)
def edge_rule(n: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on [0, 1]: parameters and weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def corner_rule(vertex: int, depth: int = DEFAULT_CORNER_DEPTH,
                ratio: float = DEFAULT_CORNER_RATIO,
                degree: int = DEFAULT_CORNER_DEGREE) -> QuadratureRule:
    """Composite rule graded geometrically toward local vertex ``vertex``.

    The triangle is written in collapsed coordinates ``x = rho * (p + t (q - p))``
    around the singular vertex, so the area element carries a factor ``rho``
    and an ``r**alpha`` integrand becomes ``rho**(1 + alpha)`` times a smooth
    function of ``t``. The ``rho`` interval is cut into ``depth`` layers
    ``[ratio**(k+1), ratio**k]`` plus the innermost ``[0, ratio**depth]``;
    each layer gets a tensor Gauss-Legendre rule exact to ``degree`` in
    ``rho`` (twice that in ``t``). ``depth=0`` returns the plain symmetric
    rule. No point is placed on the singular vertex.
    """
    if depth == 0:
        return triangle_rule(4)
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    n = max(1, (degree + 2) // 2)
    g, gw = np.polynomial.legendre.leggauss(n)
    g, gw = 0.5 * (g + 1.0), 0.5 * gw
    # the angular factor |p + t (q - p)|**alpha has complex poles at distance
    # ~1/2 from [0, 1]; twice the radial point count keeps it below 1e-14
    gt, gtw = np.polynomial.legendre.leggauss(2 * n)
    gt, gtw = 0.5 * (gt + 1.0), 0.5 * gtw
    edges = [ratio ** k for k in range(depth + 1)] + [0.0]
    rho, wrho = [], []
    for hi, lo in zip(edges[:-1], edges[1:]):
        rho.append(lo + (hi - lo) * g)
        wrho.append((hi - lo) * gw)
    rho, wrho = np.concatenate(rho), np.concatenate(wrho)
    R, T = np.meshgrid(rho, gt, indexing="ij")
    W = np.outer(wrho, gtw) * R * 2.0  # Jacobian rho * |det(p, q - p)| / |ref|
    # collapsed point rho * ((1 - t) p + t q) with p = (1, 0), q = (0, 1)
    bx = (R * (1.0 - T)).ravel()
    by = (R * T).ravel()
    bary_local = np.column_stack([1.0 - bx - by, bx, by])
    w = W.ravel()
    order = [(0 - vertex) % 3, (1 - vertex) % 3, (2 - vertex) % 3]
    return QuadratureRule(bary_local[:, order], w / w.sum(), degree, depth=depth, ratio=ratio)
