"""Per-element integration kernels.

Each kernel has a numba version and a numpy (einsum) version with identical
arguments. The numba path is used when numba imports and the environment
variable ``NEUMANN_OCP_NUMBA`` is not set to ``0``; ``set_backend`` switches
at runtime.

Shapes: ``T`` elements, ``Q`` quadrature points per element.
  grads (T,3,2)  areas (T,)  phi (Q,3)  w (Q,)
  A (T,Q,2,2)    b (T,Q,2)   c (T,Q)
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

__all__ = [
    "HAVE_NUMBA",
    "backend",
    "set_backend",
    "element_matrices",
    "element_loads",
    "element_l2_error_sq",
    "element_grad_error_sq",
]


# numpy -----------------------------------------------------------------

def _element_matrices_np(grads, areas, phi, w, A, b, c):
    # contract the quadrature index first so no einsum has more than 3 free axes
    Aw = np.einsum("tqde,q->tde", A, w)
    diff = np.einsum("tid,tde,tje->tij", grads, Aw, grads, optimize=True)
    bw = b * (w[None, :, None])
    conv = np.einsum("tqi,tjd,tqd->tij", np.broadcast_to(phi, b.shape[:2] + (3,)), grads, bw,
                     optimize=True)
    react = np.einsum("tq,qij->tij", c, phi[:, :, None] * phi[:, None, :] * w[:, None, None])
    return (diff + conv + react) * areas[:, None, None]


def _element_loads_np(areas, phi, w, f):
    return np.einsum("tq,qi,q->ti", f, phi, w) * areas[:, None]


def _element_l2_error_sq_np(areas, phi, w, uh, uex):
    d = uh @ phi.T - uex
    return (d * d) @ w * areas


def _element_grad_error_sq_np(areas, w, guh, gex):
    d = guh[:, None, :] - gex
    return np.einsum("tqd,tqd,q->t", d, d, w) * areas


# numba -----------------------------------------------------------------

def _element_matrices_py(grads, areas, phi, w, A, b, c):
    nt, nq = A.shape[0], A.shape[1]
    out = np.zeros((nt, 3, 3))
    for t in range(nt):
        for q in range(nq):
            wq = w[q] * areas[t]
            a00, a01 = A[t, q, 0, 0], A[t, q, 0, 1]
            a10, a11 = A[t, q, 1, 0], A[t, q, 1, 1]
            bx, by = b[t, q, 0], b[t, q, 1]
            cq = c[t, q]
            for j in range(3):
                gx, gy = grads[t, j, 0], grads[t, j, 1]
                agx = a00 * gx + a01 * gy
                agy = a10 * gx + a11 * gy
                bg = bx * gx + by * gy
                for i in range(3):
                    val = grads[t, i, 0] * agx + grads[t, i, 1] * agy
                    val += bg * phi[q, i] + cq * phi[q, i] * phi[q, j]
                    out[t, i, j] += wq * val
    return out


def _element_loads_py(areas, phi, w, f):
    nt, nq = f.shape
    out = np.zeros((nt, 3))
    for t in range(nt):
        for q in range(nq):
            wq = w[q] * areas[t] * f[t, q]
            for i in range(3):
                out[t, i] += wq * phi[q, i]
    return out


def _element_l2_error_sq_py(areas, phi, w, uh, uex):
    nt, nq = uex.shape
    out = np.zeros(nt)
    for t in range(nt):
        s = 0.0
        for q in range(nq):
            d = uh[t, 0] * phi[q, 0] + uh[t, 1] * phi[q, 1] + uh[t, 2] * phi[q, 2] - uex[t, q]
            s += w[q] * d * d
        out[t] = s * areas[t]
    return out


def _element_grad_error_sq_py(areas, w, guh, gex):
    nt, nq = gex.shape[0], gex.shape[1]
    out = np.zeros(nt)
    for t in range(nt):
        s = 0.0
        for q in range(nq):
            dx = guh[t, 0] - gex[t, q, 0]
            dy = guh[t, 1] - gex[t, q, 1]
            s += w[q] * (dx * dx + dy * dy)
        out[t] = s * areas[t]
    return out


_NUMPY = {
    "element_matrices": _element_matrices_np,
    "element_loads": _element_loads_np,
    "element_l2_error_sq": _element_l2_error_sq_np,
    "element_grad_error_sq": _element_grad_error_sq_np,
}
_LOOPS = {
    "element_matrices": _element_matrices_py,
    "element_loads": _element_loads_py,
    "element_l2_error_sq": _element_l2_error_sq_py,
    "element_grad_error_sq": _element_grad_error_sq_py,
}
_JIT: dict = {}


def _jitted(name):
    fn = _JIT.get(name)
    if fn is None:
        fn = numba.njit(cache=True, fastmath=False)(_LOOPS[name])
        _JIT[name] = fn
    return fn


def _default_backend() -> str:
    if not HAVE_NUMBA or os.environ.get("NEUMANN_OCP_NUMBA", "1") == "0":
        return "numpy"
    return "numba"


_backend = _default_backend()


def backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


def _dispatch(name, *args):
    args = tuple(np.ascontiguousarray(a, dtype=np.float64) for a in args)
    if _backend == "numba":
        return _jitted(name)(*args)
    return _NUMPY[name](*args)


def element_matrices(grads, areas, phi, w, A, b, c):
    """Local matrices ``M[t, i, j] = int A grad_j . grad_i + (b . grad_j) phi_i + c phi_i phi_j``."""
    return _dispatch("element_matrices", grads, areas, phi, w, A, b, c)


def element_loads(areas, phi, w, f):
    """Local load vectors ``int f phi_i``."""
    return _dispatch("element_loads", areas, phi, w, f)


def element_l2_error_sq(areas, phi, w, uh, uex):
    """Per-element ``int (u_h - u)^2`` with ``uh`` the (T,3) vertex values."""
    return _dispatch("element_l2_error_sq", areas, phi, w, uh, uex)


def element_grad_error_sq(areas, w, guh, gex):
    """Per-element ``int |grad u_h - grad u|^2``; ``guh`` is constant per element."""
    return _dispatch("element_grad_error_sq", areas, w, guh, gex)
