"""Sparse solves with ``K`` and ``K.T`` sharing one factorization."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "LinearSolveConfig",
    "SolveDiagnostics",
    "SolverError",
    "Factorization",
    "solve",
    "solve_transposed",
]


class SolverError(RuntimeError):
    """Linear solve failed; carries the mesh level when known."""

    def __init__(self, msg, level=None):
        self.level = level
        if level is not None:
            msg = f"level {level}: {msg}"
        super().__init__(msg)


@dataclass(frozen=True)
class LinearSolveConfig:
    method: str = "direct"
    tol: float = 1e-10
    max_iter: int = 1000

    def __post_init__(self):
        if self.method not in ("direct", "iterative"):
            raise ValueError(f"solver.method must be 'direct' or 'iterative', got {self.method!r}")
        if not self.tol > 0.0:
            raise ValueError("solver.tol must be positive")
        if self.max_iter < 1:
            raise ValueError("solver.max_iter must be >= 1")


@dataclass
class SolveDiagnostics:
    residual: float
    iterations: int
    fill: int
    wall_time: float


_SINGULAR_NOTE = ("matrix is singular to working precision; the mesh may be too coarse "
                  "for the discrete problem to be uniquely solvable (h above the threshold h0)")


class Factorization:
    """LU of ``K`` (or an ILU-preconditioned Krylov method) reused for ``K.T``."""

    def __init__(self, K, cfg: LinearSolveConfig | None = None, level=None):
        self.cfg = cfg or LinearSolveConfig()
        self.level = level
        self.K = sp.csc_matrix(K)
        if self.K.shape[0] != self.K.shape[1]:
            raise ValueError("matrix must be square")
        t0 = time.perf_counter()
        try:
            if self.cfg.method == "direct":
                self._lu = spla.splu(self.K, permc_spec="COLAMD")
                self.fill = int(self._lu.L.nnz + self._lu.U.nnz)
            else:
                self._lu = spla.spilu(self.K, drop_tol=1e-5, fill_factor=20)
                self.fill = int(self._lu.L.nnz + self._lu.U.nnz)
        except RuntimeError as exc:
            raise SolverError(f"{_SINGULAR_NOTE} ({exc})", level) from exc
        self.setup_time = time.perf_counter() - t0

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def _run(self, r, trans: bool):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n,):
            raise ValueError(f"right-hand side has shape {r.shape}, expected ({self.n},)")
        A = self.K.T if trans else self.K
        t0 = time.perf_counter()
        rn = np.linalg.norm(r)
        if rn == 0.0:
            return np.zeros(self.n), SolveDiagnostics(0.0, 0, self.fill, 0.0)
        tflag = "T" if trans else "N"
        iters = 0
        if self.cfg.method == "direct":
            x = self._lu.solve(r, trans=tflag)
        else:
            M = spla.LinearOperator(A.shape, matvec=lambda v: self._lu.solve(v, trans=tflag))
            count = [0]

            def cb(_):
                count[0] += 1

            x, info = spla.gmres(A, r, M=M, rtol=self.cfg.tol * 0.1, atol=0.0, restart=100,
                                 maxiter=self.cfg.max_iter, callback=cb, callback_type="pr_norm")
            iters = count[0]
        if not np.all(np.isfinite(x)):
            raise SolverError(_SINGULAR_NOTE, self.level)
        res = float(np.linalg.norm(A @ x - r) / rn)
        if res > self.cfg.tol:
            # one step of iterative refinement before giving up
            if self.cfg.method == "direct":
                x = x + self._lu.solve(r - A @ x, trans=tflag)
                res = float(np.linalg.norm(A @ x - r) / rn)
            if res > self.cfg.tol:
                raise SolverError(f"relative residual {res:.3e} exceeds tolerance {self.cfg.tol:.1e}; "
                                  + _SINGULAR_NOTE, self.level)
        return x, SolveDiagnostics(res, iters, self.fill, time.perf_counter() - t0)

    def solve(self, r):
        return self._run(r, False)

    def solve_transposed(self, r):
        return self._run(r, True)


def solve(K, r, cfg: LinearSolveConfig | None = None, level=None):
    """Solve ``K x = r``; returns ``(x, SolveDiagnostics)``."""
    return Factorization(K, cfg, level).solve(r)


def solve_transposed(K, r, cfg: LinearSolveConfig | None = None, level=None):
    """Solve ``K.T x = r`` through a factorization of ``K``."""
    return Factorization(K, cfg, level).solve_transposed(r)
