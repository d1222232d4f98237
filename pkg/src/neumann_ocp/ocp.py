"""Discrete Neumann boundary control with piecewise-constant controls.

Controls live on the boundary edges, one value per edge, with the lumped
inner product ``<u, v>_Gamma = sum_E h_E u_E v_E``. The reduced problem is
a strictly convex quadratic in ``u``; every evaluation costs one state and
one adjoint solve sharing a single factorization of ``K``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import (
    CornerQuad,
    _edge_npts,
    _edge_points,
    assemble_boundary_load,
    assemble_boundary_mass,
    assemble_load,
    assemble_mass,
    assemble_state,
    integrate,
)
from .coeffs import CoefficientSet, ManufacturedCase
from .mesh import TriMesh
from .solver import Factorization, LinearSolveConfig

__all__ = [
    "OcpConfig",
    "OcpProblem",
    "OcpSolution",
    "OcpError",
    "objective",
    "gradient",
    "project_Qh",
    "project_box",
    "solve_unconstrained",
    "solve_box",
    "solve",
]


class OcpError(RuntimeError):
    def __init__(self, msg, history=None, level=None):
        self.history = list(history or [])
        self.level = level
        if level is not None:
            msg = f"level {level}: {msg}"
        super().__init__(msg)


def _bound(v) -> float:
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return math.inf
        if s in ("-inf", "-infinity"):
            return -math.inf
    return float(v)


@dataclass(frozen=True)
class OcpConfig:
    nu: float = 1.0
    u_min: float = -math.inf
    u_max: float = math.inf
    opt_tol: float = 1e-9
    max_iter: int = 200
    max_active_iter: int = 50

    def __post_init__(self):
        object.__setattr__(self, "u_min", _bound(self.u_min))
        object.__setattr__(self, "u_max", _bound(self.u_max))
        object.__setattr__(self, "nu", float(self.nu))
        if not (self.nu > 0.0 and math.isfinite(self.nu)):
            raise ValueError(f"ocp.nu must be positive, got {self.nu}")
        if not self.u_min <= self.u_max:
            raise ValueError(f"ocp.u_min={self.u_min} exceeds ocp.u_max={self.u_max}")
        if not self.opt_tol > 0.0:
            raise ValueError("ocp.opt_tol must be positive")
        if self.max_iter < 1 or self.max_active_iter < 1:
            raise ValueError("ocp.max_iter must be >= 1")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.u_min) or math.isfinite(self.u_max)


@dataclass
class OcpSolution:
    u: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    objective: float
    residual: float
    iterations: int
    path: str = "cg"
    history: list = field(default_factory=list)
    objectives: list = field(default_factory=list)


class OcpProblem:
    """Reduced problem ``min J_h(u)`` over piecewise-constant boundary controls.

    State: ``K y = f_load + g_load + B u``. Adjoint:
    ``K.T phi = M y - yd_load + gphi_load``. ``B[i, E] = int_E phi_i`` and
    ``h`` holds the edge lengths.
    """

    def __init__(self, mesh: TriMesh, K, f_load, g_load, yd_load, yd_sq: float, gphi_load,
                 cfg: OcpConfig | None = None, solver: LinearSolveConfig | None = None, M=None):
        self.mesh = mesh
        self.cfg = cfg or OcpConfig()
        self.K = K
        self.M = assemble_mass(mesh) if M is None else M
        self.B, self.h = assemble_boundary_mass(mesh)
        self.f_load = np.asarray(f_load, dtype=float)
        self.g_load = np.asarray(g_load, dtype=float)
        self.yd_load = np.asarray(yd_load, dtype=float)
        self.yd_sq = float(yd_sq)
        self.gphi_load = np.asarray(gphi_load, dtype=float)
        n = K.shape[0]
        for name in ("f_load", "g_load", "yd_load", "gphi_load"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        self.fact = Factorization(K, solver, level=getattr(mesh, "level", None))
        self._rhs0 = self.f_load + self.g_load
        self.n_solves = 0

    # construction -------------------------------------------------------
    @classmethod
    def from_fields(cls, mesh: TriMesh, coeffs: CoefficientSet, f: Callable, g_y: Callable,
                    y_d: Callable, g_phi: Callable, cfg: OcpConfig | None = None,
                    solver: LinearSolveConfig | None = None, degree: int = 4,
                    corner: CornerQuad | None = None) -> "OcpProblem":
        """Assemble all data from fields; boundary fields take ``(x, normal)``."""
        sing = coeffs.singular_points
        npts = _edge_npts(degree)
        K = assemble_state(mesh, coeffs, degree, corner)
        return cls(
            mesh, K,
            assemble_load(mesh, f, sing, degree, corner),
            assemble_boundary_load(mesh, g_y, npts),
            assemble_load(mesh, y_d, sing, degree, corner),
            integrate(mesh, lambda x: y_d(x) ** 2, sing, degree, corner),
            assemble_boundary_load(mesh, g_phi, npts),
            cfg, solver,
        )

    @classmethod
    def from_case(cls, mesh: TriMesh, case: ManufacturedCase, cfg: OcpConfig | None = None,
                  solver: LinearSolveConfig | None = None, degree: int = 4,
                  corner: CornerQuad | None = None) -> "OcpProblem":
        if cfg is None:
            cfg = OcpConfig(nu=case.nu)
        elif not math.isclose(cfg.nu, case.nu, rel_tol=1e-14):
            raise ValueError(f"ocp.nu={cfg.nu} differs from the manufactured nu={case.nu}")
        return cls.from_fields(mesh, case.coefficients, case.f, case.g_y, case.y_d, case.g_phi,
                               cfg, solver, degree, corner)

    # building blocks ----------------------------------------------------
    @property
    def n_controls(self) -> int:
        return len(self.h)

    @property
    def nu(self) -> float:
        return self.cfg.nu

    def state(self, u) -> np.ndarray:
        self.n_solves += 1
        return self.fact.solve(self._rhs0 + self.B @ np.asarray(u, dtype=float))[0]

    def adjoint(self, y) -> np.ndarray:
        self.n_solves += 1
        return self.fact.solve_transposed(self.M @ y - self.yd_load + self.gphi_load)[0]

    def edge_average(self, phi) -> np.ndarray:
        """``(1/h_E) int_E phi`` for a nodal P1 field."""
        return (self.B.T @ phi) / self.h

    def inner(self, u, v) -> float:
        return float(np.dot(self.h * u, v))

    def hessian_apply(self, v) -> np.ndarray:
        """Reduced Hessian ``nu v + avg(K^-T M K^-1 B v)``; self-adjoint in the lumped metric."""
        v = np.asarray(v, dtype=float)
        self.n_solves += 2
        w = self.fact.solve(self.B @ v)[0]
        z = self.fact.solve_transposed(self.M @ w)[0]
        return self.nu * v + self.edge_average(z)

    def optimality_residual(self, u, phi) -> np.ndarray:
        """Per-edge ``|u_E - Proj(-avg_E(phi) / nu)|``."""
        target = project_box(-self.edge_average(phi) / self.nu, self.cfg.u_min, self.cfg.u_max)
        return np.abs(np.asarray(u) - target)

    def evaluate(self, u):
        """State, adjoint, objective and gradient at ``u``."""
        y = self.state(u)
        phi = self.adjoint(y)
        return y, phi, self._objective(u, y), self.edge_average(phi) + self.nu * np.asarray(u)

    def _objective(self, u, y) -> float:
        track = float(y @ (self.M @ y)) - 2.0 * float(y @ self.yd_load) + self.yd_sq
        return 0.5 * track + 0.5 * self.nu * self.inner(u, u) + float(y @ self.gphi_load)


def project_box(u, u_min: float, u_max: float) -> np.ndarray:
    return np.clip(np.asarray(u, dtype=float), u_min, u_max)


def project_Qh(u_exact: Callable, mesh: TriMesh, npts: int = 4) -> np.ndarray:
    """Edge means ``(1/h_E) int_E u`` by Gauss quadrature; ``u_exact`` takes points."""
    x, s, w, h = _edge_points(mesh, npts)
    return np.asarray(u_exact(x), dtype=float) @ w


def objective(problem: OcpProblem, u) -> float:
    """``1/2 |y_h(u) - y_d|^2 + nu/2 |u|^2_Gamma + int_Gamma y_h(u) g_phi``."""
    u = _check_control(problem, u)
    return problem._objective(u, problem.state(u))


def gradient(problem: OcpProblem, u) -> np.ndarray:
    """Lumped-metric gradient ``avg_E(phi_h(u)) + nu u_E``."""
    u = _check_control(problem, u)
    return problem.evaluate(u)[3]


def _check_control(problem, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (problem.n_controls,):
        raise ValueError(f"control must have one value per boundary edge ({problem.n_controls})")
    return u


def _pcg(apply, rhs, x0, h, nu, tol, max_iter, history):
    """CG in the lumped metric on ``apply(x) = rhs`` (both as edge functions).

    Stops when ``max |apply(x) - rhs| <= nu * tol``, the same scale as the
    projection-formula residual.
    """
    x = x0.copy()
    r = rhs - apply(x)
    p = r.copy()
    rr = float(np.dot(h * r, r))
    it = 0
    while True:
        res = float(np.max(np.abs(r), initial=0.0)) / nu
        history.append(res)
        if res <= tol:
            return x, it
        if it >= max_iter:
            raise OcpError(f"CG did not reach opt_tol={tol:.1e} in {max_iter} iterations "
                           f"(residual {res:.3e})", history)
        it += 1
        Ap = apply(p)
        pAp = float(np.dot(h * p, Ap))
        if pAp <= 0.0:
            raise OcpError("reduced Hessian lost positive definiteness", history)
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        if it % 50 == 0:
            r = rhs - apply(x)  # guard against drift
        rr_new = float(np.dot(h * r, r))
        p = r + (rr_new / rr) * p
        rr = rr_new


def _finish(problem, u, path, iterations, history) -> OcpSolution:
    y, phi, J, _ = problem.evaluate(u)
    res = problem.optimality_residual(u, phi)
    return OcpSolution(u, y, phi, J, float(res.max(initial=0.0)), iterations, path, history)


def solve_unconstrained(problem: OcpProblem, u0=None) -> OcpSolution:
    """Solve ``nu u + avg(phi(u)) = 0`` by CG on the reduced Hessian."""
    cfg = problem.cfg
    if cfg.bounded:
        raise ValueError("solve_unconstrained needs infinite bounds; use solve_box")
    ne = problem.n_controls
    # the optimality map is affine: H u = -avg(phi(0))
    phi0 = problem.adjoint(problem.state(np.zeros(ne)))
    rhs = -problem.edge_average(phi0)
    u = np.zeros(ne) if u0 is None else _check_control(problem, u0).copy()
    history: list = []
    total = 0
    for _ in range(3):
        u, it = _pcg(problem.hessian_apply, rhs, u, problem.h, problem.nu, cfg.opt_tol,
                     cfg.max_iter - total, history)
        total += it
        sol = _finish(problem, u, "cg", total, history)
        if sol.residual <= cfg.opt_tol:
            return sol
        # recursion residual drifted from the true one; restart from here
    raise OcpError(f"optimality residual {sol.residual:.3e} above opt_tol after restarts", history)


def solve_box(problem: OcpProblem, u0=None) -> OcpSolution:
    """Primal-dual active set method, with projected gradient as fallback."""
    cfg = problem.cfg
    ne = problem.n_controls
    lo, hi = cfg.u_min, cfg.u_max
    phi0 = problem.adjoint(problem.state(np.zeros(ne)))
    c0 = problem.edge_average(phi0)  # gradient at u = 0 without the nu term
    u = project_box(np.zeros(ne) if u0 is None else _check_control(problem, u0), lo, hi)
    history: list = []
    prev = None
    total_cg = 0
    for k in range(1, cfg.max_active_iter + 1):
        _, phi, _, _ = problem.evaluate(u)
        cand = -problem.edge_average(phi) / problem.nu
        upper = cand > hi
        lower = cand < lo
        if lo == hi:
            upper[:] = True
            lower[:] = False
        sets = (upper.tobytes(), lower.tobytes())
        res = float(problem.optimality_residual(u, phi).max(initial=0.0))
        history.append(res)
        if sets == prev and res <= cfg.opt_tol:
            sol = _finish(problem, u, "active-set", k - 1, history)
            if sol.residual <= cfg.opt_tol:
                return sol
        prev = sets
        inactive = ~(upper | lower)
        u_new = np.where(upper, hi, np.where(lower, lo, 0.0))
        if inactive.any():
            fixed = u_new.copy()

            def apply(v, _fixed_mask=inactive):
                full = np.zeros(ne)
                full[_fixed_mask] = v
                return problem.hessian_apply(full)[_fixed_mask]

            # H_II u_I = -c0_I - (H [0; u_A])_I
            offset = problem.hessian_apply(np.where(inactive, 0.0, fixed))[inactive]
            rhs = -c0[inactive] - offset
            start = np.clip(u[inactive], lo, hi)
            try:
                uI, it = _pcg(apply, rhs, start, problem.h[inactive], problem.nu,
                              0.1 * cfg.opt_tol, cfg.max_iter, [])
            except OcpError:
                break
            total_cg += it
            u_new[inactive] = uI
        u = u_new
    return _projected_gradient(problem, u, history)


def _projected_gradient(problem: OcpProblem, u, history) -> OcpSolution:
    """Projected gradient with Armijo backtracking; objective decreases monotonically."""
    cfg = problem.cfg
    lo, hi = cfg.u_min, cfg.u_max
    u = project_box(u, lo, hi)
    _, phi, J, g = problem.evaluate(u)
    objs = [J]
    step = 1.0 / problem.nu
    for k in range(1, 50 * cfg.max_iter + 1):
        res = float(problem.optimality_residual(u, phi).max(initial=0.0))
        history.append(res)
        if res <= cfg.opt_tol:
            sol = _finish(problem, u, "projected-gradient", k - 1, history)
            sol.objectives = objs
            return sol
        t = step
        while True:
            trial = project_box(u - t * g, lo, hi)
            d = trial - u
            _, phi_t, J_t, g_t = problem.evaluate(trial)
            if J_t <= J - 1e-4 / t * problem.inner(d, d) or t < 1e-14:
                break
            t *= 0.5
        if J_t > J:
            break
        u, phi, J, g = trial, phi_t, J_t, g_t
        objs.append(J)
        step = min(2.0 * t, 1e6 / problem.nu)
    raise OcpError("projected gradient fallback did not converge", history)


def solve(problem: OcpProblem, u0=None) -> OcpSolution:
    return solve_box(problem, u0) if problem.cfg.bounded else solve_unconstrained(problem, u0)
