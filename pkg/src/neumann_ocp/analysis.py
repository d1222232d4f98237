"""Error norms, EOC tables, the coercivity probe and convergence studies."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .assembly import (
    CornerQuad,
    _edge_npts,
    assemble_boundary_load,
    assemble_load,
    assemble_state,
    element_groups,
    p1_gradients,
)
from .coeffs import ManufacturedCase, make_example
from .domain import PolygonDomain, make_lshape
from .mesh import GradingSpec, TriMesh, build_mesh_family
from .quadrature import edge_rule
from .solver import Factorization, LinearSolveConfig, SolverError

__all__ = [
    "ErrorRecord",
    "EocTable",
    "eoc",
    "error_L2_domain",
    "error_H1_domain",
    "error_L2_boundary",
    "coercivity_probe",
    "CoercivityResult",
    "ProbeError",
    "StudyConfig",
    "StudyError",
    "BvpResult",
    "solve_bvp_pair",
    "expected_orders",
    "run_convergence_study",
]


def error_L2_domain(mesh: TriMesh, uh, exact, singular_points=(), degree: int = 4,
                    corner: CornerQuad | None = None) -> float:
    """``||u_h - u||_{L2(Omega)}`` for nodal P1 values ``uh``."""
    _, areas = p1_gradients(mesh)
    tri_xy = mesh.tri_xy
    uh = np.asarray(uh, dtype=float)
    total = 0.0
    for idx, rule in element_groups(mesh, singular_points, degree, corner):
        uex = exact(rule.points_on(tri_xy[idx]))
        total += _kernels.element_l2_error_sq(areas[idx], rule.bary, rule.weights,
                                              uh[mesh.triangles[idx]], uex).sum()
    return math.sqrt(total)


def error_H1_seminorm(mesh: TriMesh, uh, grad_exact, singular_points=(), degree: int = 4,
                      corner: CornerQuad | None = None) -> float:
    grads, areas = p1_gradients(mesh)
    tri_xy = mesh.tri_xy
    uh = np.asarray(uh, dtype=float)
    guh = np.einsum("ti,tid->td", uh[mesh.triangles], grads)
    total = 0.0
    for idx, rule in element_groups(mesh, singular_points, degree, corner):
        gex = grad_exact(rule.points_on(tri_xy[idx]))
        total += _kernels.element_grad_error_sq(areas[idx], rule.weights, guh[idx], gex).sum()
    return math.sqrt(total)


def error_H1_domain(mesh: TriMesh, uh, exact, grad_exact, singular_points=(), degree: int = 4,
                    corner: CornerQuad | None = None) -> float:
    """Full ``H1(Omega)`` norm of ``u_h - u`` (L2 part plus gradient part)."""
    l2 = error_L2_domain(mesh, uh, exact, singular_points, degree, corner)
    semi = error_H1_seminorm(mesh, uh, grad_exact, singular_points, degree, corner)
    return math.hypot(l2, semi)


def error_L2_boundary(mesh: TriMesh, control, exact, npts: int = 4) -> float:
    """``||u_h - u||_{L2(Gamma)}`` for a piecewise-constant control on the edges."""
    s, w = edge_rule(npts)
    p = mesh.nodes[mesh.boundary_edges]
    x = p[:, None, 0, :] * (1.0 - s)[None, :, None] + p[:, None, 1, :] * s[None, :, None]
    d = np.asarray(control, dtype=float)[:, None] - exact(x)
    return math.sqrt(float(np.sum((d * d) @ w * mesh.edge_lengths)))


def eoc(errors) -> list[float | None]:
    """Base-2 experimental orders; ``None`` for the first level."""
    out: list[float | None] = [None]
    for e0, e1 in zip(errors[:-1], errors[1:]):
        out.append(math.log2(e0 / e1) if e0 > 0 and e1 > 0 else float("nan"))
    return out


_COLUMNS = ("err_y_L2", "err_y_H1", "err_phi_L2", "err_phi_H1", "err_u_L2G")
_CSV_NAMES = {"err_y_L2": "y_L2", "err_y_H1": "y_H1", "err_phi_L2": "phi_L2",
              "err_phi_H1": "phi_H1", "err_u_L2G": "u_L2G"}


@dataclass
class ErrorRecord:
    level: int
    h_nominal: float
    ndof: int
    err_y_L2: float = float("nan")
    err_y_H1: float = float("nan")
    err_phi_L2: float = float("nan")
    err_phi_H1: float = float("nan")
    err_u_L2G: float = float("nan")

    def __post_init__(self):
        for name in _COLUMNS:
            v = getattr(self, name)
            if not (math.isnan(v) or (math.isfinite(v) and v >= 0.0)):
                raise ValueError(f"{name}={v} must be finite and nonnegative")


@dataclass
class EocTable:
    records: list[ErrorRecord] = field(default_factory=list)
    expected: dict = field(default_factory=dict)
    label: str = ""

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.records]

    def eoc(self, name: str) -> list[float | None]:
        return eoc(self.column(name))

    def final_eoc(self, name: str, pairs: int = 2) -> float:
        """Mean EOC over the ``pairs`` finest level pairs."""
        vals = [v for v in self.eoc(name)[1:]]
        if len(vals) < pairs:
            raise ValueError(f"need at least {pairs + 1} levels for {pairs} EOC pairs")
        return float(np.mean(vals[-pairs:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["level", "h", "ndof"]
        for c in _COLUMNS:
            head += [c, "eoc_" + _CSV_NAMES[c]]
        w.writerow(head)
        eocs = {c: self.eoc(c) for c in _COLUMNS}
        for k, r in enumerate(self.records):
            row = [r.level, f"{r.h_nominal:.6e}", r.ndof]
            for c in _COLUMNS:
                v = getattr(r, c)
                e = eocs[c][k]
                row += ["" if math.isnan(v) else f"{v:.6e}",
                        "" if e is None or math.isnan(e) else f"{e:.4f}"]
            w.writerow(row)
        if self.expected:
            parts = ["# expected", "", ""]
            for c in _COLUMNS:
                v = self.expected.get(c)
                parts += ["", "" if v is None else f"{v:.2f}"]
            buf.write(",".join(parts) + "\n")
        return buf.getvalue()

    def format_console(self) -> str:
        eocs = {c: self.eoc(c) for c in _COLUMNS}
        active = [c for c in _COLUMNS if not all(math.isnan(v) for v in self.column(c))]
        lines = []
        if self.label:
            lines.append(self.label)
        head = f"{'j':>3} {'ndof':>8}"
        for c in active:
            head += f" {c:>11} {'EOC':>5}"
        lines.append(head)
        lines.append("-" * len(head))
        for k, r in enumerate(self.records):
            line = f"{r.level:>3} {r.ndof:>8}"
            for c in active:
                e = eocs[c][k]
                line += f" {getattr(r, c):>11.2e} {'' if e is None else f'{e:.2f}':>5}"
            lines.append(line)
        if self.expected:
            lines.append("-" * len(head))
            line = f"{'Expected':<12}"
            for c in active:
                v = self.expected.get(c)
                line += f" {'':>11} {'' if v is None else f'{v:.2f}':>5}"
            lines.append(line)
        return "\n".join(lines)


class ProbeError(RuntimeError):
    pass


@dataclass
class CoercivityResult:
    lam_min: float
    iterations: int
    residual: float
    shift: float

    @property
    def verdict(self) -> str:
        return "coercive" if self.lam_min > 0 else "non-coercive"


def _negative_pivots(A) -> int:
    """Number of negative eigenvalues of the symmetric matrix ``A`` (Sylvester).

    SuperLU in symmetric mode with diagonal pivoting computes ``P A P.T = L U``
    with ``U = D L.T``, so the signs of ``diag(U)`` give the inertia.
    """
    lu = spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options=dict(SymmetricMode=True))
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise ProbeError("factorization left symmetric pivoting; inertia unavailable")
    return int(np.count_nonzero(lu.U.diagonal() < 0.0))


def coercivity_probe(K, M_h1, tol: float = 1e-10, max_iter: int = 2000, seed: int = 0) -> CoercivityResult:
    """Smallest eigenvalue of ``(K + K.T)/2 x = lam M_h1 x``.

    A shift certified to lie below the spectrum (no negative pivots in
    ``S - shift M``) drives shift-and-invert Lanczos, so the eigenvalue found
    is the lowest one. A second inertia count just below the result confirms
    that nothing lies under it; otherwise the search restarts from there.
    """
    S = sp.csc_matrix(0.5 * (K + K.T))
    M = sp.csc_matrix(M_h1)
    n = S.shape[0]
    if n < 3:
        lam = float(sla.eigh(S.toarray(), M.toarray(), eigvals_only=True)[0])
        return CoercivityResult(lam, 0, 0.0, lam)
    v0 = np.random.default_rng(seed).standard_normal(n)

    shift = -1.0
    while _negative_pivots(S - shift * M) > 0:
        shift *= 2.0
        if shift < -1e300:
            raise ProbeError("no shift below the spectrum found")
    total = 0
    for _ in range(20):
        lu = spla.splu(sp.csc_matrix(S - shift * M))
        count = [0]

        def opinv(v, _lu=lu):
            count[0] += 1
            return _lu.solve(v)

        op = spla.LinearOperator((n, n), matvec=opinv)
        try:
            vals, vecs = spla.eigsh(S, k=1, M=M, sigma=shift, which="LM", OPinv=op, v0=v0,
                                    tol=tol, maxiter=max_iter)
        except spla.ArpackNoConvergence as exc:
            raise ProbeError(f"coercivity probe did not converge in {max_iter} iterations") from exc
        total += count[0]
        lam = float(vals[0])
        x = vecs[:, 0]
        margin = 1e3 * tol * max(abs(lam), 1.0)
        if _negative_pivots(S - (lam - margin) * M) == 0:
            r = S @ x - lam * (M @ x)
            res = float(np.linalg.norm(r) / max(np.linalg.norm(S @ x), 1e-300))
            return CoercivityResult(lam, total, res, shift)
        # a lower eigenvalue exists; it lies in (shift, lam - margin)
        shift = shift - 0.5 * (lam - shift)
    raise ProbeError("coercivity probe could not certify the lowest eigenvalue")


class StudyError(RuntimeError):
    def __init__(self, msg, level=None):
        self.level = level
        if level is not None and not str(msg).startswith(f"level {level}:"):
            msg = f"level {level}: {msg}"
        super().__init__(msg)


@dataclass(frozen=True)
class StudyConfig:
    """Everything a convergence study needs; validated on construction."""

    domain: PolygonDomain = field(default_factory=make_lshape)
    levels: tuple = (1, 7)
    delta: float = 6.0
    alpha: float = -1.25
    nu: float = 1.0
    degree: int = 4
    corner: CornerQuad = field(default_factory=CornerQuad)
    solver: LinearSolveConfig = field(default_factory=LinearSolveConfig)
    ocp: object = None  # OcpConfig; None means unconstrained with ``nu``
    run_ocp: bool = True

    def __post_init__(self):
        lo, hi = (int(v) for v in self.levels)
        if lo < 1 or hi < lo:
            raise ValueError(f"levels must satisfy 1 <= min <= max, got {self.levels}")
        object.__setattr__(self, "levels", (lo, hi))
        if self.degree < 1:
            raise ValueError("quadrature degree must be >= 1")
        v = np.asarray(self.domain.vertices)
        if not (np.allclose(v[0], 0.0) and v[1][1] == 0.0 and v[1][0] > 0.0):
            # the manufactured solution measures theta from the positive x1-axis
            raise ValueError("the manufactured study needs vertex 0 at the origin with side 0 "
                             "along the positive x1-axis")

    def case(self) -> ManufacturedCase:
        lam = self.domain.lam_min
        return make_example(self.delta, self.alpha, self.nu, lam)


def expected_orders(domain: PolygonDomain) -> dict:
    """Predicted EOCs: ``min(1, lam/mu)`` in H1, twice that in L2, 1 for the control."""
    s = min(min(1.0, c.lam / c.mu) for c in domain.corners)
    return {"err_y_L2": 2 * s, "err_y_H1": s, "err_phi_L2": 2 * s, "err_phi_H1": s,
            "err_u_L2G": 1.0}


@dataclass
class BvpResult:
    y: np.ndarray
    phi: np.ndarray
    err_y_L2: float
    err_y_H1: float
    err_phi_L2: float
    err_phi_H1: float


def solve_bvp_pair(mesh: TriMesh, case: ManufacturedCase, solver: LinearSolveConfig | None = None,
                   degree: int = 4, corner: CornerQuad | None = None, K=None,
                   fact: Factorization | None = None) -> BvpResult:
    """State driven by the exact control and adjoint driven by the exact state.

    Both are measured against the manufactured solution.
    """
    coeffs = case.coefficients
    sing = coeffs.singular_points
    npts = _edge_npts(degree)
    if fact is None:
        K = assemble_state(mesh, coeffs, degree, corner) if K is None else K
        fact = Factorization(K, solver, level=mesh.level)
    rhs_y = assemble_load(mesh, case.f, sing, degree, corner) + assemble_boundary_load(mesh, case.state_bc, npts)
    y, _ = fact.solve(rhs_y)
    rhs_p = (assemble_load(mesh, lambda x: case.exact_y(x) - case.y_d(x), sing, degree, corner)
             + assemble_boundary_load(mesh, case.g_phi, npts))
    phi, _ = fact.solve_transposed(rhs_p)
    return BvpResult(
        y, phi,
        error_L2_domain(mesh, y, case.exact_y, sing, degree, corner),
        error_H1_domain(mesh, y, case.exact_y, case.grad_y, sing, degree, corner),
        error_L2_domain(mesh, phi, case.exact_phi, sing, degree, corner),
        error_H1_domain(mesh, phi, case.exact_phi, case.grad_phi, sing, degree, corner),
    )


def run_convergence_study(config: StudyConfig, progress=None) -> EocTable:
    """Errors of the BVP pair and of the discrete optimal control per level.

    ``progress`` (optional) is called with each finished ErrorRecord.
    """
    from .ocp import OcpConfig, OcpError, OcpProblem, solve

    case = config.case()
    ocp_cfg = config.ocp if config.ocp is not None else OcpConfig(nu=config.nu)
    lo, hi = config.levels
    grading = GradingSpec.from_domain(config.domain)
    table = EocTable(expected=expected_orders(config.domain),
                     label=f"{config.domain.name}, mu={_mu_label(config.domain)}")
    for mesh in build_mesh_family(config.domain, hi, grading):
        if mesh.level < lo:
            continue
        try:
            if config.run_ocp:
                prob = OcpProblem.from_case(mesh, case, ocp_cfg, config.solver, config.degree,
                                            config.corner)
                bvp = solve_bvp_pair(mesh, case, degree=config.degree, corner=config.corner,
                                     fact=prob.fact)
                sol = solve(prob)
                err_u = error_L2_boundary(mesh, sol.u, case.exact_u)
            else:
                bvp = solve_bvp_pair(mesh, case, config.solver, config.degree, config.corner)
                err_u = float("nan")
        except (SolverError, OcpError) as exc:
            raise StudyError(str(exc), mesh.level) from exc
        rec = ErrorRecord(mesh.level, mesh.h_nominal, mesh.n_nodes, bvp.err_y_L2, bvp.err_y_H1,
                          bvp.err_phi_L2, bvp.err_phi_H1, err_u)
        table.records.append(rec)
        if progress is not None:
            progress(rec)
    return table


def _mu_label(domain: PolygonDomain) -> str:
    mus = sorted({c.mu for c in domain.corners if c.mu != 1.0})
    return ",".join(f"{m:g}" for m in mus) if mus else "1"
