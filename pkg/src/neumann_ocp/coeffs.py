"""Coefficient fields and the manufactured L-shape problem.

A field is any callable taking points of shape ``(..., 2)`` and returning
values of shape ``(...)`` (scalar), ``(..., 2)`` (vector) or ``(..., 2, 2)``
(matrix). Boundary data additionally take the outward normals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "CoefficientSet",
    "ManufacturedCase",
    "make_example",
    "theta_branch",
    "polar",
    "eval_exact_gradient",
    "CoefficientError",
    "constant_field",
]

Field = Callable[[np.ndarray], np.ndarray]


class CoefficientError(ValueError):
    pass


def polar(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    return np.hypot(x[..., 0], x[..., 1]), theta_branch(x)


def theta_branch(x) -> np.ndarray:
    """Polar angle in [0, 2pi) with the cut along the positive x1-axis."""
    x = np.asarray(x, dtype=float)
    if np.any((x[..., 0] == 0.0) & (x[..., 1] == 0.0)):
        raise CoefficientError("polar angle undefined at the origin")
    t = np.arctan2(x[..., 1], x[..., 0])
    return np.where(t < 0.0, t + 2.0 * np.pi, t)


@dataclass(frozen=True)
class CoefficientSet:
    """Fields of ``-div(a grad y) + b . grad y + a0 y``.

    ``None`` stands for the identity (``a``) or zero (``b``, ``a0``,
    ``div_b``). ``singular_points`` lists points where some field blows up;
    elements touching them get the corner-graded quadrature.
    """

    a: Optional[Field] = None
    b: Optional[Field] = None
    a0: Optional[Field] = None
    div_b: Optional[Field] = None
    singular_points: tuple = ()

    def eval_a(self, x):
        x = np.asarray(x, dtype=float)
        if self.a is None:
            return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2))
        return self.a(x)

    def eval_b(self, x):
        x = np.asarray(x, dtype=float)
        if self.b is None:
            return np.zeros(x.shape)
        return self.b(x)

    def eval_a0(self, x):
        x = np.asarray(x, dtype=float)
        if self.a0 is None:
            return np.zeros(x.shape[:-1])
        return self.a0(x)

    def eval_div_b(self, x):
        x = np.asarray(x, dtype=float)
        if self.div_b is None:
            if self.b is not None:
                raise CoefficientError("div_b is required when b is given")
            return np.zeros(x.shape[:-1])
        return self.div_b(x)

    def b_dot_n(self, x, normal):
        return np.einsum("...d,...d->...", self.eval_b(x), normal)

    def ellipticity(self, x) -> float:
        """Smallest eigenvalue of ``a`` over the sample points."""
        a = np.asarray(self.eval_a(x))
        if not np.allclose(a, np.swapaxes(a, -1, -2)):
            raise CoefficientError("diffusion matrix is not symmetric")
        return float(np.linalg.eigvalsh(a.reshape(-1, 2, 2)).min())

    def check(self, x) -> None:
        lam = self.ellipticity(x)
        if lam <= 0.0:
            raise CoefficientError(f"diffusion is not uniformly elliptic (min eigenvalue {lam})")
        if np.any(self.eval_a0(x) < 0.0):
            raise CoefficientError("reaction coefficient a0 takes negative values")


def constant_field(value: float) -> Field:
    def f(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(value))
    return f


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact optimal triple on the L-shape with radial convection.

    ``y = r**lam cos(lam theta)``, ``phi = -y``, ``u = -phi/nu`` on the
    boundary; ``b = delta r**(alpha+1) e_r`` and ``a0 = r**alpha``. The
    data ``f, g_y, y_d, g_phi`` make this triple optimal for the tracking
    functional with regularization ``nu``.
    """

    delta: float = 6.0
    alpha: float = -1.25
    nu: float = 1.0
    lam: float = 2.0 / 3.0
    coefficients: CoefficientSet = field(init=False, repr=False)

    def __post_init__(self):
        if not self.alpha > -1.5:
            raise CoefficientError(f"alpha={self.alpha} outside the admissible range alpha > -3/2")
        if not self.nu > 0.0:
            raise CoefficientError("nu must be positive")
        if not self.delta >= 0.0:
            raise CoefficientError("delta must be nonnegative")
        object.__setattr__(self, "coefficients", CoefficientSet(
            a=None, b=self.b, a0=self.a0, div_b=self.div_b,
            singular_points=(np.zeros(2),),
        ))

    # coefficients -------------------------------------------------------
    def b(self, x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        # delta r^(alpha+1) e_r == delta r^alpha x
        return self.delta * (r ** self.alpha)[..., None] * x

    def a0(self, x):
        x = np.asarray(x, dtype=float)
        return np.hypot(x[..., 0], x[..., 1]) ** self.alpha

    def div_b(self, x):
        x = np.asarray(x, dtype=float)
        return self.delta * (self.alpha + 2.0) * np.hypot(x[..., 0], x[..., 1]) ** self.alpha

    # exact solution -----------------------------------------------------
    def exact_y(self, x):
        """Defined everywhere, including the value 0 at the corner."""
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        t = np.arctan2(x[..., 1], x[..., 0])
        t = np.where(t < 0.0, t + 2.0 * np.pi, t)
        return r ** self.lam * np.cos(self.lam * t)

    def grad_y(self, x):
        return eval_exact_gradient(self, x)

    def exact_phi(self, x):
        return -self.exact_y(x)

    def grad_phi(self, x):
        return -self.grad_y(x)

    def exact_u(self, x):
        return -self.exact_phi(x) / self.nu

    def _r_lam_alpha(self, x):
        r, t = polar(x)
        return r ** (self.lam + self.alpha) * np.cos(self.lam * t)

    # data ---------------------------------------------------------------
    def f(self, x):
        # y is harmonic, so only convection and reaction remain
        return (self.delta * self.lam + 1.0) * self._r_lam_alpha(x)

    def g_y(self, x, normal):
        dn = np.einsum("...d,...d->...", self.grad_y(x), normal)
        return dn - self.exact_u(x)

    def y_d(self, x):
        # y + div(phi b) - a0 phi with phi = -y and div(y b) = y div b + b.grad y
        return self.exact_y(x) + (1.0 - self.delta * (self.alpha + 2.0 + self.lam)) * self._r_lam_alpha(x)

    def g_phi(self, x, normal):
        dn = np.einsum("...d,...d->...", self.grad_phi(x), normal)
        return dn + self.exact_phi(x) * self.coefficients.b_dot_n(x, normal)

    def state_bc(self, x, normal):
        """Neumann datum ``g_y + u`` of the state with the exact control."""
        return self.g_y(x, normal) + self.exact_u(x)


def make_example(delta: float = 6.0, alpha: float = -1.25, nu: float = 1.0,
                 lam: float = 2.0 / 3.0) -> ManufacturedCase:
    return ManufacturedCase(delta=float(delta), alpha=float(alpha), nu=float(nu), lam=float(lam))


def eval_exact_gradient(case: ManufacturedCase, x) -> np.ndarray:
    """Cartesian gradient of ``r**lam cos(lam theta)``; singular at the origin."""
    r, t = polar(x)
    lam = case.lam
    s = lam * r ** (lam - 1.0)
    return np.stack([s * np.cos((lam - 1.0) * t), -s * np.sin((lam - 1.0) * t)], axis=-1)
