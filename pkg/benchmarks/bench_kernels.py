"""Time the numba and numpy element kernels and a full state assembly.

    python benchmarks/bench_kernels.py [--level 6] [--repeat 5]

Reports the best of ``repeat`` runs per backend after one warm-up call (so
JIT compilation is excluded) and checks both backends agree.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from neumann_ocp import _kernels
from neumann_ocp.assembly import assemble_state, p1_gradients
from neumann_ocp.coeffs import make_example
from neumann_ocp.domain import make_lshape
from neumann_ocp.mesh import build_graded_mesh
from neumann_ocp.quadrature import triangle_rule


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--level", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    mesh = build_graded_mesh(make_lshape(0.5), args.level)
    case = make_example()
    rule = triangle_rule(4)
    grads, areas = p1_gradients(mesh)
    x = rule.points_on(mesh.tri_xy)
    A = np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()
    b = case.b(x + 1e-3)
    c = case.a0(x + 1e-3)
    f = case.f(x + 1e-3)

    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    print(f"level {args.level}: {mesh.n_triangles} elements, {rule.weights.size} points each")
    results = {}
    for name in backends:
        _kernels.set_backend(name)
        t_mat, Ke = best_of(lambda: _kernels.element_matrices(grads, areas, rule.bary, rule.weights, A, b, c),
                            args.repeat)
        t_load, le = best_of(lambda: _kernels.element_loads(areas, rule.bary, rule.weights, f), args.repeat)
        t_asm, K = best_of(lambda: assemble_state(mesh, case.coefficients), args.repeat)
        results[name] = (Ke, le, K)
        print(f"{name:>6}: element_matrices {1e3 * t_mat:8.2f} ms  element_loads {1e3 * t_load:7.2f} ms"
              f"  assemble_state {1e3 * t_asm:8.2f} ms")
    if len(results) == 2:
        (K1, l1, S1), (K2, l2, S2) = results["numpy"], results["numba"]
        print(f"max difference: matrices {np.abs(K1 - K2).max():.2e}, loads {np.abs(l1 - l2).max():.2e}, "
              f"assembled {abs(S1 - S2).max():.2e}")
    _kernels.set_backend(_kernels._default_backend())


if __name__ == "__main__":
    main()
