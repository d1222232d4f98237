import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import dblquad

from conftest import lshape_family
from neumann_ocp.analysis import (
    EocTable,
    ErrorRecord,
    StudyConfig,
    StudyError,
    coercivity_probe,
    eoc,
    error_H1_domain,
    error_L2_boundary,
    error_L2_domain,
    expected_orders,
    run_convergence_study,
    solve_bvp_pair,
)
from neumann_ocp.assembly import assemble_h1_metric, assemble_state, coercive_coefficients
from neumann_ocp.coeffs import CoefficientSet
from neumann_ocp.domain import make_lshape, make_polygon, make_unit_square
from neumann_ocp.mesh import build_graded_mesh


@given(st.floats(0.1, 3.0), st.floats(1e-6, 1e3))
def test_eoc_of_geometric_sequence(p, scale):
    errs = [scale * 2.0 ** (-p * j) for j in range(5)]
    out = eoc(errs)
    assert out[0] is None
    assert np.allclose(out[1:], p, atol=1e-12)
    # invariant under rescaling all errors
    assert np.allclose(eoc([7.0 * e for e in errs])[1:], out[1:], atol=1e-12)


def test_eoc_zero_error_is_nan():
    assert math.isnan(eoc([1.0, 0.0])[1])


def test_linear_field_has_zero_error():
    m = lshape_family(0.5, 3)[-1]
    f = lambda x: 1.0 - 2.0 * x[..., 0] + 0.5 * x[..., 1]
    g = lambda x: np.broadcast_to([-2.0, 0.5], np.asarray(x).shape)
    uh = f(m.nodes)
    assert error_L2_domain(m, uh, f) < 1e-14
    assert error_H1_domain(m, uh, f, g) < 1e-13


def test_interpolation_error_of_quadratic_against_dblquad():
    m = build_graded_mesh(make_unit_square(), 1)
    f = lambda x: np.asarray(x)[..., 0] ** 2
    uh = f(m.nodes)
    total = 0.0
    for tri in m.tri_xy:
        T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
        vals = tri[:, 0] ** 2

        def err(t, s):  # reference coordinates (s, t)
            p = tri[0] + T @ np.array([s, t])
            return (p[0] ** 2 - (vals[0] * (1 - s - t) + vals[1] * s + vals[2] * t)) ** 2

        total += abs(np.linalg.det(T)) * dblquad(err, 0, 1, 0, lambda s: 1 - s, epsabs=1e-15)[0]
    assert error_L2_domain(m, uh, f) == pytest.approx(math.sqrt(total), rel=1e-10)


def test_boundary_error_of_edge_means():
    m = lshape_family(0.66, 3)[-1]
    exact = lambda x: np.asarray(x)[..., 0]
    p = m.nodes[m.boundary_edges]
    h = m.edge_lengths
    means = 0.5 * (p[:, 0, 0] + p[:, 1, 0])
    tx = (p[:, 1, 0] - p[:, 0, 0]) / h
    # a linear function minus its mean on an edge of length h: h^3 slope^2 / 12
    ref = math.sqrt(np.sum(h ** 3 * tx ** 2 / 12.0))
    assert error_L2_boundary(m, means, exact) == pytest.approx(ref, rel=1e-13)
    assert error_L2_boundary(m, means, lambda x: np.broadcast_to(means[:, None], x.shape[:-1])) == 0.0


def test_error_record_validation():
    ErrorRecord(1, 0.5, 8)
    for bad in (-1.0, math.inf):
        with pytest.raises(ValueError):
            ErrorRecord(1, 0.5, 8, err_y_L2=bad)


def _toy_table():
    recs = [ErrorRecord(j, 2.0 ** -j, 4 ** j, 2.0 ** (-2 * j), 2.0 ** -j, 2.0 ** (-2 * j), 2.0 ** -j,
                        2.0 ** -j) for j in (1, 2, 3)]
    return EocTable(recs, expected=expected_orders(make_lshape(0.5)), label="toy")


def test_csv_layout():
    lines = _toy_table().to_csv().splitlines()
    head = lines[0].split(",")
    assert head[:3] == ["level", "h", "ndof"]
    assert head[3:5] == ["err_y_L2", "eoc_y_L2"]
    assert len(head) == 13
    first = lines[1].split(",")
    assert first[4] == ""
    assert lines[2].split(",")[4] == "2.0000"
    assert lines[-1].startswith("# expected")
    assert lines[-1].split(",")[4] == "2.00"


def test_console_format():
    out = _toy_table().format_console()
    assert out.splitlines()[0] == "toy"
    assert "Expected" in out and "2.00" in out


def test_final_eoc_needs_enough_levels():
    t = _toy_table()
    assert t.final_eoc("err_y_L2") == pytest.approx(2.0)
    with pytest.raises(ValueError):
        t.final_eoc("err_y_L2", pairs=3)


def _dense_lam_min(K, M):
    S = 0.5 * (K + K.T).toarray()
    return sla.eigh(S, M.toarray(), eigvals_only=True)[0]


def test_probe_coercive_matches_dense_eigensolver():
    m = lshape_family(1.0, 2)[-1]
    M = assemble_h1_metric(m)
    K = assemble_state(m, coercive_coefficients())
    res = coercivity_probe(K, M)
    assert res.lam_min == pytest.approx(1.0, abs=1e-9)
    assert res.verdict == "coercive"
    cs = CoefficientSet(a0=lambda x: 0.1 + x[..., 0] ** 2)
    K = assemble_state(m, cs)
    assert coercivity_probe(K, M).lam_min == pytest.approx(_dense_lam_min(K, M), abs=1e-8)


def test_probe_detects_noncoercive_example(case):
    m = lshape_family(1.0, 2)[-1]
    M = assemble_h1_metric(m)
    K = assemble_state(m, case.coefficients)
    res = coercivity_probe(K, M)
    assert res.verdict == "non-coercive"
    assert res.lam_min == pytest.approx(_dense_lam_min(K, M), abs=1e-8)


def test_interpolation_h1_eoc_tends_to_lambda(case):
    errs = []
    for m in lshape_family(1.0, 6)[2:]:
        uh = case.exact_y(m.nodes)
        errs.append(error_H1_domain(m, uh, case.exact_y, case.grad_y, case.coefficients.singular_points))
    assert np.mean(eoc(errs)[-2:]) == pytest.approx(2.0 / 3.0, abs=0.05)


def test_bvp_pair_small_errors(case):
    m = lshape_family(0.5, 4)[-1]
    r = solve_bvp_pair(m, case)
    assert r.err_y_L2 < 1e-2 and r.err_phi_L2 < 1e-2
    assert r.err_y_H1 < 0.1 and r.err_phi_H1 < 0.1


def test_expected_orders():
    assert expected_orders(make_lshape())["err_y_L2"] == pytest.approx(4.0 / 3.0)
    e = expected_orders(make_lshape(0.5))
    assert e["err_y_H1"] == 1.0 and e["err_y_L2"] == 2.0 and e["err_u_L2G"] == 1.0


def test_study_config_validation():
    for kw in (dict(levels=(0, 3)), dict(levels=(4, 2)), dict(degree=0),
               dict(domain=make_polygon([(1, 1), (2, 1), (2, 2), (1, 2)]))):
        with pytest.raises(ValueError):
            StudyConfig(**kw)
    with pytest.raises(ValueError):
        StudyConfig(alpha=-1.6).case()


def test_small_study_decreases():
    seen = []
    t = run_convergence_study(StudyConfig(levels=(2, 4)), progress=seen.append)
    assert [r.level for r in t.records] == [2, 3, 4] and len(seen) == 3
    assert t.label == "lshape, mu=1"
    for c in ("err_y_L2", "err_y_H1", "err_phi_L2", "err_phi_H1", "err_u_L2G"):
        col = t.column(c)
        assert all(a > b for a, b in zip(col, col[1:]))


def test_study_without_ocp():
    t = run_convergence_study(StudyConfig(levels=(1, 2), run_ocp=False))
    assert all(math.isnan(v) for v in t.column("err_u_L2G"))
    assert "u_L2G" not in t.format_console()


def test_study_reports_level_on_failure():
    from neumann_ocp.ocp import OcpConfig

    cfg = StudyConfig(levels=(1, 2), ocp=OcpConfig(opt_tol=1e-30, max_iter=1))
    with pytest.raises(StudyError) as err:
        run_convergence_study(cfg)
    assert err.value.level == 1
    assert str(err.value).startswith("level 1:")
    assert str(StudyError("level 3: singular", 3)).count("level 3:") == 1
