import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcqpnet.errors import FactorizationError
from qcqpnet.linearizer import QpProblem
from qcqpnet.qpsolver import SolverConfig, kkt_residuals, solve_qp, write_trace


def _spd(n, rng):
    M = rng.standard_normal((n, n))
    return M @ M.T + n * np.eye(n)


def _qp(A, a, G=None, h=None, C=None, c=None):
    n = len(a)
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    h = np.zeros(0) if h is None else h
    return QpProblem(np.asarray(A, dtype=float), np.asarray(a, dtype=float), G, h, C, c)


def _kkt_oracle(A, a, C, c):
    # stationarity 2 A (x - a) + C^T mu = 0 with C x = c
    n, p = A.shape[0], C.shape[0]
    K = np.block([[2 * A, C.T], [C, np.zeros((p, p))]])
    sol = np.linalg.solve(K, np.concatenate([2 * A @ a, c]))
    return sol[:n], sol[n:]


def _random_ineq_qp(n, M, seed):
    rng = np.random.default_rng(seed)
    A = _spd(n, rng)
    a = 3 * rng.standard_normal(n)
    G = rng.standard_normal((M, n))
    h = rng.uniform(0.5, 1.5, M)  # x = 0 is strictly feasible
    return _qp(A, a, G, h)


def test_unconstrained_minimum():
    r = solve_qp(_qp(np.eye(2), [3.0, -1.0]))
    assert r.status == "optimal"
    np.testing.assert_allclose(r.x, [3.0, -1.0], atol=1e-9)
    assert abs(r.objective) <= 1e-12


def test_single_active_constraint():
    r = solve_qp(_qp([[1.0]], [1.0], [[1.0]], [0.0]))
    assert r.status == "optimal"
    np.testing.assert_allclose(r.x, [0.0], atol=1e-6)
    assert abs(r.objective - 1.0) <= 1e-6
    np.testing.assert_allclose(r.y, [2.0], rtol=1e-6)


def test_symmetric_equality():
    r = solve_qp(_qp(np.eye(2), [0.0, 0.0], C=[[1.0, 1.0]], c=[1.0]))
    assert r.status == "optimal"
    np.testing.assert_allclose(r.x, [0.5, 0.5], atol=1e-6)


def test_equality_only_n10_matches_dense_kkt():
    rng = np.random.default_rng(10)
    A, a = _spd(10, rng), rng.standard_normal(10)
    C, c = rng.standard_normal((3, 10)), rng.standard_normal(3)
    x_ref, _ = _kkt_oracle(A, a, C, c)
    r = solve_qp(_qp(A, a, C=C, c=c))
    assert r.status == "optimal"
    assert np.linalg.norm(r.x - x_ref) <= 1e-6 * np.linalg.norm(x_ref)


@pytest.mark.parametrize("seed", range(50))
def test_agrees_with_dense_kkt_on_equality_only_problems(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(2, 51))
    p = int(rng.integers(1, n))
    A, a = _spd(n, rng), rng.standard_normal(n)
    C, c = rng.standard_normal((p, n)), rng.standard_normal(p)
    x_ref, _ = _kkt_oracle(A, a, C, c)
    r = solve_qp(_qp(A, a, C=C, c=c))
    assert r.status == "optimal"
    assert np.linalg.norm(r.x - x_ref) <= 1e-6 * max(np.linalg.norm(x_ref), 1.0)


def test_residuals_zero_at_analytic_equality_solution():
    rng = np.random.default_rng(3)
    A, a = _spd(6, rng), rng.standard_normal(6)
    C, c = rng.standard_normal((2, 6)), rng.standard_normal(2)
    x, mu = _kkt_oracle(A, a, C, c)
    res = kkt_residuals(_qp(A, a, C=C, c=c), x, (None, mu))
    assert max(res) <= 1e-10


def test_residuals_zero_at_unconstrained_optimum():
    rng = np.random.default_rng(4)
    A, a = _spd(4, rng), rng.standard_normal(4)
    qp = _qp(A, a, G=rng.standard_normal((3, 4)), h=np.full(3, 1e3))
    res = kkt_residuals(qp, a, (np.zeros(3), None))
    assert tuple(res) == (0.0, 0.0, 0.0, 0.0)


def test_stationarity_grows_linearly_with_perturbation():
    rng = np.random.default_rng(5)
    A, a = _spd(5, rng), rng.standard_normal(5)
    C, c = rng.standard_normal((2, 5)), rng.standard_normal(2)
    qp = _qp(A, a, C=C, c=c)
    x, mu = _kkt_oracle(A, a, C, c)
    d = rng.standard_normal(5)
    vals = [kkt_residuals(qp, x + t * d, (None, mu)).stationarity for t in (1e-6, 1e-5, 1e-4, 1e-3)]
    ratios = np.array(vals[1:]) / np.array(vals[:-1])
    np.testing.assert_allclose(ratios, 10.0, rtol=1e-3)
    # the slope is the directional derivative 2 A d
    np.testing.assert_allclose(vals[-1] / 1e-3, np.abs(2 * A @ d).max(), rtol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_random_inequality_qp_satisfies_kkt(seed):
    qp = _random_ineq_qp(8, 40, seed)
    cfg = SolverConfig()
    r = solve_qp(qp, cfg)
    assert r.status == "optimal"
    res = kkt_residuals(qp, r.x, (r.y, r.mu))
    assert res.primal_ineq <= cfg.eps_abs + cfg.eps_rel * np.abs(qp.h).max()
    assert res.stationarity <= 1e-6 * max(1.0, np.abs(2 * qp.A @ qp.a).max())
    assert np.all(r.y >= 0)
    assert res.complementarity <= 1e-6


def test_solution_invariant_under_row_permutation():
    qp = _random_ineq_qp(6, 30, 11)
    G, h = qp.G.toarray(), qp.h
    perm = np.random.default_rng(0).permutation(30)
    r1 = solve_qp(qp)
    r2 = solve_qp(_qp(qp.A, qp.a, G[perm], h[perm]))
    assert r1.status == r2.status == "optimal"
    assert np.linalg.norm(r1.x - r2.x) <= 1e-6 * np.linalg.norm(r1.x)
    np.testing.assert_allclose(r2.y, r1.y[perm], atol=1e-6 * np.abs(r1.y).max())


@pytest.mark.parametrize("row", [0, 7, 19])
def test_row_scaling_robustness(row):
    qp = _random_ineq_qp(6, 20, 12)
    G, h = qp.G.toarray(), qp.h.copy()
    G[row] *= 1e3
    h[row] *= 1e3
    r1 = solve_qp(qp)
    r2 = solve_qp(_qp(qp.A, qp.a, G, h))
    assert r1.status == r2.status == "optimal"
    assert np.linalg.norm(r1.x - r2.x) <= 1e-6 * np.linalg.norm(r1.x)


def _segments(trace):
    seg = [trace[0]]
    for row in trace[1:]:
        if row["rho"] != seg[-1]["rho"]:
            yield seg
            seg = []
        seg.append(row)
    yield seg


@pytest.mark.parametrize("seed", range(5))
def test_merit_non_increasing_within_constant_rho_segments(seed):
    qp = _random_ineq_qp(10, 60, 100 + seed)
    r = solve_qp(qp, SolverConfig(trace=True, polish=False))
    assert r.status == "optimal"
    for seg in _segments(r.trace):
        m = np.array([row["merit"] for row in seg])
        # the first step of a segment follows a rho change
        assert np.all(m[2:] <= m[1:-1] * (1 + 1e-8) + 1e-14)


def test_trace_csv(tmp_path):
    qp = _random_ineq_qp(4, 10, 2)
    r = solve_qp(qp, SolverConfig(trace=True, check_interval=1))
    path = tmp_path / "trace.csv"
    write_trace(r, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["iteration", "rho", "merit", "primal_residual", "dual_residual", "objective"]
    assert len(rows) == len(r.trace)
    assert int(rows[-1]["iteration"]) == r.iterations
    with pytest.raises(ValueError):
        write_trace(solve_qp(qp), path)


def test_iteration_limit_returns_last_iterate():
    qp = _random_ineq_qp(8, 40, 1)
    r = solve_qp(qp, SolverConfig(max_iter=3, polish=False))
    assert r.status == "max_iter"
    assert r.iterations == 3
    assert np.isfinite(r.primal_residual) and np.isfinite(r.dual_residual)


def test_optimal_report_meets_tolerances():
    qp = _random_ineq_qp(5, 25, 7)
    cfg = SolverConfig(polish=False)
    r = solve_qp(qp, cfg)
    assert r.status == "optimal" and not r.polished
    assert r.primal_residual <= cfg.eps_abs + cfg.eps_rel * max(np.abs(qp.G @ r.x).max(), np.abs(qp.h).max())


def test_infeasible_system_detected():
    qp = _qp(np.eye(2), [0.0, 0.0], [[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0])
    assert solve_qp(qp).status == "infeasible-detected"


def test_rank_deficient_equalities_fail_to_factor():
    qp = _qp(np.eye(2), [0.0, 0.0], C=[[1.0, 1.0], [2.0, 2.0]], c=[1.0, 2.0])
    with pytest.raises(FactorizationError):
        solve_qp(qp)


@pytest.mark.parametrize(
    "kwargs", [dict(rho=0.0), dict(eps_abs=0.0), dict(eps_rel=-1.0), dict(max_iter=0), dict(over_relaxation=1.9)]
)
def test_invalid_config_rejected(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_solve_is_deterministic():
    qp = _random_ineq_qp(7, 35, 9)
    r1, r2 = solve_qp(qp), solve_qp(qp)
    np.testing.assert_array_equal(r1.x, r2.x)
    assert r1.iterations == r2.iterations


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 8), M=st.integers(0, 30), seed=st.integers(0, 10**6))
def test_optimal_point_is_feasible_and_beats_feasible_samples(n, M, seed):
    qp = _random_ineq_qp(n, M, seed)
    r = solve_qp(qp)
    assert r.status == "optimal"
    if M:
        tol = 1e-6 * max(1.0, np.abs(qp.h).max()) + 1e-6
        assert np.max(qp.G @ r.x - qp.h) <= tol
    # x = 0 is feasible, so the optimum cannot be worse
    assert r.objective <= qp.objective(np.zeros(n)) + 1e-6 * (1 + abs(r.objective))
