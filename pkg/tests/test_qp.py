import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from powerterm.qp import QpProblem, kkt_residuals, phase1_feasible, solve_dual_form


def test_unconstrained_scalar():
    sol = solve_dual_form(QpProblem(np.eye(1), [-1.0]))
    assert sol.ok and np.allclose(sol.x, [1.0])
    assert sol.objective == pytest.approx(0.5)


def test_equality_toy():
    P = QpProblem(np.eye(2), [0.0, 0.0], A=np.array([[1.0, 1.0]]), a=[1.0])
    sol = solve_dual_form(P)
    assert np.allclose(sol.x, [0.5, 0.5], atol=1e-9)
    assert sol.mu[0] == pytest.approx(-0.5, abs=1e-9)
    assert kkt_residuals(P, [0.5, 0.5], [-0.5], []).worst() <= 1e-9


def test_active_inequality():
    P = QpProblem(np.eye(1), [-1.0], B=np.array([[1.0]]), b=[0.0])
    sol = solve_dual_form(P, tol=1e-12)
    assert sol.x[0] == pytest.approx(0.0, abs=1e-8)
    assert sol.eta[0] == pytest.approx(1.0, abs=1e-7)


def test_residuals_respond_to_perturbation():
    P = QpProblem(np.eye(2), [0.0, 0.0], A=np.array([[1.0, 1.0]]), a=[1.0])
    rep = kkt_residuals(P, [0.5 + 1e-3, 0.5], [-0.5], [])
    assert rep.stationarity == pytest.approx(1e-3, rel=1e-6)


def test_negative_multiplier_flagged():
    P = QpProblem(np.eye(1), [-1.0], B=np.array([[1.0]]), b=[0.0])
    assert kkt_residuals(P, [0.0], [], [-1.0]).dual_feas < 0


def test_phase1_box():
    B = np.array([[1.0], [-1.0]])
    x, t = phase1_feasible(None, None, B, [1.0, 1.0])
    assert x[0] == pytest.approx(0.0) and t == pytest.approx(-1.0)


def test_phase1_contradiction():
    x, t = phase1_feasible(np.array([[1.0]]), [5.0], np.array([[1.0]]), [1.0])
    assert t == pytest.approx(4.0)


def test_phase1_consumer_over_bound():
    # 5 trades must sum to 100 with |V| <= 10: the best allocation overshoots by 10
    A = np.ones((1, 5))
    B = np.vstack([np.eye(5), -np.eye(5)])
    _, t = phase1_feasible(A, [100.0], B, np.full(10, 10.0))
    assert t == pytest.approx(10.0)


def test_infeasible_status():
    P = QpProblem(np.eye(1), [0.0], A=np.array([[1.0]]), a=[5.0], B=np.array([[1.0]]), b=[1.0])
    assert solve_dual_form(P).status == "infeasible"


def brute_force(Q, pi, B, b):
    """Exact solution by enumerating active sets (min of -pi'x - x'Qx/2)."""
    n, m = Q.shape[0], B.shape[0]
    best = None
    for k in range(min(n, m) + 1):
        for act in itertools.combinations(range(m), k):
            Ba = B[list(act)]
            K = np.block([[Q, Ba.T], [Ba, np.zeros((k, k))]])
            rhs = np.concatenate([-pi, b[list(act)]])
            try:
                z = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, eta = z[:n], z[n:]
            if np.all(B @ x <= b + 1e-9) and np.all(eta >= -1e-9):
                val = -pi @ x - 0.5 * x @ Q @ x
                if best is None or val < best[0]:
                    best = (val, x)
    return best[1]


def random_convex_qp(rng):
    n = int(rng.integers(1, 9))
    m = int(rng.integers(0, 7))
    X = rng.normal(size=(n, n))
    Q = X @ X.T + 0.1 * np.eye(n)
    pi = rng.normal(size=n) * 3
    B = rng.normal(size=(m, n))
    b = rng.uniform(0.1, 2.0, m)  # x = 0 strictly feasible
    return Q, pi, B, b


def test_oracle_100_random_qps():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        Q, pi, B, b = random_convex_qp(rng)
        sol = solve_dual_form(QpProblem(Q, pi, B=B if len(b) else None, b=b if len(b) else None), tol=1e-12)
        assert sol.ok
        assert np.abs(sol.x - brute_force(Q, pi, B, b)).max() <= 1e-7


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kkt_at_solution(seed):
    rng = np.random.default_rng(seed)
    Q, pi, B, b = random_convex_qp(rng)
    n = Q.shape[0]
    A = rng.normal(size=(1, n))
    P = QpProblem(Q, pi, A=A, a=[0.0], B=B if len(b) else None, b=b if len(b) else None)
    sol = solve_dual_form(P, tol=1e-10)
    assert sol.ok
    assert kkt_residuals(P, sol.x, sol.mu, sol.eta).worst() <= 1e-8 * P.scale()
