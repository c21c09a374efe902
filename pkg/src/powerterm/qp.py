"""Convex quadratic programming with pinned equality multipliers.

Problems have the form::

    max  -pi^T x - 1/2 x^T Q x
    s.t.  A x = a         (multipliers mu)
          B x <= b        (multipliers eta >= 0)
          mu[pinned] = 0

and are solved through their stationarity system
``pi + Q x + A^T mu + B^T eta = 0`` by a primal-dual interior-point method
with Mehrotra's predictor-corrector.  Pinned multipliers are eliminated from
the Newton system, so the rows they belong to must be implied by the
remaining stationarity conditions (this is the case for the market-clearing
rows of the equilibrium problem, whose price-slice stationarity *is* the
clearing condition).  ``Q`` only needs to be positive semidefinite on the
feasible subspace.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

log = logging.getLogger(__name__)

DENSE_LIMIT = 400


def _as_csr(M, n_cols):
    if M is None:
        return sp.csr_matrix((0, n_cols))
    if sp.issparse(M):
        return M.tocsr().astype(float)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return sp.csr_matrix((0, n_cols))
    return sp.csr_matrix(M)


def _vec(v, n):
    if v is None:
        return np.zeros(n)
    return np.asarray(v, dtype=float).reshape(n)


@dataclass
class QpProblem:
    Q: object
    pi: np.ndarray
    A: object = None
    a: np.ndarray = None
    B: object = None
    b: np.ndarray = None
    pinned: tuple = ()

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float).ravel()
        n = self.pi.size
        self.Q = _as_csr(self.Q, n)
        if self.Q.shape != (n, n):
            raise ValueError(f"Q has shape {self.Q.shape}, expected {(n, n)}")
        self.A = _as_csr(self.A, n)
        self.B = _as_csr(self.B, n)
        if self.A.shape[1] != n or self.B.shape[1] != n:
            raise ValueError("constraint matrices do not match the number of variables")
        self.a = _vec(self.a, self.A.shape[0])
        self.b = _vec(self.b, self.B.shape[0])
        self.pinned = tuple(sorted(int(k) for k in self.pinned))
        if any(not 0 <= k < self.A.shape[0] for k in self.pinned):
            raise ValueError("pinned rows must index rows of A")

    @property
    def n(self) -> int:
        return self.pi.size

    def objective(self, x) -> float:
        """Value of ``-pi^T x - 1/2 x^T Q x``."""
        return float(-self.pi @ x - 0.5 * x @ (self.Q @ x))

    def scale(self) -> float:
        def inf(v):
            return float(np.abs(v).max()) if v.size else 0.0
        return 1.0 + inf(self.b) + inf(self.pi) + inf(self.a)


@dataclass
class KktReport:
    stationarity: float
    complementarity: float
    primal_eq: float
    primal_ineq: float
    dual_feas: float  # min(eta), reported raw
    pinned: float

    def worst(self) -> float:
        return max(self.stationarity, self.complementarity, self.primal_eq,
                   self.primal_ineq, max(-self.dual_feas, 0.0), self.pinned)

    def passes(self, tol: float) -> bool:
        return self.worst() <= tol

    def as_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "complementarity": self.complementarity,
            "primal_eq": self.primal_eq,
            "primal_ineq": self.primal_ineq,
            "dual_feas": self.dual_feas,
            "pinned": self.pinned,
        }


@dataclass
class QpSolution:
    x: np.ndarray
    mu: np.ndarray
    eta: np.ndarray
    status: str  # optimal | infeasible | max_iter
    iterations: int
    kkt: KktReport
    objective: float = float("nan")
    margin: float = float("nan")  # phase-1 strict-feasibility margin, if computed
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def kkt_residuals(problem: QpProblem, x, mu, eta) -> KktReport:
    x = np.asarray(x, dtype=float)
    mu = _vec(mu, problem.A.shape[0])
    eta = _vec(eta, problem.B.shape[0])
    station = -problem.pi - problem.Q @ x - problem.B.T @ eta - problem.A.T @ mu
    slack = problem.B @ x - problem.b
    eq = problem.A @ x - problem.a

    def inf(v):
        return float(np.abs(v).max()) if v.size else 0.0

    return KktReport(
        stationarity=inf(station),
        complementarity=inf(eta * slack),
        primal_eq=inf(eq),
        primal_ineq=float(max(slack.max(), 0.0)) if slack.size else 0.0,
        dual_feas=float(eta.min()) if eta.size else 0.0,
        pinned=inf(mu[list(problem.pinned)]) if problem.pinned else 0.0,
    )


def phase1_feasible(A, a, B, b):
    """Find a point minimising the largest inequality violation.

    Solves ``min t  s.t.  A x = a,  B x - t <= b`` and returns ``(x, t)``.
    A negative ``t`` certifies a strictly feasible point.  Raises
    ``ValueError`` if the equalities are inconsistent.
    """
    a = np.asarray(a, dtype=float).ravel() if a is not None else np.zeros(0)
    b = np.asarray(b, dtype=float).ravel() if b is not None else np.zeros(0)
    n = None
    for M in (A, B):
        if M is not None and np.ndim(M) == 2:
            n = M.shape[1]
    if n is None:
        raise ValueError("cannot infer the number of variables")
    A = _as_csr(A, n)
    B = _as_csr(B, n)
    a = _vec(a, A.shape[0])
    b = _vec(b, B.shape[0])

    if B.shape[0] == 0:
        if A.shape[0] == 0:
            return np.zeros(n), -np.inf
        x = spla.lsqr(A, a, atol=1e-14, btol=1e-14)[0]
        if np.abs(A @ x - a).max() > 1e-8 * (1 + np.abs(a).max()):
            raise ValueError("equality constraints are inconsistent")
        return x, -np.inf

    floor = -1e6 * (1.0 + np.abs(b).max())
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = sp.hstack([B, -np.ones((B.shape[0], 1))]).tocsr()
    A_eq = sp.hstack([A, sp.csr_matrix((A.shape[0], 1))]).tocsr() if A.shape[0] else None
    bounds = [(None, None)] * n + [(floor, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b, A_eq=A_eq, b_eq=a if A.shape[0] else None,
                  bounds=bounds, method="highs")
    if res.status == 2:
        raise ValueError("equality constraints are inconsistent")
    if res.status != 0:
        raise RuntimeError(f"phase-1 LP failed: {res.message}")
    x = res.x[:n]
    slack = B @ x - b
    return x, float(slack.max())


class _Factor:
    """LU of a (regularised) saddle-point matrix plus iterative refinement
    against the unregularised one."""

    def __init__(self, K_true, K_reg):
        self.K_true = K_true
        self.dense = K_reg.shape[0] <= DENSE_LIMIT
        if self.dense:
            self.lu = la.lu_factor(K_reg.toarray(), check_finite=False)
        else:
            self.lu = spla.splu(K_reg.tocsc(), permc_spec="COLAMD")

    def _solve(self, r):
        if self.dense:
            return la.lu_solve(self.lu, r, check_finite=False)
        return self.lu.solve(r)

    def solve(self, rhs, refine=3):
        d = self._solve(rhs)
        best, best_res = d, np.abs(rhs - self.K_true @ d).max()
        for _ in range(refine):
            d = d + self._solve(rhs - self.K_true @ d)
            res = np.abs(rhs - self.K_true @ d).max()
            if not np.isfinite(res) or res >= best_res:
                break
            best, best_res = d, res
        return best


def _kkt_matrix(Q, Af, B, D, delta):
    n, mf = Q.shape[0], Af.shape[0]
    H = Q + (B.T @ sp.diags(D) @ B if B.shape[0] else sp.csr_matrix((n, n)))
    K = sp.bmat([[H, Af.T], [Af, None]], format="csr") if mf else H.tocsr()
    if delta > 0:
        reg = sp.diags(np.concatenate([np.full(n, delta), np.full(mf, -delta)]))
        return K, (K + reg).tocsr()
    return K, K


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_dual_form(problem: QpProblem, tol: float = 1e-8, max_iter: int = 200,
                    check_feasibility: bool = True, regularization: float = 1e-9,
                    polish: bool = True) -> QpSolution:
    """Solve the QP and return primal point, multipliers and a KKT report.

    Residuals are judged relative to ``1 + |b|_inf + |pi|_inf + |a|_inf``.
    With ``check_feasibility`` a phase-1 LP first checks that a strictly
    feasible point exists; if none does the solution has status
    ``"infeasible"`` and carries the phase-1 point.  ``polish`` finishes
    with one exact solve on the identified active set.
    """
    P = problem
    n, m_eq, m_in = P.n, P.A.shape[0], P.B.shape[0]
    scale = P.scale()
    free = np.setdiff1d(np.arange(m_eq), np.asarray(P.pinned, dtype=int))
    Af, af = P.A[free], P.a[free]
    mf = free.size
    Q, B, b, pi = P.Q, P.B, P.b, P.pi

    margin = float("nan")
    if check_feasibility and (m_in or m_eq):
        try:
            x1, margin = phase1_feasible(P.A, P.a, B, b)
        except ValueError as exc:
            x1, margin = np.zeros(n), np.inf
            msg = str(exc)
        else:
            msg = f"no strictly feasible point (phase-1 margin {margin:.6g})"
        if not margin < 0:
            mu0, eta0 = np.zeros(m_eq), np.zeros(m_in)
            return QpSolution(x1, mu0, eta0, "infeasible", 0, kkt_residuals(P, x1, mu0, eta0),
                              P.objective(x1), margin, msg)

    qnorm = float(np.abs(Q.data).max()) if Q.nnz else 0.0
    delta = regularization * max(qnorm, 1.0)

    def pack(x, mu_f):
        mu = np.zeros(m_eq)
        mu[free] = mu_f
        return mu

    if m_in == 0:
        K, Kr = _kkt_matrix(Q, Af, B, np.zeros(0), delta)
        fac = _Factor(K, Kr)
        sol = fac.solve(np.concatenate([-pi, af]), refine=10)
        x, mu = sol[:n], pack(None, sol[n:])
        eta = np.zeros(0)
        rep = kkt_residuals(P, x, mu, eta)
        status = "optimal" if rep.passes(tol * scale) else "max_iter"
        return QpSolution(x, mu, eta, status, 1, rep, P.objective(x), margin)

    # Starting point: least-squares fit of the slacks, then shift into the interior.
    K, Kr = _kkt_matrix(Q, Af, B, np.ones(m_in), delta)
    fac = _Factor(K, Kr)
    sol = fac.solve(np.concatenate([-pi + B.T @ b, af]))
    x = sol[:n]
    s = b - B @ x
    sol = fac.solve(np.concatenate([-pi, np.zeros(mf)]))
    eta = B @ sol[:n]
    mu_f = sol[n:]
    ap = -s.min()
    if ap >= -1e-8 * scale:
        s = s + 1.0 + ap
    ad = -eta.min()
    if ad >= -1e-8 * scale:
        eta = eta + 1.0 + ad

    best = None
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        mu = pack(None, mu_f)
        rep = kkt_residuals(P, x, mu, eta)
        if best is None or rep.worst() < best[0].worst():
            best = (rep, x.copy(), mu.copy(), eta.copy())
        if rep.passes(tol * scale):
            status = "optimal"
            break

        rd = Q @ x + pi + (Af.T @ mu_f if mf else 0.0) + B.T @ eta
        rp = Af @ x - af
        ri = B @ x + s - b
        gap = float(s @ eta) / m_in
        D = eta / s

        K, Kr = _kkt_matrix(Q, Af, B, D, delta)
        try:
            fac = _Factor(K, Kr)
        except RuntimeError as exc:  # singular factorisation
            log.warning("KKT factorisation failed at iteration %d: %s", it, exc)
            break

        def direction(rc):
            w = (-rc + eta * ri) / s
            rhs = np.concatenate([-rd - B.T @ w, -rp])
            d = fac.solve(rhs)
            dx = d[:n]
            deta = D * (B @ dx) + w
            ds = -ri - B @ dx
            return dx, d[n:], deta, ds

        # predictor
        dx, dmu, deta, ds = direction(eta * s)
        alpha = min(_max_step(s, ds), _max_step(eta, deta))
        gap_aff = float((s + alpha * ds) @ (eta + alpha * deta)) / m_in
        sigma = (gap_aff / gap) ** 3 if gap > 0 else 0.0
        # corrector
        dx, dmu, deta, ds = direction(eta * s + ds * deta - sigma * gap)
        alpha = min(1.0, 0.995 * min(_max_step(s, ds), _max_step(eta, deta)))

        x = x + alpha * dx
        mu_f = mu_f + alpha * dmu
        eta = eta + alpha * deta
        s = s + alpha * ds
        # keep strictly positive in the face of roundoff
        s = np.maximum(s, 1e-300)
        eta = np.maximum(eta, 1e-300)

    rep, x, mu, eta = best if status != "optimal" else (rep, x, pack(None, mu_f), eta)
    if polish:
        x, mu, eta, rep = _polish(P, free, x, mu, eta, rep, delta)
        if status != "optimal" and rep.passes(tol * scale):
            status = "optimal"
    return QpSolution(x, mu, eta, status, it, rep, P.objective(x), margin)


def _polish(P: QpProblem, free, x, mu, eta, rep, delta):
    """Re-solve the KKT system with the guessed active set held as equalities.

    Interior-point iterates stall a few digits short of machine precision when
    the Hessian is small.  Fixing the active set turns the KKT conditions into
    one linear system; the result is kept only if it stays dual and primal
    feasible and lowers the worst residual.
    """
    slack = P.b - P.B @ x
    active = np.flatnonzero(eta > slack)
    Af = P.A[free]
    C = sp.vstack([Af, P.B[active]]).tocsr()
    rhs = np.concatenate([-P.pi, P.a[free], P.b[active]])
    n, mc = P.n, C.shape[0]
    K = sp.bmat([[P.Q, C.T], [C, None]], format="csr") if mc else P.Q.tocsr()
    reg = sp.diags(np.concatenate([np.full(n, delta), np.full(mc, -delta)]))
    try:
        sol = _Factor(K, (K + reg).tocsr()).solve(rhs, refine=10)
    except RuntimeError:
        return x, mu, eta, rep
    x_new = sol[:n]
    mu_new = np.zeros(P.A.shape[0])
    mu_new[free] = sol[n:n + free.size]
    eta_new = np.zeros(P.B.shape[0])
    eta_new[active] = sol[n + free.size:]
    if not np.all(np.isfinite(sol)):
        return x, mu, eta, rep
    rep_new = kkt_residuals(P, x_new, mu_new, eta_new)
    if rep_new.worst() < rep.worst():
        return x_new, mu_new, eta_new, rep_new
    return x, mu, eta, rep
