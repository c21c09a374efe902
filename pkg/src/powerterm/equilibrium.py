"""Solve the stacked equilibrium QP and interpret its solution."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .assembly import AssembledQP, PlayerBlocks, assemble_global
from .model import MarketInstance, validate_market
from .qp import KktReport, QpProblem, QpSolution, kkt_residuals, phase1_feasible, solve_dual_form

log = logging.getLogger(__name__)

NULLSPACE_LIMIT = 1500


class MarketError(ValueError):
    """The market definition violates a model invariant."""


class InfeasibleMarketError(MarketError):
    def __init__(self, message, player=None, family=None, margin=None):
        super().__init__(message)
        self.player = player
        self.family = family
        self.margin = margin


class SolverError(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass
class EquilibriumSolution:
    prices: np.ndarray  # undiscounted expected price per grid contract
    price_slice: np.ndarray  # solver's (discounted, merged) price variables
    positions: dict  # player id -> {"V": per-contract net volume, "F", "O", "W", "raw"}
    mu: np.ndarray
    eta: np.ndarray
    utilities: dict  # mean-variance utility with s_c = 0
    retail_utilities: dict  # consumers: utility plus discounted retail revenue
    clearing_residual: float
    kkt: KktReport
    qp: QpSolution
    assembled: AssembledQP
    price_nonunique: Optional[bool] = None

    @property
    def x(self) -> np.ndarray:
        return self.qp.x

    def player_vector(self, player_id: str) -> np.ndarray:
        return self.qp.x[self.assembled.layout.player_slice(player_id)]


@dataclass
class NashReport:
    gaps: dict  # player id -> utility(best response) - utility(equilibrium)
    utilities: dict
    max_gap: float
    clearing_residual: float
    pinned: float
    passed: bool


def player_utility(blocks: PlayerBlocks, v, price_slice) -> float:
    """Mean-variance utility ``-E[pi]^T v - 1/2 v^T H v`` (trading costs included)."""
    v = np.asarray(v, dtype=float)
    return float(-blocks.expected_prices(price_slice) @ v - 0.5 * v @ (blocks.hessian @ v))


def best_response(assembled: AssembledQP, player_id: str, price_slice, tol: float = 1e-10,
                  check_feasibility: bool = True) -> QpSolution:
    """Solve one player's own problem at fixed prices."""
    blk = assembled.block(player_id)
    sol = solve_dual_form(blk.problem(price_slice), tol=tol, check_feasibility=check_feasibility)
    if sol.status == "infeasible":
        raise InfeasibleMarketError(f"player {player_id} has no strictly feasible strategy",
                                    player=player_id, margin=sol.margin)
    return sol


def _family(label: str) -> str:
    return label.split("[", 1)[0]


def _boundary_only(margin: float, a, b, who: str) -> bool:
    scale = 1.0 + max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    if 0 <= margin <= 1e-9 * scale:
        log.warning("%s: constraints are feasible but have no strict interior", who)
        return True
    return False


def check_assumption(assembled: AssembledQP) -> dict:
    """Phase-1 margins for every player and for the joint problem.

    Raises :class:`InfeasibleMarketError` naming the first player (or the
    market as a whole) without a feasible point.  A zero margin (feasible,
    but with an empty interior, e.g. zero demand pinning every plant at
    zero output) only logs a warning: the constraints are linear, so the
    KKT conditions still characterise the equilibrium.
    """
    margins = {}
    for blk in assembled.blocks:
        try:
            x, margin = phase1_feasible(blk.A, blk.a, blk.B, blk.b)
        except ValueError as exc:
            raise InfeasibleMarketError(f"player {blk.player_id}: {exc}", player=blk.player_id,
                                        family="equality") from exc
        margins[blk.player_id] = margin
        if _boundary_only(margin, blk.a, blk.b, blk.player_id):
            continue
        if not margin < 0:
            worst = int(np.argmax(blk.B @ x - blk.b))
            family = _family(blk.ineq_labels[worst])
            raise InfeasibleMarketError(
                f"player {blk.player_id} has no strictly feasible strategy: "
                f"'{family}' constraints violated by {margin:.6g}",
                player=blk.player_id, family=family, margin=margin)
    try:
        x, margin = phase1_feasible(assembled.A, assembled.a, assembled.B, assembled.b)
    except ValueError as exc:
        raise InfeasibleMarketError(f"market clearing is inconsistent: {exc}", family="clearing") from exc
    margins["__market__"] = margin
    if not margin < 0 and not _boundary_only(margin, assembled.a, assembled.b, "market"):
        worst = int(np.argmax(assembled.B @ x - assembled.b))
        owner = next(pid for pid, rows in assembled.ineq_rows.items()
                     if rows.start <= worst < rows.stop)
        blk = assembled.block(owner)
        family = _family(blk.ineq_labels[worst - assembled.ineq_rows[owner].start])
        raise InfeasibleMarketError(
            f"no strictly feasible allocation clears the market: '{family}' constraints of "
            f"player {owner} violated by {margin:.6g}", player=owner, family=family, margin=margin)
    return margins


def price_nonunique(assembled: AssembledQP, sol: QpSolution, threshold: float = 1e-8) -> Optional[bool]:
    """Flag a flat direction of the active-set KKT system that moves prices.

    Returns ``None`` when the problem is too large for a dense null-space
    computation.  A ``True`` flag indicates (does not certify) that the
    equilibrium price may be an interval.
    """
    P = assembled.problem()
    n = P.n
    free = np.setdiff1d(np.arange(P.A.shape[0]), np.asarray(P.pinned, dtype=int))
    slack = P.b - P.B @ sol.x
    active = np.flatnonzero(sol.eta > np.maximum(10 * np.abs(slack), 1e-9 * P.scale()))
    Af = P.A[free]
    Ba = P.B[active]
    m = Af.shape[0] + Ba.shape[0]
    if n + m > NULLSPACE_LIMIT:
        return None
    C = sp.vstack([Af, Ba]).toarray()
    K = np.block([[P.Q.toarray(), C.T], [C, np.zeros((m, m))]])
    U, s, Vt = np.linalg.svd(K)
    scale = max(np.abs(P.Q.data).max() if P.Q.nnz else 1.0, 1.0)
    null = Vt[s <= threshold * scale * max(1.0, s.max() / scale)]
    if null.size == 0:
        return False
    psl = assembled.layout.price
    return bool(np.any(np.linalg.norm(null[:, psl], axis=1) > 1e-6))


def _positions(assembled: AssembledQP, x) -> dict:
    out = {}
    for blk, (pid, kind, sl) in zip(assembled.blocks, assembled.layout.players):
        v = x[sl]
        pos = {"V": blk.volume_map @ v, "raw": v.copy()}
        for name in ("F", "O", "W"):
            if name in blk.parts:
                pos[name] = v[blk.parts[name]].copy()
        if blk.split is not None and blk.split.size:
            Vs = blk.parts["V"]
            plus = v[Vs][blk.split]
            minus = v[blk.parts["V_minus"]]
            pos["V_plus"], pos["V_minus"] = plus, minus
        out[pid] = pos
    return out


def _retail(market: MarketInstance, assembled: AssembledQP) -> dict:
    grid = market.grid
    d_delivery = np.exp(-market.curves.interest_rate * np.asarray(grid.delivery_times))
    demand = np.asarray(market.curves.demand, dtype=float)
    return {c.id: float(c.retail_price * c.demand_share * (d_delivery @ demand))
            for c in market.consumers}


def solve_equilibrium(market: MarketInstance, tol: float = 1e-10, max_iter: int = 200,
                      check_feasibility: bool = True, detect_nonunique: bool = True) -> EquilibriumSolution:
    """Compute the equilibrium expected price term structure of ``market``."""
    problems = validate_market(market)
    if problems:
        raise MarketError("; ".join(problems))
    assembled = assemble_global(market)
    if check_feasibility:
        check_assumption(assembled)
    sol = solve_dual_form(assembled.problem(), tol=tol, max_iter=max_iter, check_feasibility=False)
    if not sol.ok:
        raise SolverError(f"equilibrium solve ended with status {sol.status} after "
                          f"{sol.iterations} iterations (worst KKT residual {sol.kkt.worst():.3g})", sol)

    x = sol.x
    price_slice = x[assembled.layout.price]
    utilities = {blk.player_id: player_utility(blk, x[sl], price_slice)
                 for blk, (_, _, sl) in zip(assembled.blocks, assembled.layout.players)}
    retail = _retail(market, assembled)
    clearing = assembled.clearing_matrix() @ x
    nonunique = price_nonunique(assembled, sol) if detect_nonunique else None
    return EquilibriumSolution(
        prices=assembled.prices_from_slice(price_slice),
        price_slice=price_slice.copy(),
        positions=_positions(assembled, x),
        mu=sol.mu, eta=sol.eta,
        utilities=utilities,
        retail_utilities={cid: utilities[cid] + r for cid, r in retail.items()},
        clearing_residual=float(np.abs(clearing).max()) if clearing.size else 0.0,
        kkt=sol.kkt, qp=sol, assembled=assembled,
        price_nonunique=nonunique,
    )


def player_kkt_residuals(solution: EquilibriumSolution) -> dict:
    """Each player's own KKT residuals at the equilibrium, using the stacked duals."""
    asm = solution.assembled
    x = solution.qp.x
    price_slice = x[asm.layout.price]
    out = {}
    for blk, (pid, _, sl) in zip(asm.blocks, asm.layout.players):
        mu = solution.mu[asm.eq_rows[pid]]
        eta = solution.eta[asm.ineq_rows[pid]]
        out[pid] = kkt_residuals(blk.problem(price_slice), x[sl], mu, eta)
    return out


def verify_nash(solution: EquilibriumSolution, tol: float = 1e-6, clearing_tol: float = 1e-8,
                demand_total: Optional[float] = None) -> NashReport:
    """Best-respond for every player at the equilibrium prices.

    A player's gap is ``utility(best response) - utility(equilibrium)``; the
    equilibrium passes if every gap is at most ``tol * (1 + |utility|)``, the
    market clears to ``clearing_tol * (1 + total demand)`` and the clearing
    multipliers are zero.
    """
    asm = solution.assembled
    price_slice = solution.price_slice
    gaps, utils = {}, {}
    ok = True
    for blk, (pid, _, sl) in zip(asm.blocks, asm.layout.players):
        eq_util = solution.utilities[pid]
        br = best_response(asm, pid, price_slice, check_feasibility=False)
        gap = player_utility(blk, br.x, price_slice) - eq_util
        gaps[pid], utils[pid] = gap, eq_util
        if gap > tol * (1 + abs(eq_util)):
            ok = False
    if demand_total is None:
        demand_total = float(sum(np.abs(blk.a).sum() for blk in asm.blocks if blk.kind == "consumer"))
    pinned = float(np.abs(solution.mu[list(asm.clearing_rows)]).max()) if len(asm.clearing_rows) else 0.0
    clearing_ok = solution.clearing_residual <= clearing_tol * (1 + demand_total)
    return NashReport(gaps=gaps, utilities=utils, max_gap=max(gaps.values()),
                      clearing_residual=solution.clearing_residual, pinned=pinned,
                      passed=ok and clearing_ok and pinned == 0.0)
