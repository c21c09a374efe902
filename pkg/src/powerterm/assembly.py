"""Per-player constraint/covariance blocks and the stacked equilibrium QP.

Every player ``k`` is described by a :class:`PlayerBlocks`: its equality and
inequality constraints, its (unscaled) covariance block, the exogenous part
of its expected price vector, and two maps from its variables to electricity
volumes.  :func:`assemble_global` stacks the players together with the
price slice of the hypothetical market agent::

    x = [v_1, ..., v_K, p]

    Q = [[diag(lambda_k Q_k + C_k), M^T],      A = [[diag(A_k), 0],
         [M,                        0  ]]           [M,         0]]

where ``M = [M_1 ... M_K]`` maps each player's variables to the contract
volumes it trades.  The last rows of ``A`` are the market-clearing rows;
their multipliers are pinned to zero when the problem is solved.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import (Consumer, ContractGrid, CovarianceModel, ExogenousCurves,
                    MarketInstance, Producer, VariableLayout, discount_factors)
from .qp import QpProblem


@dataclass
class PlayerBlocks:
    player_id: str
    kind: str  # "producer" | "consumer"
    A: sp.csr_matrix
    a: np.ndarray
    B: sp.csr_matrix
    b: np.ndarray
    covariance: sp.csr_matrix  # unscaled Q_k on the player's variables
    risk_aversion: float
    linear: np.ndarray  # discounted exogenous expected prices (plus linear trading costs)
    trade_map: sp.csr_matrix  # player variables -> traded volume on the price slice
    volume_map: sp.csr_matrix  # player variables -> net volume per grid contract
    parts: dict  # local slices, e.g. {"V": slice, "F": slice, ...}
    eq_labels: list
    ineq_labels: list
    cost_hessian: Optional[sp.csr_matrix] = None
    split: Optional[np.ndarray] = None  # price-slice indices traded as V+ - V-

    @property
    def dim(self) -> int:
        return self.linear.size

    @property
    def hessian(self) -> sp.csr_matrix:
        H = self.risk_aversion * self.covariance
        if self.cost_hessian is not None:
            H = H + self.cost_hessian
        return H.tocsr()

    def expected_prices(self, price_slice) -> np.ndarray:
        """The player's full expected price vector given the market prices."""
        return self.linear + self.trade_map.T @ np.asarray(price_slice, dtype=float)

    def problem(self, price_slice) -> QpProblem:
        """The player's own optimisation problem at fixed prices."""
        return QpProblem(self.hessian, self.expected_prices(price_slice),
                         self.A, self.a, self.B, self.b)


def _rows(entries, n_rows, n_cols):
    """Build a CSR matrix from ``(row, col, value)`` triples."""
    if not entries:
        return sp.csr_matrix((n_rows, n_cols))
    r, c, v = zip(*entries)
    return sp.csr_matrix((v, (r, c)), shape=(n_rows, n_cols))


def _extended_covariance(cov: CovarianceModel, n_w: int) -> sp.csr_matrix:
    core = sp.csr_matrix(cov.stacked())
    if n_w == 0:
        return core
    return sp.block_diag([core, sp.csr_matrix((n_w, n_w))], format="csr")


def producer_blocks(producer: Producer, grid: ContractGrid, fuels, curves: ExogenousCurves,
                    covariance: CovarianceModel, trade_bound: float) -> PlayerBlocks:
    fuels = list(fuels)
    for plant in producer.plants:
        if plant.fuel not in fuels:
            raise ValueError(f"producer {producer.id}: plant fuel {plant.fuel!r} is not traded")
    n, J, L = grid.flat_size, grid.n_deliveries, len(fuels)
    plants = producer.plants_by_fuel(fuels)
    R = len(plants)
    oV, oF, oO, oW = 0, n, n + n * L, 2 * n + n * L
    dim = oW + R * J
    disc = discount_factors(grid, curves.interest_rate)
    dslices = [grid.delivery_slice(j) for j in range(J)]

    def w(j, r):
        return oW + j * R + r

    eq, eq_labels = [], []
    row = 0
    for j in range(J):  # sum_i V(t_i, T_j) + sum_r W_r(T_j) = 0
        eq += [(row, oV + k, 1.0) for k in range(dslices[j].start, dslices[j].stop)]
        eq += [(row, w(j, r), 1.0) for r in range(R)]
        eq_labels.append(f"balance[{j}]")
        row += 1
    for l, fuel in enumerate(fuels):  # sum_r c_r W_r(T_j) - sum_i F_l(t_i, T_j) = 0
        for j in range(J):
            eq += [(row, w(j, r), p.efficiency) for r, p in enumerate(plants) if p.fuel == fuel]
            eq += [(row, oF + l * n + k, -1.0) for k in range(dslices[j].start, dslices[j].stop)]
            eq_labels.append(f"fuel_cover[{fuel},{j}]")
            row += 1
    # sum_j sum_r g_r W_r(T_j) - sum O = 0
    eq += [(row, w(j, r), p.emission_intensity) for j in range(J) for r, p in enumerate(plants)]
    eq += [(row, oO + k, -1.0) for k in range(n)]
    eq_labels.append("emissions")
    row += 1
    A = _rows(eq, row, dim)

    ineq, rhs, ineq_labels = [], [], []
    row = 0
    for r, p in enumerate(plants):
        tag = p.name or str(r)
        for j in range(J - 1):
            ineq += [(row, w(j + 1, r), 1.0), (row, w(j, r), -1.0)]
            rhs.append(p.ramp_up)
            ineq += [(row + 1, w(j + 1, r), -1.0), (row + 1, w(j, r), 1.0)]
            rhs.append(-p.ramp_down)
            ineq_labels += [f"ramp_up[{tag},{j}]", f"ramp_down[{tag},{j}]"]
            row += 2
    for j in range(J):
        for r, p in enumerate(plants):
            tag = p.name or str(r)
            ineq += [(row, w(j, r), -1.0), (row + 1, w(j, r), 1.0)]
            rhs += [0.0, p.capacity_max]
            ineq_labels += [f"capacity_min[{tag},{j}]", f"capacity_max[{tag},{j}]"]
            row += 2
    for k in range(n):
        ineq += [(row, oV + k, 1.0), (row + 1, oV + k, -1.0)]
        rhs += [trade_bound, trade_bound]
        ineq_labels += [f"trade_bound[{k}]", f"trade_bound[{k}]"]
        row += 2
    B = _rows(ineq, row, dim)

    linear = np.zeros(dim)
    for l, fuel in enumerate(fuels):
        linear[oF + l * n:oF + (l + 1) * n] = disc * np.asarray(curves.fuel_prices[fuel], dtype=float)
    linear[oO:oO + n] = disc * np.asarray(curves.emission_prices, dtype=float)

    select = sp.hstack([sp.identity(n), sp.csr_matrix((n, dim - n))]).tocsr()
    return PlayerBlocks(
        player_id=producer.id, kind="producer",
        A=A, a=np.zeros(A.shape[0]), B=B, b=np.asarray(rhs, dtype=float),
        covariance=_extended_covariance(covariance, R * J),
        risk_aversion=producer.risk_aversion, linear=linear,
        trade_map=select, volume_map=select.copy(),
        parts={"V": slice(oV, oF), "F": slice(oF, oO), "O": slice(oO, oW), "W": slice(oW, dim)},
        eq_labels=eq_labels, ineq_labels=ineq_labels,
    )


def consumer_blocks(consumer: Consumer, grid: ContractGrid, curves: ExogenousCurves,
                    covariance: CovarianceModel, trade_bound: float) -> PlayerBlocks:
    n, J = grid.flat_size, grid.n_deliveries
    A = _rows([(j, k, 1.0) for j in range(J)
               for k in range(grid.delivery_slice(j).start, grid.delivery_slice(j).stop)], J, n)
    a = consumer.demand_share * np.asarray(curves.demand, dtype=float)
    B = sp.vstack([sp.identity(n), -sp.identity(n)]).tocsr()
    b = np.full(2 * n, float(trade_bound))
    ineq_labels = [f"trade_bound[{k}]" for k in range(n)] * 2
    return PlayerBlocks(
        player_id=consumer.id, kind="consumer",
        A=A, a=a, B=B, b=b,
        covariance=sp.csr_matrix(np.asarray(covariance.q1, dtype=float)),
        risk_aversion=consumer.risk_aversion, linear=np.zeros(n),
        trade_map=sp.identity(n, format="csr"), volume_map=sp.identity(n, format="csr"),
        parts={"V": slice(0, n)},
        eq_labels=[f"demand[{j}]" for j in range(J)], ineq_labels=ineq_labels,
    )


def market_blocks(market: MarketInstance):
    """Player blocks after block-contract merging and trading costs.

    Returns ``(blocks, price_map)`` where ``price_map`` (N x N') expands the
    price slice to discounted prices of every grid contract.
    """
    from . import extensions

    grid, curves, cov = market.grid, market.curves, market.covariance
    blocks = [producer_blocks(p, grid, market.fuels, curves, cov, market.trade_bound)
              for p in market.producers]
    blocks += [consumer_blocks(c, grid, curves, cov, market.trade_bound) for c in market.consumers]
    n = grid.flat_size
    disc = discount_factors(grid, curves.interest_rate)
    S = sp.identity(n, format="csr")
    price_map = sp.identity(n, format="csr")
    if market.blocks:
        S, price_map = extensions.block_substitution(grid, market.blocks, disc)
        blocks = [extensions.merge_player_blocks(blk, S, price_map) for blk in blocks]
    if market.cost_spec is not None:
        eps = S.T @ (disc * np.asarray(market.cost_spec.epsilon, dtype=float))
        ups = S.T @ (disc * np.asarray(market.cost_spec.upsilon, dtype=float))
        blocks = [extensions.add_trading_costs(blk, eps, ups) for blk in blocks]
    return blocks, price_map


@dataclass
class AssembledQP:
    Q: sp.csr_matrix
    pi: np.ndarray
    A: sp.csr_matrix
    a: np.ndarray
    B: sp.csr_matrix
    b: np.ndarray
    layout: VariableLayout
    blocks: list
    eq_rows: dict  # player id -> slice of rows in A
    ineq_rows: dict  # player id -> slice of rows in B
    clearing_rows: range
    price_map: sp.csr_matrix  # price slice -> discounted grid prices
    discount: np.ndarray

    def problem(self) -> QpProblem:
        return QpProblem(self.Q, self.pi, self.A, self.a, self.B, self.b,
                         pinned=tuple(self.clearing_rows))

    def block(self, player_id: str) -> PlayerBlocks:
        for blk in self.blocks:
            if blk.player_id == player_id:
                return blk
        raise KeyError(player_id)

    def clearing_matrix(self) -> sp.csr_matrix:
        return self.A[self.clearing_rows.start:self.clearing_rows.stop]

    def project_clearing(self, X):
        """Project columns of ``X`` onto the null space of the clearing rows."""
        C = self.clearing_matrix().tocsc()
        G = (C @ C.T).tocsc()
        from scipy.sparse.linalg import splu
        lu = splu(G)
        X = np.asarray(X, dtype=float)
        return X - C.T @ lu.solve(np.asarray(C @ X))

    def prices_from_slice(self, price_slice) -> np.ndarray:
        """Undiscounted expected price of every grid contract."""
        return (self.price_map @ price_slice) / self.discount

    def slice_from_prices(self, prices) -> np.ndarray:
        """Inverse of :meth:`prices_from_slice` (takes representatives of merged contracts)."""
        P = self.price_map.tocsc()
        disc_prices = np.asarray(prices, dtype=float) * self.discount
        out = np.empty(P.shape[1])
        for col in range(P.shape[1]):
            lo, hi = P.indptr[col], P.indptr[col + 1]
            k = P.indices[lo]
            out[col] = disc_prices[k] / P.data[lo]
        return out


def assemble_global(market: MarketInstance) -> AssembledQP:
    blocks, price_map = market_blocks(market)
    n_price = price_map.shape[1]
    players, parts = [], {}
    eq_rows, ineq_rows = {}, {}
    offset = eq_off = in_off = 0
    for blk in blocks:
        if blk.trade_map.shape != (n_price, blk.dim):
            raise ValueError(f"player {blk.player_id}: trade map has shape {blk.trade_map.shape}")
        sl = slice(offset, offset + blk.dim)
        players.append((blk.player_id, blk.kind, sl))
        parts[blk.player_id] = {k: slice(offset + v.start, offset + v.stop) for k, v in blk.parts.items()}
        eq_rows[blk.player_id] = slice(eq_off, eq_off + blk.A.shape[0])
        ineq_rows[blk.player_id] = slice(in_off, in_off + blk.B.shape[0])
        offset += blk.dim
        eq_off += blk.A.shape[0]
        in_off += blk.B.shape[0]
    n_v = offset
    size = n_v + n_price
    layout = VariableLayout(tuple(players), parts, slice(n_v, size), size)

    M = sp.hstack([blk.trade_map for blk in blocks]).tocsr()
    H = sp.block_diag([blk.hessian for blk in blocks], format="csr")
    Q = sp.bmat([[H, M.T], [M, sp.csr_matrix((n_price, n_price))]], format="csr")
    A = sp.bmat([[sp.block_diag([blk.A for blk in blocks]), None],
                 [M, sp.csr_matrix((n_price, n_price))]], format="csr")
    a = np.concatenate([blk.a for blk in blocks] + [np.zeros(n_price)])
    B = sp.hstack([sp.block_diag([blk.B for blk in blocks]),
                   sp.csr_matrix((in_off, n_price))]).tocsr()
    b = np.concatenate([blk.b for blk in blocks])
    pi = np.concatenate([blk.linear for blk in blocks] + [np.zeros(n_price)])
    return AssembledQP(Q=Q, pi=pi, A=A, a=a, B=B, b=b, layout=layout, blocks=blocks,
                       eq_rows=eq_rows, ineq_rows=ineq_rows,
                       clearing_rows=range(eq_off, eq_off + n_price),
                       price_map=price_map.tocsr(),
                       discount=discount_factors(market.grid, market.curves.interest_rate))
