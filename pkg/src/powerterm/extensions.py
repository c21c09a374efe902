"""Market-realism layers: futures ladders, block contracts and trading costs.

Block contracts and trading costs are variable substitutions applied to each
player's blocks before the global problem is stacked, so the result is still
a QP of the same form.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .assembly import PlayerBlocks
from .model import ContractGrid, MarketInstance


@dataclass(frozen=True)
class TransactionCostSpec:
    """Per-contract trading costs ``epsilon |V| + upsilon V^2`` (flat grid order)."""
    epsilon: np.ndarray
    upsilon: np.ndarray

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=float)
        ups = np.asarray(self.upsilon, dtype=float)
        if eps.shape != ups.shape or eps.ndim != 1:
            raise ValueError("epsilon and upsilon must be 1-d arrays of equal length")
        if np.any(eps < 0) or np.any(ups < 0):
            raise ValueError("trading costs must be non-negative")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "upsilon", ups)

    @classmethod
    def uniform(cls, n: int, epsilon: float = 0.0, upsilon: float = 0.0) -> "TransactionCostSpec":
        return cls(np.full(n, float(epsilon)), np.full(n, float(upsilon)))


@dataclass(frozen=True)
class BlockContract:
    """One contract delivering in every period of ``deliveries``, tradable at
    each of ``trading_times`` (each must be a trading time of every covered
    delivery)."""
    deliveries: tuple
    trading_times: tuple


def _covered(grid: ContractGrid, block: BlockContract) -> list[list[int]]:
    if not block.deliveries:
        raise ValueError("block contract covers no delivery")
    groups = []
    for t in block.trading_times:
        group = []
        for j in block.deliveries:
            if not 0 <= j < grid.n_deliveries:
                raise ValueError(f"delivery index {j} out of range")
            ladder = list(grid.trading_times[j])
            if t not in ladder:
                raise ValueError(f"trading time {t} is not available for delivery {j}")
            group.append(grid.flat(j, ladder.index(t)))
        groups.append(sorted(group))
    return groups


def block_substitution(grid: ContractGrid, blocks: Sequence[BlockContract], discount):
    """Volume map ``S`` (N x N') and discounted price map ``P`` (N x N').

    Merged contracts share one volume variable and one undiscounted price, so
    ``P[k, col] = discount[k] / discount[rep]`` with ``rep`` the first
    contract of the group.
    """
    n = grid.flat_size
    owner = {}
    for g, block in enumerate(blocks):
        for group in _covered(grid, block):
            for k in group:
                if k in owner:
                    raise ValueError(f"contract {grid.unflat(k)} is covered by more than one block")
                owner[k] = (g, group[0])
    col_of, cols, col = {}, [], np.empty(n, dtype=int)
    for k in range(n):
        key = owner[k][1] if k in owner else k  # representative contract
        if key not in col_of:
            col_of[key] = len(cols)
            cols.append(k)
        col[k] = col_of[key]
    rep = np.asarray(cols)
    n_cols = len(cols)
    discount = np.asarray(discount, dtype=float)
    S = sp.csr_matrix((np.ones(n), (np.arange(n), col)), shape=(n, n_cols))
    P = sp.csr_matrix((discount / discount[rep[col]], (np.arange(n), col)), shape=(n, n_cols))
    return S, P


def _dedupe_rows(B: sp.csr_matrix, b: np.ndarray, labels: list):
    B = B.tocsr()
    B.sum_duplicates()
    B.eliminate_zeros()
    seen, keep = set(), []
    for r in range(B.shape[0]):
        lo, hi = B.indptr[r], B.indptr[r + 1]
        key = (tuple(B.indices[lo:hi]), tuple(np.round(B.data[lo:hi], 15)), b[r])
        if lo == hi and b[r] >= 0:
            continue  # 0 <= b is vacuous
        if key not in seen:
            seen.add(key)
            keep.append(r)
    return B[keep], b[keep], [labels[r] for r in keep]


def merge_player_blocks(blk: PlayerBlocks, S: sp.csr_matrix, P: sp.csr_matrix) -> PlayerBlocks:
    """Substitute merged contract variables into a player's blocks."""
    n, n_new = S.shape
    V = blk.parts["V"]
    if V != slice(0, n):
        raise ValueError("block merging must happen before trading costs are added")
    rest = blk.dim - n
    T = sp.block_diag([S, sp.identity(rest)], format="csr") if rest else S.tocsr()
    B, b, labels = _dedupe_rows(blk.B @ T, blk.b, blk.ineq_labels)
    shift = n_new - n
    parts = {k: (slice(0, n_new) if k == "V" else slice(v.start + shift, v.stop + shift))
             for k, v in blk.parts.items()}
    return replace(
        blk,
        A=(blk.A @ T).tocsr(), B=B, b=b, ineq_labels=labels,
        covariance=(T.T @ blk.covariance @ T).tocsr(),
        cost_hessian=None if blk.cost_hessian is None else (T.T @ blk.cost_hessian @ T).tocsr(),
        linear=T.T @ blk.linear,
        trade_map=(P.T @ blk.trade_map @ T).tocsr(),
        volume_map=(blk.volume_map @ T).tocsr(),
        parts=parts,
    )


def add_trading_costs(blk: PlayerBlocks, epsilon, upsilon) -> PlayerBlocks:
    """Charge ``epsilon |V| + upsilon V^2`` on every traded contract.

    Contracts with ``epsilon > 0`` are split as ``V = V+ - V-`` with both
    parts non-negative; the original variable becomes ``V+`` and ``V-`` is
    appended at the end of the player's vector.  Costs enter the expected
    utility only.
    """
    epsilon = np.asarray(epsilon, dtype=float)
    upsilon = np.asarray(upsilon, dtype=float)
    V = blk.parts["V"]
    n = V.stop - V.start
    if epsilon.shape != (n,) or upsilon.shape != (n,):
        raise ValueError(f"cost arrays must have length {n}")
    if np.any(epsilon < 0) or np.any(upsilon < 0):
        raise ValueError("trading costs must be non-negative")
    dim = blk.dim
    vpos = np.arange(V.start, V.stop)
    split = np.flatnonzero(epsilon > 0)
    m = split.size

    quad = sp.csr_matrix((2.0 * upsilon, (vpos, vpos)), shape=(dim, dim))
    C = quad if blk.cost_hessian is None else blk.cost_hessian + quad
    E = sp.csr_matrix((np.ones(m), (vpos[split], np.arange(m))), shape=(dim, m))
    T = sp.hstack([sp.identity(dim), -E]).tocsr()

    linear = T.T @ blk.linear
    linear[vpos[split]] += epsilon[split]
    linear[dim + np.arange(m)] += epsilon[split]

    sign_rows = sp.csr_matrix((-np.ones(2 * m), (np.arange(2 * m),
                               np.concatenate([vpos[split], dim + np.arange(m)]))),
                              shape=(2 * m, dim + m))
    B = sp.vstack([blk.B @ T, sign_rows]).tocsr()
    b = np.concatenate([blk.b, np.zeros(2 * m)])
    labels = blk.ineq_labels + [f"buy_part[{k}]" for k in split] + [f"sell_part[{k}]" for k in split]
    parts = dict(blk.parts)
    if m:
        parts["V_minus"] = slice(dim, dim + m)
    return replace(
        blk,
        A=(blk.A @ T).tocsr(), B=B, b=b, ineq_labels=labels,
        covariance=(T.T @ blk.covariance @ T).tocsr(),
        cost_hessian=(T.T @ C @ T).tocsr(),
        linear=linear,
        trade_map=(blk.trade_map @ T).tocsr(),
        volume_map=(blk.volume_map @ T).tocsr(),
        parts=parts,
        split=split,
    )


def apply_transaction_costs(market: MarketInstance, spec: TransactionCostSpec) -> MarketInstance:
    n = market.grid.flat_size
    if spec.epsilon.shape != (n,):
        raise ValueError(f"cost spec has {spec.epsilon.size} entries, grid has {n} contracts")
    return replace(market, cost_spec=spec)


def apply_block_contracts(market: MarketInstance, blocks: Sequence[BlockContract]) -> MarketInstance:
    """Attach block contracts to a market; merging happens at assembly time."""
    blocks = tuple(blocks)
    # raises on unknown trading times or overlapping blocks
    block_substitution(market.grid, market.blocks + blocks, np.ones(market.grid.flat_size))
    return replace(market, blocks=market.blocks + blocks)


def _weights(trading_times, rate):
    t = np.asarray(trading_times, dtype=float)
    return np.exp(-rate * t) / np.exp(-rate * t[-1])


def forwards_from_futures(futures, trading_times, rate: float) -> np.ndarray:
    """Expected forward prices implied by a futures ladder.

    ``trading_times`` ends at the delivery time.  The terminal forward equals
    the terminal future; earlier forwards add the futures increments, each
    compounded from its margining time to delivery.  With ``rate == 0`` every
    forward equals the terminal future.
    """
    f = np.asarray(futures, dtype=float)
    if f.shape != np.shape(trading_times) or f.size == 0:
        raise ValueError("futures ladder and trading times must have the same non-zero length")
    w = _weights(trading_times, rate)
    incr = np.diff(f) * w[1:]
    tail = np.concatenate([np.cumsum(incr[::-1])[::-1], [0.0]])
    return f + tail


def futures_from_forwards(forwards, trading_times, rate: float, atol: float = 1e-9) -> np.ndarray:
    """Back-substitute a forward ladder into a futures ladder.

    The map from futures to forwards is singular wherever a compounding
    weight equals one (always for the last step before delivery, and for
    every step when ``rate == 0``): those futures increments do not show up
    in any forward.  They are set to zero, which requires the corresponding
    forwards to coincide; a ``ValueError`` is raised otherwise.
    """
    fw = np.asarray(forwards, dtype=float)
    if fw.shape != np.shape(trading_times) or fw.size == 0:
        raise ValueError("forward ladder and trading times must have the same non-zero length")
    w = _weights(trading_times, rate)
    fut = np.empty_like(fw)
    fut[-1] = fw[-1]
    tol = atol * (1.0 + np.abs(fw).max())
    for i in range(fw.size - 2, -1, -1):
        denom = 1.0 - w[i + 1]
        step = fw[i] - fw[i + 1]
        if abs(denom) < 1e-14:
            if abs(step) > tol:
                raise ValueError(
                    f"forward ladder is not attainable: entries {i} and {i + 1} must coincide")
            fut[i] = fut[i + 1]
        else:
            fut[i] = fut[i + 1] + step / denom
    return fut
