"""Domain types for the forward-market equilibrium model.

Conventions used throughout the package:

* Contracts are indexed delivery-major, trading-minor.  ``grid.flat(j, i)``
  gives the position of the contract traded at the ``i``-th trading time of
  delivery ``j``.
* Fuel-indexed vectors are stored fuel-major: ``[fuel_0 (N), fuel_1 (N), ...]``.
  The stacked price vector used by the covariance model is therefore
  ``[elec (N), fuel_0 (N), ..., fuel_{L-1} (N), emissions (N)]``.
* The covariance model describes *discounted* prices.  Expected prices held
  in :class:`ExogenousCurves` are undiscounted; discounting is applied when
  the optimisation problem is assembled.
* No unit conversion happens anywhere.  Power is MWh per delivery period,
  prices are currency per MWh / fuel unit / tonne, and the interest rate must
  be quoted in the reciprocal of whatever unit the times use.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class ContractGrid:
    delivery_times: tuple
    trading_times: tuple  # one tuple of trading times per delivery

    def __post_init__(self):
        deliveries = np.asarray(self.delivery_times, dtype=float)
        if deliveries.ndim != 1 or deliveries.size == 0:
            raise ValueError("at least one delivery time is required")
        if np.any(np.diff(deliveries) <= 0):
            raise ValueError("delivery times must be strictly increasing")
        if len(self.trading_times) != deliveries.size:
            raise ValueError("need one trading-time list per delivery")
        for j, (T, times) in enumerate(zip(deliveries, self.trading_times)):
            if len(times) == 0:
                raise ValueError(f"delivery {j} has no trading times")
            t = np.asarray(times, dtype=float)
            if np.any(np.diff(t) <= 0):
                raise ValueError(f"trading times of delivery {j} are not strictly increasing")
            if t[-1] != T:
                raise ValueError(
                    f"last trading time of delivery {j} ({t[-1]}) must equal its delivery time ({T})")

    @property
    def n_deliveries(self) -> int:
        return len(self.delivery_times)

    @property
    def counts(self) -> list[int]:
        return [len(t) for t in self.trading_times]

    @property
    def flat_size(self) -> int:
        return sum(self.counts)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)]).astype(int)

    def flat(self, j: int, i: int) -> int:
        if not 0 <= i < len(self.trading_times[j]):
            raise IndexError(f"trading index {i} out of range for delivery {j}")
        return int(self.offsets[j] + i)

    def unflat(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.flat_size:
            raise IndexError(k)
        j = int(np.searchsorted(self.offsets, k, side="right") - 1)
        return j, int(k - self.offsets[j])

    def delivery_of(self) -> np.ndarray:
        """Delivery index of every contract, in flat order."""
        return np.repeat(np.arange(self.n_deliveries), self.counts)

    def contract_delivery_times(self) -> np.ndarray:
        return np.asarray(self.delivery_times, dtype=float)[self.delivery_of()]

    def contract_trading_times(self) -> np.ndarray:
        return np.concatenate([np.asarray(t, dtype=float) for t in self.trading_times])

    def delivery_slice(self, j: int) -> slice:
        off = self.offsets
        return slice(int(off[j]), int(off[j + 1]))


def build_grid(delivery_times: Sequence[float],
               trading_times_per_delivery: Sequence[Sequence[float]]) -> ContractGrid:
    """Validate the contract calendar and return a :class:`ContractGrid`."""
    return ContractGrid(tuple(float(T) for T in delivery_times),
                        tuple(tuple(float(t) for t in times) for times in trading_times_per_delivery))


def discount_factors(grid: ContractGrid, rate: float) -> np.ndarray:
    """``exp(-rate * T_j)`` for every contract, in flat order."""
    return np.exp(-rate * grid.contract_delivery_times())


@dataclass(frozen=True)
class PowerPlant:
    fuel: str
    capacity_max: float
    ramp_up: float
    ramp_down: float  # non-positive lower bound on W(T_{j+1}) - W(T_j)
    efficiency: float
    emission_intensity: float
    name: str = ""


@dataclass(frozen=True)
class Producer:
    id: str
    risk_aversion: float
    plants: tuple = ()

    def plants_by_fuel(self, fuels: Sequence[str]) -> list[PowerPlant]:
        """Plants ordered by the market's fuel order, stable within a fuel."""
        order = {f: n for n, f in enumerate(fuels)}
        return sorted(self.plants, key=lambda p: order.get(p.fuel, len(order)))


@dataclass(frozen=True)
class Consumer:
    id: str
    risk_aversion: float
    demand_share: float
    retail_price: float = 0.0


@dataclass(frozen=True)
class ExogenousCurves:
    """Expected exogenous prices and demand.

    ``fuel_prices`` maps fuel name to a length-N vector of expected forward
    prices, ``emission_prices`` is length N and ``demand`` has one entry per
    delivery.
    """
    fuel_prices: dict
    emission_prices: np.ndarray
    demand: np.ndarray
    interest_rate: float = 0.0


@dataclass(frozen=True)
class CovarianceModel:
    q1: np.ndarray  # electricity / electricity, N x N
    q2: np.ndarray  # electricity / (fuels, emissions), N x N(L+1)
    q3: np.ndarray  # (fuels, emissions) / (fuels, emissions)

    @classmethod
    def from_stacked(cls, sigma: np.ndarray, n: int) -> "CovarianceModel":
        sigma = np.asarray(sigma, dtype=float)
        return cls(sigma[:n, :n].copy(), sigma[:n, n:].copy(), sigma[n:, n:].copy())

    def stacked(self) -> np.ndarray:
        return np.block([[self.q1, self.q2], [self.q2.T, self.q3]])

    @property
    def n_contracts(self) -> int:
        return self.q1.shape[0]


@dataclass(frozen=True)
class MarketInstance:
    grid: ContractGrid
    fuels: tuple
    producers: tuple
    consumers: tuple
    curves: ExogenousCurves
    covariance: CovarianceModel
    trade_bound: float
    cost_spec: Optional[object] = None  # extensions.TransactionCostSpec
    blocks: tuple = ()  # extensions.BlockContract

    @property
    def players(self) -> list:
        return list(self.producers) + list(self.consumers)


@dataclass(frozen=True)
class VariableLayout:
    """Slices of every player's variables inside the stacked vector ``x``.

    ``players`` holds ``(player_id, kind, slice)`` in stacking order and
    ``parts`` maps each player id to a dict of named sub-slices (absolute
    positions) such as ``"V"``, ``"F"``, ``"O"``, ``"W"``.
    """
    players: tuple
    parts: dict
    price: slice
    size: int

    def player_slice(self, player_id: str) -> slice:
        for pid, _, sl in self.players:
            if pid == player_id:
                return sl
        raise KeyError(player_id)


def producer_dim(producer: Producer, grid: ContractGrid, n_fuels: int) -> int:
    n = grid.flat_size
    return n + n * n_fuels + n + len(producer.plants) * grid.n_deliveries


def layout_size(market: MarketInstance) -> int:
    n = market.grid.flat_size
    n_fuels = len(market.fuels)
    return (sum(producer_dim(p, market.grid, n_fuels) for p in market.producers)
            + len(market.consumers) * n + n)


def validate_market(market: MarketInstance) -> list[str]:
    """Return a list of human-readable invariant violations (empty if none)."""
    problems = []
    grid = market.grid
    n = grid.flat_size
    fuels = list(market.fuels)

    if not market.producers:
        problems.append("market has no producers")
    if not market.consumers:
        problems.append("market has no consumers")
    if not market.trade_bound > 0:
        problems.append(f"trade bound must be positive, got {market.trade_bound}")
    if len(set(fuels)) != len(fuels):
        problems.append("duplicate fuel names")

    ids = [k.id for k in market.players]
    if len(set(ids)) != len(ids):
        problems.append("player ids are not unique")

    for p in market.producers:
        if not p.risk_aversion > 0:
            problems.append(f"producer {p.id}: risk aversion must be positive")
        for r, plant in enumerate(p.plants):
            tag = f"producer {p.id} plant {plant.name or r}"
            if plant.fuel not in fuels:
                problems.append(f"{tag}: unknown fuel {plant.fuel!r}")
            if plant.capacity_max < 0:
                problems.append(f"{tag}: negative capacity")
            if not plant.efficiency > 0:
                problems.append(f"{tag}: efficiency must be positive")
            if not plant.emission_intensity > 0:
                problems.append(f"{tag}: emission intensity must be positive")
            if not plant.ramp_down <= 0 <= plant.ramp_up:
                problems.append(f"{tag}: ramp limits must satisfy ramp_down <= 0 <= ramp_up")

    shares = 0.0
    for c in market.consumers:
        if not c.risk_aversion > 0:
            problems.append(f"consumer {c.id}: risk aversion must be positive")
        if not 0 <= c.demand_share <= 1:
            problems.append(f"consumer {c.id}: demand share {c.demand_share} outside [0, 1]")
        shares += c.demand_share
    if market.consumers and abs(shares - 1.0) > 1e-12:
        problems.append(f"demand shares sum to {shares:.12g}")

    curves = market.curves
    for f in fuels:
        if f not in curves.fuel_prices:
            problems.append(f"no price curve for fuel {f!r}")
        elif np.shape(curves.fuel_prices[f]) != (n,):
            problems.append(f"fuel curve {f!r} has shape {np.shape(curves.fuel_prices[f])}, expected ({n},)")
    if np.shape(curves.emission_prices) != (n,):
        problems.append(f"emission curve has shape {np.shape(curves.emission_prices)}, expected ({n},)")
    demand = np.asarray(curves.demand, dtype=float)
    if demand.shape != (grid.n_deliveries,):
        problems.append(f"demand has shape {demand.shape}, expected ({grid.n_deliveries},)")
    elif not np.all(np.isfinite(demand)) or np.any(demand < 0):
        problems.append("demand must be finite and non-negative")

    cov = market.covariance
    m = n * (len(fuels) + 1)
    if cov.q1.shape != (n, n) or cov.q2.shape != (n, m) or cov.q3.shape != (m, m):
        problems.append("covariance blocks do not match the grid and fuel set")
    else:
        sigma = cov.stacked()
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12 * max(1.0, np.abs(sigma).max())):
            problems.append("stacked covariance is not symmetric")
        sym = 0.5 * (sigma + sigma.T)
        scale = np.linalg.norm(sym, 2) if sym.size else 0.0
        lo = np.linalg.eigvalsh(sym).min() if sym.size else 0.0
        if lo < -1e-10 * scale:
            problems.append(f"stacked covariance is not PSD (min eigenvalue {lo:.3g})")
        lo1 = np.linalg.eigvalsh(0.5 * (cov.q1 + cov.q1.T)).min()
        if lo1 <= 0:
            problems.append(f"electricity covariance block is not positive definite (min eigenvalue {lo1:.3g})")

    if market.cost_spec is not None:
        eps = np.asarray(market.cost_spec.epsilon, dtype=float)
        ups = np.asarray(market.cost_spec.upsilon, dtype=float)
        if eps.shape != (n,) or ups.shape != (n,):
            problems.append("transaction cost arrays must have one entry per contract")
        elif np.any(eps < 0) or np.any(ups < 0):
            problems.append("transaction costs must be non-negative")
    return problems
