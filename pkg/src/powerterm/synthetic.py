"""Synthetic inputs: covariance models, random markets, fleets and histories.

Nothing here is calibrated to real data.  The generators exist so the engine
can be exercised end to end, and every one takes an explicit seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import ProductionHistory
from .model import (Consumer, ContractGrid, CovarianceModel, ExogenousCurves, MarketInstance,
                    PowerPlant, Producer, build_grid)


@dataclass(frozen=True)
class AssetVolatility:
    """Price volatility as a function of lead time ``ell = T - t``:
    ``base + peak * exp(-ell / decay)``."""
    base: float
    peak: float = 0.0
    decay: float = 1.0

    def at(self, lead):
        return self.base + self.peak * np.exp(-np.asarray(lead, dtype=float) / self.decay)


def lead_time_covariance(grid: ContractGrid, vols, correlation, memory: float,
                         delivery_correlation: float = 0.9, idiosyncratic=None) -> CovarianceModel:
    """Covariance ``sigma_a(ell_i) sigma_b(ell_k) R_ab exp(-|ell_i - ell_k| / memory) rho^|j - j'|``.

    ``vols`` lists one :class:`AssetVolatility` per asset in stacked order
    ``[elec, fuel_0, ..., emissions]`` and ``correlation`` is the asset
    correlation matrix.  Contracts far apart in lead time are weakly
    correlated, and volatility rising toward delivery makes late contracts
    riskier.  ``idiosyncratic`` optionally gives each asset a second,
    independent component with the same kernel (``None`` entries skip an
    asset).  The result is PSD whenever ``correlation`` is.
    """
    R = np.asarray(correlation, dtype=float)
    m = len(vols)
    if R.shape != (m, m):
        raise ValueError("correlation matrix does not match the number of assets")
    lead = grid.contract_delivery_times() - grid.contract_trading_times()
    dj = grid.delivery_of()
    K = (np.exp(-np.abs(lead[:, None] - lead[None, :]) / memory)
         * delivery_correlation ** np.abs(dj[:, None] - dj[None, :]))
    scale = np.concatenate([v.at(lead) for v in vols])
    sigma = scale[:, None] * np.kron(R, K) * scale[None, :]
    n = grid.flat_size
    for a, own in enumerate(idiosyncratic or ()):
        if own is not None:
            s_a = own.at(lead)
            sigma[a * n:(a + 1) * n, a * n:(a + 1) * n] += s_a[:, None] * K * s_a[None, :]
    return CovarianceModel.from_stacked(0.5 * (sigma + sigma.T), grid.flat_size)


def random_market(rng: np.random.Generator, max_producers: int = 3, max_consumers: int = 2,
                  max_contracts: int = 10, fuels=("gas", "coal")) -> MarketInstance:
    """A small random market with a strictly feasible clearing allocation."""
    n_deliveries = int(rng.integers(1, 4))
    counts = []
    budget = max_contracts
    for j in range(n_deliveries):
        c = int(rng.integers(1, max(2, min(4, budget - (n_deliveries - j - 1)) + 1)))
        counts.append(c)
        budget -= c
    deliveries = np.cumsum(rng.uniform(0.5, 2.0, n_deliveries)) + 1.0
    ladders = [np.sort(np.concatenate([rng.uniform(0, T - 0.1, c - 1), [T]])) for T, c in zip(deliveries, counts)]
    grid = build_grid(deliveries, ladders)
    n = grid.flat_size
    fuels = tuple(fuels[: int(rng.integers(1, len(fuels) + 1))])

    demand = rng.uniform(5.0, 30.0, n_deliveries)
    producers = []
    n_prod = int(rng.integers(1, max_producers + 1))
    total_cap = 0.0
    for p in range(n_prod):
        plants = []
        for r in range(int(rng.integers(1, 3))):
            cap = float(rng.uniform(10.0, 40.0))
            total_cap += cap
            plants.append(PowerPlant(fuel=str(rng.choice(fuels)), capacity_max=cap,
                                     ramp_up=float(rng.uniform(0.5, 1.0) * cap),
                                     ramp_down=-float(rng.uniform(0.5, 1.0) * cap),
                                     efficiency=float(rng.uniform(0.3, 1.0)),
                                     emission_intensity=float(rng.uniform(0.2, 1.0)), name=f"u{r}"))
        producers.append(Producer(f"p{p}", float(10 ** rng.uniform(-3, -1)), tuple(plants)))
    # keep demand strictly below fleet capacity so a strictly feasible point exists
    demand = np.minimum(demand, 0.8 * total_cap)
    n_cons = int(rng.integers(1, max_consumers + 1))
    shares = rng.dirichlet(np.ones(n_cons))
    shares[-1] = 1.0 - shares[:-1].sum()
    consumers = tuple(Consumer(f"c{c}", float(10 ** rng.uniform(-3, -1)), float(shares[c]))
                      for c in range(n_cons))

    m = n * (len(fuels) + 1)
    X = rng.normal(size=(n + m, n + m + 2))
    sigma = X @ X.T / (n + m) + 0.1 * np.eye(n + m)
    levels = {f: np.full(n, float(rng.uniform(20, 60))) + rng.normal(0, 1, n) for f in fuels}
    curves = ExogenousCurves(levels, np.full(n, float(rng.uniform(2, 10))), demand,
                             interest_rate=float(rng.choice([0.0, 0.05])))
    return MarketInstance(grid=grid, fuels=fuels, producers=tuple(producers), consumers=consumers,
                          curves=curves, covariance=CovarianceModel.from_stacked(sigma, n),
                          trade_bound=float(2 * demand.max() + 10))


def synthetic_fleet(rng: np.random.Generator, n_plants: int, fuels=("gas", "coal"),
                    capacity=(100.0, 900.0)) -> list[PowerPlant]:
    """Thermal plants with efficiencies and intensities typical for their fuel."""
    plants = []
    for r in range(n_plants):
        fuel = fuels[r % len(fuels)]
        if fuel == "gas":
            eff, em = rng.uniform(0.55, 0.85), rng.uniform(0.33, 0.42)
        else:
            eff, em = rng.uniform(0.3, 0.42), rng.uniform(0.85, 1.0)
        cap = float(rng.uniform(*capacity))
        plants.append(PowerPlant(fuel=fuel, capacity_max=cap, ramp_up=0.5 * cap, ramp_down=-0.5 * cap,
                                 efficiency=float(eff), emission_intensity=float(em), name=f"{fuel}{r}"))
    return plants


def synthetic_history(rng: np.random.Generator, c: float, g: float, offset: float, n_samples: int = 5000,
                      noise: float = 0.02, fuel_level: float = 60.0, em_level: float = 5.0,
                      margin_sd: float = 2.0, name: str = "") -> ProductionHistory:
    """Production history of a plant following the logistic margin rule.

    Fuel and emission prices wander around their levels; the electricity
    price is set so the true margin scatters around zero with
    ``margin_sd``, which keeps the logistic away from saturation.
    """
    fuel = fuel_level * np.exp(rng.normal(0, 0.15, n_samples))
    em = em_level * np.exp(rng.normal(0, 0.3, n_samples))
    elec = c * fuel + g * em + offset + rng.normal(0, margin_sd, n_samples)
    theta = elec - c * fuel - g * em - offset
    w = 1.0 / (1.0 + np.exp(-theta)) + rng.normal(0, noise, n_samples)
    capacity = np.full(n_samples, 100.0)
    return ProductionHistory(production=np.clip(w, 0, 1) * capacity, capacity=capacity,
                             elec_price=elec, fuel_price=fuel, emission_price=em, name=name)
