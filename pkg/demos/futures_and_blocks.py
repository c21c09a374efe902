"""Futures ladders, forward ladders and block contracts.

Futures are margined daily, so a futures ladder and the forward ladder it
implies differ whenever interest rates are positive.  Block contracts
deliver over several periods at one price; the engine merges their
variables so every player trades the block as one contract.
"""
from dataclasses import replace

import numpy as np

from powerterm import (BlockContract, build_grid, forwards_from_futures, futures_from_forwards, load_scenario,
                       solve_equilibrium)
from powerterm.extensions import apply_block_contracts
from powerterm.synthetic import AssetVolatility, lead_time_covariance

t = np.array([0.0, 0.5, 1.0])
futures = np.array([10.0, 11.0, 12.0])
for r in (0.0, 0.1):
    fw = forwards_from_futures(futures, t, r)
    print(f"r = {r}: forwards {np.round(fw, 6)}; back to futures {np.round(futures_from_forwards(fw, t, r), 6)}")
print("the last futures increment never shows up in forwards, so it comes back as zero")

# Two half-hour deliveries with a day-ahead and a spot date, plus a block
# tradable day-ahead that covers both.
uk = load_scenario("uk_scale").market
grid = build_grid([1.0, 1.5], [[0.0, 1.0], [0.0, 1.5]])
n = grid.flat_size
vols = [AssetVolatility(3.0, 2.0, 0.5), AssetVolatility(2.0), AssetVolatility(1.5), AssetVolatility(0.3)]
cov = lead_time_covariance(grid, vols, np.eye(4) * 0.5 + 0.5, memory=1.0)
curves = replace(uk.curves, fuel_prices={f: np.full(n, v[0]) for f, v in uk.curves.fuel_prices.items()},
                 emission_prices=np.full(n, 3.883), demand=np.array([20000.0, 26000.0]))
market = replace(uk, grid=grid, curves=curves, covariance=cov)
plain = solve_equilibrium(market)
blocked = solve_equilibrium(apply_block_contracts(market, [BlockContract((0, 1), (0.0,))]))
print("without block:", np.round(plain.prices, 4))
print("with block:   ", np.round(blocked.prices, 4), "(day-ahead prices of both deliveries coincide)")
