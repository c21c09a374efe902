"""Trading costs and where volume goes.

Quadratic costs (upsilon) push players to spread trades evenly over the
trading dates; a uniform linear cost (epsilon) only moves prices, and a
prohibitive linear cost on the first date shuts that date down.
"""
import numpy as np

from powerterm import apply_override, load_scenario, solve_equilibrium

market = load_scenario("base").market


def per_period(sol):
    return 0.5 * sum(np.abs(p["V"]) for p in sol.positions.values())


base = solve_equilibrium(market)
print("no costs       volume per date:", np.round(per_period(base), 1))
for ups in (1e-4, 1e-2, 1.0):
    sol = solve_equilibrium(apply_override(market, "upsilon", ups))
    v = per_period(sol)
    print(f"upsilon = {ups:<6g} volume per date: {np.round(v, 1)}  spread {(v.max() - v.min()) / v.mean():.2%}")

sol = solve_equilibrium(apply_override(market, "epsilon", 0.5))
print("epsilon = 0.5 everywhere: volumes change by at most "
      f"{max(np.abs(sol.positions[k]['V'] - base.positions[k]['V']).max() for k in sol.positions):.1e}, "
      f"prices move by {np.round(sol.prices - base.prices, 6)}")

sol = solve_equilibrium(apply_override(market, "epsilon[0]", 100.0))
print("epsilon = 100 on the first date only: volume per date", np.round(per_period(sol), 1))
