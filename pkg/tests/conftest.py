import numpy as np
import pytest

from powerterm.model import (Consumer, CovarianceModel, ExogenousCurves, MarketInstance, PowerPlant, Producer,
                             build_grid)


def one_plant_market(n_trading=1, lam_p=1e-6, lam_c=1e-6, demand=100.0, capacity=500.0, rate=0.0,
                     trade_bound=1e4, efficiency=0.7, intensity=0.37):
    """One gas plant, one consumer, one delivery at T = 1."""
    times = list(np.linspace(0.0, 1.0, n_trading)) if n_trading > 1 else [1.0]
    grid = build_grid([1.0], [times])
    n = grid.flat_size
    plant = PowerPlant("gas", capacity, capacity, -capacity, efficiency, intensity, "g1")
    curves = ExogenousCurves({"gas": np.full(n, 69.30)}, np.full(n, 3.883), np.array([demand]), rate)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(3 * n, 3 * n + 2))
    sigma = X @ X.T / (3 * n) + 0.5 * np.eye(3 * n)
    return MarketInstance(grid, ("gas",), (Producer("p", lam_p, (plant,)),), (Consumer("c", lam_c, 1.0),),
                          curves, CovarianceModel.from_stacked(sigma, n), trade_bound)


@pytest.fixture
def small_market():
    return one_plant_market(n_trading=3)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        passed, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
