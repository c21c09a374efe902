import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from powerterm.assembly import market_blocks
from powerterm.equilibrium import solve_equilibrium
from powerterm.extensions import (BlockContract, TransactionCostSpec, apply_block_contracts,
                                  apply_transaction_costs, forwards_from_futures, futures_from_forwards)
from powerterm.model import (Consumer, CovarianceModel, ExogenousCurves, MarketInstance, PowerPlant, Producer,
                             build_grid)

from conftest import one_plant_market


def test_terminal_forward_equals_future():
    f = forwards_from_futures([10.0, 11.0, 12.0], [0.0, 0.5, 1.0], 0.1)
    assert f[-1] == 12.0


def test_zero_rate_telescopes():
    f = forwards_from_futures([10.0, 11.0, 12.5], [0.0, 0.5, 1.0], 0.0)
    assert np.allclose(f, 12.5)


def test_three_point_ladder():
    f = forwards_from_futures([10.0, 11.0, 12.0], [0.0, 0.5, 1.0], 0.1)
    expected = 10 + (11 - 10) * np.exp(-0.05) / np.exp(-0.1) + (12 - 11) * np.exp(-0.1) / np.exp(-0.1)
    assert f[0] == pytest.approx(expected, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.floats(0.01, 0.2), st.integers(0, 2**32 - 1))
def test_roundtrip(m, rate, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 5, m))
    t = np.unique(np.concatenate([t, [t.max() + 1.0]]))
    fut = rng.uniform(20, 80, t.size)
    fut[-2] = fut[-1]  # the last increment is never visible in the forwards
    fw = forwards_from_futures(fut, t, rate)
    assert np.allclose(futures_from_forwards(fw, t, rate), fut, rtol=0, atol=1e-12 * np.abs(fut).max() * 10)
    assert np.allclose(forwards_from_futures(futures_from_forwards(fw, t, rate), t, rate), fw, atol=1e-10)


def test_zero_rate_inverse():
    fut = futures_from_forwards([12.0, 12.0, 12.0], [0.0, 0.5, 1.0], 0.0)
    assert np.allclose(forwards_from_futures(fut, [0.0, 0.5, 1.0], 0.0), 12.0)
    with pytest.raises(ValueError):
        futures_from_forwards([11.0, 12.0, 12.0], [0.0, 0.5, 1.0], 0.0)


def _two_delivery_market():
    grid = build_grid([1.0, 2.0], [[0.5, 1.0], [0.5, 2.0]])
    n = grid.flat_size
    plant = PowerPlant("gas", 100, 100, -100, 0.7, 0.37, "g")
    curves = ExogenousCurves({"gas": np.full(n, 69.3)}, np.full(n, 3.883), np.array([10.0, 20.0]))
    rng = np.random.default_rng(3)
    X = rng.normal(size=(3 * n, 3 * n + 3))
    cov = CovarianceModel.from_stacked(X @ X.T / n + np.eye(3 * n), n)
    return MarketInstance(grid, ("gas",), (Producer("p", 1e-4, (plant,)),), (Consumer("c", 1e-4, 1.0),),
                          curves, cov, 1e3)


def test_block_substitution_rows():
    m = apply_block_contracts(_two_delivery_market(), [BlockContract((0, 1), (0.5,))])
    blocks, price_map = market_blocks(m)
    cons = [b for b in blocks if b.player_id == "c"][0]
    assert cons.dim == 3  # block + two spots
    A = cons.A.toarray()
    assert sorted(map(tuple, A.tolist())) == sorted([(1.0, 1.0, 0.0), (1.0, 0.0, 1.0)])
    assert sorted(cons.a.tolist()) == [10.0, 20.0]
    sol = solve_equilibrium(m)
    assert sol.prices[0] == pytest.approx(sol.prices[2], rel=1e-12)


def test_singleton_block_is_identity():
    base = _two_delivery_market()
    a = solve_equilibrium(base)
    b = solve_equilibrium(apply_block_contracts(base, [BlockContract((1,), (0.5,))]))
    assert np.allclose(a.prices, b.prices, rtol=1e-7)


def test_overlapping_blocks_rejected():
    base = _two_delivery_market()
    with pytest.raises(ValueError):
        apply_block_contracts(base, [BlockContract((0, 1), (0.5,)), BlockContract((0, 1), (0.5,))])


def test_negative_costs_rejected():
    with pytest.raises(ValueError):
        TransactionCostSpec(np.array([-1.0]), np.array([0.0]))


def test_zero_costs_match_base(small_market):
    a = solve_equilibrium(small_market)
    b = solve_equilibrium(apply_transaction_costs(small_market, TransactionCostSpec.uniform(3)))
    assert np.allclose(a.prices, b.prices, rtol=1e-7)
    assert np.allclose(a.positions["c"]["V"], b.positions["c"]["V"], atol=1e-5)


def test_split_is_complementary():
    m = apply_transaction_costs(one_plant_market(n_trading=3), TransactionCostSpec.uniform(3, epsilon=0.5))
    sol = solve_equilibrium(m)
    for pos in sol.positions.values():
        assert np.minimum(pos["V_plus"], pos["V_minus"]).max() <= 1e-5
