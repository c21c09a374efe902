import numpy as np
import pytest

from powerterm.assembly import assemble_global, consumer_blocks, producer_blocks
from powerterm.model import (Consumer, CovarianceModel, ExogenousCurves, MarketInstance, PowerPlant, Producer,
                             build_grid)


def _curves(grid, demand, fuels=("gas",)):
    n = grid.flat_size
    return ExogenousCurves({f: np.full(n, 50.0) for f in fuels}, np.full(n, 5.0), np.asarray(demand, float))


def _cov(n, n_fuels=1):
    return CovarianceModel.from_stacked(np.eye(n * (n_fuels + 2)), n)


def test_pure_trader_blocks():
    g = build_grid([1.0], [[1.0]])
    blk = producer_blocks(Producer("t", 1.0), g, ("gas",), _curves(g, [0.0]), _cov(1), 10.0)
    assert blk.dim == 3  # V, F, O
    V = blk.parts["V"]
    # volume balance row reads -V = 0 (nothing produced)
    row = blk.A.toarray()[0]
    assert row[V.start] != 0 and np.count_nonzero(row) == 1
    assert np.allclose(np.abs(blk.B.toarray()[:, V.start]).sum(), 2)
    assert np.allclose(blk.b[np.abs(blk.B.toarray()[:, V.start]) > 0], 10.0)


def test_producer_row_counts():
    g = build_grid([1.0, 2.0], [[1.0], [2.0]])
    plant = PowerPlant("gas", 100, 50, -50, 0.5, 0.4)
    blk = producer_blocks(Producer("p", 1.0, (plant,)), g, ("gas",), _curves(g, [1, 1]), _cov(2), 1e3)
    assert blk.A.shape[0] == 2 * (1 + 1) + 1


def test_ramp_and_capacity_rows():
    g = build_grid([1.0, 2.0, 3.0], [[1.0], [2.0], [3.0]])
    plant = PowerPlant("gas", 100, 50, -50, 0.5, 0.4)
    blk = producer_blocks(Producer("p", 1.0, (plant,)), g, ("gas",), _curves(g, [1, 1, 1]), _cov(3), 1e3)
    fam = [lab.split("[")[0] for lab in blk.ineq_labels]
    assert sum(f.startswith("ramp") for f in fam) == 4
    assert sum(f.startswith("capacity") for f in fam) == 6


def test_unknown_fuel_rejected():
    g = build_grid([1.0], [[1.0]])
    with pytest.raises(ValueError):
        producer_blocks(Producer("p", 1.0, (PowerPlant("oil", 1, 1, -1, 1, 1),)), g, ("gas",),
                        _curves(g, [0.0]), _cov(1), 1.0)


def test_consumer_rows():
    g = build_grid([1.0], [[1.0]])
    blk = consumer_blocks(Consumer("c", 1.0, 1.0), g, _curves(g, [100.0]), _cov(1), 1e3)
    assert blk.A.toarray().tolist() == [[1.0]] and blk.a.tolist() == [100.0]
    g5 = build_grid([1.0], [[0.0, 0.25, 0.5, 0.75, 1.0]])
    blk = consumer_blocks(Consumer("c", 1.0, 0.4), g5, _curves(g5, [50.0]), _cov(5), 1e3)
    assert blk.A.shape == (1, 5) and np.allclose(blk.A.toarray(), 1) and blk.a[0] == pytest.approx(20.0)
    assert blk.b.size == 10


def _tiny_market(lam=1.0):
    g = build_grid([1.0], [[1.0]])
    return MarketInstance(g, ("gas",), (Producer("t", lam),), (Consumer("c", lam, 1.0),), _curves(g, [0.0]),
                          _cov(1), 10.0)


def test_global_assembly_shapes():
    asm = assemble_global(_tiny_market())
    assert asm.Q.shape[0] == 3 + 1 + 1
    C = asm.clearing_matrix().toarray()
    assert C.shape == (1, 5)
    lay = asm.layout
    assert C[0, lay.parts["t"]["V"]].tolist() == [1.0] and C[0, lay.parts["c"]["V"]].tolist() == [1.0]
    assert np.count_nonzero(C) == 2
    price = asm.layout.price
    assert np.allclose(asm.Q.toarray()[price, price], 0)


def test_q_on_clearing_subspace(small_market):
    asm = assemble_global(small_market)
    rng = np.random.default_rng(1)
    X = asm.project_clearing(rng.normal(size=(asm.Q.shape[0], 50)))
    Q = asm.Q.toarray()
    lam = 1e-6
    for x in X.T:
        own = sum(x[sl] @ (lam * blk.covariance.toarray()) @ x[sl]
                  for blk, (_, _, sl) in zip(asm.blocks, asm.layout.players))
        assert x @ Q @ x == pytest.approx(own, rel=1e-9, abs=1e-12)
