import warnings

import numpy as np
import pytest

from powerterm.calibration import (ProductionHistory, fit_plant, gradient_check, margin, normalize_production,
                                   shrinkage_covariance, shrinkage_intensity)
from powerterm.model import CovarianceModel
from powerterm.synthetic import synthetic_history


def _hist(prod, cap):
    k = len(prod)
    return ProductionHistory(np.asarray(prod, float), np.asarray(cap, float), np.full(k, 50.0), np.full(k, 60.0),
                             np.full(k, 5.0))


def test_normalize_ratio():
    w, _, _ = normalize_production(_hist([50.0], [100.0]))
    assert w[0] == 0.5


def test_normalize_clamps_with_warning():
    with pytest.warns(UserWarning, match="clamped"):
        w, _, _ = normalize_production(_hist([101.0], [100.0]))
    assert w[0] == 1.0


def test_zero_capacity_dropped():
    w, mask, dropped = normalize_production(_hist([1.0, 0.0, 2.0], [10.0, 0.0, 10.0]))
    assert w.size == 2 and dropped == 1


def test_margin_arithmetic():
    # Pi = 70, c G = 50, g G_em = 10, c~ = 5
    assert margin(0.5, 2.0, 5.0, 70.0, 100.0, 5.0) == pytest.approx(5.0)


def test_recovery_single_plant():
    rng = np.random.default_rng(11)
    truth = np.array([0.55, 0.4, 8.0])
    fit = fit_plant(synthetic_history(rng, *truth, n_samples=5000))
    assert fit.converged
    assert np.all(np.abs(fit.params - truth) / truth <= 0.05)


def test_gradient_matches_fd():
    rng = np.random.default_rng(5)
    h = synthetic_history(rng, 0.6, 0.5, 6.0, n_samples=2000)
    w = h.production / h.capacity
    assert gradient_check([0.5, 0.4, 5.0], w, h.elec_price, h.fuel_price, h.emission_price) <= 1e-4


def test_constant_prices_unidentifiable():
    rng = np.random.default_rng(1)
    k = 500
    h = ProductionHistory(rng.uniform(0, 100, k), np.full(k, 100.0), np.full(k, 50.0), np.full(k, 60.0),
                          np.full(k, 5.0))
    fit = fit_plant(h)
    assert not fit.identifiable and not fit.converged


def test_always_on_is_degenerate():
    rng = np.random.default_rng(2)
    h = synthetic_history(rng, 0.5, 0.4, 5.0, n_samples=500)
    h = ProductionHistory(h.capacity.copy(), h.capacity, h.elec_price, h.fuel_price, h.emission_price)
    fit = fit_plant(h)
    assert fit.degenerate and not fit.converged
    assert fit.margin_offset == pytest.approx(0.0, abs=1e-6)


def test_too_few_samples():
    with pytest.raises(ValueError):
        fit_plant(_hist([1.0] * 10, [2.0] * 10))


def test_shrinkage_identical_samples():
    S = shrinkage_covariance(np.ones((20, 3)))
    assert np.allclose(S, 0)


def test_full_shrinkage_is_diagonal():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 4))
    S = shrinkage_covariance(X, intensity=1.0)
    assert np.allclose(S, np.diag(np.var(X, axis=0, ddof=1)))


def test_shrinkage_recovers_known_covariance():
    rng = np.random.default_rng(7)
    C = np.array([[1.0, 0.5], [0.5, 1.0]])
    X = rng.multivariate_normal([0, 0], C, size=10_000)
    S = shrinkage_covariance(X)
    assert np.linalg.norm(S - C) / np.linalg.norm(C) <= 0.05
    assert 0.0 <= shrinkage_intensity(X) <= 0.05


def test_shrinkage_model_partition():
    rng = np.random.default_rng(0)
    model = shrinkage_covariance(rng.normal(size=(40, 6)), n_contracts=2)
    assert isinstance(model, CovarianceModel) and model.q1.shape == (2, 2) and model.q3.shape == (4, 4)
    assert np.linalg.eigvalsh(model.stacked()).min() >= -1e-12
