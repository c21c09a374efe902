"""Plant-parameter calibration and shrinkage covariance estimation.

A plant is assumed to run whenever its margin

    Theta = Pi - c * G - g * G_em - c_offset

is positive.  The fit minimises ``sum (W - sigmoid(Theta))^2`` over
``(c, g, c_offset)`` with box bounds, where ``W`` is production normalised
by available capacity.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit, logit

from .model import CovarianceModel

log = logging.getLogger(__name__)

DEFAULT_BOUNDS = ((0.0, 10.0), (0.0, 5.0), (0.0, 100.0))


@dataclass(frozen=True)
class ProductionHistory:
    """Aligned spot series for one plant (one entry per sample)."""
    production: np.ndarray
    capacity: np.ndarray
    elec_price: np.ndarray
    fuel_price: np.ndarray
    emission_price: np.ndarray
    name: str = ""

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), dtype=float) for k in
                  ("production", "capacity", "elec_price", "fuel_price", "emission_price")]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ValueError("history series must be 1-d and aligned")
        for k, a in zip(("production", "capacity", "elec_price", "fuel_price", "emission_price"), arrays):
            object.__setattr__(self, k, a)


@dataclass
class PlantCalibration:
    efficiency: float
    emission_intensity: float
    margin_offset: float
    sse: float
    iterations: int
    converged: bool
    identifiable: bool = True
    degenerate: bool = False
    n_samples: int = 0
    dropped: int = 0
    name: str = ""
    message: str = ""

    @property
    def params(self) -> np.ndarray:
        return np.array([self.efficiency, self.emission_intensity, self.margin_offset])


def normalize_production(history: ProductionHistory):
    """Capacity factors in [0, 1] and the usable-sample mask.

    Returns ``(w, mask, dropped)``: samples with non-positive capacity are
    dropped; ratios above one or below zero are clamped with a warning.
    """
    mask = history.capacity > 0
    dropped = int((~mask).sum())
    if not mask.any():
        raise ValueError(f"plant {history.name or '?'}: no samples with positive capacity")
    ratio = history.production[mask] / history.capacity[mask]
    n_clamped = int(np.sum((ratio > 1) | (ratio < 0)))
    if n_clamped:
        warnings.warn(f"plant {history.name or '?'}: {n_clamped} capacity factors clamped to [0, 1]",
                      stacklevel=2)
    return np.clip(ratio, 0.0, 1.0), mask, dropped


def margin(c, g, c_offset, spot_elec, spot_fuel, spot_em):
    """Production margin ``Pi - c G - g G_em - c_offset``."""
    return np.asarray(spot_elec) - c * np.asarray(spot_fuel) - g * np.asarray(spot_em) - c_offset


def _design(history: ProductionHistory, mask):
    return (history.elec_price[mask], history.fuel_price[mask], history.emission_price[mask])


def residuals(params, w, elec, fuel, em, temperature: float = 1.0) -> np.ndarray:
    theta = margin(params[0], params[1], params[2], elec, fuel, em)
    return w - expit(theta / temperature)


def jacobian(params, w, elec, fuel, em, temperature: float = 1.0) -> np.ndarray:
    s = expit(margin(params[0], params[1], params[2], elec, fuel, em) / temperature)
    ds = s * (1 - s) / temperature
    # d(w - s)/dp = -ds * dTheta/dp, with dTheta/d(c, g, c_offset) = (-G, -G_em, -1)
    return np.column_stack([ds * fuel, ds * em, ds])


def objective(params, w, elec, fuel, em, temperature: float = 1.0) -> float:
    r = residuals(params, w, elec, fuel, em, temperature)
    return float(r @ r)


def gradient(params, w, elec, fuel, em, temperature: float = 1.0) -> np.ndarray:
    r = residuals(params, w, elec, fuel, em, temperature)
    return 2.0 * jacobian(params, w, elec, fuel, em, temperature).T @ r


def gradient_check(params, w, elec, fuel, em, temperature: float = 1.0, step: float = 1e-5) -> float:
    """Relative error between the analytic gradient and central differences."""
    params = np.asarray(params, dtype=float)
    g = gradient(params, w, elec, fuel, em, temperature)
    fd = np.empty(3)
    for k in range(3):
        h = step * max(1.0, abs(params[k]))
        e = np.zeros(3)
        e[k] = h
        fd[k] = (objective(params + e, w, elec, fuel, em, temperature)
                 - objective(params - e, w, elec, fuel, em, temperature)) / (2 * h)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), np.linalg.norm(g), 1e-300))


def _starts(w, elec, fuel, em, bounds) -> list[np.ndarray]:
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = []
    # logit-linearised regression: Pi - logit(w) = c G + g G_em + c_offset
    z = logit(np.clip(w, 0.01, 0.99))
    X = np.column_stack([fuel, em, np.ones_like(fuel)])
    coef, *_ = np.linalg.lstsq(X, elec - z, rcond=None)
    starts.append(np.clip(coef, lo, hi))
    for c0, g0 in [(0.25, 0.25), (0.5, 0.5), (1.0, 0.2), (0.35, 1.0), (0.7, 0.4), (2.0, 1.0), (0.1, 2.0)]:
        c0, g0 = min(c0, hi[0]), min(g0, hi[1])
        offset = np.median(elec - c0 * fuel - g0 * em)
        starts.append(np.clip([c0, g0, offset], lo, hi))
    return starts


def fit_plant(history: ProductionHistory, bounds=DEFAULT_BOUNDS, temperature: float = 1.0,
              min_samples: int = 100, max_nfev: int = 200) -> PlantCalibration:
    """Bounded multi-start least-squares fit of one plant's parameters."""
    w, mask, dropped = normalize_production(history)
    if w.size < min_samples:
        raise ValueError(f"plant {history.name or '?'}: {w.size} usable samples, need {min_samples}")
    elec, fuel, em = _design(history, mask)
    lo = [b[0] for b in bounds]
    hi = [b[1] for b in bounds]
    args = (w, elec, fuel, em, temperature)

    best = None
    for x0 in _starts(w, elec, fuel, em, bounds):
        try:
            res = least_squares(residuals, x0, jac=jacobian, bounds=(lo, hi), args=args,
                                method="trf", x_scale="jac", max_nfev=max_nfev)
        except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover - defensive
            log.debug("start %s failed: %s", x0, exc)
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise RuntimeError(f"plant {history.name or '?'}: every start failed")

    J = jacobian(best.x, *args)
    sv = np.linalg.svd(J, compute_uv=False)
    identifiable = bool(sv[-1] > 1e-8 * max(sv[0], 1e-300))
    degenerate = bool(np.all(w >= 0.999) or np.all(w <= 0.001))
    return PlantCalibration(
        efficiency=float(best.x[0]), emission_intensity=float(best.x[1]), margin_offset=float(best.x[2]),
        sse=float(2 * best.cost), iterations=int(best.nfev),
        converged=bool(best.status > 0 and identifiable and not degenerate),
        identifiable=identifiable, degenerate=degenerate,
        n_samples=int(w.size), dropped=dropped, name=history.name, message=best.message,
    )


def fit_fleet(histories, jobs: int = 1, **kwargs) -> list:
    """Fit every plant; ``jobs > 1`` spreads plants over processes."""
    if jobs == 1:
        return [fit_plant(h, **kwargs) for h in histories]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=jobs)(delayed(fit_plant)(h, **kwargs) for h in histories)


def shrinkage_intensity(samples) -> float:
    """Optimal intensity for shrinking the sample covariance toward its diagonal."""
    X = np.asarray(samples, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / (n - 1)
    off = ~np.eye(S.shape[0], dtype=bool)
    denom = np.sum(S[off] ** 2)
    if denom <= 0:
        return 1.0
    # variance of each covariance entry estimate, from w_tij = x_ti x_tj
    X2 = Xc ** 2
    wbar = S * (n - 1) / n
    var = n / (n - 1) ** 3 * (X2.T @ X2 - n * wbar ** 2)
    return float(np.clip(np.sum(var[off]) / denom, 0.0, 1.0))


def shrinkage_covariance(samples, n_contracts: Optional[int] = None, intensity: Optional[float] = None):
    """Sample covariance shrunk toward its diagonal.

    ``samples`` is (n_samples, dim).  With ``n_contracts`` given the result is
    a :class:`CovarianceModel` partitioned at that index, otherwise the matrix.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("samples must be a 2-d array with at least two rows")
    if n_contracts is not None and not 0 < n_contracts <= X.shape[1]:
        raise ValueError(f"sample dimension {X.shape[1]} does not match {n_contracts} contracts")
    S = np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
    delta = shrinkage_intensity(X) if intensity is None else float(intensity)
    sigma = (1 - delta) * S + delta * np.diag(np.diag(S))
    sigma = 0.5 * (sigma + sigma.T)
    if n_contracts is None:
        return sigma
    return CovarianceModel.from_stacked(sigma, n_contracts)
