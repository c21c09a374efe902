"""YAML scenario files: market definition, overrides and sweep axes.

A scenario is one mapping with the sections ``grid``, ``fuels``, ``curves``,
``players`` (or ``fleet`` for a generated one), ``covariance`` and the
optional ``costs``, ``blocks``, ``sweep``, ``solver`` and ``seed``.  See
``powerterm/data/base.yaml`` for a complete example.
"""
from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .extensions import BlockContract, TransactionCostSpec
from .model import (Consumer, ContractGrid, CovarianceModel, ExogenousCurves, MarketInstance,
                    PowerPlant, Producer, build_grid)
from .synthetic import AssetVolatility, lead_time_covariance, synthetic_fleet


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    market: MarketInstance
    sweep_parameter: Optional[str] = None
    sweep_values: tuple = ()
    tol: float = 1e-10
    seed: int = 0
    raw: dict = field(default_factory=dict)


def bundled_scenarios() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("powerterm.data").iterdir() if p.name.endswith(".yaml"))


def bundled_path(name: str) -> Path:
    path = resources.files("powerterm.data") / f"{name}.yaml"
    if not path.is_file():
        raise ScenarioError(f"no bundled scenario {name!r}; available: {', '.join(bundled_scenarios())}")
    return Path(str(path))


def _curve(value, n: int, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ScenarioError(f"{what}: expected a scalar or {n} values, got {arr.size}")
    return arr


def _grid(spec) -> ContractGrid:
    try:
        deliveries = spec["deliveries"]
    except (KeyError, TypeError):
        raise ScenarioError("grid.deliveries is required") from None
    if "repeat" in spec:  # same ladder (as offsets before delivery) for evenly spaced deliveries
        rep = spec["repeat"]
        times = [float(rep["first"]) + k * float(rep["spacing"]) for k in range(int(rep["count"]))]
        offsets = [float(o) for o in rep["lead_times"]]
        return build_grid(times, [[T - o for o in offsets] for T in times])
    try:
        return build_grid([d["time"] for d in deliveries], [d["trading_times"] for d in deliveries])
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"grid: every delivery needs 'time' and 'trading_times' ({exc})") from None


def _plant(d: dict, k: int) -> PowerPlant:
    try:
        cap = float(d["capacity"])
        return PowerPlant(fuel=str(d["fuel"]), capacity_max=cap,
                          ramp_up=float(d.get("ramp_up", cap)), ramp_down=float(d.get("ramp_down", -cap)),
                          efficiency=float(d["efficiency"]), emission_intensity=float(d["emission_intensity"]),
                          name=str(d.get("name", f"plant{k}")))
    except KeyError as exc:
        raise ScenarioError(f"plant {k}: missing field {exc}") from None


def _players(spec: dict, seed: int):
    producers = []
    for k, p in enumerate(spec.get("producers", [])):
        plants = tuple(_plant(d, r) for r, d in enumerate(p.get("plants", [])))
        producers.append(Producer(str(p.get("id", f"producer{k}")), float(p["risk_aversion"]), plants))
    consumers = [Consumer(str(c.get("id", f"consumer{k}")), float(c["risk_aversion"]),
                          float(c["demand_share"]), float(c.get("retail_price", 0.0)))
                 for k, c in enumerate(spec.get("consumers", []))]
    return producers, consumers


def _fleet(spec: dict, fuels, seed: int):
    """Producers owning a synthetic fleet, plants dealt out round-robin."""
    rng = np.random.default_rng(int(spec.get("seed", seed)))
    plants = synthetic_fleet(rng, int(spec["n_plants"]), fuels=tuple(spec.get("fuels", fuels)),
                             capacity=tuple(spec.get("capacity", (100.0, 900.0))))
    n_prod = int(spec.get("producers", 1))
    lam = float(spec["risk_aversion"])
    return [Producer(f"producer{k}", lam, tuple(plants[k::n_prod])) for k in range(n_prod)]


def _covariance(spec: dict, grid: ContractGrid, n_fuels: int, base: Path) -> CovarianceModel:
    n = grid.flat_size
    m = n * (n_fuels + 2)
    kind = spec.get("kind", "lead_time")
    if kind == "lead_time":
        vols = [AssetVolatility(**v) for v in spec["assets"]]
        idio = [None if v is None else AssetVolatility(**v) for v in spec.get("idiosyncratic", [])]
        if len(vols) != n_fuels + 2:
            raise ScenarioError(f"covariance.assets needs {n_fuels + 2} entries (electricity, fuels, emissions)")
        return lead_time_covariance(grid, vols, spec["correlation"], float(spec["memory"]),
                                    float(spec.get("delivery_correlation", 0.9)), idio)
    if kind == "matrix":
        if "file" in spec:
            sigma = np.loadtxt(base / spec["file"], delimiter=",", ndmin=2)
        else:
            sigma = np.asarray(spec["values"], dtype=float)
        if sigma.shape != (m, m):
            raise ScenarioError(f"covariance matrix has shape {sigma.shape}, expected {(m, m)}")
        return CovarianceModel.from_stacked(sigma, n)
    raise ScenarioError(f"unknown covariance kind {kind!r}")


def _costs(spec: dict, n: int) -> TransactionCostSpec:
    return TransactionCostSpec(_curve(spec.get("epsilon", 0.0), n, "costs.epsilon"),
                               _curve(spec.get("upsilon", 0.0), n, "costs.upsilon"))


def build_market(raw: dict, base: Path = Path(".")) -> MarketInstance:
    seed = int(raw.get("seed", 0))
    grid = _grid(raw.get("grid"))
    n = grid.flat_size
    fuels = tuple(raw.get("fuels", ()))
    curves_spec = raw.get("curves", {})
    try:
        fuel_prices = {f: _curve(curves_spec["fuel_prices"][f], n, f"fuel price {f}") for f in fuels}
        em = _curve(curves_spec["emission_prices"], n, "emission prices")
        demand = _curve(curves_spec["demand"], grid.n_deliveries, "demand")
    except KeyError as exc:
        raise ScenarioError(f"curves: missing {exc}") from None
    curves = ExogenousCurves(fuel_prices, em, demand, float(raw.get("interest_rate", 0.0)))
    players = raw.get("players", {})
    producers, consumers = _players(players, seed)
    if "fleet" in raw:
        producers += _fleet(raw["fleet"], fuels, seed)
    cov = _covariance(raw.get("covariance", {}), grid, len(fuels), base)
    market = MarketInstance(grid=grid, fuels=fuels, producers=tuple(producers), consumers=tuple(consumers),
                            curves=curves, covariance=cov, trade_bound=float(raw.get("trade_bound", 1e4)))
    if "costs" in raw:
        market = replace(market, cost_spec=_costs(raw["costs"], n))
    if raw.get("blocks"):
        market = replace(market, blocks=tuple(BlockContract(tuple(int(j) for j in b["deliveries"]),
                                                            tuple(float(t) for t in b["trading_times"]))
                                              for b in raw["blocks"]))
    return market


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists() and not path.suffix:
        path = bundled_path(str(path))
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file {path} does not exist") from None
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return scenario_from_dict(raw, path.parent, default_name=path.stem)


def scenario_from_dict(raw: dict, base: Path = Path("."), default_name: str = "scenario") -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a mapping")
    market = build_market(raw, base)
    sweep = raw.get("sweep") or {}
    values = tuple(float(v) for v in sweep.get("values", ()))
    if any(not np.isfinite(v) for v in values):
        raise ScenarioError("sweep values must be finite")
    param = sweep.get("parameter")
    if param is not None:
        apply_override(market, param, values[0] if values else 0.0)  # validates the name early
    solver = raw.get("solver", {})
    return Scenario(name=str(raw.get("name", default_name)), market=market, sweep_parameter=param,
                    sweep_values=values, tol=float(solver.get("tol", 1e-10)), seed=int(raw.get("seed", 0)),
                    raw=copy.deepcopy(raw))


_INDEXED = re.compile(r"^(epsilon|upsilon)\[(\d+)\]$")


def apply_override(market: MarketInstance, parameter: str, value: float) -> MarketInstance:
    """Return ``market`` with one sweep parameter set to ``value``.

    Parameters: ``risk_aversion`` (every player), ``producer_risk_aversion``,
    ``consumer_risk_aversion``, ``epsilon`` / ``upsilon`` (uniform over all
    contracts), ``epsilon[k]`` / ``upsilon[k]`` (flat contract ``k`` only),
    ``fuel_shift:<fuel>`` (relative parallel shift of one fuel curve),
    ``emission_shift``, ``demand_scale`` and ``trade_bound``.
    """
    n = market.grid.flat_size
    value = float(value)
    if parameter in ("risk_aversion", "producer_risk_aversion", "consumer_risk_aversion"):
        prods, cons = market.producers, market.consumers
        if parameter != "consumer_risk_aversion":
            prods = tuple(replace(p, risk_aversion=value) for p in prods)
        if parameter != "producer_risk_aversion":
            cons = tuple(replace(c, risk_aversion=value) for c in cons)
        return replace(market, producers=prods, consumers=cons)
    if parameter in ("epsilon", "upsilon") or _INDEXED.match(parameter):
        spec = market.cost_spec or TransactionCostSpec.uniform(n)
        eps, ups = spec.epsilon.copy(), spec.upsilon.copy()
        m = _INDEXED.match(parameter)
        name, idx = (m.group(1), int(m.group(2))) if m else (parameter, None)
        if idx is not None and not 0 <= idx < n:
            raise ScenarioError(f"{parameter}: contract index out of range (grid has {n})")
        target = eps if name == "epsilon" else ups
        if idx is None:
            target[:] = value
        else:
            target[idx] = value
        return replace(market, cost_spec=TransactionCostSpec(eps, ups))
    if parameter.startswith("fuel_shift:"):
        fuel = parameter.split(":", 1)[1]
        if fuel not in market.curves.fuel_prices:
            raise ScenarioError(f"{parameter}: unknown fuel {fuel!r}")
        prices = dict(market.curves.fuel_prices)
        prices[fuel] = np.asarray(prices[fuel], dtype=float) * (1.0 + value)
        return replace(market, curves=replace(market.curves, fuel_prices=prices))
    if parameter == "emission_shift":
        em = np.asarray(market.curves.emission_prices, dtype=float) * (1.0 + value)
        return replace(market, curves=replace(market.curves, emission_prices=em))
    if parameter == "demand_scale":
        d = np.asarray(market.curves.demand, dtype=float) * value
        return replace(market, curves=replace(market.curves, demand=d))
    if parameter == "trade_bound":
        return replace(market, trade_bound=value)
    raise ScenarioError(f"unknown sweep parameter {parameter!r}")
