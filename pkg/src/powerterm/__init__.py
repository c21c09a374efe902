"""Equilibrium term structure of electricity forward prices.

Every producer and consumer solves a mean-variance problem over forward
positions; the equilibrium prices come out of one stacked quadratic program
in which a fictitious market agent enforces clearing.
"""
__version__ = "0.1.0"

from .model import (Consumer, ContractGrid, CovarianceModel, ExogenousCurves, MarketInstance, PowerPlant,
                    Producer, build_grid, validate_market)
from .qp import QpProblem, QpSolution, kkt_residuals, solve_dual_form
from .assembly import AssembledQP, assemble_global
from .equilibrium import (EquilibriumSolution, InfeasibleMarketError, MarketError, NashReport, SolverError,
                          best_response, player_kkt_residuals, solve_equilibrium, verify_nash)
from .extensions import (BlockContract, TransactionCostSpec, forwards_from_futures, futures_from_forwards)
from .calibration import (PlantCalibration, ProductionHistory, fit_fleet, fit_plant, shrinkage_covariance)
from .scenario import Scenario, ScenarioError, apply_override, load_scenario

__all__ = [
    "AssembledQP",
    "BlockContract", "Consumer", "ContractGrid", "CovarianceModel", "EquilibriumSolution", "ExogenousCurves",
    "InfeasibleMarketError", "MarketError", "MarketInstance", "NashReport", "PlantCalibration", "PowerPlant",
    "Producer", "ProductionHistory", "QpProblem", "QpSolution", "Scenario", "ScenarioError", "SolverError",
    "TransactionCostSpec", "apply_override", "assemble_global", "best_response", "build_grid", "fit_fleet",
    "fit_plant", "forwards_from_futures", "futures_from_forwards", "kkt_residuals", "load_scenario",
    "player_kkt_residuals", "shrinkage_covariance", "solve_dual_form", "solve_equilibrium",
    "validate_market", "verify_nash",
]
