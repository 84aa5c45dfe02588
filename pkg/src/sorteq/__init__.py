"""Sorting equilibrium with hierarchical firms: solver, moments, simulation and calibration."""

__version__ = "0.1.0"

from .calibrate import CalibrationResult, bootstrap_calibrate, identify
from .counterfactual import CounterfactualTable, OutcomeVector, decompose, outcome_vector
from .errors import (ConvergenceError, DomainError, InfeasibleMomentsError, ModelOverflowError, PanelError,
                     QuadratureError, ReplicateFailureError, SortEqError)
from .measure import FirmStats, MeasuredMoments, firm_statistics, measure_moments, resample
from .model import Equilibrium, ModelParams, inverse_alpha, solve_equilibrium
from .moments import (AkmReport, MomentSet, WageReport, WelfareReport, akm_report, conditional_moments,
                      finite_diff_sensitivity, targeted_moments, wage_report, welfare_report)
from .simulate import Panel, draw_sizeweighted_theta, read_panel_csv, simulate_panel, write_panel_csv

__all__ = [
    "AkmReport", "CalibrationResult", "ConvergenceError", "CounterfactualTable", "DomainError", "Equilibrium",
    "FirmStats", "InfeasibleMomentsError", "MeasuredMoments", "ModelOverflowError", "ModelParams", "MomentSet",
    "OutcomeVector", "Panel", "PanelError", "QuadratureError", "ReplicateFailureError", "SortEqError",
    "WageReport", "WelfareReport", "akm_report", "bootstrap_calibrate", "conditional_moments", "decompose",
    "draw_sizeweighted_theta", "finite_diff_sensitivity", "firm_statistics", "identify", "inverse_alpha",
    "measure_moments", "outcome_vector", "read_panel_csv", "resample", "simulate_panel", "solve_equilibrium",
    "targeted_moments", "wage_report", "welfare_report", "write_panel_csv",
]
