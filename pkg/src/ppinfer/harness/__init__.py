"""Simulation, baselines, power diagnostics, reporting and the command line."""

from .analysis import AnalysisReport, analyze, emit_analysis, run_analysis
from .baselines import classical_result, imputation_result
from .power import PowerCheck, error_threshold, power_check
from .report import CoverageReport, emit_report
from .sim import Bernoulli, CovShift, Gaussian, LabelShift, SimScenario, coverage_sim

__all__ = [
    "AnalysisReport",
    "analyze",
    "emit_analysis",
    "run_analysis",
    "classical_result",
    "imputation_result",
    "PowerCheck",
    "error_threshold",
    "power_check",
    "CoverageReport",
    "emit_report",
    "Bernoulli",
    "CovShift",
    "Gaussian",
    "LabelShift",
    "SimScenario",
    "coverage_sim",
]
