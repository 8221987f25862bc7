"""Minimum-energy beamforming and slot allocation for symbiotic-radio networks."""

from .conic import ConicError, ConicProgram, solve
from .estimators import CQRAllocator, SQAllocator
from .harness import ExperimentConfig, ResultRow, emit_csv, load_config, run_experiment
from .model import NetworkInstance, ScheduleFrame, SolutionReport, validate_solution
from .plot import AxesSpec, emit_plot
from .sca import AlgorithmConfig, complexity_cqr, complexity_sq, run_cqr, run_sq
from .scenarios import Geometry, build_instance, tdma_baseline, tsr_schedule

__all__ = [
    "AlgorithmConfig", "AxesSpec", "CQRAllocator", "ConicError", "ConicProgram", "ExperimentConfig", "Geometry",
    "NetworkInstance", "ResultRow", "SQAllocator", "ScheduleFrame", "SolutionReport", "build_instance",
    "complexity_cqr", "complexity_sq", "emit_csv", "emit_plot", "load_config", "run_cqr", "run_experiment",
    "run_sq", "solve", "tdma_baseline", "tsr_schedule", "validate_solution",
]
