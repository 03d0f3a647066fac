"""Multimodal model calibration: SHADE / L-SHADE with Nelder-Mead refinement."""

from .loss import EvalCounter, Objective, mre, primary_loss, smse
from .objective import Dataset, DatasetCollection, ParameterSpace, Problem
from .orchestrator import (
    CalibrationOptions,
    SolutionSet,
    calibrate,
    continue_calibration,
    load_solution_set,
    save_solution_set,
)
from .problems import builtin_problem, load_problem, save_problem

__version__ = "0.1.0"

__all__ = [
    "CalibrationOptions",
    "Dataset",
    "DatasetCollection",
    "EvalCounter",
    "Objective",
    "ParameterSpace",
    "Problem",
    "SolutionSet",
    "builtin_problem",
    "calibrate",
    "continue_calibration",
    "load_problem",
    "load_solution_set",
    "mre",
    "primary_loss",
    "save_problem",
    "save_solution_set",
    "smse",
]
