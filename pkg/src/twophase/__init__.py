"""Two-phase sampling design engine.

Computes optimal stratum allocations for inverse-probability-weighted and
generalized-raking regression estimators, runs both estimators end to end,
and ships a Monte Carlo harness for comparing designs.
"""

from twophase.cohort import (
    Cohort,
    CohortError,
    SampleIndicator,
    StratificationRule,
    StratumIndex,
    draw_sample,
    load_cohort,
    stratify,
)
from twophase.glm import (
    FitResult,
    Indicator,
    InfluenceMatrix,
    Interaction,
    Main,
    ModelSpec,
    Spline,
    build_design_matrix,
    fit_weighted,
    influence_functions,
)
from twophase.calibration import CalibrationError, CalibrationResult, calibrate, greg_total
from twophase.allocation import (
    Allocation,
    AllocationError,
    StratumMoments,
    allocation_to_probabilities,
    fixed_design,
    if_gr_allocation,
    if_ipw_allocation,
    integer_allocation,
    neyman_real,
    stratum_moments,
)
from twophase.estimators import (
    EstimatorResult,
    EstimationError,
    ImputationSpec,
    impute_x,
    ipw_estimate,
    raking_estimate,
)
from twophase.scenarios import ScenarioData, ScenarioSpec, generate
from twophase.montecarlo import MonteCarloAbort, MonteCarloReport, emit_report, run_grid, run_mc

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "AllocationError",
    "CalibrationError",
    "CalibrationResult",
    "Cohort",
    "CohortError",
    "EstimatorResult",
    "EstimationError",
    "FitResult",
    "ImputationSpec",
    "Indicator",
    "InfluenceMatrix",
    "Interaction",
    "Main",
    "ModelSpec",
    "MonteCarloAbort",
    "MonteCarloReport",
    "SampleIndicator",
    "ScenarioData",
    "ScenarioSpec",
    "Spline",
    "StratificationRule",
    "StratumIndex",
    "StratumMoments",
    "allocation_to_probabilities",
    "build_design_matrix",
    "calibrate",
    "draw_sample",
    "emit_report",
    "fit_weighted",
    "fixed_design",
    "generate",
    "greg_total",
    "if_gr_allocation",
    "if_ipw_allocation",
    "influence_functions",
    "impute_x",
    "integer_allocation",
    "ipw_estimate",
    "load_cohort",
    "neyman_real",
    "raking_estimate",
    "run_grid",
    "run_mc",
    "stratify",
    "stratum_moments",
]
