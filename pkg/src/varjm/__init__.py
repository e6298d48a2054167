"""Joint models linking biomarker mean and within-subject variability to event risk.

The package implements a two-step estimation pipeline: a homoscedastic
linear mixed model supplies subject- and time-specific residuals, whose
transformations enter a multivariate Bayesian joint model (longitudinal
submodels + proportional-hazards submodel with a penalized B-spline log
baseline hazard) as an additional longitudinal outcome. A simulation module
and a replicate study harness reproduce the validating experiments.
"""

__version__ = "0.1.0"

from .data import (
    IngestReport,
    LongitudinalDataset,
    Observation,
    SchemaError,
    SurvivalRecord,
    ValidationError,
    emit,
    ingest,
    subject_view,
)
from .lmm import (
    ConvergenceError,
    LmmFit,
    LmmSpec,
    ResidualSeries,
    SingularDesignError,
    empirical_bayes,
    fit_lmm,
    residuals,
    variability_dataset,
)
from .splines import BSplineBasis, NaturalCubicBasis, PenaltyMatrix, penalty
from .terms import (
    Intercept,
    LinearTime,
    QuadCentered,
    SplineTime,
    TrajectoryDesign,
    parse_terms,
)

__all__ = [name for name in dir() if not name.startswith("_")]
