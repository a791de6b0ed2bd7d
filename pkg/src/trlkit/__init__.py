"""Transient resilience loss from population-activity curves, and a Gamma
random-intercept model explaining it."""

from .covariates import (
    PREDICTORS,
    CovariateOptions,
    Diagnostics,
    NearestCenterLookup,
    PolygonLookup,
    StandardizedMatrix,
    assemble_rows,
    diagnostics,
    distance_to_path,
    haversine_km,
    restoration_days,
    road_hours,
    standardize,
)
from .data_model import Dataset, Horizon, RegionId, load_inputs
from .glmm import (
    FitControls,
    GlmmFit,
    ModelSpec,
    exp_coefficient,
    fit_glm,
    fit_glmm,
    information_criteria,
    r2_nakagawa,
    variance_partition,
    wald_table,
)
from .resilience import (
    RegionSeries,
    ResilienceResult,
    SelectionThresholds,
    activity_rate,
    build_series,
    resilience_from_trl,
    select_affected,
    transient_loss,
)

__version__ = "0.1.0"
