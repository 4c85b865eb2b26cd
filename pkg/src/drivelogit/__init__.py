"""Partially regularized cumulative-logit modeling of football drive
scoring, with complementary-unit effects, projections, and diagnostics."""

from .errors import (
    PipelineError,
    EmptyInput,
    SingleTeamLeague,
    UnknownFeature,
    UnknownTeam,
    DimensionMismatch,
    NonMonotoneCumulative,
    InfeasiblePoint,
    InfeasibleStart,
    InfeasibleFit,
    InfeasibleTruth,
    NonProportionalFit,
    TeamCoverageImpossible,
    NotASimplex,
    RefitFailure,
    UnsortedInput,
    MissingFieldPosition,
)
from .model import (
    CATEGORY_POINTS,
    GLOSSARY_FEATURES,
    INTERACTION_FEATURE,
    DEFAULT_FEATURES,
    ScoringCategory,
    DriveObservation,
    FeatureSpec,
    ParameterSet,
    DesignMatrix,
    build_design,
    category_probabilities,
    context_vector,
    feature_value,
    outcomes_array,
)
from .likelihood import (
    PenaltyConfig,
    ObjectiveValue,
    log_likelihood,
    objective,
    gradient,
    penalty_scales,
    penalty_value,
)
from .solver import (
    FitConfig,
    FitResult,
    Structure,
    fit,
    lambda_max,
    lambda_path,
    refit_selected,
    predict_probabilities,
    soft_threshold,
)
from .selection import (
    CvResult,
    StabilityTable,
    NestedMae,
    cross_validate,
    stability,
    nested_mae,
    union_selected,
)
from .diagnostics import (
    SurrogateResidualSet,
    CalibrationTable,
    surrogate_binarized,
    surrogate_joint,
    calibration,
    cv_calibration,
    qq_slope,
)
from .projection import (
    ProjectionRegime,
    ProjectionReport,
    BootstrapShifts,
    expected_points,
    league_home_rate,
    team_values,
    project_team,
    bootstrap_shifts,
    build_projection_report,
    rank_shift_table,
)
from .ingestion import (
    PlayRecord,
    DriveSummary,
    read_plays_csv,
    write_plays_csv,
    read_drives_csv,
    write_drives_csv,
    validate_and_filter,
    aggregate_drives,
    link_complementary,
    group_nonmajor,
    ingest_plays,
)
from .simulate import (
    TruthSpec,
    NFL_CATEGORY_RATES,
    mu_from_shares,
    check_feasibility,
    generate_season,
    generate_drive_summaries,
    nfl_like_truth,
    null_truth,
    intercept_only_truth,
)

__version__ = "0.1.0"
