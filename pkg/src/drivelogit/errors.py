"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for every error this package raises on purpose."""


class EmptyInput(PipelineError):
    """No observations (or no plays) were supplied."""


class SingleTeamLeague(PipelineError):
    """Fewer than two distinct teams; contrast coding is undefined."""


class UnknownFeature(PipelineError):
    """A feature name does not resolve to a glossary statistic or known term."""


class UnknownTeam(PipelineError):
    """An observation references a team outside the fitted roster."""


class DimensionMismatch(PipelineError):
    """Outcome vector and design matrix disagree on row count."""


class NonMonotoneCumulative(PipelineError):
    """Cumulative probabilities increase across categories, giving negative mass."""


class InfeasiblePoint(PipelineError):
    """Parameters assign non-positive probability to an observed outcome."""


class InfeasibleStart(PipelineError):
    """The solver's starting point is infeasible."""


class InfeasibleFit(PipelineError):
    """A fitted parameter set is infeasible on the rows being diagnosed."""


class InfeasibleTruth(PipelineError):
    """A generative truth produces infeasible probabilities on its own support."""


class NonProportionalFit(PipelineError):
    """Joint residual sampling requires a fit with no per-category coefficients."""


class TeamCoverageImpossible(PipelineError):
    """No fold assignment keeps every team in every training split."""


class NotASimplex(PipelineError):
    """A probability vector has negative entries or does not sum to one."""


class RefitFailure(PipelineError):
    """Too many bootstrap replicates failed to refit."""


class UnsortedInput(PipelineError):
    """Play-by-play rows are not grouped and ordered by game, half, drive."""


class MissingFieldPosition(PipelineError):
    """A play lacks the field position needed for drive aggregation."""
