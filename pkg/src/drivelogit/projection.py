"""League-average projections, rank shifts, and block-bootstrap intervals.

A projection replays a team's actual drives with selected parts of the
linear predictor neutralized: the opponent's strength coefficient set to
zero (the sum-to-zero coding makes zero the league average), the home
indicator replaced by the league-average home proportion, and optionally
the centered complementary features zeroed (their league average by
construction). Game context is never touched, and the complementary
availability term is kept, so the two standard regimes differ only in
whether the complementary unit's actual performance is credited.

Neutralizing only proportional terms cannot break cumulative-probability
monotonicity, and zeroing the centered features removes every
non-proportional contribution, so regime probabilities stay valid
simplexes whenever the underlying fit is feasible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import EmptyInput, NotASimplex, RefitFailure, UnknownTeam
from .likelihood import PenaltyConfig
from .model import (
    CATEGORY_POINTS,
    FeatureSpec,
    build_design,
    outcomes_array,
    probability_matrix,
)
from .solver import FitConfig, FitResult, Structure, fit, refit_selected

__all__ = [
    "ProjectionRegime",
    "ProjectionRow",
    "ProjectionReport",
    "BootstrapShifts",
    "expected_points",
    "league_home_rate",
    "project_team",
    "team_values",
    "bootstrap_shifts",
    "build_projection_report",
    "rank_shift_table",
]

_POINTS = np.asarray(CATEGORY_POINTS)


@dataclass(frozen=True)
class ProjectionRegime:
    """What gets replaced when replaying drives.

    ``home_rate`` substitutes for the home indicator whenever a projection
    is computed (both standard regimes neutralize scheduling).
    """

    neutralize_opponent: bool
    home_rate: float
    neutralize_complementary: bool

    def __post_init__(self):
        if not 0.0 <= self.home_rate <= 1.0:
            raise ValueError("home_rate must lie in [0, 1]")

    @classmethod
    def sos_only(cls, home_rate: float) -> "ProjectionRegime":
        return cls(True, home_rate, False)

    @classmethod
    def sos_cmp(cls, home_rate: float) -> "ProjectionRegime":
        return cls(True, home_rate, True)


def expected_points(pi) -> float:
    """Probability-weighted drive points for one category distribution."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (5,):
        raise NotASimplex("expected a length-5 probability vector")
    if (pi < 0).any() or abs(float(pi.sum()) - 1.0) > 1e-9:
        raise NotASimplex("probabilities must be non-negative and sum to 1")
    return float(pi @ _POINTS)


def league_home_rate(observations) -> float:
    """Drive-weighted proportion of drives taken by the home offense."""
    if not observations:
        raise EmptyInput("no observations")
    return float(np.mean([o.home for o in observations]))


def _regime_eta(design, params, side: str, regime: ProjectionRegime) -> np.ndarray:
    if side not in ("offense", "defense"):
        raise ValueError("side must be 'offense' or 'defense'")
    eta = design.eta(params)
    home = design.U[:, design.home_col]
    eta = eta + params.delta * (regime.home_rate - home)[:, None]
    if regime.neutralize_opponent:
        if side == "offense":
            opponent = params.beta[design.def_index]
        else:
            opponent = params.alpha[design.off_index]
        eta = eta - opponent[:, None]
    if regime.neutralize_complementary:
        eta = eta - (design.P @ params.gamma)[:, None]
        nonprop = design.nonprop_matrix(params)
        if nonprop.any():
            eta = eta - design.P @ nonprop
    return eta


def _regime_points(design, params, side, regime) -> np.ndarray:
    pi = probability_matrix(expit(_regime_eta(design, params, side, regime)))
    if (pi < 0).any() or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-9:
        raise NotASimplex("regime probabilities left the simplex")
    return pi @ _POINTS


def team_values(fit_result: FitResult, observations, side: str,
                regime: ProjectionRegime, design=None) -> dict:
    """Per-team mean projected points per drive on the given side.

    Returns {team: (mean points, drive count)} over the teams that
    actually appear on that side. One vectorized pass over all rows.
    """
    if design is None:
        design = build_design(observations, fit_result.feature_spec,
                              teams=fit_result.teams)
    ep = _regime_points(design, fit_result.params, side, regime)
    out: dict[str, tuple[float, int]] = {}
    labels = [o.offense if side == "offense" else o.defense for o in observations]
    order = {}
    for i, t in enumerate(labels):
        order.setdefault(t, []).append(i)
    for team, idx in order.items():
        vals = ep[np.asarray(idx)]
        out[team] = (float(vals.mean()), len(idx))
    return out


def project_team(fit_result: FitResult, observations, team: str,
                 regime: ProjectionRegime, side: str = "offense",
                 per_game: bool = False):
    """Projected points per drive for one team, averaged over the season,
    or per game when ``per_game`` is set."""
    if team not in fit_result.teams:
        raise UnknownTeam(f"{team!r} is not in the fitted roster")
    rows = [o for o in observations
            if (o.offense if side == "offense" else o.defense) == team]
    if not rows:
        raise EmptyInput(f"{team!r} has no drives on side {side!r}")
    design = build_design(rows, fit_result.feature_spec, teams=fit_result.teams)
    ep = _regime_points(design, fit_result.params, side, regime)
    if not per_game:
        return float(ep.mean())
    by_game: dict[str, list[float]] = {}
    for o, v in zip(rows, ep):
        by_game.setdefault(o.game_id, []).append(float(v))
    return {g: float(np.mean(v)) for g, v in sorted(by_game.items())}


@dataclass(frozen=True, eq=False)
class BootstrapShifts:
    """Replicate projection shifts per team with quantile intervals."""

    teams: tuple[str, ...]
    shifts: np.ndarray          # (replicates kept, teams)
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_dropped: int
    n_replicates: int


def bootstrap_shifts(
    observations,
    selected: FeatureSpec,
    side: str = "offense",
    replicates: int = 1000,
    seed: int = 0,
    spec: FeatureSpec | None = None,
    config: FitConfig = FitConfig(),
    home_rate: float | None = None,
    warm: FitResult | None = None,
) -> BootstrapShifts:
    """Resample game-halves, refit the selected model, recompute shifts.

    Each replicate resamples whole halves with replacement, refits the
    selected structure unpenalized (re-centering on the replicate rows),
    and re-evaluates the SOS+CMP minus SOS-only shift on the ORIGINAL
    drives under the replicate's parameters. Failed or non-converged
    refits are dropped and counted; more than 5% dropped raises
    RefitFailure. CIs are the 2.5%/97.5% empirical quantiles
    (inverted-CDF convention).
    """
    if replicates < 2:
        raise ValueError("bootstrap needs at least 2 replicates")
    spec = spec or FeatureSpec.default()
    if home_rate is None:
        home_rate = league_home_rate(observations)
    roster = tuple(sorted({o.offense for o in observations}
                          | {o.defense for o in observations}))
    halves: dict[str, list] = {}
    for o in observations:
        halves.setdefault(o.half_id, []).append(o)
    half_ids = sorted(halves)
    sos = ProjectionRegime.sos_only(home_rate)
    cmp_ = ProjectionRegime.sos_cmp(home_rate)
    teams_side = sorted({o.offense if side == "offense" else o.defense
                         for o in observations})
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    warm_params = warm.params if warm is not None else None
    kept_rows = []
    dropped = 0
    for _ in range(replicates):
        pick = rng.integers(0, len(half_ids), len(half_ids))
        rep_obs = []
        for hi in pick:
            rep_obs.extend(halves[half_ids[int(hi)]])
        try:
            rep_design = build_design(rep_obs, spec, teams=roster)
            rep_y = outcomes_array(rep_obs)
            structure = Structure.selected(rep_design, selected)
            try:
                res = fit(rep_design, rep_y, PenaltyConfig(0.0), config,
                          warm_start=warm_params, structure=structure)
            except Exception:
                res = fit(rep_design, rep_y, PenaltyConfig(0.0), config,
                          structure=structure)
            if not res.converged:
                dropped += 1
                continue
            v_sos = team_values(res, observations, side, sos)
            v_cmp = team_values(res, observations, side, cmp_)
        except Exception:
            dropped += 1
            continue
        kept_rows.append([v_cmp[t][0] - v_sos[t][0] for t in teams_side])
    if dropped > 0.05 * replicates:
        raise RefitFailure(
            f"{dropped} of {replicates} bootstrap refits failed (>5%)")
    shifts = np.array(kept_rows)
    ci = np.quantile(shifts, [0.025, 0.975], axis=0, method="inverted_cdf")
    return BootstrapShifts(
        teams=tuple(teams_side),
        shifts=shifts,
        ci_lo=ci[0],
        ci_hi=ci[1],
        n_dropped=dropped,
        n_replicates=replicates,
    )


@dataclass(frozen=True)
class ProjectionRow:
    team: str
    drives: int
    games: int
    value_sos: float
    value_cmp: float
    shift: float
    ci_lo: float | None
    ci_hi: float | None
    rank_sos: int
    rank_cmp: int
    cmp_turnover_rate: float
    cmp_turnover_rank: int
    cmp_start_pos: float
    cmp_start_rank: int


@dataclass(frozen=True)
class ProjectionReport:
    side: str
    home_rate: float
    min_games: int
    rows: tuple[ProjectionRow, ...]

    def row_for(self, team: str) -> ProjectionRow:
        for r in self.rows:
            if r.team == team:
                return r
        raise KeyError(team)


def _rank_map(values: dict, descending: bool) -> dict:
    order = sorted(values, key=lambda t: ((-values[t]) if descending else values[t], t))
    return {t: i + 1 for i, t in enumerate(order)}


def build_projection_report(
    observations,
    selected: FeatureSpec,
    side: str = "offense",
    league: str = "nfl",
    min_games: int | None = None,
    replicates: int = 1000,
    seed: int = 0,
    spec: FeatureSpec | None = None,
    config: FitConfig = FitConfig(),
) -> ProjectionReport:
    """Fit the selected model, project every qualifying team under both
    regimes, attach bootstrap CIs for the shifts, and rank.

    Offensive values rank descending (more points scored is better),
    defensive ascending (fewer points allowed is better); ties break
    lexicographically by team id. ``min_games`` defaults to 5 in college
    mode and 1 otherwise; when ``replicates`` is 0 the CIs are omitted.
    """
    if min_games is None:
        min_games = 5 if league == "college" else 1
    spec = spec or FeatureSpec.default()
    design = build_design(observations, spec)
    y = outcomes_array(observations)
    point = refit_selected(design, y, selected, config)
    if not point.converged:
        raise RefitFailure("the point refit of the selected model did not converge")
    home_rate = league_home_rate(observations)
    sos = ProjectionRegime.sos_only(home_rate)
    cmp_ = ProjectionRegime.sos_cmp(home_rate)
    v_sos = team_values(point, observations, side, sos)
    v_cmp = team_values(point, observations, side, cmp_)

    games: dict[str, set] = {}
    to_num: dict[str, list] = {}
    to_den: dict[str, int] = {}
    sp_num: dict[str, list] = {}
    for o in observations:
        team = o.offense if side == "offense" else o.defense
        games.setdefault(team, set()).add(o.game_id)
        if o.cmp_available:
            to_num.setdefault(team, []).append(o.cmp_features["turnover.nonscor"])
            to_den[team] = to_den.get(team, 0) + 1
        if o.start_pos is not None:
            sp_num.setdefault(team, []).append(o.start_pos)

    eligible = sorted(t for t in v_sos if len(games[t]) >= min_games)
    if not eligible:
        raise EmptyInput("no team meets the minimum-games threshold")
    ci = {}
    if replicates:
        boot = bootstrap_shifts(observations, selected, side=side,
                                replicates=replicates, seed=seed, spec=spec,
                                config=config, home_rate=home_rate, warm=point)
        for i, t in enumerate(boot.teams):
            ci[t] = (float(boot.ci_lo[i]), float(boot.ci_hi[i]))

    descending = side == "offense"
    rank_sos = _rank_map({t: v_sos[t][0] for t in eligible}, descending)
    rank_cmp = _rank_map({t: v_cmp[t][0] for t in eligible}, descending)
    to_rate = {t: (float(np.mean(to_num[t])) if t in to_num else 0.0) for t in eligible}
    sp_mean = {t: (float(np.mean(sp_num[t])) if t in sp_num else float("nan")) for t in eligible}
    # complementary turnover rate and takeover spot: more/deeper is better
    to_rank = _rank_map(to_rate, descending=True)
    sp_rank = _rank_map({t: (sp_mean[t] if np.isfinite(sp_mean[t]) else -np.inf)
                         for t in eligible}, descending=True)

    rows = []
    for t in eligible:
        lo, hi = ci.get(t, (None, None))
        rows.append(ProjectionRow(
            team=t,
            drives=v_sos[t][1],
            games=len(games[t]),
            value_sos=v_sos[t][0],
            value_cmp=v_cmp[t][0],
            shift=v_cmp[t][0] - v_sos[t][0],
            ci_lo=lo,
            ci_hi=hi,
            rank_sos=rank_sos[t],
            rank_cmp=rank_cmp[t],
            cmp_turnover_rate=to_rate[t],
            cmp_turnover_rank=to_rank[t],
            cmp_start_pos=sp_mean[t],
            cmp_start_rank=sp_rank[t],
        ))
    return ProjectionReport(side=side, home_rate=home_rate,
                            min_games=min_games, rows=tuple(rows))


def rank_shift_table(report: ProjectionReport, top: int = 5) -> str:
    """Aligned text table of the most positive and most negative shifts.

    Shows min(top, n//2) teams per block, with a truncation note when
    fewer than requested; ties sort lexicographically by team id.
    """
    rows = sorted(report.rows, key=lambda r: (-r.shift, r.team))
    k = max(1, min(top, len(rows) // 2)) if len(rows) > 1 else 1
    chunks = [("Largest positive shifts", rows[:k]),
              ("Largest negative shifts", rows[-k:])]
    header = (f"{'team':<12}{'drives':>7}{'SOS':>8}{'SOS+CMP':>9}{'shift':>8}"
              f"{'95% CI':>20}{'rank':>10}{'TO rate':>12}{'start pos':>13}")
    lines = [f"side: {report.side}   home rate: {report.home_rate:.3f}", ""]
    for title, block in chunks:
        lines.append(title)
        lines.append(header)
        for r in block:
            ci = ("      --      " if r.ci_lo is None
                  else f"[{r.ci_lo:+.3f}, {r.ci_hi:+.3f}]")
            lines.append(
                f"{r.team:<12}{r.drives:>7}{r.value_sos:>8.3f}{r.value_cmp:>9.3f}"
                f"{r.shift:>+8.3f}{ci:>20}{r.rank_sos:>4}->{r.rank_cmp:<4}"
                f"{r.cmp_turnover_rate:>7.3f}({r.cmp_turnover_rank:>2})"
                f"{r.cmp_start_pos:>8.1f}({r.cmp_start_rank:>2})")
        lines.append("")
    if k < top:
        lines.append(f"(showing {k} per block; only {len(rows)} ranked teams)")
    return "\n".join(lines)
