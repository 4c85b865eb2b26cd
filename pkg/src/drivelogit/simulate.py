"""Synthetic season generation from a known-parameter model.

The generator walks games drive by drive: each drive's category
probabilities come from the true parameters applied to the current
observation (teams, home, context, and the PREVIOUS drive's realized
statistics), so complementary causality is genuine rather than bolted on
afterwards. Scores accumulate for real and the clock runs down linearly;
possession alternates except after a defensive touchdown, where the same
offense keeps the ball.

Seasons are emitted as canonical DriveSummary rows and then linked by the
production ``link_complementary``, so simulated data exercises the same
pipeline as parsed data.

Feasibility of a truth is a linear condition: with proportional effects
only, the cumulative predictor gaps eta_s - eta_{s+1} equal the intercept
gaps, which are positive whenever the intercepts decrease. Only
non-proportional coefficients can close a gap, so the rejection probe
checks exactly those terms over a cloud of sampled feature vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import logit

from .errors import InfeasibleTruth, NonMonotoneCumulative
from .ingestion import DriveSummary, link_complementary
from .model import (
    DEFAULT_FEATURES,
    GLOSSARY_FEATURES,
    HALF_SECONDS,
    INTERACTION_FEATURE,
    DriveObservation,
    FeatureSpec,
    ParameterSet,
    ScoringCategory,
    category_probabilities,
    context_vector,
    feature_value,
)

__all__ = [
    "TruthSpec",
    "NFL_CATEGORY_RATES",
    "STAT_MEANS",
    "mu_from_shares",
    "check_feasibility",
    "generate_drive_summaries",
    "generate_season",
    "nfl_like_truth",
    "null_truth",
    "intercept_only_truth",
]

# League-wide category shares (DefensiveTD, Safety, NoScore, FieldGoal,
# OffensiveTD) used by the NFL-like presets.
NFL_CATEGORY_RATES = (0.01, 0.005, 0.645, 0.14, 0.20)

# Generator means for the freely sampled glossary statistics. The
# remaining three (pts.scored, turnover.nonscor, punt.safety) are derived
# from the drive's outcome.
STAT_MEANS = {
    "off.ST.yards.gained": 30.0,
    "ST.return.yards.net": -5.0,
    "first.downs.gained": 1.6,
    "third.downs.converted": 0.7,
    "n.completions": 2.3,
    "n.incompletions": 1.7,
    "n.stuffed.runs": 0.9,
    "n.positive.runs": 2.1,
    "n.negative.plays": 0.7,
    "n.sacks": 0.25,
    "n.fumbles": 0.12,
}

_NORMAL_SCALES = {"off.ST.yards.gained": 12.0, "ST.return.yards.net": 4.0}
_DERIVED = ("pts.scored", "turnover.nonscor", "punt.safety")


def mu_from_shares(shares) -> np.ndarray:
    """Intercepts that reproduce the given five category shares at eta = mu."""
    shares = np.asarray(shares, dtype=float)
    if shares.shape != (5,) or abs(shares.sum() - 1.0) > 1e-9 or (shares < 0).any():
        raise ValueError("shares must be five non-negative values summing to 1")
    upper = np.cumsum(shares[::-1])[::-1]  # P(Y >= s) for s = 1..5
    return logit(upper[1:])


@dataclass(frozen=True, eq=False)
class TruthSpec:
    """A fully specified generative model plus schedule and feature laws.

    ``feature_spec.centering_means`` must be set: the truth's linear
    predictor centers the complementary statistics at these declared
    constants (a fitted model re-centers at empirical means; the
    difference is absorbed by the complementary intercept).
    ``turnover_rate`` is the Bernoulli probability that a scoreless drive
    ends in a direct-handover turnover, either one shared rate or a
    per-defense mapping.
    """

    teams: tuple[str, ...]
    params: ParameterSet
    feature_spec: FeatureSpec
    games_per_team: int = 16
    drives_per_half: int = 11
    turnover_rate: float | Mapping[str, float] = 0.18
    stat_means: Mapping[str, float] | None = None
    start_pos_turnover: tuple[float, float] = (41.0, 12.0)
    start_pos_normal: tuple[float, float] = (28.0, 8.0)

    def __post_init__(self):
        if len(self.teams) < 2 or len(self.teams) % 2:
            raise ValueError("need an even number of at least two teams")
        if len(set(self.teams)) != len(self.teams):
            raise ValueError("duplicate team ids")
        if self.feature_spec.centering_means is None:
            raise ValueError("truth feature_spec must carry centering_means")
        if abs(float(np.sum(self.params.alpha))) > 1e-9:
            raise ValueError("true alpha must sum to zero")
        if abs(float(np.sum(self.params.beta))) > 1e-9:
            raise ValueError("true beta must sum to zero")
        if self.games_per_team < 1 or self.drives_per_half < 1:
            raise ValueError("schedule sizes must be positive")

    def rate_for(self, defense: str) -> float:
        if isinstance(self.turnover_rate, Mapping):
            return float(self.turnover_rate[defense])
        return float(self.turnover_rate)

    def mean_for(self, name: str) -> float:
        means = self.stat_means if self.stat_means is not None else STAT_MEANS
        return float(means[name])


def _nonprop_matrix(truth: TruthSpec) -> np.ndarray:
    c = truth.feature_spec.n_features
    out = np.zeros((c, 4))
    for s, vec in truth.params.gamma_s.items():
        out[:, s - 2] = vec
    return out


def check_feasibility(truth: TruthSpec, n_points: int = 10_000, seed: int = 0) -> None:
    """Rejection probe: sample feature vectors and verify every cumulative
    gap stays non-negative. Raises InfeasibleTruth otherwise.

    Proportional terms cancel in the gaps, so only intercepts and
    non-proportional coefficients enter. Binary indicators are probed at
    both levels with probability 1/2 each, which covers their support
    exactly.
    """
    names = truth.feature_spec.feature_names
    means = np.asarray(truth.feature_spec.centering_means)
    rng = np.random.default_rng(seed)
    cols = []
    turnover = rng.integers(0, 2, n_points).astype(float)
    start_t = np.clip(np.round(rng.normal(*truth.start_pos_turnover, n_points)), 1, 99)
    start_n = np.clip(np.round(rng.normal(*truth.start_pos_normal, n_points)), 1, 99)
    start = np.where(turnover == 1.0, start_t, start_n)
    for name in names:
        if name == "turnover.nonscor":
            cols.append(turnover)
        elif name == "punt.safety":
            cols.append(rng.integers(0, 2, n_points).astype(float))
        elif name == "pts.scored":
            cols.append(rng.choice([0.0, 3.0, 7.0], n_points))
        elif name == INTERACTION_FEATURE:
            cols.append(turnover * start)
        elif name in _NORMAL_SCALES:
            cols.append(rng.normal(truth.mean_for(name), _NORMAL_SCALES[name], n_points))
        else:
            cols.append(rng.poisson(truth.mean_for(name), n_points).astype(float))
    x = np.column_stack(cols) - means
    gs = _nonprop_matrix(truth)
    mu = truth.params.mu
    for k in range(3):
        gap = (mu[k] - mu[k + 1]) + x @ (gs[:, k] - gs[:, k + 1])
        if float(gap.min()) < 0.0:
            raise InfeasibleTruth(
                f"cumulative gap {k + 2}/{k + 3} goes negative "
                f"(worst {float(gap.min()):.4f}) over the probe cloud")


def _make_schedule(teams, games_per_team, rng) -> list[tuple[str, str]]:
    """games_per_team rounds of random pairings; first of each pair hosts."""
    n = len(teams)
    games = []
    for _ in range(games_per_team):
        order = rng.permutation(n)
        for i in range(0, n, 2):
            games.append((teams[int(order[i])], teams[int(order[i + 1])]))
    return games


def _eta_single(truth: TruthSpec, obs: DriveObservation, team_index) -> np.ndarray:
    p = truth.params
    base = (
        p.alpha[team_index[obs.offense]]
        + p.beta[team_index[obs.defense]]
        + p.delta * obs.home
        + float(p.phi @ context_vector(obs))
        + p.xi * obs.cmp_available
    )
    eta = p.mu + base
    if obs.cmp_available:
        names = truth.feature_spec.feature_names
        x = np.array([feature_value(obs, nm) for nm in names], dtype=float)
        x -= np.asarray(truth.feature_spec.centering_means)
        eta = eta + float(p.gamma @ x)
        for s, vec in p.gamma_s.items():
            eta[s - 2] += float(vec @ x)
    return eta


def _draw_stats(truth, rng, outcome, defense) -> dict:
    """Realized glossary statistics for a finished drive.

    Draw order is fixed: the turnover coin (scoreless drives only), then
    each freely sampled statistic in glossary order. pts.scored and
    punt.safety are derived from the outcome.
    """
    turnover = 0.0
    if outcome == ScoringCategory.NO_SCORE:
        turnover = 1.0 if rng.random() < truth.rate_for(defense) else 0.0
    stats = {}
    for name in GLOSSARY_FEATURES:
        if name in _DERIVED:
            continue
        if name in _NORMAL_SCALES:
            stats[name] = float(rng.normal(truth.mean_for(name), _NORMAL_SCALES[name]))
        else:
            stats[name] = float(rng.poisson(truth.mean_for(name)))
    stats["pts.scored"] = max(outcome.points, 0.0)
    stats["turnover.nonscor"] = turnover
    stats["punt.safety"] = (
        1.0 if (outcome == ScoringCategory.NO_SCORE and turnover == 0.0)
        or outcome == ScoringCategory.SAFETY else 0.0
    )
    return stats


def generate_drive_summaries(truth: TruthSpec, seed: int) -> list[DriveSummary]:
    """One season of canonical drive rows under the true model."""
    check_feasibility(truth)
    rng = np.random.default_rng(seed)
    team_index = {t: i for i, t in enumerate(truth.teams)}
    zero = {k: 0.0 for k in GLOSSARY_FEATURES}
    categories = np.arange(1, 6)
    summaries: list[DriveSummary] = []
    for gnum, (home, away) in enumerate(_make_schedule(truth.teams, truth.games_per_team, rng), 1):
        game_id = f"G{gnum:04d}"
        points = {home: 0.0, away: 0.0}
        for half in (1, 2):
            offense = away if half == 1 else home
            prev: DriveSummary | None = None
            for d in range(1, truth.drives_per_half + 1):
                defense = home if offense == away else away
                linked = prev is not None and prev.offense == defense
                nonscor = linked and prev.stats["turnover.nonscor"] == 1.0
                loc, scale = (truth.start_pos_turnover if nonscor
                              else truth.start_pos_normal)
                start_pos = float(np.clip(np.round(rng.normal(loc, scale)), 1.0, 99.0))
                obs = DriveObservation(
                    offense=offense,
                    defense=defense,
                    game_id=game_id,
                    half_id=f"{game_id}:h{half}",
                    drive_index=d,
                    game_index=1,
                    outcome=ScoringCategory.NO_SCORE,  # placeholder until drawn
                    home=1 if offense == home else 0,
                    half2=1 if half >= 2 else 0,
                    seconds_remaining=HALF_SECONDS * (1.0 - (d - 1) / truth.drives_per_half),
                    score_diff=points[offense] - points[defense],
                    cmp_available=1 if linked else 0,
                    cmp_features=dict(prev.stats) if linked else dict(zero),
                    start_pos=start_pos if nonscor else None,
                )
                try:
                    pi = category_probabilities(_eta_single(truth, obs, team_index))
                except NonMonotoneCumulative as exc:
                    raise InfeasibleTruth(
                        f"infeasible probabilities at {game_id} half {half} drive {d}"
                    ) from exc
                outcome = ScoringCategory(int(rng.choice(categories, p=pi)))
                stats = _draw_stats(truth, rng, outcome, defense)
                summary = DriveSummary(
                    game_id=game_id,
                    half=half,
                    drive_index=d,
                    offense=offense,
                    defense=defense,
                    offense_home=obs.home,
                    outcome=outcome,
                    start_pos=start_pos,
                    seconds_remaining=obs.seconds_remaining,
                    score_diff=obs.score_diff,
                    stats=stats,
                )
                summaries.append(summary)
                if outcome == ScoringCategory.OFFENSIVE_TD:
                    points[offense] += 7.0
                elif outcome == ScoringCategory.FIELD_GOAL:
                    points[offense] += 3.0
                elif outcome == ScoringCategory.SAFETY:
                    points[defense] += 2.0
                elif outcome == ScoringCategory.DEFENSIVE_TD:
                    points[defense] += 7.0
                prev = summary
                if outcome != ScoringCategory.DEFENSIVE_TD:
                    offense = defense
    return summaries


def generate_season(truth: TruthSpec, seed: int) -> list[DriveObservation]:
    """A linked season: generate drives, then run the production linker."""
    return link_complementary(generate_drive_summaries(truth, seed))


# ---------------------------------------------------------------------------
# Presets


def _team_pattern(n: int, scale: float) -> np.ndarray:
    vals = np.linspace(-1.0, 1.0, n) * scale
    return vals - vals.mean()


def _preset_centering(turnover_rate: float) -> tuple[float, ...]:
    shares = NFL_CATEGORY_RATES
    turnover_mean = shares[2] * turnover_rate
    derived = {
        "pts.scored": 3.0 * shares[3] + 7.0 * shares[4],
        "turnover.nonscor": turnover_mean,
        "punt.safety": shares[2] * (1.0 - turnover_rate) + shares[1],
        INTERACTION_FEATURE: turnover_mean * 41.0,
    }
    out = []
    for name in DEFAULT_FEATURES:
        out.append(derived.get(name, STAT_MEANS.get(name, 0.0)))
    return tuple(out)


def _preset(
    n_teams: int,
    games_per_team: int,
    drives_per_half: int,
    gamma_map: Mapping[str, float],
    gamma_s_map: Mapping[int, Mapping[str, float]],
    xi: float,
    team_scale: tuple[float, float],
    turnover_rate: float = 0.18,
) -> TruthSpec:
    teams = tuple(f"T{i:02d}" for i in range(1, n_teams + 1))
    spec = FeatureSpec.default(nonprop="all")
    spec = FeatureSpec(
        feature_names=spec.feature_names,
        nonprop_categories=spec.nonprop_categories,
        centering_means=_preset_centering(turnover_rate),
    )
    c = spec.n_features
    pos = {n: i for i, n in enumerate(spec.feature_names)}
    gamma = np.zeros(c)
    for name, val in gamma_map.items():
        gamma[pos[name]] = val
    gamma_s = {}
    for s, mapping in gamma_s_map.items():
        vec = np.zeros(c)
        for name, val in mapping.items():
            vec[pos[name]] = val
        gamma_s[s] = vec
    params = ParameterSet(
        mu=mu_from_shares(NFL_CATEGORY_RATES),
        alpha=_team_pattern(n_teams, team_scale[0]),
        beta=_team_pattern(n_teams, team_scale[1]),
        delta=0.18 if team_scale[0] else 0.0,
        phi=np.array([0.08, 0.15, 0.01, -0.05, -0.004, -0.002])
        if team_scale[0] else np.zeros(6),
        xi=xi,
        gamma=gamma,
        gamma_s=gamma_s,
    )
    return TruthSpec(
        teams=teams,
        params=params,
        feature_spec=spec,
        games_per_team=games_per_team,
        drives_per_half=drives_per_half,
        turnover_rate=turnover_rate,
    )


def nfl_like_truth(n_teams: int = 32, games_per_team: int = 16,
                   drives_per_half: int = 11) -> TruthSpec:
    """Realistic preset: team spread, home edge, context drift, and two
    genuinely active complementary effects (the direct-handover indicator,
    proportionally and on the 4/5 split, plus the takeover-spot
    interaction)."""
    return _preset(
        n_teams, games_per_team, drives_per_half,
        gamma_map={"turnover.nonscor": 0.45, INTERACTION_FEATURE: 0.012},
        gamma_s_map={4: {"turnover.nonscor": 0.35}},
        xi=0.05,
        team_scale=(0.30, 0.20),
    )


def null_truth(n_teams: int = 32, games_per_team: int = 16,
               drives_per_half: int = 11) -> TruthSpec:
    """Teams, home, and context as in the realistic preset, but no
    complementary effects at all."""
    return _preset(
        n_teams, games_per_team, drives_per_half,
        gamma_map={}, gamma_s_map={}, xi=0.0,
        team_scale=(0.30, 0.20),
    )


def intercept_only_truth(n_teams: int = 8, games_per_team: int = 16,
                         drives_per_half: int = 11,
                         shares=NFL_CATEGORY_RATES) -> TruthSpec:
    """Every coefficient zero; category shares set purely by the intercepts."""
    truth = _preset(
        n_teams, games_per_team, drives_per_half,
        gamma_map={}, gamma_s_map={}, xi=0.0,
        team_scale=(0.0, 0.0),
    )
    params = ParameterSet(
        mu=mu_from_shares(shares),
        alpha=np.zeros(n_teams),
        beta=np.zeros(n_teams),
        delta=0.0,
        phi=np.zeros(6),
        xi=0.0,
        gamma=np.zeros(truth.feature_spec.n_features),
        gamma_s={},
    )
    return TruthSpec(
        teams=truth.teams,
        params=params,
        feature_spec=truth.feature_spec,
        games_per_team=games_per_team,
        drives_per_half=drives_per_half,
        turnover_rate=truth.turnover_rate,
    )
