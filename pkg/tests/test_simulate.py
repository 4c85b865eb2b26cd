"""Synthetic season generation: schedules, shares, causality, feasibility."""

from dataclasses import replace

import numpy as np
import pytest

from drivelogit import (
    InfeasibleTruth,
    NFL_CATEGORY_RATES,
    ScoringCategory,
    category_probabilities,
    check_feasibility,
    generate_drive_summaries,
    generate_season,
    intercept_only_truth,
    mu_from_shares,
    nfl_like_truth,
    null_truth,
)
from drivelogit.model import INTERACTION_FEATURE
from drivelogit.simulate import _preset


class TestMuFromShares:
    def test_round_trip_through_probabilities(self):
        mu = mu_from_shares(NFL_CATEGORY_RATES)
        np.testing.assert_allclose(
            category_probabilities(mu), NFL_CATEGORY_RATES, atol=1e-12)

    def test_intercepts_decrease(self):
        mu = mu_from_shares(NFL_CATEGORY_RATES)
        assert np.all(np.diff(mu) < 0)

    def test_rejects_bad_shares(self):
        with pytest.raises(ValueError):
            mu_from_shares([0.5, 0.5])
        with pytest.raises(ValueError):
            mu_from_shares([0.3, 0.3, 0.3, 0.3, 0.3])
        with pytest.raises(ValueError):
            mu_from_shares([-0.1, 0.3, 0.4, 0.2, 0.2])


class TestTruthSpecValidation:
    def test_odd_team_count(self):
        base = nfl_like_truth(4, 2, 3)
        with pytest.raises(ValueError):
            replace(base, teams=base.teams[:3])

    def test_duplicate_teams(self):
        base = nfl_like_truth(4, 2, 3)
        with pytest.raises(ValueError):
            replace(base, teams=("T01", "T01", "T02", "T03"))

    def test_centering_means_required(self):
        base = nfl_like_truth(4, 2, 3)
        bare = replace(base.feature_spec, centering_means=None)
        with pytest.raises(ValueError):
            replace(base, feature_spec=bare)

    def test_schedule_sizes_positive(self):
        base = nfl_like_truth(4, 2, 3)
        with pytest.raises(ValueError):
            replace(base, games_per_team=0)

    def test_turnover_rate_lookup(self):
        base = nfl_like_truth(4, 2, 3)
        assert base.rate_for("T01") == pytest.approx(0.18)
        mapped = replace(base, turnover_rate={"T01": 0.3, "T02": 0.1,
                                              "T03": 0.1, "T04": 0.1})
        assert mapped.rate_for("T01") == pytest.approx(0.3)


class TestFeasibilityProbe:
    def test_presets_are_feasible(self):
        check_feasibility(nfl_like_truth(6, 4, 8))
        check_feasibility(null_truth(6, 4, 8))
        check_feasibility(intercept_only_truth(6, 4, 8))

    def test_gap_closing_truth_is_rejected(self):
        bad = _preset(4, 2, 3,
                      gamma_map={},
                      gamma_s_map={2: {"turnover.nonscor": -5.0}},
                      xi=0.0, team_scale=(0.1, 0.1))
        with pytest.raises(InfeasibleTruth):
            check_feasibility(bad)

    def test_generation_runs_the_probe(self):
        bad = _preset(4, 2, 3,
                      gamma_map={},
                      gamma_s_map={2: {"turnover.nonscor": -5.0}},
                      xi=0.0, team_scale=(0.1, 0.1))
        with pytest.raises(InfeasibleTruth):
            generate_drive_summaries(bad, seed=0)


@pytest.fixture(scope="module")
def toy_truth():
    return nfl_like_truth(4, 3, 5)


@pytest.fixture(scope="module")
def toy_summaries(toy_truth):
    return generate_drive_summaries(toy_truth, seed=5)


class TestGeneration:
    def test_deterministic_per_seed(self, toy_truth):
        a = generate_drive_summaries(toy_truth, seed=5)
        b = generate_drive_summaries(toy_truth, seed=5)
        c = generate_drive_summaries(toy_truth, seed=6)
        assert a == b
        assert a != c

    def test_schedule_volume(self, toy_truth, toy_summaries):
        # 2 pairings x 3 rounds x 2 halves x 5 drives
        assert len(toy_summaries) == 60
        games = {d.game_id for d in toy_summaries}
        assert len(games) == 6
        for d in toy_summaries:
            assert 1 <= d.drive_index <= 5

    def test_every_team_plays(self, toy_truth, toy_summaries):
        seen = {d.offense for d in toy_summaries} | {d.defense for d in toy_summaries}
        assert seen == set(toy_truth.teams)

    def test_one_home_team_per_game(self, toy_summaries):
        by_game = {}
        for d in toy_summaries:
            by_game.setdefault(d.game_id, []).append(d)
        for rows in by_game.values():
            homes = {d.offense for d in rows if d.offense_home == 1}
            aways = {d.offense for d in rows if d.offense_home == 0}
            assert len(homes) == 1 and len(aways) == 1
            assert homes != aways

    def test_games_open_level(self, toy_summaries):
        for d in toy_summaries:
            if d.half == 1 and d.drive_index == 1:
                assert d.score_diff == 0.0

    def test_start_positions_are_integral_yards(self, toy_summaries):
        for d in toy_summaries:
            assert 1.0 <= d.start_pos <= 99.0
            assert d.start_pos == round(d.start_pos)

    def test_derived_statistics_follow_outcomes(self, toy_summaries):
        for d in toy_summaries:
            s = d.stats
            assert s["pts.scored"] == max(d.outcome.points, 0.0)
            if d.outcome == ScoringCategory.NO_SCORE:
                assert s["punt.safety"] == (1.0 - s["turnover.nonscor"])
            elif d.outcome == ScoringCategory.SAFETY:
                assert s["punt.safety"] == 1.0
            else:
                assert s["punt.safety"] == 0.0
                assert s["turnover.nonscor"] == 0.0


class TestTurnoverRate:
    def test_scoreless_drives_hand_over_at_the_configured_rate(self):
        truth = replace(intercept_only_truth(8, 16, 11), turnover_rate=0.5)
        rows = generate_drive_summaries(truth, seed=9)
        scoreless = [d for d in rows if d.outcome == ScoringCategory.NO_SCORE]
        rate = np.mean([d.stats["turnover.nonscor"] for d in scoreless])
        sd = np.sqrt(0.25 / len(scoreless))
        assert abs(rate - 0.5) < 4 * sd


class TestInterceptOnlyShares:
    def test_category_shares_track_the_intercepts(self):
        rows = generate_drive_summaries(intercept_only_truth(8, 16, 11), seed=3)
        outcomes = np.array([int(d.outcome) for d in rows])
        shares = np.bincount(outcomes, minlength=6)[1:] / len(outcomes)
        np.testing.assert_allclose(shares, NFL_CATEGORY_RATES, atol=0.05)


class TestGenerateSeason:
    def test_season_is_linked(self, toy_truth):
        obs = generate_season(toy_truth, seed=5)
        assert len(obs) == 60
        openers = [o for o in obs if o.drive_index == 1]
        assert all(o.cmp_available == 0 for o in openers)
        linked = [o for o in obs if o.cmp_available == 1]
        assert linked  # alternating possession makes most drives linked

    def test_takeover_spots_respect_causality(self, toy_truth):
        obs = generate_season(toy_truth, seed=5)
        for o in obs:
            if o.start_pos is not None:
                assert o.cmp_available == 1
                assert o.cmp_features["turnover.nonscor"] == 1.0

    def test_season_determinism(self, toy_truth):
        assert generate_season(toy_truth, seed=5) == generate_season(toy_truth, seed=5)


class TestPresets:
    def test_null_truth_has_no_complementary_effects(self):
        truth = null_truth(4, 2, 3)
        assert not truth.params.gamma.any()
        assert truth.params.gamma_s == {}
        assert truth.params.xi == 0.0
        assert truth.params.alpha.any()  # teams still differ

    def test_nfl_like_truth_activates_two_features(self):
        truth = nfl_like_truth(4, 2, 3)
        names = truth.feature_spec.feature_names
        active = {names[j] for j in np.flatnonzero(truth.params.gamma)}
        assert active == {"turnover.nonscor", INTERACTION_FEATURE}
        assert set(truth.params.gamma_s) == {4}

    def test_intercept_only_truth_is_flat(self):
        truth = intercept_only_truth(4, 2, 3)
        p = truth.params
        assert not (p.alpha.any() or p.beta.any() or p.gamma.any())
        assert p.delta == 0.0 and p.xi == 0.0
