import json

import numpy as np
import pytest

from drivelogit.errors import TeamCoverageImpossible
from drivelogit.model import FeatureSpec, build_design
from drivelogit.selection import (
    OOS_FLOOR,
    cross_validate,
    draw_half_folds,
    nested_mae,
    stability,
    union_selected,
)
from drivelogit.simulate import generate_season, nfl_like_truth
from drivelogit.solver import FitConfig

from test_model import _obs


@pytest.fixture(scope="module")
def season():
    truth = nfl_like_truth(n_teams=6, games_per_team=6, drives_per_half=8)
    return generate_season(truth, seed=23)


@pytest.fixture(scope="module")
def cv_pair(season):
    cfg = FitConfig(grid_size=8, lambda_min_ratio=0.05)
    a = cross_validate(season, k=5, replicates=2, seed=31, config=cfg)
    b = cross_validate(season, k=5, replicates=2, seed=31, config=cfg)
    return a, b


class TestDrawHalfFolds:
    def test_folds_partition_rows_by_half(self, season):
        design = build_design(season, FeatureSpec.default())
        rng = np.random.default_rng(0)
        folds = draw_half_folds(season, 5, rng, design.teams)
        all_rows = np.concatenate(folds)
        assert sorted(all_rows.tolist()) == list(range(len(season)))
        half_of = [o.half_id for o in season]
        fold_of = {}
        for fi, fold in enumerate(folds):
            for i in fold:
                fold_of.setdefault(half_of[i], set()).add(fi)
        # a game-half never straddles two folds
        assert all(len(v) == 1 for v in fold_of.values())

    def test_every_training_set_covers_every_team(self, season):
        design = build_design(season, FeatureSpec.default())
        folds = draw_half_folds(season, 5, np.random.default_rng(1), design.teams)
        for fold in folds:
            test = set(fold.tolist())
            seen = set()
            for i, o in enumerate(season):
                if i not in test:
                    seen.add(o.offense)
                    seen.add(o.defense)
            assert set(design.teams) <= seen

    def test_impossible_coverage_raises(self):
        # one team appears in a single half: leaving that half out always
        # uncovers the team, so no assignment can work
        obs = []
        for i in range(6):
            obs.append(_obs(offense="A", defense="B", drive_index=i + 1,
                            half_id=f"g{i}h1", game_id=f"g{i}"))
        obs.append(_obs(offense="C", defense="A", drive_index=1,
                        half_id="gXh1", game_id="gX"))
        with pytest.raises(TeamCoverageImpossible):
            draw_half_folds(obs, 3, np.random.default_rng(2), ("A", "B", "C"))

    def test_too_few_halves_raises(self, season):
        with pytest.raises(ValueError):
            draw_half_folds(season[:4], 50, np.random.default_rng(0), ("A", "B"))


class TestCrossValidate:
    def test_one_se_rule_and_invariant(self, cv_pair):
        for res in cv_pair[0]:
            grid = np.array(res.lambda_grid)
            mean = np.array(res.mean_oos)
            se = np.array(res.se_oos)
            best = int(np.argmax(mean))
            assert res.lambda_best == grid[best]
            threshold = mean[best] - se[best]
            sparse_idx = int(np.flatnonzero(mean >= threshold)[0])
            assert res.lambda_sparse == grid[sparse_idx]
            assert res.lambda_sparse >= res.lambda_best

    def test_same_seed_reproduces_byte_identical_results(self, cv_pair):
        a, b = cv_pair
        assert len(a) == len(b) == 2
        for ra, rb in zip(a, b):
            assert json.dumps(ra.to_jsonable(), sort_keys=True) == \
                   json.dumps(rb.to_jsonable(), sort_keys=True)

    def test_replicates_differ_in_folds_not_grid(self, cv_pair):
        a = cv_pair[0]
        assert a[0].lambda_grid == a[1].lambda_grid
        assert a[0].replicate == 0 and a[1].replicate == 1

    def test_oos_floor_bounds_all_means(self, cv_pair):
        for res in cv_pair[0]:
            assert all(m >= OOS_FLOOR for m in res.mean_oos)


class TestStability:
    def test_proportions_and_signs(self, cv_pair):
        table = stability(cv_pair[0])
        for _, _, p, sign in table.entries:
            assert 0.0 <= p <= 1.0
            assert sign in (None, "+", "-", "mixed")

    def test_counts_match_manual_tally(self, cv_pair):
        results = cv_pair[0]
        table = stability(results)
        for name, slot, p, _ in table.entries:
            if slot != "prop":
                continue
            manual = sum(1 for r in results if r.selected_gamma.get(name)) / len(results)
            assert p == pytest.approx(manual)

    def test_requires_results(self):
        with pytest.raises(ValueError):
            stability([])


class TestUnionSelected:
    def test_union_includes_every_selected_slot(self, cv_pair):
        results = cv_pair[0]
        union = union_selected(results)
        for r in results:
            for name, cats in zip(r.selected.feature_names, r.selected.nonprop_categories):
                j = union.feature_names.index(name)
                assert cats <= union.nonprop_categories[j]


class TestNestedMae:
    def test_three_paired_models(self, season, cv_pair):
        selected = union_selected(cv_pair[0])
        if not selected.feature_names:
            selected = FeatureSpec.of({"turnover.nonscor": [4]})
        res = nested_mae(season, selected, k=5, seed=7,
                         config=FitConfig(grid_size=4, lambda_min_ratio=0.1))
        assert res.models == ("context", "context_sos", "full")
        assert len(res.mae) == 3
        assert len(res.fold_maes[0]) == 5
        for mae, se in zip(res.mae, res.se):
            assert mae > 0 and se >= 0
        mae_full, _ = res.for_model("full")
        assert mae_full == res.mae[2]
