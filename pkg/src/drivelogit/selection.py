"""Cross-validated penalty selection, selection-stability tallies, and the
nested out-of-sample MAE comparison.

Folds are drawn over game-halves so a half's sequential drives never
straddle the train/test boundary. The penalty grid is computed once from
the full data and shared across folds; the sparse rule then picks the
largest grid value whose mean out-of-sample log-likelihood stays within
one standard error of the best, and the selected feature set is read off
the full-data path at that penalty.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import TeamCoverageImpossible
from .likelihood import PenaltyConfig, log_likelihood
from .model import (
    CATEGORY_POINTS,
    DesignMatrix,
    FeatureSpec,
    build_design,
    outcomes_array,
    probability_matrix,
)
from .solver import FitConfig, FitResult, Structure, fit, lambda_path

__all__ = [
    "CvResult",
    "StabilityTable",
    "NestedMae",
    "cross_validate",
    "stability",
    "nested_mae",
    "union_selected",
    "draw_half_folds",
]

# Out-of-sample log-likelihoods of -inf (a test drive got zero mass) are
# floored here so fold means stay finite and the sparse rule can still
# compare grid points.
OOS_FLOOR = -1e10

_SLOTS = ("prop", "s2", "s3", "s4", "s5")


@dataclass(frozen=True)
class CvResult:
    """One replicate of k-fold cross-validation over the penalty grid."""

    lambda_grid: tuple[float, ...]
    mean_oos: tuple[float, ...]
    se_oos: tuple[float, ...]
    lambda_best: float
    lambda_sparse: float
    replicate: int
    seed: int
    folds: int
    selected: FeatureSpec
    selected_gamma: Mapping[str, float]
    selected_gamma_s: Mapping[int, Mapping[str, float]]

    def to_jsonable(self) -> dict:
        return {
            "lambda_grid": [float(v) for v in self.lambda_grid],
            "mean_oos": [float(v) for v in self.mean_oos],
            "se_oos": [float(v) for v in self.se_oos],
            "lambda_best": float(self.lambda_best),
            "lambda_sparse": float(self.lambda_sparse),
            "replicate": int(self.replicate),
            "seed": int(self.seed),
            "folds": int(self.folds),
            "selected": {
                name: sorted(cats)
                for name, cats in zip(self.selected.feature_names,
                                      self.selected.nonprop_categories)
            },
            "selected_gamma": {k: float(v) for k, v in self.selected_gamma.items()},
            "selected_gamma_s": {
                str(s): {k: float(v) for k, v in inner.items()}
                for s, inner in self.selected_gamma_s.items()
            },
        }


@dataclass(frozen=True)
class StabilityTable:
    """Selection proportions and signs per feature and coefficient slot.

    Slots are "prop" for the shared proportional coefficient and
    "s2".."s5" for the per-split ones. ``sign`` is "+", "-", "mixed", or
    None when the slot was never selected.
    """

    n_results: int
    entries: tuple  # of (feature, slot, proportion, sign)

    def proportion(self, feature: str, slot: str = "prop") -> float:
        for f, sl, p, _ in self.entries:
            if f == feature and sl == slot:
                return p
        raise KeyError((feature, slot))

    def sign(self, feature: str, slot: str = "prop"):
        for f, sl, _, sg in self.entries:
            if f == feature and sl == slot:
                return sg
        raise KeyError((feature, slot))


@dataclass(frozen=True)
class NestedMae:
    """10-fold out-of-sample MAE of drive points under three nested fits."""

    models: tuple[str, ...]          # ("context", "context_sos", "full")
    mae: tuple[float, ...]
    se: tuple[float, ...]
    fold_maes: tuple[tuple[float, ...], ...]
    seed: int

    def for_model(self, name: str) -> tuple[float, float]:
        i = self.models.index(name)
        return self.mae[i], self.se[i]


def draw_half_folds(observations, k: int, rng, teams) -> list[np.ndarray]:
    """Partition row indices into k folds of whole game-halves such that
    every training set still covers every team. Redraws the assignment up
    to 100 times before giving up."""
    half_rows: dict[str, list[int]] = {}
    for i, obs in enumerate(observations):
        half_rows.setdefault(obs.half_id, []).append(i)
    half_ids = sorted(half_rows)
    if len(half_ids) < k:
        raise ValueError(f"need at least {k} game-halves for {k} folds")
    roster = set(teams)
    for _ in range(100):
        order = rng.permutation(len(half_ids))
        folds = [[] for _ in range(k)]
        for j, hi in enumerate(order):
            folds[j % k].extend(half_rows[half_ids[int(hi)]])
        ok = True
        for fold in folds:
            test = set(fold)
            covered = set()
            for i, obs in enumerate(observations):
                if i not in test:
                    covered.add(obs.offense)
                    covered.add(obs.defense)
            if not roster <= covered:
                ok = False
                break
        if ok:
            return [np.array(sorted(f), dtype=np.int64) for f in folds]
    raise TeamCoverageImpossible(
        f"no {k}-fold split over {len(half_ids)} halves kept every team "
        "in every training set after 100 draws")


def _mean_test_loglik(params, test_design, y_test) -> float:
    ll = log_likelihood(params, test_design, y_test)
    per_drive = ll / y_test.shape[0]
    return float(max(per_drive, OOS_FLOOR))


def _snapshot_selection(result: FitResult):
    """Selected features and their coefficients from a path snapshot."""
    names = result.feature_spec.feature_names
    gamma = result.params.gamma
    gamma_s = result.params.gamma_s
    sel_names = []
    sel_cats = []
    sel_gamma = {}
    sel_gs: dict[int, dict[str, float]] = {}
    for j, name in enumerate(names):
        cats = set()
        for s, vec in gamma_s.items():
            if vec[j] != 0.0:
                cats.add(s)
                sel_gs.setdefault(s, {})[name] = float(vec[j])
        if gamma[j] != 0.0 or cats:
            sel_names.append(name)
            sel_cats.append(frozenset(cats))
            if gamma[j] != 0.0:
                sel_gamma[name] = float(gamma[j])
    selected = FeatureSpec(feature_names=tuple(sel_names),
                           nonprop_categories=tuple(sel_cats))
    return selected, sel_gamma, sel_gs


def cross_validate(
    observations,
    spec: FeatureSpec | None = None,
    penalty_base: PenaltyConfig = PenaltyConfig(0.0),
    k: int = 10,
    replicates: int = 3,
    seed: int = 0,
    config: FitConfig = FitConfig(),
) -> list[CvResult]:
    """Replicated k-fold cross-validation with the one-SE sparse rule.

    The grid comes from the full data (lambda_max of the restricted fit
    down to its lambda_min_ratio multiple); every fold fits the entire
    shared grid with warm starts, and each training fold re-centers the
    complementary features on its own rows. The metric is the mean test
    multinomial log-likelihood per drive. lambda_sparse never falls below
    lambda_best.
    """
    spec = spec or FeatureSpec.default()
    full_design = build_design(observations, spec)
    y = outcomes_array(observations)
    full_path = lambda_path(full_design, y, penalty_base, config)
    grid = np.array([r.lambda_ for r in full_path])

    results = []
    for r in range(replicates):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(r,)))
        folds = draw_half_folds(observations, k, rng, full_design.teams)
        fold_means = np.zeros((k, grid.shape[0]))
        for fi, test_idx in enumerate(folds):
            test_set = set(test_idx.tolist())
            train_obs = [o for i, o in enumerate(observations) if i not in test_set]
            test_obs = [observations[i] for i in test_idx]
            train_design = build_design(train_obs, spec, teams=full_design.teams)
            y_train = outcomes_array(train_obs)
            path = lambda_path(train_design, y_train, penalty_base, config, grid=grid)
            test_design = build_design(test_obs, train_design.feature_spec,
                                       teams=full_design.teams)
            y_test = outcomes_array(test_obs)
            for li, res in enumerate(path):
                fold_means[fi, li] = _mean_test_loglik(res.params, test_design, y_test)
        mean_oos = fold_means.mean(axis=0)
        se_oos = fold_means.std(axis=0, ddof=1) / np.sqrt(k)
        best = int(np.argmax(mean_oos))
        threshold = mean_oos[best] - se_oos[best]
        sparse = int(np.flatnonzero(mean_oos >= threshold)[0])  # grid descends
        selected, sel_gamma, sel_gs = _snapshot_selection(full_path[sparse])
        results.append(CvResult(
            lambda_grid=tuple(float(v) for v in grid),
            mean_oos=tuple(float(v) for v in mean_oos),
            se_oos=tuple(float(v) for v in se_oos),
            lambda_best=float(grid[best]),
            lambda_sparse=float(grid[sparse]),
            replicate=r,
            seed=seed,
            folds=k,
            selected=selected,
            selected_gamma=sel_gamma,
            selected_gamma_s=sel_gs,
        ))
    return results


def stability(results: Sequence[CvResult], feature_names=None) -> StabilityTable:
    """Tally how often each coefficient slot was selected, and with which
    sign. Mixed signs across results trigger a warning, since a stable
    effect should not flip direction between replicates."""
    if not results:
        raise ValueError("stability requires at least one CvResult")
    if feature_names is None:
        seen = []
        for r in results:
            for n in r.selected.feature_names:
                if n not in seen:
                    seen.append(n)
        feature_names = tuple(seen)
    n = len(results)
    entries = []
    for name in feature_names:
        for slot in _SLOTS:
            signs = set()
            count = 0
            for r in results:
                if slot == "prop":
                    coef = r.selected_gamma.get(name)
                else:
                    coef = r.selected_gamma_s.get(int(slot[1]), {}).get(name)
                if coef is not None and coef != 0.0:
                    count += 1
                    signs.add("+" if coef > 0 else "-")
            if count == 0:
                sign = None
            elif len(signs) == 1:
                sign = signs.pop()
            else:
                sign = "mixed"
                warnings.warn(
                    f"{name} [{slot}] changes sign across replicates", stacklevel=2)
            entries.append((name, slot, count / n, sign))
    return StabilityTable(n_results=n, entries=tuple(entries))


def union_selected(results: Sequence[CvResult]) -> FeatureSpec:
    """Union of the selected structure across replicates."""
    names: list[str] = []
    cats: dict[str, set] = {}
    for r in results:
        for name, cs in zip(r.selected.feature_names, r.selected.nonprop_categories):
            if name not in cats:
                names.append(name)
                cats[name] = set()
            cats[name] |= cs
    return FeatureSpec(feature_names=tuple(names),
                       nonprop_categories=tuple(frozenset(cats[n]) for n in names))


def _unpenalized_mask(design: DesignMatrix, teams: bool, icmp: bool) -> np.ndarray:
    mask = np.zeros(design.U.shape[1], dtype=bool)
    mask[design.home_col] = True
    mask[design.context_slice] = True
    if teams:
        mask[design.off_slice] = True
        mask[design.def_slice] = True
    if icmp:
        mask[design.icmp_col] = True
    return mask


def _frozen_complementary(design: DesignMatrix, unpen: np.ndarray) -> Structure:
    c = design.n_features
    return Structure(
        free_unpenalized=unpen,
        free_gamma=np.zeros(c, dtype=bool),
        free_nonprop={s: np.zeros(c, dtype=bool) for s in (2, 3, 4, 5)},
    )


def nested_mae(
    observations,
    selected: FeatureSpec,
    spec: FeatureSpec | None = None,
    k: int = 10,
    seed: int = 0,
    config: FitConfig = FitConfig(),
) -> NestedMae:
    """Out-of-sample MAE of per-drive points for three nested models.

    "context" frees only home and game context; "context_sos" adds the
    team strength blocks; "full" adds the complementary intercept and the
    selected complementary coefficients, all fit unpenalized. The same
    folds serve all three models, so their fold MAEs are paired. Predicted
    points are the probability-weighted category points.
    """
    spec = spec or FeatureSpec.default()
    full_design = build_design(observations, spec)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    folds = draw_half_folds(observations, k, rng, full_design.teams)
    points = np.asarray(CATEGORY_POINTS)
    models = ("context", "context_sos", "full")
    fold_maes = np.zeros((3, k))
    for fi, test_idx in enumerate(folds):
        test_set = set(test_idx.tolist())
        train_obs = [o for i, o in enumerate(observations) if i not in test_set]
        test_obs = [observations[i] for i in test_idx]
        train_design = build_design(train_obs, spec, teams=full_design.teams)
        y_train = outcomes_array(train_obs)
        test_design = build_design(test_obs, train_design.feature_spec,
                                   teams=full_design.teams)
        y_points = np.array([float(o.outcome.points) for o in test_obs])
        structures = (
            _frozen_complementary(train_design,
                                  _unpenalized_mask(train_design, teams=False, icmp=False)),
            _frozen_complementary(train_design,
                                  _unpenalized_mask(train_design, teams=True, icmp=False)),
            Structure.selected(train_design, selected),
        )
        for mi, structure in enumerate(structures):
            res = fit(train_design, y_train, PenaltyConfig(0.0), config,
                      structure=structure)
            f = expit(test_design.eta(res.params))
            pi = probability_matrix(f)
            yhat = pi @ points
            fold_maes[mi, fi] = float(np.mean(np.abs(yhat - y_points)))
    mae = fold_maes.mean(axis=1)
    se = fold_maes.std(axis=1, ddof=1) / np.sqrt(k)
    return NestedMae(
        models=models,
        mae=tuple(float(v) for v in mae),
        se=tuple(float(v) for v in se),
        fold_maes=tuple(tuple(float(v) for v in row) for row in fold_maes),
        seed=seed,
    )
