"""Surrogate residuals and out-of-sample calibration.

Surrogate residuals sample the latent logistic variable implied by the
link, truncated to the region the observed outcome allows, and subtract
the fitted predictor. For a correctly specified model the residuals are
standard logistic regardless of the predictor, which is what the
diagnostics check.

Two modes:

* joint: one residual per drive from the full ordinal likelihood, valid
  only for proportional fits (a single latent scale exists);
* binarized: one residual per drive per cumulative split s, treating
  I(Y >= s) as a binary logistic outcome with predictor eta_s, valid for
  semi-parallel fits too.

Uniform draws use a counter-based generator keyed by (seed, stream) with
one stream per mode/split, so rows can be generated in any partition and
still reproduce the sequential output. Both samplers accept an explicit
uniform array for common-random-number comparisons across modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .errors import InfeasibleFit, NonProportionalFit
from .likelihood import PenaltyConfig, observed_probabilities
from .model import FeatureSpec, build_design, outcomes_array, probability_matrix
from .selection import draw_half_folds
from .solver import FitConfig, Structure, fit, predict_probabilities

__all__ = [
    "SurrogateResidualSet",
    "CalibrationBin",
    "CalibrationTable",
    "surrogate_binarized",
    "surrogate_joint",
    "calibration",
    "cv_calibration",
    "qq_slope",
]

_Q_EPS = 1e-12


def _uniforms(seed: int, stream: int, n: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(ss)).random(n)


def _params_of(fit_or_params):
    return getattr(fit_or_params, "params", fit_or_params)


def _checked_cumulative(params, design, y):
    f = expit(design.eta(params))
    if (f[:, 1:] > f[:, :-1]).any():
        raise InfeasibleFit("fit assigns negative category mass on some rows")
    pi = observed_probabilities(f, y)
    if (pi <= 0.0).any():
        raise InfeasibleFit("fit assigns zero mass to an observed outcome")
    return f, pi


@dataclass(frozen=True, eq=False)
class SurrogateResidualSet:
    """Residuals plus the predictor they were measured against.

    ``category_s`` is the cumulative split for binarized mode and None for
    joint mode. ``fitted`` is eta_s (binarized) or the intercept-free
    predictor (joint).
    """

    mode: str
    category_s: int | None
    fitted: np.ndarray
    residuals: np.ndarray

    def __post_init__(self):
        if self.mode not in ("joint", "binarized"):
            raise ValueError("mode must be 'joint' or 'binarized'")
        if not np.isfinite(self.residuals).all():
            raise ValueError("residuals must be finite")


def surrogate_binarized(fit_or_params, design, outcomes, s: int,
                        seed: int = 0, uniforms=None) -> SurrogateResidualSet:
    """Surrogate residuals for the cumulative split at category s.

    The latent variable is eta_s plus standard logistic noise; the
    observed side of the split truncates it to [0, inf) when Y >= s and to
    (-inf, 0) otherwise, sampled by inverse CDF on one uniform per row
    (stream s of the seed). The residual is the latent value minus eta_s,
    so r >= -eta_s exactly when Y >= s.
    """
    if s not in (2, 3, 4, 5):
        raise ValueError("s must be in 2..5")
    params = _params_of(fit_or_params)
    y = np.asarray(outcomes, dtype=np.int64)
    f, _ = _checked_cumulative(params, design, y)
    fs = f[:, s - 2]
    eta_s = design.eta(params)[:, s - 2]
    u = _uniforms(seed, s, y.shape[0]) if uniforms is None else np.asarray(uniforms)
    above = y >= s
    q = np.where(above, (1.0 - fs) + u * fs, u * (1.0 - fs))
    r = logit(np.clip(q, _Q_EPS, 1.0 - _Q_EPS))
    return SurrogateResidualSet(mode="binarized", category_s=s,
                                fitted=eta_s, residuals=r)


def surrogate_joint(fit_or_params, design, outcomes,
                    seed: int = 0, uniforms=None) -> SurrogateResidualSet:
    """One surrogate residual per drive from the full ordinal model.

    The latent scale exists only under proportional odds: the predictor v
    (everything except the intercepts) shifts a single logistic variable
    cut at -mu_s. The observed category brackets the latent value between
    consecutive cuts; inverse-CDF sampling there gives q = (1 - F_y) +
    u*pi_y, and the residual is logit(q). Uses stream 0 of the seed. With
    two effective categories and shared uniforms this is exactly the
    binarized residual at s = 2.
    """
    params = _params_of(fit_or_params)
    for vec in params.gamma_s.values():
        if np.any(vec != 0.0):
            raise NonProportionalFit(
                "joint surrogate residuals need a proportional fit; "
                "use surrogate_binarized per split instead")
    y = np.asarray(outcomes, dtype=np.int64)
    f, pi = _checked_cumulative(params, design, y)
    eta = design.eta(params)
    v = eta[:, 0] - params.mu[0]
    padded = np.hstack([np.ones((f.shape[0], 1)), f])  # F_1 = 1
    f_y = np.take_along_axis(padded, (y - 1)[:, None], axis=1)[:, 0]
    u = _uniforms(seed, 0, y.shape[0]) if uniforms is None else np.asarray(uniforms)
    q = (1.0 - f_y) + u * pi
    r = logit(np.clip(q, _Q_EPS, 1.0 - _Q_EPS))
    return SurrogateResidualSet(mode="joint", category_s=None,
                                fitted=v, residuals=r)


def qq_slope(residuals) -> float:
    """Least-squares slope of sorted residuals against standard logistic
    quantiles at the midpoint plotting positions. Near 1 when the
    residuals are standard logistic."""
    r = np.sort(np.asarray(residuals, dtype=float))
    n = r.shape[0]
    theo = logit((np.arange(1, n + 1) - 0.5) / n)
    theo_c = theo - theo.mean()
    return float((theo_c @ (r - r.mean())) / (theo_c @ theo_c))


@dataclass(frozen=True)
class CalibrationBin:
    category: int
    bin_lo: float
    bin_hi: float
    mean_pred: float
    obs_freq: float
    n: int


@dataclass(frozen=True)
class CalibrationTable:
    bins: int
    entries: tuple[CalibrationBin, ...]

    def for_category(self, category: int) -> list[CalibrationBin]:
        return [e for e in self.entries if e.category == category]


def _bin_predictions(pi: np.ndarray, y: np.ndarray, bins: int) -> CalibrationTable:
    entries = []
    edges = np.linspace(0.0, 1.0, bins + 1)
    for cat in range(1, 6):
        p = pi[:, cat - 1]
        hit = (y == cat).astype(float)
        idx = np.minimum((np.clip(p, 0.0, 1.0) * bins).astype(int), bins - 1)
        for b in range(bins):
            mask = idx == b
            n = int(mask.sum())
            if n == 0:
                continue
            entries.append(CalibrationBin(
                category=cat,
                bin_lo=float(edges[b]),
                bin_hi=float(edges[b + 1]),
                mean_pred=float(p[mask].mean()),
                obs_freq=float(hit[mask].mean()),
                n=n,
            ))
    return CalibrationTable(bins=bins, entries=tuple(entries))


def calibration(fit_result, heldout, bins: int = 10) -> CalibrationTable:
    """Equal-width reliability bins per category on held-out drives.

    For every category, rows are binned by predicted probability and each
    occupied bin reports the mean prediction against the observed
    frequency. Per category the bin counts sum to the held-out size.
    """
    pi = predict_probabilities(fit_result, heldout)
    y = outcomes_array(heldout)
    return _bin_predictions(pi, y, bins)


def cv_calibration(
    observations,
    selected: FeatureSpec,
    spec: FeatureSpec | None = None,
    k: int = 10,
    seed: int = 0,
    bins: int = 10,
    config: FitConfig = FitConfig(),
) -> CalibrationTable:
    """Calibration from pooled out-of-fold predictions.

    Each fold's model is the unpenalized refit of the selected structure
    on the training rows (training-only centering); its test predictions
    are pooled before binning, so every drive contributes exactly one
    out-of-sample prediction.
    """
    spec = spec or FeatureSpec.default()
    full_design = build_design(observations, spec)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    folds = draw_half_folds(observations, k, rng, full_design.teams)
    n = len(observations)
    pooled = np.zeros((n, 5))
    y = outcomes_array(observations)
    for test_idx in folds:
        test_set = set(test_idx.tolist())
        train_obs = [o for i, o in enumerate(observations) if i not in test_set]
        test_obs = [observations[i] for i in test_idx]
        train_design = build_design(train_obs, spec, teams=full_design.teams)
        res = fit(train_design, outcomes_array(train_obs), PenaltyConfig(0.0),
                  config, structure=Structure.selected(train_design, selected))
        test_design = build_design(test_obs, train_design.feature_spec,
                                   teams=full_design.teams)
        pooled[test_idx] = probability_matrix(expit(test_design.eta(res.params)))
    return _bin_predictions(pooled, y, bins)
