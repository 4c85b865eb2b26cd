"""Multinomial log-likelihood, elastic-net penalty, and exact gradients.

Summation is always plain ``np.sum`` over rows in input order, which is a
fixed pairwise reduction: repeated evaluation of the same arrays is
bitwise-stable, and tests may rely on that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InfeasiblePoint
from .model import DesignMatrix, ParameterSet, cumulative_matrix, probability_matrix

__all__ = [
    "PenaltyConfig",
    "ObjectiveValue",
    "log_likelihood",
    "penalty_value",
    "objective",
    "gradient",
]


@dataclass(frozen=True)
class PenaltyConfig:
    """Elastic-net penalty applied to the complementary coefficients only.

    penalty = lam * [ alpha_en * (||gamma||_1 + sum_s ||gamma_s||_1)
                      + (1 - alpha_en)/2 * (||gamma||_2^2 + sum_s ||gamma_s||_2^2) ]

    Intercepts, team effects, home, context, and the availability term are
    never penalized. The solver additionally weights each feature's penalty
    terms by its design-column sd (see ``penalty_scales``) so that selection
    is invariant to the features' measurement units.
    """

    lam: float
    alpha_en: float = 0.99

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0.0 <= self.alpha_en <= 1.0:
            raise ValueError("alpha_en must lie in [0, 1]")


@dataclass(frozen=True)
class ObjectiveValue:
    nll: float
    penalty: float
    total: float
    feasible: bool


def _check_outcomes(design: DesignMatrix, outcomes: np.ndarray) -> np.ndarray:
    y = np.asarray(outcomes, dtype=np.int64)
    if y.ndim != 1 or y.shape[0] != design.n_rows:
        raise DimensionMismatch(
            f"outcomes have shape {y.shape}, design has {design.n_rows} rows"
        )
    if y.min() < 1 or y.max() > 5:
        raise ValueError("outcome codes must lie in 1..5")
    return y


def observed_probabilities(f: np.ndarray, y: np.ndarray) -> np.ndarray:
    """pi at each row's observed category, from the cumulative matrix."""
    lo = np.where(y >= 2, np.take_along_axis(f, (np.clip(y, 2, 5) - 2)[:, None], 1)[:, 0], 1.0)
    hi = np.where(y <= 4, np.take_along_axis(f, (np.clip(y, 1, 4) - 1)[:, None], 1)[:, 0], 0.0)
    return lo - hi


def log_likelihood(params: ParameterSet, design: DesignMatrix, outcomes) -> float:
    """Sum over rows of log pi at the observed category.

    Returns -inf when the point is infeasible: some category has strictly
    negative mass on any row, or an observed category has zero mass.
    """
    y = _check_outcomes(design, outcomes)
    f = cumulative_matrix(design.eta(params))
    if (f[:, 1:] > f[:, :-1]).any():
        return float("-inf")
    pi = observed_probabilities(f, y)
    if (pi <= 0.0).any():
        return float("-inf")
    return float(np.sum(np.log(pi)))


def penalty_scales(design: DesignMatrix) -> np.ndarray:
    """Per-feature penalty weights: the sd of each complementary column.

    A raw product term (yards-scale, sd in the tens) and a Bernoulli
    indicator (sd below one) otherwise face wildly different effective
    penalties under a single lam; weighting each feature's penalty by its
    column sd equalizes the pull while the coefficients themselves stay in
    glossary units. Constant columns get weight 1 (their gradient is zero,
    so they never enter anyway).
    """
    sd = np.std(design.P, axis=0)
    return np.where(sd > 0.0, sd, 1.0)


def penalty_value(params: ParameterSet, penalty: PenaltyConfig,
                  scales: np.ndarray | None = None) -> float:
    w = np.ones_like(params.gamma) if scales is None else np.asarray(scales, dtype=float)
    l1 = float(w @ np.abs(params.gamma))
    l2 = float(w @ (params.gamma ** 2))
    for vec in params.gamma_s.values():
        l1 += float(w @ np.abs(vec))
        l2 += float(w @ (vec ** 2))
    return penalty.lam * (penalty.alpha_en * l1 + 0.5 * (1.0 - penalty.alpha_en) * l2)


def objective(params: ParameterSet, design: DesignMatrix, outcomes, penalty: PenaltyConfig,
              scales: np.ndarray | None = None) -> ObjectiveValue:
    """Penalized objective: -(1/N) * log-likelihood + penalty.

    N is the row count of the design; the penalty is not scaled by N.
    ``scales`` are optional per-feature penalty weights (the solver uses
    ``penalty_scales(design)``); None means unit weights.
    Infeasible points get total = +inf so line searches back away from them.
    """
    ll = log_likelihood(params, design, outcomes)
    pen = penalty_value(params, penalty, scales)
    if not np.isfinite(ll):
        return ObjectiveValue(float("inf"), pen, float("inf"), False)
    nll = -ll / design.n_rows
    return ObjectiveValue(nll, pen, nll + pen, True)


def gradient_weights(f: np.ndarray, y: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """d(log pi_y)/d(eta_s) as an (n, 4) matrix.

    Each row has at most two nonzero entries: +sigma'(eta_y)/pi at the
    observed split (y >= 2) and -sigma'(eta_{y+1})/pi at the next one
    (y <= 4).
    """
    n = f.shape[0]
    w = np.zeros((n, 4))
    fp = f * (1.0 - f)
    rows = np.flatnonzero(y >= 2)
    cols = y[rows] - 2
    w[rows, cols] = fp[rows, cols] / pi[rows]
    rows = np.flatnonzero(y <= 4)
    cols = y[rows] - 1
    w[rows, cols] -= fp[rows, cols] / pi[rows]
    return w


def curvature_weights(f: np.ndarray, y: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Per-split sigma'' terms of d^2(log pi_y)/d(eta_s)^2 as an (n, 4) matrix."""
    n = f.shape[0]
    q = np.zeros((n, 4))
    fpp = f * (1.0 - f) * (1.0 - 2.0 * f)
    rows = np.flatnonzero(y >= 2)
    cols = y[rows] - 2
    q[rows, cols] = fpp[rows, cols] / pi[rows]
    rows = np.flatnonzero(y <= 4)
    cols = y[rows] - 1
    q[rows, cols] -= fpp[rows, cols] / pi[rows]
    return q


def gradient(params: ParameterSet, design: DesignMatrix, outcomes) -> np.ndarray:
    """Exact gradient of the smooth part -(1/N) log-likelihood.

    Returned flat, aligned with ``design.pack_params`` /
    ``design.parameter_names``: mu, offense contrasts, defense contrasts,
    delta, phi, xi, gamma, then the admitted non-proportional slots. The
    penalty's subgradient is not included.
    """
    y = _check_outcomes(design, outcomes)
    f = cumulative_matrix(design.eta(params))
    pi = observed_probabilities(f, y)
    if (f[:, 1:] > f[:, :-1]).any() or (pi <= 0.0).any():
        raise InfeasiblePoint("gradient requested at an infeasible point")
    n = design.n_rows
    w = gradient_weights(f, y, pi)
    wsum = w.sum(axis=1)
    g_mu = -w.sum(axis=0) / n
    g_u = -(design.U.T @ wsum) / n
    g_gamma = -(design.P.T @ wsum) / n
    parts = [g_mu, g_u, g_gamma]
    for s, c in design.admitted_slots():
        parts.append([-(design.P[:, c] @ w[:, s - 2]) / n])
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])
