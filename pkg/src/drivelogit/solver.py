"""Proximal coordinate-descent solver for the partially penalized model.

Coordinates are updated one at a time with exact per-coordinate Newton
steps (soft-thresholded for the penalized complementary coefficients) and
a halving line search that never accepts an objective increase or an
infeasible point. The four intercepts are updated jointly by a damped
Newton step each sweep. On the feasible region the negative log-likelihood
is convex (the logistic density is log-concave), so the per-coordinate
second derivatives used as curvatures are non-negative.

A fit is declared converged when the KKT residuals drop below
``FitConfig.kkt_tol``: at most ``kkt_tol`` absolute gradient for the
unpenalized block, ``|grad + lam*(alpha*sign + (1-alpha)*value)| <= kkt_tol``
for nonzero penalized coefficients, and ``|grad| <= lam*alpha + kkt_tol``
for penalized coefficients at zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logit

from .errors import InfeasibleStart, UnknownFeature
from .likelihood import (
    ObjectiveValue,
    PenaltyConfig,
    gradient,
    gradient_weights,
    curvature_weights,
    observed_probabilities,
    penalty_scales,
    penalty_value,
)
from .model import (
    DesignMatrix,
    FeatureSpec,
    ParameterSet,
    build_design,
    probability_matrix,
)

__all__ = [
    "FitConfig",
    "FitResult",
    "Structure",
    "soft_threshold",
    "fit",
    "lambda_path",
    "refit_selected",
    "predict_probabilities",
]

_CURV_FLOOR = 1e-10


def soft_threshold(z: float, t: float) -> float:
    """sign(z) * max(|z| - t, 0); ties (|z| == t) resolve to exactly zero."""
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@dataclass(frozen=True)
class FitConfig:
    """Solver knobs. Defaults are pinned; artifacts record them via the CLI.

    ``seed`` randomizes the coordinate visiting order (one permutation per
    sweep); None keeps the canonical order. Either way the fit is fully
    deterministic for a given value.
    """

    max_outer_iterations: int = 200
    tol: float = 1e-7
    kkt_tol: float = 1e-5
    backtrack_factor: float = 0.5
    max_backtracks: int = 40
    grid_size: int = 20
    lambda_min_ratio: float = 1e-3
    seed: int | None = None

    def __post_init__(self):
        if self.tol <= 0 or self.kkt_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        if not 0 < self.lambda_min_ratio < 1:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class Structure:
    """Which coordinates the solver may move; the rest stay frozen.

    Used for restricted baselines (all complementary coefficients frozen at
    zero), refits of a selected sparse model, and the nested context-only /
    context-plus-teams models.
    """

    free_unpenalized: np.ndarray
    free_gamma: np.ndarray
    free_nonprop: dict[int, np.ndarray]

    @classmethod
    def full(cls, design: DesignMatrix) -> "Structure":
        admitted = _admitted_masks(design)
        return cls(
            free_unpenalized=np.ones(design.U.shape[1], dtype=bool),
            free_gamma=np.ones(design.n_features, dtype=bool),
            free_nonprop={s: admitted[s - 2].copy() for s in (2, 3, 4, 5)},
        )

    @classmethod
    def restricted(cls, design: DesignMatrix) -> "Structure":
        """Complementary block frozen at zero; unpenalized block free."""
        c = design.n_features
        return cls(
            free_unpenalized=np.ones(design.U.shape[1], dtype=bool),
            free_gamma=np.zeros(c, dtype=bool),
            free_nonprop={s: np.zeros(c, dtype=bool) for s in (2, 3, 4, 5)},
        )

    @classmethod
    def selected(cls, design: DesignMatrix, selected: FeatureSpec) -> "Structure":
        """Free exactly the selected features' proportional slots and the
        selected non-proportional splits; everything selected must exist in
        the design (names present, splits admitted)."""
        names = design.feature_spec.feature_names
        pos = {n: i for i, n in enumerate(names)}
        c = design.n_features
        free_gamma = np.zeros(c, dtype=bool)
        free_nonprop = {s: np.zeros(c, dtype=bool) for s in (2, 3, 4, 5)}
        for name, cats in zip(selected.feature_names, selected.nonprop_categories):
            if name not in pos:
                raise UnknownFeature(f"selected feature {name!r} is not in the design")
            j = pos[name]
            free_gamma[j] = True
            admitted = design.feature_spec.nonprop_categories[j]
            extra = cats - admitted
            if extra:
                raise ValueError(
                    f"selected non-proportional splits {sorted(extra)} for {name!r} "
                    "are not admitted by the design's feature spec"
                )
            for s in cats:
                free_nonprop[s][j] = True
        return cls(
            free_unpenalized=np.ones(design.U.shape[1], dtype=bool),
            free_gamma=free_gamma,
            free_nonprop=free_nonprop,
        )


def _admitted_masks(design: DesignMatrix) -> np.ndarray:
    masks = np.zeros((4, design.n_features), dtype=bool)
    for c, cats in enumerate(design.feature_spec.nonprop_categories):
        for s in cats:
            masks[s - 2, c] = True
    return masks


@dataclass(frozen=True, eq=False)
class FitResult:
    """A fitted model, self-contained enough to predict on new drives."""

    params: ParameterSet
    lambda_: float
    alpha_en: float
    objective_trace: tuple[float, ...]
    converged: bool
    iterations: int
    feature_spec: FeatureSpec
    teams: tuple[str, ...]

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def to_jsonable(self) -> dict:
        p = self.params
        names = self.feature_spec.feature_names
        return {
            "lambda": float(self.lambda_),
            "alpha_en": float(self.alpha_en),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "objective": float(self.objective),
            "teams": list(self.teams),
            "feature_names": list(names),
            "nonprop_categories": {n: sorted(c) for n, c in zip(names, self.feature_spec.nonprop_categories)},
            "centering_means": [float(m) for m in (self.feature_spec.centering_means or [])],
            "params": {
                "mu": [float(v) for v in p.mu],
                "alpha": {t: float(v) for t, v in zip(self.teams, p.alpha)},
                "beta": {t: float(v) for t, v in zip(self.teams, p.beta)},
                "delta": float(p.delta),
                "phi": [float(v) for v in p.phi],
                "xi": float(p.xi),
                "gamma": {n: float(v) for n, v in zip(names, p.gamma)},
                "gamma_s": {str(s): {n: float(v) for n, v in zip(names, vec)} for s, vec in p.gamma_s.items()},
            },
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "FitResult":
        names = tuple(obj["feature_names"])
        spec = FeatureSpec(
            feature_names=names,
            nonprop_categories=tuple(frozenset(obj["nonprop_categories"][n]) for n in names),
            centering_means=tuple(obj["centering_means"]) if obj.get("centering_means") else None,
        )
        teams = tuple(obj["teams"])
        pp = obj["params"]
        params = ParameterSet(
            mu=np.array(pp["mu"]),
            alpha=np.array([pp["alpha"][t] for t in teams]),
            beta=np.array([pp["beta"][t] for t in teams]),
            delta=float(pp["delta"]),
            phi=np.array(pp["phi"]),
            xi=float(pp["xi"]),
            gamma=np.array([pp["gamma"][n] for n in names]),
            gamma_s={int(s): np.array([vec[n] for n in names]) for s, vec in pp["gamma_s"].items()},
        )
        return cls(
            params=params,
            lambda_=float(obj["lambda"]),
            alpha_en=float(obj["alpha_en"]),
            objective_trace=(float(obj["objective"]),),
            converged=bool(obj["converged"]),
            iterations=int(obj["iterations"]),
            feature_spec=spec,
            teams=teams,
        )


def _default_start(design: DesignMatrix, y: np.ndarray) -> ParameterSet:
    """All coefficients zero; intercepts from empirical cumulative shares,
    nudged apart so the start is strictly feasible."""
    n = y.shape[0]
    props = np.array([float(np.mean(y >= s)) for s in (2, 3, 4, 5)])
    eps = min(1e-3, 0.5 / n)
    props = np.clip(props, eps, 1.0 - eps)
    for i in range(1, 4):
        props[i] = min(props[i], props[i - 1] - 1e-6)
    props = np.maximum(props, [4e-12, 3e-12, 2e-12, 1e-12])
    params = design.zero_params()
    return replace(params, mu=logit(props))


class _Coord:
    """Precomputed views for one coordinate's support rows."""

    __slots__ = ("kind", "store", "x", "idx", "xs", "yi", "rlo", "clo", "rhi", "chi",
                 "pos", "neg", "col", "penalized")

    def __init__(self, kind, store, x, y):
        self.kind = kind          # "u", "gamma", or "gs"
        self.store = store        # index into its storage array
        idx = np.flatnonzero(x)
        self.idx = idx
        self.x = x
        self.xs = x[idx]
        yi = y[idx]
        self.yi = yi
        self.penalized = kind in ("gamma", "gs")
        # proportional loadings: both bracketing splits of each row's outcome
        self.rlo = np.flatnonzero(yi >= 2)
        self.clo = yi[self.rlo] - 2
        self.rhi = np.flatnonzero(yi <= 4)
        self.chi = yi[self.rhi] - 1
        self.pos = None
        self.neg = None
        self.col = None

    def set_single_split(self, s: int):
        self.col = s - 2
        self.pos = np.flatnonzero(self.yi == s)
        self.neg = np.flatnonzero(self.yi == s - 1)


class _State:
    def __init__(self, design, y, penalty, config, start, structure):
        self.design = design
        self.y = y
        self.n = design.n_rows
        self.penalty = penalty
        self.config = config
        self.structure = structure
        self.U = design.U
        self.P = design.P
        self.scale = penalty_scales(design)

        self.mu = np.array(start.mu, dtype=float)
        self.tu = np.concatenate([
            start.alpha[:-1], start.beta[:-1], [start.delta], start.phi, [start.xi],
        ])
        self.gamma = np.array(start.gamma, dtype=float)
        self.gns = design.nonprop_matrix(start).copy()  # (C, 4)

        self.eta = self.mu[None, :] + (self.U @ self.tu + self.P @ self.gamma)[:, None]
        if self.gns.any():
            self.eta = self.eta + self.P @ self.gns
        gaps = self.eta[:, :-1] - self.eta[:, 1:]
        worst_gap = float(gaps.min()) if gaps.size else 0.0
        if worst_gap < -1e-9:
            raise InfeasibleStart("starting point gives negative category mass")
        if worst_gap < 0.0:
            # rounding dust from a warm start whose fit ended on the
            # feasibility boundary; clamp rather than reject
            self.eta = np.minimum.accumulate(self.eta, axis=1)
        self.f = expit(self.eta)
        self.pi = observed_probabilities(self.f, y)
        if (self.pi <= 0.0).any():
            raise InfeasibleStart("starting point assigns zero mass to an observed outcome")

        self.coords_u = []
        for j in np.flatnonzero(structure.free_unpenalized):
            x = self.U[:, int(j)]
            if not x.any():
                continue
            self.coords_u.append(_Coord("u", int(j), x, y))
        self.coords_gamma = {}
        for c in np.flatnonzero(structure.free_gamma):
            x = self.P[:, int(c)]
            if not x.any():
                continue
            self.coords_gamma[int(c)] = _Coord("gamma", int(c), x, y)
        admitted = _admitted_masks(design)
        self.coords_gs = {}
        for s in (2, 3, 4, 5):
            free = structure.free_nonprop.get(s)
            if free is None:
                continue
            bad = np.flatnonzero(free & ~admitted[s - 2])
            if bad.size:
                raise ValueError(f"split {s} not admitted for feature index {bad.tolist()}")
            for c in np.flatnonzero(free):
                x = self.P[:, int(c)]
                if not x.any():
                    continue
                co = _Coord("gs", (int(c), s - 2), x, y)
                co.set_single_split(s)
                self.coords_gs[(int(c), s - 2)] = co

    # ---- objective bookkeeping -------------------------------------------------
    def nll_sum(self) -> float:
        return float(np.sum(np.log(self.pi)))

    def current_penalty(self) -> float:
        lam, a = self.penalty.lam, self.penalty.alpha_en
        l1 = float(self.scale @ np.abs(self.gamma) + self.scale @ np.abs(self.gns).sum(axis=1))
        l2 = float(self.scale @ (self.gamma ** 2) + self.scale @ (self.gns ** 2).sum(axis=1))
        return lam * (a * l1 + 0.5 * (1.0 - a) * l2)

    def total_objective(self) -> float:
        return -self.nll_sum() / self.n + self.current_penalty()

    # ---- local gradient / curvature ---------------------------------------------
    def _prop_terms(self, co):
        fi = self.f[co.idx]
        pii = self.pi[co.idx]
        fp = fi * (1.0 - fi)
        wsum = np.zeros(co.idx.shape[0])
        qsum = np.zeros(co.idx.shape[0])
        wlo = fp[co.rlo, co.clo] / pii[co.rlo]
        whi = fp[co.rhi, co.chi] / pii[co.rhi]
        np.add.at(wsum, co.rlo, wlo)
        np.subtract.at(wsum, co.rhi, whi)
        fpp = fp * (1.0 - 2.0 * fi)
        np.add.at(qsum, co.rlo, fpp[co.rlo, co.clo] / pii[co.rlo])
        np.subtract.at(qsum, co.rhi, fpp[co.rhi, co.chi] / pii[co.rhi])
        g = -float(co.xs @ wsum) / self.n
        h = float((co.xs * co.xs) @ (wsum * wsum - qsum)) / self.n
        return g, h

    def _split_terms(self, co):
        fi = self.f[co.idx, co.col]
        pii = self.pi[co.idx]
        fp = fi * (1.0 - fi)
        fpp = fp * (1.0 - 2.0 * fi)
        w = np.zeros(co.idx.shape[0])
        q = np.zeros(co.idx.shape[0])
        w[co.pos] = fp[co.pos] / pii[co.pos]
        w[co.neg] = -fp[co.neg] / pii[co.neg]
        q[co.pos] = fpp[co.pos] / pii[co.pos]
        q[co.neg] = -fpp[co.neg] / pii[co.neg]
        g = -float(co.xs @ w) / self.n
        h = float((co.xs * co.xs) @ (w * w - q)) / self.n
        return g, h

    # ---- step application --------------------------------------------------------
    def _clip_split_step(self, co, d: float) -> float:
        """Largest |step| keeping every row's adjacent gaps non-negative.

        A single-split column moves one eta per row, so each feasibility
        constraint is linear in the step; clipping before evaluating saves
        the halving churn when the optimum sits on the boundary.
        """
        k = co.col
        eta = self.eta[co.idx]
        lo, hi = -np.inf, np.inf
        for gap, c in (
            (eta[:, k - 1] - eta[:, k], -co.xs) if k >= 1 else (None, None),
            (eta[:, k] - eta[:, k + 1], co.xs) if k <= 2 else (None, None),
        ):
            if gap is None:
                continue
            gap = np.maximum(gap, 0.0)
            pos = c > 0
            if pos.any():
                lo = max(lo, float(np.max(-gap[pos] / c[pos])))
            neg = c < 0
            if neg.any():
                hi = min(hi, float(np.min(gap[neg] / -c[neg])))
        shrink = 1.0 - 1e-9
        return float(min(max(d, lo * shrink), hi * shrink))

    def _try_step(self, co, d, dpen_fn):
        """Halving line search; returns the accepted step or None.

        Proportional columns shift all four etas of a row together, which
        leaves the gaps intact, so only single-split steps need the
        monotonicity guard (and those are pre-clipped to the feasible
        interval, making the guard a cheap safety net).
        """
        idx = co.idx
        if co.kind == "gs":
            d = self._clip_split_step(co, d)
            if d == 0.0:
                return None
        old_logpi = np.log(self.pi[idx])
        old_sum = float(np.sum(old_logpi))
        for _ in range(self.config.max_backtracks):
            if co.kind == "gs":
                fi = self.f[idx].copy()
                col_eta = self.eta[idx, co.col] + d * co.xs
                fi[:, co.col] = expit(col_eta)
                feasible = not (fi[:, 1:] > fi[:, :-1]).any()
            else:
                eta_rows = self.eta[idx] + (d * co.xs)[:, None]
                fi = expit(eta_rows)
                feasible = True
            if feasible:
                pi_new = observed_probabilities(fi, co.yi)
                if (pi_new > 0.0).all():
                    new_sum = float(np.sum(np.log(pi_new)))
                    dtotal = -(new_sum - old_sum) / self.n + dpen_fn(d)
                    if dtotal <= 0.0:
                        if co.kind == "gs":
                            self.eta[idx, co.col] = col_eta
                        else:
                            self.eta[idx] = eta_rows
                        self.f[idx] = fi
                        self.pi[idx] = pi_new
                        return d
            d *= self.config.backtrack_factor
            if abs(d) < 1e-300:
                break
        return None

    def update_unpenalized(self, co):
        g, h = self._prop_terms(co)
        if abs(g) < 1e-16:
            return
        h = max(h, _CURV_FLOOR)
        d = self._try_step(co, -g / h, lambda _d: 0.0)
        if d is not None:
            self.tu[co.store] += d

    def update_penalized(self, co):
        c = co.store if co.kind == "gamma" else co.store[0]
        w = self.scale[c]
        lam_a = self.penalty.lam * self.penalty.alpha_en * w
        lam_r = self.penalty.lam * (1.0 - self.penalty.alpha_en) * w
        if co.kind == "gamma":
            theta = self.gamma[co.store]
            g, h = self._prop_terms(co)
        else:
            theta = self.gns[co.store]
            g, h = self._split_terms(co)
        h = max(h, _CURV_FLOOR)
        target = soft_threshold(h * theta - g, lam_a) / (h + lam_r)
        d0 = target - theta
        if d0 == 0.0:
            return

        def dpen(d):
            t = theta + d
            return lam_a * (abs(t) - abs(theta)) + 0.5 * lam_r * (t * t - theta * theta)

        d = self._try_step(co, d0, dpen)
        if d is not None:
            if co.kind == "gamma":
                self.gamma[co.store] = theta + d
            else:
                self.gns[co.store] = theta + d

    def update_mu(self):
        w = gradient_weights(self.f, self.y, self.pi)
        q = curvature_weights(self.f, self.y, self.pi)
        g = -w.sum(axis=0) / self.n
        if np.max(np.abs(g)) < 1e-16:
            return
        hess = (w.T @ w - np.diag(q.sum(axis=0))) / self.n
        try:
            d = np.linalg.solve(hess + 1e-10 * np.eye(4), -g)
        except np.linalg.LinAlgError:
            d = -g
        # an intercept step shifts every row's gap k by d_k - d_{k+1}, so
        # the largest feasible multiplier comes from the per-gap row minima
        gaps_min = (self.eta[:, :-1] - self.eta[:, 1:]).min(axis=0)
        delta = d[:-1] - d[1:]
        tmax = 1.0
        for k in range(3):
            if delta[k] < 0.0:
                tmax = min(tmax, max(gaps_min[k], 0.0) / -delta[k])
        step = min(1.0, (1.0 - 1e-9) * tmax)
        if step <= 0.0:
            return
        old_sum = self.nll_sum()
        for _ in range(self.config.max_backtracks):
            mu_new = self.mu + step * d
            eta_new = self.eta + (step * d)[None, :]
            f_new = expit(eta_new)
            if not (f_new[:, 1:] > f_new[:, :-1]).any():
                pi_new = observed_probabilities(f_new, self.y)
                if (pi_new > 0.0).all():
                    new_sum = float(np.sum(np.log(pi_new)))
                    if new_sum >= old_sum:
                        self.mu = mu_new
                        self.eta = eta_new
                        self.f = f_new
                        self.pi = pi_new
                        return
            step *= self.config.backtrack_factor

    def newton_polish(self) -> bool:
        """One damped joint Newton step over every currently-moving coordinate.

        Coordinate descent zig-zags once a feature's proportional and
        single-split coefficients are both active (their design columns are
        identical, only the split loadings differ), so the tail of the
        convergence is finished with a second-order step instead: exact
        Hessian over [mu, free unpenalized, nonzero penalized], L1 signs
        frozen, halving line search that rejects sign flips and infeasible
        proposals. Returns True if a step was accepted.
        """
        lam_a = self.penalty.lam * self.penalty.alpha_en
        lam_r = self.penalty.lam * (1.0 - self.penalty.alpha_en)
        n = self.n

        cols: list[np.ndarray] = []      # design column per coordinate
        splits: list[int] = []           # -1 = all four splits, else 0..3
        setters: list[tuple] = []        # ("mu"|"tu"|"gamma"|"gns", index)
        ridge: list[float] = []
        sub: list[float] = []            # L1 + L2 subgradient at current point
        theta: list[float] = []
        pscale: list[float] = []         # penalty weight; 0 = unpenalized
        ones = np.ones(n)
        for k in range(4):
            cols.append(ones)
            splits.append(k)
            setters.append(("mu", k))
            ridge.append(0.0)
            sub.append(0.0)
            theta.append(self.mu[k])
            pscale.append(0.0)
        for co in self.coords_u:
            cols.append(self.U[:, co.store])
            splits.append(-1)
            setters.append(("tu", co.store))
            ridge.append(0.0)
            sub.append(0.0)
            theta.append(self.tu[co.store])
            pscale.append(0.0)
        for c in self.coords_gamma:
            v = self.gamma[c]
            if v == 0.0:
                continue
            w = self.scale[c]
            cols.append(self.P[:, c])
            splits.append(-1)
            setters.append(("gamma", c))
            ridge.append(lam_r * w)
            sub.append((lam_a * np.sign(v) + lam_r * v) * w)
            theta.append(v)
            pscale.append(w)
        for (c, k) in self.coords_gs:
            v = self.gns[c, k]
            if v == 0.0:
                continue
            w = self.scale[c]
            cols.append(self.P[:, c])
            splits.append(k)
            setters.append(("gns", (c, k)))
            ridge.append(lam_r * w)
            sub.append((lam_a * np.sign(v) + lam_r * v) * w)
            theta.append(v)
            pscale.append(w)

        m = len(cols)
        w = gradient_weights(self.f, self.y, self.pi)
        q = curvature_weights(self.f, self.y, self.pi)
        wsum = w.sum(axis=1)
        xl = np.column_stack(cols)
        spl = np.asarray(splits)
        a = np.empty((n, m))
        all_mask = spl < 0
        if all_mask.any():
            a[:, all_mask] = xl[:, all_mask] * wsum[:, None]
        for k in range(4):
            mk = spl == k
            if mk.any():
                a[:, mk] = xl[:, mk] * w[:, k][:, None]
        grad = -(a.sum(axis=0)) / n + np.asarray(sub)
        hess = (a.T @ a) / n
        xs_by_split = []
        for k in range(4):
            mk = all_mask | (spl == k)
            xs = np.where(mk[None, :], xl, 0.0)
            xs_by_split.append(xs)
            hess -= xs.T @ (q[:, k][:, None] * xs) / n
        hess[np.diag_indices(m)] += np.asarray(ridge) + 1e-10
        try:
            d = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(d)) or not d.any():
            return False

        deta = np.column_stack([xs_by_split[k] @ d for k in range(4)])
        th = np.asarray(theta)
        penalized = np.asarray([kind in ("gamma", "gns") for kind, _ in setters])
        pw = np.asarray(pscale)[penalized]
        old_sum = self.nll_sum()
        old_l1 = float(pw @ np.abs(th[penalized]))
        old_l2 = float(pw @ (th[penalized] ** 2))
        step = 1.0
        for _ in range(self.config.max_backtracks):
            th_new = th + step * d
            if lam_a > 0.0 and (th_new[penalized] * th[penalized] <= 0.0).any():
                step *= self.config.backtrack_factor
                continue
            eta_new = self.eta + step * deta
            f_new = expit(eta_new)
            if not (f_new[:, 1:] > f_new[:, :-1]).any():
                pi_new = observed_probabilities(f_new, self.y)
                if (pi_new > 0.0).all():
                    new_sum = float(np.sum(np.log(pi_new)))
                    new_l1 = float(pw @ np.abs(th_new[penalized]))
                    new_l2 = float(pw @ (th_new[penalized] ** 2))
                    dtotal = (-(new_sum - old_sum) / n
                              + lam_a * (new_l1 - old_l1)
                              + 0.5 * lam_r * (new_l2 - old_l2))
                    if dtotal <= 0.0:
                        for (kind, idx), v in zip(setters, th_new):
                            if kind == "mu":
                                self.mu[idx] = v
                            elif kind == "tu":
                                self.tu[idx] = v
                            elif kind == "gamma":
                                self.gamma[idx] = v
                            else:
                                self.gns[idx] = v
                        self.eta = eta_new
                        self.f = f_new
                        self.pi = pi_new
                        return True
            step *= self.config.backtrack_factor
        return False

    # ---- screening and KKT --------------------------------------------------------
    def penalized_gradients(self):
        w = gradient_weights(self.f, self.y, self.pi)
        wsum = w.sum(axis=1)
        g_gamma = -(self.P.T @ wsum) / self.n
        g_gs = -(self.P.T @ w) / self.n  # (C, 4)
        return w, wsum, g_gamma, g_gs

    def kkt_residual(self):
        w, wsum, g_gamma, g_gs = self.penalized_gradients()
        lam, a = self.penalty.lam, self.penalty.alpha_en
        lam_a, lam_r = lam * a, lam * (1.0 - a)
        worst = float(np.max(np.abs(w.sum(axis=0) / self.n)))  # mu block
        free_u = self.structure.free_unpenalized
        if free_u.any():
            g_u = -(self.U[:, free_u].T @ wsum) / self.n
            if g_u.size:
                worst = max(worst, float(np.max(np.abs(g_u))))
        for c, co in self.coords_gamma.items():
            theta = self.gamma[c]
            g = g_gamma[c]
            w = self.scale[c]
            if theta != 0.0:
                worst = max(worst, abs(g + (lam_a * np.sign(theta) + lam_r * theta) * w))
            else:
                worst = max(worst, max(abs(g) - lam_a * w, 0.0))
        for (c, k), co in self.coords_gs.items():
            theta = self.gns[c, k]
            g = g_gs[c, k]
            w = self.scale[c]
            if theta != 0.0:
                worst = max(worst, abs(g + (lam_a * np.sign(theta) + lam_r * theta) * w))
            else:
                worst = max(worst, max(abs(g) - lam_a * w, 0.0))
        return worst

    def to_params(self) -> ParameterSet:
        design = self.design
        n = design.n_teams
        a = self.tu[design.off_slice]
        b = self.tu[design.def_slice]
        gamma_s = {}
        for s in (2, 3, 4, 5):
            free = self.structure.free_nonprop.get(s)
            if free is not None and free.any():
                gamma_s[s] = self.gns[:, s - 2].copy()
        return ParameterSet(
            mu=self.mu.copy(),
            alpha=np.append(a, -a.sum()),
            beta=np.append(b, -b.sum()),
            delta=float(self.tu[design.home_col]),
            phi=self.tu[design.context_slice].copy(),
            xi=float(self.tu[design.icmp_col]),
            gamma=self.gamma.copy(),
            gamma_s=gamma_s,
        )


def fit(
    design: DesignMatrix,
    outcomes,
    penalty: PenaltyConfig,
    config: FitConfig = FitConfig(),
    warm_start: ParameterSet | FitResult | None = None,
    structure: Structure | None = None,
) -> FitResult:
    """Minimize -(1/N) log-likelihood + elastic-net penalty.

    Parameters
    ----------
    design, outcomes : the data. Outcome codes are 1..5.
    penalty : lam and alpha_en. Only the complementary coefficients are
        penalized, each feature's terms weighted by its column sd
        (``penalty_scales``); lam = 0 gives the unpenalized maximum
        likelihood fit over the free coordinates.
    warm_start : optional feasible starting parameters (a ParameterSet or
        a previous FitResult); defaults to zero coefficients with
        intercepts at the empirical cumulative shares.
    structure : which coordinates may move (default: everything the
        design's feature spec admits).

    Returns a FitResult whose objective trace is non-increasing. If the
    KKT residuals do not reach ``config.kkt_tol`` within
    ``config.max_outer_iterations`` sweeps the best point found is
    returned with ``converged=False``.
    """
    y = np.asarray(outcomes, dtype=np.int64)
    if penalty.alpha_en == 1.0 and penalty.lam > 0:
        warnings.warn("alpha_en = 1 (pure L1): the optimum may not be unique", stacklevel=2)
    structure = structure or Structure.full(design)
    if warm_start is None:
        start = _default_start(design, y)
    else:
        start = getattr(warm_start, "params", warm_start)
    state = _State(design, y, penalty, config, start, structure)

    rng = np.random.default_rng(config.seed) if config.seed is not None else None
    lam_a = penalty.lam * penalty.alpha_en
    trace = [state.total_objective()]
    kkt_hist: list[float] = []
    converged = False
    sweeps = 0
    polish_block = 0
    for sweeps in range(1, config.max_outer_iterations + 1):
        state.update_mu()

        order_u = np.arange(len(state.coords_u))
        if rng is not None:
            order_u = rng.permutation(order_u)
        for i in order_u:
            state.update_unpenalized(state.coords_u[int(i)])

        if state.coords_gamma or state.coords_gs:
            _, _, g_gamma, g_gs = state.penalized_gradients()
            active = []
            for c, co in state.coords_gamma.items():
                if state.gamma[c] != 0.0 or abs(g_gamma[c]) > lam_a * state.scale[c] * (1.0 + 1e-12):
                    active.append(co)
            for (c, k), co in state.coords_gs.items():
                if state.gns[c, k] != 0.0 or abs(g_gs[c, k]) > lam_a * state.scale[c] * (1.0 + 1e-12):
                    active.append(co)
            if rng is not None and active:
                active = [active[int(i)] for i in rng.permutation(len(active))]
            for co in active:
                state.update_penalized(co)

        kkt = state.kkt_residual()
        if kkt > config.kkt_tol and kkt <= 1e-1 and polish_block == 0:
            # second-order cleanup of the coordinate-descent tail
            for _ in range(5):
                before = kkt
                if not state.newton_polish():
                    polish_block = 8
                    break
                kkt = state.kkt_residual()
                if kkt <= config.kkt_tol:
                    break
                if kkt > 0.8 * before:
                    # boundary-pinned: the step was legal but went nowhere
                    polish_block = 8
                    break
        elif polish_block > 0:
            polish_block -= 1
        trace.append(state.total_objective())
        kkt_hist.append(kkt)
        if kkt <= config.kkt_tol:
            converged = True
            break
        if len(trace) >= 4 and trace[-4] - trace[-1] == 0.0:
            break  # nothing moves any more; KKT gap is a boundary artifact
        if len(kkt_hist) >= 12 and kkt_hist[-10] - kkt < 0.01 * kkt_hist[-10]:
            # stationarity residual has flatlined: the solution is pinned to
            # the feasibility boundary, where the unconstrained-form KKT
            # measure cannot vanish; more sweeps only reprice the same point
            break

    return FitResult(
        params=state.to_params(),
        lambda_=penalty.lam,
        alpha_en=penalty.alpha_en,
        objective_trace=tuple(trace),
        converged=converged,
        iterations=sweeps,
        feature_spec=design.feature_spec,
        teams=design.teams,
    )


def lambda_max(design: DesignMatrix, outcomes, alpha_en: float = 0.99,
               config: FitConfig = FitConfig(), structure: Structure | None = None):
    """Smallest penalty that keeps every penalized coefficient at zero.

    Computed as the max absolute smooth gradient over the penalized
    coordinates at the restricted (complementary-block-frozen) maximum
    likelihood fit, each divided by its feature's penalty scale, then by
    alpha_en. Returns (value, restricted fit).
    """
    if alpha_en <= 0:
        raise ValueError("lambda_max requires alpha_en > 0")
    structure = structure or Structure.full(design)
    restricted = Structure(
        free_unpenalized=structure.free_unpenalized,
        free_gamma=np.zeros(design.n_features, dtype=bool),
        free_nonprop={s: np.zeros(design.n_features, dtype=bool) for s in (2, 3, 4, 5)},
    )
    base = fit(design, outcomes, PenaltyConfig(0.0, alpha_en), config, structure=restricted)
    flat = gradient(base.params, design, np.asarray(outcomes, dtype=np.int64))
    c = design.n_features
    scale = penalty_scales(design)
    slots = design.admitted_slots()
    g_gamma = flat[-(c + len(slots)):-len(slots)] if slots else flat[-c:]
    g_slots = flat[-len(slots):] if slots else np.empty(0)
    best = 0.0
    for j in np.flatnonzero(structure.free_gamma):
        best = max(best, abs(float(g_gamma[j])) / scale[j])
    for g, (s, cidx) in zip(g_slots, slots):
        free = structure.free_nonprop.get(s)
        if free is not None and free[cidx]:
            best = max(best, abs(float(g)) / scale[cidx])
    return best / alpha_en, base


def lambda_path(
    design: DesignMatrix,
    outcomes,
    penalty_base: PenaltyConfig,
    config: FitConfig = FitConfig(),
    structure: Structure | None = None,
    grid: np.ndarray | None = None,
) -> list[FitResult]:
    """Warm-started fits down a log-spaced penalty grid.

    With ``grid=None`` the grid runs from lambda_max down to
    lambda_max * config.lambda_min_ratio over config.grid_size points, and
    the first entry is the restricted fit itself (all penalized
    coefficients exactly zero, which is what lambda_max means). A caller
    may pass an externally computed grid, e.g. so cross-validation folds
    share the full-data grid; every point is then fitted normally.
    """
    structure = structure or Structure.full(design)
    lmax, base = lambda_max(design, outcomes, penalty_base.alpha_en, config, structure)
    results: list[FitResult] = []
    if grid is None:
        if lmax <= 0:
            lmax = 1.0
        grid = np.geomspace(lmax, lmax * config.lambda_min_ratio, config.grid_size)
        results.append(FitResult(
            params=base.params,
            lambda_=float(grid[0]),
            alpha_en=penalty_base.alpha_en,
            objective_trace=base.objective_trace,
            converged=base.converged,
            iterations=base.iterations,
            feature_spec=design.feature_spec,
            teams=design.teams,
        ))
        rest = grid[1:]
    else:
        grid = np.asarray(grid, dtype=float)
        rest = grid
    prev = base.params
    for lam in rest:
        res = fit(design, outcomes, PenaltyConfig(float(lam), penalty_base.alpha_en),
                  config, warm_start=prev, structure=structure)
        results.append(res)
        prev = res.params
    return results


def refit_selected(
    design: DesignMatrix,
    outcomes,
    selected: FeatureSpec,
    config: FitConfig = FitConfig(),
) -> FitResult:
    """Unpenalized refit with only the selected complementary structure free.

    The proportional coefficient is freed for every selected feature; the
    non-proportional coefficient only for the selected splits. Everything
    else in the complementary block stays at exactly zero.
    """
    structure = Structure.selected(design, selected)
    return fit(design, outcomes, PenaltyConfig(0.0), config, structure=structure)


def predict_probabilities(fit_result: FitResult, observations) -> np.ndarray:
    """Category probabilities (n, 5) for new drives under a fitted model.

    The design is rebuilt with the fit's roster and recorded centering
    means. Rows may be infeasible under non-proportional coefficients, in
    which case some entries are negative; callers that need a guarantee
    should check before use.
    """
    design = build_design(observations, fit_result.feature_spec, teams=fit_result.teams)
    f = expit(design.eta(fit_result.params))
    return probability_matrix(f)
