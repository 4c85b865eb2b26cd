"""Core domain types: scoring categories, drive observations, and the
block-structured design matrix for the semi-parallel cumulative-logit model.

The linear predictor for the cumulative split at category ``s`` (s = 2..5) is

    eta_s = mu_s + alpha_off + beta_def + delta*home + phi'g
            + xi*I_cmp + (gamma + gamma_s)' x_centered * I_cmp

where ``g`` is the expanded game-context vector and ``x_centered`` are the
complementary-unit statistics of the preceding drive, centered at their
league means over rows that have a preceding opposing drive (I_cmp = 1).
Team effects use sum-to-zero coding with the lexicographically last team
held out, so a roster of n teams contributes n - 1 free columns per side.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    DimensionMismatch,
    EmptyInput,
    NonMonotoneCumulative,
    SingleTeamLeague,
    UnknownFeature,
    UnknownTeam,
)

# Points awarded to the offense for each ordinal category, lowest to highest.
CATEGORY_POINTS = (-7.0, -2.0, 0.0, 3.0, 7.0)

# Seconds in a regulation half; used to scale the clock into [0, 1].
HALF_SECONDS = 1800.0

# Complementary-unit drive statistics, in canonical order.
GLOSSARY_FEATURES = (
    "off.ST.yards.gained",
    "ST.return.yards.net",
    "pts.scored",
    "first.downs.gained",
    "third.downs.converted",
    "turnover.nonscor",
    "punt.safety",
    "n.completions",
    "n.incompletions",
    "n.stuffed.runs",
    "n.positive.runs",
    "n.negative.plays",
    "n.sacks",
    "n.fumbles",
)

# Derived term: non-scoring-turnover indicator times the takeover spot.
INTERACTION_FEATURE = "turnover.nonscor:start.pos"

DEFAULT_FEATURES = GLOSSARY_FEATURES + (INTERACTION_FEATURE,)

CONTEXT_NAMES = (
    "half2",
    "time.remaining",
    "score.diff",
    "half2:time.remaining",
    "half2:score.diff",
    "time.remaining:score.diff",
)
DIM_CONTEXT = len(CONTEXT_NAMES)


class ScoringCategory(enum.IntEnum):
    """Ordinal outcome of a drive, from the offense's point of view."""

    DEFENSIVE_TD = 1
    SAFETY = 2
    NO_SCORE = 3
    FIELD_GOAL = 4
    OFFENSIVE_TD = 5

    @property
    def points(self) -> float:
        return CATEGORY_POINTS[self.value - 1]

    @property
    def label(self) -> str:
        return _CATEGORY_LABELS[self.value]

    @classmethod
    def from_label(cls, label: str) -> "ScoringCategory":
        try:
            return _LABEL_LOOKUP[label]
        except KeyError:
            raise ValueError(f"unknown scoring category label: {label!r}") from None


_CATEGORY_LABELS = {
    1: "DefensiveTD",
    2: "Safety",
    3: "NoScore",
    4: "FieldGoal",
    5: "OffensiveTD",
}
_LABEL_LOOKUP = {v: ScoringCategory(k) for k, v in _CATEGORY_LABELS.items()}


@dataclass(frozen=True)
class DriveObservation:
    """One drive, with the preceding opposing drive's statistics attached.

    ``cmp_features`` holds the glossary statistics of drive k-1 when that
    drive belonged to the opposing offense (cmp_available = 1); it is all
    zeros for half-opening drives and for drives that follow the same
    offense. ``start_pos`` is this drive's starting field position in yards
    advanced toward the opponent goal, defined only when the preceding
    drive ended in a non-scoring turnover.
    """

    offense: str
    defense: str
    game_id: str
    half_id: str
    drive_index: int
    game_index: int
    outcome: ScoringCategory
    home: int
    half2: int
    seconds_remaining: float
    score_diff: float
    cmp_available: int
    cmp_features: Mapping[str, float] = field(default_factory=dict)
    start_pos: float | None = None

    def __post_init__(self):
        if self.home not in (0, 1):
            raise ValueError("home must be 0 or 1")
        if self.half2 not in (0, 1):
            raise ValueError("half2 must be 0 or 1")
        if self.cmp_available not in (0, 1):
            raise ValueError("cmp_available must be 0 or 1")
        if self.drive_index < 1:
            raise ValueError("drive_index starts at 1")
        if self.game_index < 1:
            raise ValueError("game_index starts at 1")
        if self.start_pos is not None and not (0.0 <= self.start_pos <= 100.0):
            raise ValueError("start_pos must lie in [0, 100]")


def context_vector(obs: DriveObservation) -> np.ndarray:
    """Expanded game-context vector: main effects plus pairwise products.

    The clock is scaled to [0, 1] so the context block is on a comparable
    scale to the indicators; the score differential stays in points.
    """
    t = min(max(obs.seconds_remaining / HALF_SECONDS, 0.0), 1.0)
    h2 = float(obs.half2)
    sd = float(obs.score_diff)
    return np.array([h2, t, sd, h2 * t, h2 * sd, t * sd])


@dataclass(frozen=True)
class FeatureSpec:
    """Which complementary features enter the model, and how.

    ``nonprop_categories[c]`` is the set of cumulative splits (subset of
    {2,3,4,5}) for which feature c is granted its own non-proportional
    coefficient on top of the shared proportional one. ``centering_means``
    is None until a design matrix has been built; build_design resolves it
    from the training rows so prediction can reuse the training centering.
    """

    feature_names: tuple[str, ...]
    nonprop_categories: tuple[frozenset[int], ...]
    centering_means: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.feature_names) != len(self.nonprop_categories):
            raise ValueError("feature_names and nonprop_categories must align")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("duplicate feature names")
        for cats in self.nonprop_categories:
            if not cats <= {2, 3, 4, 5}:
                raise ValueError("non-proportional categories must be within {2,3,4,5}")
        if self.centering_means is not None and len(self.centering_means) != len(self.feature_names):
            raise ValueError("centering_means length must match feature_names")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @classmethod
    def default(cls, nonprop: str = "all") -> "FeatureSpec":
        """All glossary features plus the takeover-spot interaction.

        nonprop="all" admits every split for every feature; "none" yields a
        purely proportional block.
        """
        cats = frozenset({2, 3, 4, 5}) if nonprop == "all" else frozenset()
        return cls(DEFAULT_FEATURES, tuple(cats for _ in DEFAULT_FEATURES))

    @classmethod
    def of(cls, selections: Mapping[str, Sequence[int]]) -> "FeatureSpec":
        """Build a spec from {feature name: admitted non-proportional splits}."""
        names = tuple(selections.keys())
        cats = tuple(frozenset(int(s) for s in v) for v in selections.values())
        return cls(names, cats)


def feature_value(obs: DriveObservation, name: str) -> float:
    """Resolve a feature name to its raw (uncentered) value for one drive."""
    if name == INTERACTION_FEATURE:
        turnover = float(obs.cmp_features.get("turnover.nonscor", 0.0))
        spot = 0.0 if obs.start_pos is None else float(obs.start_pos)
        return turnover * spot
    if name in GLOSSARY_FEATURES:
        return float(obs.cmp_features.get(name, 0.0))
    raise UnknownFeature(f"cannot resolve feature {name!r}")


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """One point in parameter space.

    ``alpha``/``beta`` are the full per-team effect vectors (they sum to
    zero; the contrast representation drops the lexicographically last
    team). ``gamma_s`` maps a cumulative split s to a full-length vector
    over features, structurally zero outside the admitted slots.
    """

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    delta: float
    phi: np.ndarray
    xi: float
    gamma: np.ndarray
    gamma_s: Mapping[int, np.ndarray]

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (4,):
            raise ValueError("mu must have length 4 (splits s = 2..5)")
        for name in ("mu", "alpha", "beta", "phi", "gamma"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if abs(float(self.alpha.sum())) > 1e-6 or abs(float(self.beta.sum())) > 1e-6:
            raise ValueError("team effects must sum to zero")
        gs = {}
        for s, vec in self.gamma_s.items():
            arr = np.array(vec, dtype=float)
            arr.setflags(write=False)
            if arr.shape != self.gamma.shape:
                raise ValueError("gamma_s vectors must match gamma's length")
            gs[int(s)] = arr
        object.__setattr__(self, "gamma_s", gs)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Assembled blocks for a set of drive observations.

    ``U`` stacks the unpenalized columns in the fixed order
    [offense contrasts | defense contrasts | home | context | I_cmp];
    ``P`` holds the centered complementary block (already multiplied by
    I_cmp). The per-split copies of P are implicit: a non-proportional
    coefficient loads P's column onto a single split's predictor.
    """

    U: np.ndarray
    P: np.ndarray
    teams: tuple[str, ...]
    feature_spec: FeatureSpec
    off_index: np.ndarray
    def_index: np.ndarray
    icmp: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.U.shape[0]

    @property
    def n_teams(self) -> int:
        return len(self.teams)

    @property
    def n_features(self) -> int:
        return self.P.shape[1]

    # Column layout of U.
    @property
    def off_slice(self) -> slice:
        return slice(0, self.n_teams - 1)

    @property
    def def_slice(self) -> slice:
        return slice(self.n_teams - 1, 2 * (self.n_teams - 1))

    @property
    def home_col(self) -> int:
        return 2 * (self.n_teams - 1)

    @property
    def context_slice(self) -> slice:
        base = 2 * (self.n_teams - 1) + 1
        return slice(base, base + DIM_CONTEXT)

    @property
    def icmp_col(self) -> int:
        return 2 * (self.n_teams - 1) + 1 + DIM_CONTEXT

    def admitted_slots(self) -> list[tuple[int, int]]:
        """Non-proportional (split, feature) slots in canonical order."""
        slots = []
        for s in (2, 3, 4, 5):
            for c, cats in enumerate(self.feature_spec.nonprop_categories):
                if s in cats:
                    slots.append((s, c))
        return slots

    def zero_params(self) -> ParameterSet:
        n, c = self.n_teams, self.n_features
        return ParameterSet(
            mu=np.zeros(4),
            alpha=np.zeros(n),
            beta=np.zeros(n),
            delta=0.0,
            phi=np.zeros(DIM_CONTEXT),
            xi=0.0,
            gamma=np.zeros(c),
            gamma_s={s: np.zeros(c) for s in sorted({s for s, _ in self.admitted_slots()})},
        )

    def pack_params(self, params: ParameterSet) -> np.ndarray:
        """Flatten to the free-parameter vector (contrast coding for teams)."""
        parts = [
            params.mu,
            params.alpha[:-1],
            params.beta[:-1],
            [params.delta],
            params.phi,
            [params.xi],
            params.gamma,
        ]
        for s, c in self.admitted_slots():
            vec = params.gamma_s.get(s)
            parts.append([0.0 if vec is None else float(vec[c])])
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])

    def unpack_params(self, flat: np.ndarray) -> ParameterSet:
        flat = np.asarray(flat, dtype=float)
        n, c = self.n_teams, self.n_features
        slots = self.admitted_slots()
        expected = 4 + 2 * (n - 1) + 1 + DIM_CONTEXT + 1 + c + len(slots)
        if flat.shape != (expected,):
            raise DimensionMismatch(f"expected {expected} free parameters, got {flat.shape}")
        pos = 0

        def take(k):
            nonlocal pos
            out = flat[pos:pos + k]
            pos += k
            return out

        mu = take(4)
        a = take(n - 1)
        b = take(n - 1)
        delta = float(take(1)[0])
        phi = take(DIM_CONTEXT)
        xi = float(take(1)[0])
        gamma = take(c)
        gamma_s = {s: np.zeros(c) for s in sorted({s for s, _ in slots})}
        for s, ci in slots:
            gamma_s[s][ci] = float(take(1)[0])
        alpha = np.append(a, -a.sum())
        beta = np.append(b, -b.sum())
        return ParameterSet(mu, alpha, beta, delta, phi, xi, gamma, gamma_s)

    def parameter_names(self) -> list[str]:
        names = [f"mu_{s}" for s in (2, 3, 4, 5)]
        names += [f"alpha[{t}]" for t in self.teams[:-1]]
        names += [f"beta[{t}]" for t in self.teams[:-1]]
        names.append("delta")
        names += [f"phi[{c}]" for c in CONTEXT_NAMES]
        names.append("xi")
        names += [f"gamma[{f}]" for f in self.feature_spec.feature_names]
        names += [f"gamma_{s}[{self.feature_spec.feature_names[c]}]" for s, c in self.admitted_slots()]
        return names

    def nonprop_matrix(self, params: ParameterSet) -> np.ndarray:
        """gamma_s as a (n_features, 4) matrix, split-major columns s = 2..5."""
        out = np.zeros((self.n_features, 4))
        for s, vec in params.gamma_s.items():
            out[:, s - 2] = vec
        return out

    def eta(self, params: ParameterSet) -> np.ndarray:
        """Linear predictors, one column per cumulative split s = 2..5."""
        theta_u = np.concatenate([
            params.alpha[:-1], params.beta[:-1], [params.delta], params.phi, [params.xi],
        ])
        base = self.U @ theta_u + self.P @ params.gamma
        eta = params.mu[None, :] + base[:, None]
        gns = self.nonprop_matrix(params)
        if gns.any():
            eta = eta + self.P @ gns
        return eta


def outcomes_array(observations: Sequence[DriveObservation]) -> np.ndarray:
    return np.array([int(o.outcome) for o in observations], dtype=np.int64)


def empirical_feature_means(observations: Sequence[DriveObservation], spec: FeatureSpec) -> np.ndarray:
    """Mean raw feature values over rows with a preceding opposing drive."""
    rows = [o for o in observations if o.cmp_available == 1]
    if not rows:
        return np.zeros(spec.n_features)
    x = np.array([[feature_value(o, f) for f in spec.feature_names] for o in rows])
    return x.mean(axis=0)


def build_design(
    observations: Sequence[DriveObservation],
    spec: FeatureSpec,
    teams: Sequence[str] | None = None,
) -> DesignMatrix:
    """Assemble the unpenalized and penalized blocks for a set of drives.

    Parameters
    ----------
    observations : drives with complementary features already linked.
    spec : feature selection; if ``spec.centering_means`` is None the means
        are computed from these rows (over cmp_available = 1) and recorded
        in the returned design's ``feature_spec`` for reuse at prediction.
    teams : optional fixed roster. When given, every observation must use
        teams from it; when omitted the roster is the sorted set of teams
        appearing in the observations.
    """
    if not observations:
        raise EmptyInput("no observations")
    if teams is None:
        roster = sorted({o.offense for o in observations} | {o.defense for o in observations})
    else:
        roster = sorted(teams)
        seen = {o.offense for o in observations} | {o.defense for o in observations}
        missing = seen - set(roster)
        if missing:
            raise UnknownTeam(f"observations reference teams outside the roster: {sorted(missing)}")
    n = len(roster)
    if n < 2:
        raise SingleTeamLeague("need at least two distinct teams")
    index = {t: i for i, t in enumerate(roster)}

    nrows = len(observations)
    off_idx = np.array([index[o.offense] for o in observations], dtype=np.int64)
    def_idx = np.array([index[o.defense] for o in observations], dtype=np.int64)
    icmp = np.array([float(o.cmp_available) for o in observations])

    raw = np.empty((nrows, spec.n_features))
    for j, name in enumerate(spec.feature_names):
        raw[:, j] = [feature_value(o, name) for o in observations]

    if spec.centering_means is None:
        mask = icmp == 1.0
        means = raw[mask].mean(axis=0) if mask.any() else np.zeros(spec.n_features)
        resolved = replace(spec, centering_means=tuple(float(m) for m in means))
    else:
        resolved = spec
        means = np.asarray(spec.centering_means, dtype=float)

    P = (raw - means[None, :]) * icmp[:, None]

    held = n - 1
    off_block = np.zeros((nrows, n - 1))
    reg = off_idx < held
    off_block[np.flatnonzero(reg), off_idx[reg]] = 1.0
    off_block[off_idx == held, :] = -1.0
    def_block = np.zeros((nrows, n - 1))
    reg = def_idx < held
    def_block[np.flatnonzero(reg), def_idx[reg]] = 1.0
    def_block[def_idx == held, :] = -1.0

    home = np.array([float(o.home) for o in observations])
    context = np.array([context_vector(o) for o in observations])
    U = np.column_stack([off_block, def_block, home, context, icmp])
    U.setflags(write=False)
    P.setflags(write=False)

    return DesignMatrix(
        U=U,
        P=P,
        teams=tuple(roster),
        feature_spec=resolved,
        off_index=off_idx,
        def_index=def_idx,
        icmp=icmp,
    )


def category_probabilities(eta: np.ndarray) -> np.ndarray:
    """Map the four cumulative-split predictors to the five category masses.

    pi_s = sigma(eta_s) - sigma(eta_{s+1}) with sigma(eta_1) == 1 and
    sigma(eta_6) == 0. Raises NonMonotoneCumulative when any category gets
    strictly negative mass; exact zeros are returned as-is (the likelihood
    treats an observed zero-mass category as -inf).
    """
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (4,):
        raise DimensionMismatch("eta must have length 4")
    if not np.all(np.isfinite(eta)):
        raise ValueError("eta must be finite")
    f = expit(eta)
    pi = np.empty(5)
    pi[0] = 1.0 - f[0]
    pi[1:4] = f[:3] - f[1:]
    pi[4] = f[3]
    if (pi < 0.0).any():
        raise NonMonotoneCumulative(
            f"cumulative probabilities are not monotone for eta={eta.tolist()}"
        )
    return pi


def cumulative_matrix(eta: np.ndarray) -> np.ndarray:
    """sigma(eta) for an (n, 4) predictor matrix (vectorized helper)."""
    return expit(np.asarray(eta, dtype=float))


def probability_matrix(f: np.ndarray) -> np.ndarray:
    """All five category masses from an (n, 4) cumulative matrix.

    May contain negative entries at infeasible points; callers that need
    a guarantee should check ``feasible_rows``.
    """
    n = f.shape[0]
    pi = np.empty((n, 5))
    pi[:, 0] = 1.0 - f[:, 0]
    pi[:, 1:4] = f[:, :3] - f[:, 1:]
    pi[:, 4] = f[:, 3]
    return pi


def feasible_rows(f: np.ndarray) -> np.ndarray:
    """Rows where no category receives strictly negative mass."""
    return ~(f[:, 1:] > f[:, :-1]).any(axis=1)
