"""Command-line pipeline driver.

Every subcommand writes its artifacts into one output directory (flag
--out, else the DRIVELOGIT_OUT environment variable, else the working
directory) and stamps each artifact with a 16-hex-digit hash of its own
resolved configuration, so identical invocations produce byte-identical
files and mixed-provenance outputs are detectable. JSON artifacts carry
scalar results, CSV artifacts carry tables; no images are produced.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Failures also emit a single machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .diagnostics import cv_calibration, qq_slope, surrogate_binarized, surrogate_joint
from .errors import (
    EmptyInput,
    InfeasibleFit,
    InfeasiblePoint,
    InfeasibleStart,
    InfeasibleTruth,
    MissingFieldPosition,
    NonMonotoneCumulative,
    NonProportionalFit,
    NotASimplex,
    PipelineError,
    RefitFailure,
    SingleTeamLeague,
    TeamCoverageImpossible,
    UnknownFeature,
    UnknownTeam,
    UnsortedInput,
)
from .ingestion import (
    NONMAJOR_ID,
    aggregate_drives,
    link_complementary,
    read_drives_csv,
    read_plays_csv,
    validate_and_filter,
    write_drives_csv,
)
from .likelihood import PenaltyConfig
from .model import FeatureSpec, build_design, outcomes_array
from .projection import build_projection_report, rank_shift_table
from .selection import cross_validate, nested_mae, stability
from .simulate import (
    generate_drive_summaries,
    intercept_only_truth,
    nfl_like_truth,
    null_truth,
)
from .solver import FitConfig, FitResult, fit, refit_selected

_DATA_ERRORS = (
    EmptyInput, SingleTeamLeague, UnknownFeature, UnknownTeam, UnsortedInput,
    MissingFieldPosition, TeamCoverageImpossible, NotASimplex,
    FileNotFoundError, ValueError, KeyError,
)
_NUMERICAL_ERRORS = (
    NonMonotoneCumulative, InfeasiblePoint, InfeasibleStart, InfeasibleFit,
    InfeasibleTruth, NonProportionalFit, RefitFailure,
    np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError, OverflowError,
)


class _NumericalFailure(RuntimeError):
    """Wrapper for conditions that must exit 3 without a library exception."""


def _config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


class _Run:
    """Resolved configuration plus artifact writers for one invocation."""

    def __init__(self, args: argparse.Namespace):
        config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        self.config = {k: (str(v) if isinstance(v, Path) else v)
                       for k, v in config.items()}
        self.hash = _config_hash(self.config)
        out = args.out or os.environ.get("DRIVELOGIT_OUT") or "."
        self.outdir = Path(out)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.suffix = f"_{args.season}" if getattr(args, "season", None) else ""

    def path(self, stem: str, ext: str) -> Path:
        return self.outdir / f"{stem}{self.suffix}.{ext}"

    def write_json(self, stem: str, payload: dict) -> Path:
        path = self.path(stem, "json")
        body = {"config_hash": self.hash, "config": self.config, **payload}
        path.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")
        return path

    def write_csv(self, stem: str, header, rows) -> Path:
        path = self.path(stem, "csv")
        with open(path, "w", newline="") as fh:
            fh.write(f"# config_hash={self.hash}\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        return path


def _fit_config(args) -> FitConfig:
    kwargs = {}
    if getattr(args, "max_iter", None) is not None:
        kwargs["max_outer_iterations"] = args.max_iter
    if getattr(args, "grid_size", None) is not None:
        kwargs["grid_size"] = args.grid_size
    if getattr(args, "lambda_min_ratio", None) is not None:
        kwargs["lambda_min_ratio"] = args.lambda_min_ratio
    if getattr(args, "order_seed", None) is not None:
        kwargs["seed"] = args.order_seed
    return FitConfig(**kwargs)


def _load_observations(path):
    summaries = read_drives_csv(path)
    if not summaries:
        raise EmptyInput(f"no drives in {path}")
    return link_complementary(summaries)


def _parse_select(text: str) -> FeatureSpec:
    """--select syntax: comma-separated items, each ``name`` for a
    proportional-only pick or ``name@4`` / ``name@4+5`` to add
    non-proportional splits."""
    names, cats = [], []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "@" in item:
            name, _, tail = item.partition("@")
            splits = frozenset(int(tok) for tok in tail.split("+") if tok)
        else:
            name, splits = item, frozenset()
        if not splits <= {2, 3, 4, 5}:
            raise ValueError(f"--select splits must be in 2..5: {item!r}")
        names.append(name)
        cats.append(splits)
    if not names:
        raise ValueError("--select picked no features")
    return FeatureSpec(feature_names=tuple(names), nonprop_categories=tuple(cats))


def _resolve_selected(args) -> FeatureSpec:
    if getattr(args, "select", None):
        return _parse_select(args.select)
    payload = json.loads(Path(args.from_cv).read_text())
    reps = payload.get("replicates")
    if not reps:
        raise ValueError(f"{args.from_cv} holds no CV replicates")
    mapping = reps[0]["selected"]
    names = tuple(sorted(mapping))
    return FeatureSpec(
        feature_names=names,
        nonprop_categories=tuple(frozenset(mapping[n]) for n in names),
    )


def _selection_args(parser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--select", help="feature list, e.g. 'turnover.nonscor@4,off.ST.yards.gained'")
    group.add_argument("--from-cv", help="lambda_sparse.json from the cv subcommand")


def _common_fit_args(parser):
    parser.add_argument("--max-iter", type=int, help="solver sweep cap")
    parser.add_argument("--order-seed", type=int,
                        help="randomize coordinate visiting order (affects nothing but the path taken)")


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_ingest(args) -> int:
    run = _Run(args)
    plays = []
    for path in args.plays:
        plays.extend(read_plays_csv(path))
    plays.sort(key=lambda p: (p.game_id, p.half, p.play_index))
    retained, report = validate_and_filter(plays)
    summaries = aggregate_drives(retained, args.league)
    if args.majors:
        roster = {line.strip() for line in Path(args.majors).read_text().splitlines()
                  if line.strip()}
        if args.league == "college":
            summaries = [
                s if s.offense in roster and s.defense in roster else
                type(s)(
                    game_id=s.game_id, half=s.half, drive_index=s.drive_index,
                    offense=s.offense if s.offense in roster else NONMAJOR_ID,
                    defense=s.defense if s.defense in roster else NONMAJOR_ID,
                    offense_home=s.offense_home, outcome=s.outcome,
                    start_pos=s.start_pos, seconds_remaining=s.seconds_remaining,
                    score_diff=s.score_diff, stats=s.stats,
                )
                for s in summaries
            ]
    drives_path = run.outdir / f"drives{run.suffix}.csv"
    write_drives_csv(drives_path, summaries, header_comment=f"config_hash={run.hash}")
    run.write_json("ingest_report", {"report": report, "drives": len(summaries)})
    print(f"wrote {drives_path} ({len(summaries)} drives, "
          f"retention {report['retention']:.3f})")
    return 0


def _cmd_simulate(args) -> int:
    run = _Run(args)
    maker = {"nfl": nfl_like_truth, "null": null_truth,
             "intercept": intercept_only_truth}[args.preset]
    truth = maker(n_teams=args.teams, games_per_team=args.games,
                  drives_per_half=args.drives_per_half)
    summaries = generate_drive_summaries(truth, args.seed)
    drives_path = run.outdir / f"drives{run.suffix}.csv"
    write_drives_csv(drives_path, summaries, header_comment=f"config_hash={run.hash}")
    p = truth.params
    names = truth.feature_spec.feature_names
    run.write_json("truth", {"truth": {
        "teams": list(truth.teams),
        "mu": [float(v) for v in p.mu],
        "alpha": {t: float(v) for t, v in zip(truth.teams, p.alpha)},
        "beta": {t: float(v) for t, v in zip(truth.teams, p.beta)},
        "delta": float(p.delta),
        "phi": [float(v) for v in p.phi],
        "xi": float(p.xi),
        "gamma": {n: float(v) for n, v in zip(names, p.gamma) if v != 0.0},
        "gamma_s": {str(s): {n: float(v) for n, v in zip(names, vec) if v != 0.0}
                    for s, vec in p.gamma_s.items()},
        "centering_means": [float(v) for v in truth.feature_spec.centering_means],
    }})
    print(f"wrote {drives_path} ({len(summaries)} drives)")
    return 0


def _cmd_fit(args) -> int:
    run = _Run(args)
    observations = _load_observations(args.drives)
    spec = FeatureSpec.default(nonprop=args.nonprop)
    design = build_design(observations, spec)
    result = fit(design, outcomes_array(observations),
                 PenaltyConfig(args.lam, args.alpha_en), _fit_config(args))
    run.write_json("fit", {"fit": result.to_jsonable()})
    print(f"objective {result.objective:.6f} after {result.iterations} sweeps "
          f"(converged: {result.converged})")
    if not result.converged:
        raise _NumericalFailure("fit did not reach the KKT tolerance")
    return 0


def _cmd_cv(args) -> int:
    run = _Run(args)
    observations = _load_observations(args.drives)
    results = cross_validate(
        observations,
        penalty_base=PenaltyConfig(0.0, args.alpha_en),
        k=args.folds,
        replicates=args.replicates,
        seed=args.seed,
        config=_fit_config(args),
    )
    rows = []
    for res in results:
        for lam, mean, se in zip(res.lambda_grid, res.mean_oos, res.se_oos):
            rows.append((res.replicate, lam, mean, se))
    curve = run.write_csv("cv_curve", ("replicate", "lambda", "mean_oos", "se_oos"), rows)
    run.write_json("lambda_sparse", {"replicates": [r.to_jsonable() for r in results]})
    picks = ", ".join(f"{r.lambda_sparse:.5g}" for r in results)
    print(f"wrote {curve}; lambda_sparse per replicate: {picks}")
    return 0


def _cmd_stability(args) -> int:
    run = _Run(args)
    results = []
    for i, path in enumerate(args.drives):
        observations = _load_observations(path)
        results.extend(cross_validate(
            observations,
            penalty_base=PenaltyConfig(0.0, args.alpha_en),
            k=args.folds,
            replicates=args.replicates,
            seed=args.seed + i,
            config=_fit_config(args),
        ))
    table = stability(results)
    rows = [(f, slot, p, s if s is not None else "")
            for f, slot, p, s in table.entries]
    path = run.write_csv("stability", ("feature", "slot", "proportion", "sign"), rows)
    run.write_json("stability", {
        "n_results": table.n_results,
        "entries": [{"feature": f, "slot": sl, "proportion": p, "sign": sg}
                    for f, sl, p, sg in table.entries],
    })
    print(f"wrote {path} ({table.n_results} replicates)")
    return 0


def _cmd_refit(args) -> int:
    run = _Run(args)
    observations = _load_observations(args.drives)
    selected = _resolve_selected(args)
    design = build_design(observations, FeatureSpec.default())
    result = refit_selected(design, outcomes_array(observations), selected,
                            _fit_config(args))
    run.write_json("refit", {"fit": result.to_jsonable()})
    print(f"objective {result.objective:.6f} after {result.iterations} sweeps "
          f"(converged: {result.converged})")
    if not result.converged:
        raise _NumericalFailure("refit did not reach the KKT tolerance")
    return 0


def _cmd_diagnose(args) -> int:
    run = _Run(args)
    observations = _load_observations(args.drives)
    payload = json.loads(Path(args.fit).read_text())
    result = FitResult.from_jsonable(payload["fit"])
    design = build_design(observations, result.feature_spec, teams=result.teams)
    y = outcomes_array(observations)
    proportional = not any(np.any(v != 0.0) for v in result.params.gamma_s.values())
    mode = args.mode
    if mode == "auto":
        mode = "joint" if proportional else "binarized"
    rows = []
    summary = {"mode": mode, "equations": {}}
    if mode == "joint":
        res = surrogate_joint(result, design, y, seed=args.seed)
        for i, (fv, rv) in enumerate(zip(res.fitted, res.residuals)):
            rows.append((i, "", fv, rv))
        summary["equations"]["joint"] = {
            "mean": float(np.mean(res.residuals)),
            "qq_slope": qq_slope(res.residuals),
            "n": int(res.residuals.shape[0]),
        }
    else:
        for s in (2, 3, 4, 5):
            res = surrogate_binarized(result, design, y, s, seed=args.seed)
            for i, (fv, rv) in enumerate(zip(res.fitted, res.residuals)):
                rows.append((i, s, fv, rv))
            summary["equations"][f"s{s}"] = {
                "mean": float(np.mean(res.residuals)),
                "qq_slope": qq_slope(res.residuals),
                "n": int(res.residuals.shape[0]),
            }
    path = run.write_csv(
        "residuals", ("row_id", "category_s", "fitted_eta", "surrogate_residual"), rows)
    run.write_json("diagnostics", summary)
    print(f"wrote {path} ({mode} mode)")
    return 0


def _cmd_project(args) -> int:
    run = _Run(args)
    observations = _load_observations(args.drives)
    selected = _resolve_selected(args)
    report = build_projection_report(
        observations, selected,
        side=args.side, league=args.league, min_games=args.min_games,
        replicates=args.replicates, seed=args.seed, config=_fit_config(args),
    )
    rows = [(r.team, r.games, r.drives, r.value_sos, r.rank_sos, r.value_cmp,
             r.rank_cmp, r.shift, r.ci_lo, r.ci_hi, r.cmp_turnover_rate,
             r.cmp_turnover_rank, r.cmp_start_pos, r.cmp_start_rank)
            for r in report.rows]
    path = run.write_csv("projection_report", (
        "team", "games", "drives", "value_sos", "rank_sos", "value_cmp",
        "rank_cmp", "shift", "ci_lo", "ci_hi", "cmp_turnover_rate",
        "cmp_turnover_rank", "cmp_start_pos", "cmp_start_rank"), rows)
    table = rank_shift_table(report)
    txt = run.path("rank_table", "txt")
    txt.write_text(f"# config_hash={run.hash}\n{table}\n")
    run.write_json("projection_report", {
        "side": report.side,
        "home_rate": report.home_rate,
        "min_games": report.min_games,
        "teams": [{"team": r.team, "value_sos": r.value_sos,
                   "value_cmp": r.value_cmp, "shift": r.shift,
                   "ci": [r.ci_lo, r.ci_hi]} for r in report.rows],
    })
    print(f"wrote {path} and {txt}")
    return 0


def _cmd_mae(args) -> int:
    run = _Run(args)
    observations = _load_observations(args.drives)
    selected = _resolve_selected(args)
    result = nested_mae(observations, selected, k=args.folds, seed=args.seed,
                        config=_fit_config(args))
    rows = []
    for mi, model in enumerate(result.models):
        for fi, v in enumerate(result.fold_maes[mi]):
            rows.append((model, fi, v))
    path = run.write_csv("mae", ("model", "fold", "mae"), rows)
    run.write_json("mae", {"models": {
        m: {"mae": result.mae[i], "se": result.se[i]}
        for i, m in enumerate(result.models)
    }})
    pretty = ", ".join(f"{m}={result.mae[i]:.4f}" for i, m in enumerate(result.models))
    print(f"wrote {path}; {pretty}")
    return 0


def _cmd_calibrate(args) -> int:
    run = _Run(args)
    observations = _load_observations(args.drives)
    selected = _resolve_selected(args)
    table = cv_calibration(observations, selected, k=args.folds, seed=args.seed,
                           bins=args.bins, config=_fit_config(args))
    rows = [(e.category, e.bin_lo, e.bin_hi, e.mean_pred, e.obs_freq, e.n)
            for e in table.entries]
    path = run.write_csv(
        "calibration", ("category", "bin_lo", "bin_hi", "mean_pred", "obs_freq", "n"),
        rows)
    worst = max((abs(e.mean_pred - e.obs_freq) for e in table.entries
                 if e.n >= 200), default=None)
    run.write_json("calibration", {
        "bins": table.bins,
        "worst_gap_ge200": worst,
        "entries": len(table.entries),
    })
    print(f"wrote {path} ({len(table.entries)} occupied bins)")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivelogit",
        description="Drive-level ordinal scoring models with complementary effects.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--out", help="output directory (default $DRIVELOGIT_OUT or .)")
        p.add_argument("--season", help="tag appended to artifact file names")
        return p

    p = add("ingest", _cmd_ingest, "plays CSV -> validated canonical drives CSV")
    p.add_argument("--plays", nargs="+", required=True)
    p.add_argument("--league", choices=("nfl", "college"), default="nfl")
    p.add_argument("--majors", help="file of major-team ids (college grouping)")

    p = add("simulate", _cmd_simulate, "generate a synthetic season")
    p.add_argument("--preset", choices=("nfl", "null", "intercept"), default="nfl")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--teams", type=int, default=32)
    p.add_argument("--games", type=int, default=16)
    p.add_argument("--drives-per-half", type=int, default=11)

    p = add("fit", _cmd_fit, "one penalized fit at a fixed lambda")
    p.add_argument("--drives", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--alpha-en", type=float, default=0.99)
    p.add_argument("--nonprop", choices=("all", "none"), default="all")
    _common_fit_args(p)

    p = add("cv", _cmd_cv, "replicated k-fold CV with the one-SE sparse rule")
    p.add_argument("--drives", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--replicates", type=int, default=3)
    p.add_argument("--alpha-en", type=float, default=0.99)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--lambda-min-ratio", type=float)
    _common_fit_args(p)

    p = add("stability", _cmd_stability, "selection stability across seasons")
    p.add_argument("--drives", nargs="+", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--replicates", type=int, default=3)
    p.add_argument("--alpha-en", type=float, default=0.99)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--lambda-min-ratio", type=float)
    _common_fit_args(p)

    p = add("refit", _cmd_refit, "unpenalized refit of a selected structure")
    p.add_argument("--drives", required=True)
    _selection_args(p)
    _common_fit_args(p)

    p = add("diagnose", _cmd_diagnose, "surrogate residual diagnostics")
    p.add_argument("--drives", required=True)
    p.add_argument("--fit", required=True, help="fit.json or refit.json artifact")
    p.add_argument("--mode", choices=("auto", "joint", "binarized"), default="auto")
    p.add_argument("--seed", type=int, required=True)

    p = add("project", _cmd_project, "league-average projections and shifts")
    p.add_argument("--drives", required=True)
    _selection_args(p)
    p.add_argument("--side", choices=("offense", "defense"), default="offense")
    p.add_argument("--league", choices=("nfl", "college"), default="nfl")
    p.add_argument("--min-games", type=int)
    p.add_argument("--regime", choices=("sos", "sos+cmp"), default="sos+cmp",
                   help="regime of primary interest (both are always computed)")
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--seed", type=int, required=True)
    _common_fit_args(p)

    p = add("mae", _cmd_mae, "nested out-of-sample MAE comparison")
    p.add_argument("--drives", required=True)
    _selection_args(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    _common_fit_args(p)

    p = add("calibrate", _cmd_calibrate, "out-of-fold calibration table")
    p.add_argument("--drives", required=True)
    _selection_args(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    _common_fit_args(p)

    return parser


def _emit_error(kind: str, exc: BaseException, code: int) -> int:
    print(json.dumps({
        "error": kind,
        "type": type(exc).__name__,
        "message": str(exc),
        "exit_code": code,
    }, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage problems; this interface reserves 2 for
        # data errors, so usage maps to 1 (and --help stays 0)
        return 0 if not exc.code else 1
    try:
        return args.func(args)
    except _NumericalFailure as exc:
        return _emit_error("NumericalFailure", exc, 3)
    except _NUMERICAL_ERRORS as exc:
        return _emit_error("NumericalFailure", exc, 3)
    except _DATA_ERRORS as exc:
        return _emit_error("DataError", exc, 2)
    except PipelineError as exc:
        return _emit_error("DataError", exc, 2)


if __name__ == "__main__":
    sys.exit(main())
