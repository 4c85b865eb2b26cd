"""Play-by-play and drive-level ingestion.

Two CSV layouts are understood:

* a play CSV (one row per play, ``PLAY_COLUMNS`` header) that gets
  validated half-by-half, aggregated into per-drive statistics, and linked
  into complementary observations; and
* the canonical drive CSV (one row per drive, ``DRIVE_COLUMNS`` header,
  glossary statistic names verbatim) that skips straight to linking. The
  simulator emits this second layout, so synthetic seasons flow through the
  same path as parsed real data.

Field positions are yards advanced toward the opponent's goal, 0..100,
always from the current offense's perspective. Kick and punt returns are
recorded as the opening play of the receiving team's drive (play types
``punt_return`` / ``kick_return``), which makes return yardage part of the
receiving offense's drive by construction. Cleaning never repairs data: a
half containing any inconsistent play is dropped whole.
"""

from __future__ import annotations

import csv
import warnings
from collections import OrderedDict
from dataclasses import dataclass

from .errors import MissingFieldPosition, UnsortedInput
from .model import GLOSSARY_FEATURES, DriveObservation, ScoringCategory

__all__ = [
    "PlayRecord",
    "DriveSummary",
    "PLAY_COLUMNS",
    "DRIVE_COLUMNS",
    "read_plays_csv",
    "write_plays_csv",
    "read_drives_csv",
    "write_drives_csv",
    "validate_and_filter",
    "aggregate_drives",
    "link_complementary",
    "group_nonmajor",
    "ingest_plays",
    "NONMAJOR_ID",
]

NONMAJOR_ID = "NON-MAJOR"

SCRIMMAGE_TYPES = frozenset({"pass", "rush", "penalty", "kneel"})
RETURN_TYPES = frozenset({"punt_return", "kick_return"})
KICK_TYPES = frozenset({"punt", "kickoff", "field_goal"})

PLAY_COLUMNS = (
    "game_id", "half", "drive_number", "play_index", "offense", "defense",
    "offense_home", "play_type", "yards", "start_pos", "end_pos",
    "completion", "incompletion", "first_down", "third_down_converted",
    "sack", "fumble", "fumble_lost", "interception", "turnover_downs",
    "points", "return_yards", "kick_distance", "seconds_remaining",
    "score_diff",
)

DRIVE_COLUMNS = (
    "game_id", "half", "drive_index", "offense", "defense", "offense_home",
    "outcome", "start_pos", "seconds_remaining", "score_diff",
) + GLOSSARY_FEATURES


@dataclass(frozen=True)
class PlayRecord:
    """One play. Flags are 0/1 ints; positions may be None when the feed
    omitted them (which gets the half rejected)."""

    game_id: str
    half: int
    drive_number: int
    play_index: int
    offense: str
    defense: str
    offense_home: int
    play_type: str
    yards: float
    start_pos: float | None
    end_pos: float | None
    completion: int = 0
    incompletion: int = 0
    first_down: int = 0
    third_down_converted: int = 0
    sack: int = 0
    fumble: int = 0
    fumble_lost: int = 0
    interception: int = 0
    turnover_downs: int = 0
    points: float = 0.0
    return_yards: float = 0.0
    kick_distance: float = 0.0
    seconds_remaining: float = 0.0
    score_diff: float = 0.0


@dataclass(frozen=True)
class DriveSummary:
    """Per-drive glossary statistics plus identity and context snapshot."""

    game_id: str
    half: int
    drive_index: int
    offense: str
    defense: str
    offense_home: int
    outcome: ScoringCategory
    start_pos: float
    seconds_remaining: float
    score_diff: float
    stats: dict

    def __post_init__(self):
        missing = [k for k in GLOSSARY_FEATURES if k not in self.stats]
        if missing:
            raise ValueError(f"missing glossary statistics: {missing}")
        for key in ("turnover.nonscor", "punt.safety"):
            if self.stats[key] not in (0, 0.0, 1, 1.0):
                raise ValueError(f"{key} must be 0 or 1")


# ---------------------------------------------------------------------------
# CSV plumbing


def _opt_float(text: str) -> float | None:
    return None if text == "" else float(text)


def read_plays_csv(path) -> list[PlayRecord]:
    plays = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(_strip_comments(fh))
        missing = set(PLAY_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"play CSV is missing columns: {sorted(missing)}")
        for row in reader:
            plays.append(PlayRecord(
                game_id=row["game_id"],
                half=int(row["half"]),
                drive_number=int(row["drive_number"]),
                play_index=int(row["play_index"]),
                offense=row["offense"],
                defense=row["defense"],
                offense_home=int(row["offense_home"]),
                play_type=row["play_type"],
                yards=float(row["yards"] or 0.0),
                start_pos=_opt_float(row["start_pos"]),
                end_pos=_opt_float(row["end_pos"]),
                completion=int(row["completion"] or 0),
                incompletion=int(row["incompletion"] or 0),
                first_down=int(row["first_down"] or 0),
                third_down_converted=int(row["third_down_converted"] or 0),
                sack=int(row["sack"] or 0),
                fumble=int(row["fumble"] or 0),
                fumble_lost=int(row["fumble_lost"] or 0),
                interception=int(row["interception"] or 0),
                turnover_downs=int(row["turnover_downs"] or 0),
                points=float(row["points"] or 0.0),
                return_yards=float(row["return_yards"] or 0.0),
                kick_distance=float(row["kick_distance"] or 0.0),
                seconds_remaining=float(row["seconds_remaining"] or 0.0),
                score_diff=float(row["score_diff"] or 0.0),
            ))
    return plays


def write_plays_csv(path, plays, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(PLAY_COLUMNS)
        for p in plays:
            writer.writerow([
                p.game_id, p.half, p.drive_number, p.play_index, p.offense,
                p.defense, p.offense_home, p.play_type, repr(float(p.yards)),
                "" if p.start_pos is None else repr(float(p.start_pos)),
                "" if p.end_pos is None else repr(float(p.end_pos)),
                p.completion, p.incompletion, p.first_down,
                p.third_down_converted, p.sack, p.fumble, p.fumble_lost,
                p.interception, p.turnover_downs, repr(float(p.points)),
                repr(float(p.return_yards)), repr(float(p.kick_distance)),
                repr(float(p.seconds_remaining)), repr(float(p.score_diff)),
            ])


def _strip_comments(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def read_drives_csv(path) -> list[DriveSummary]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(_strip_comments(fh))
        missing = set(DRIVE_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"drive CSV is missing columns: {sorted(missing)}")
        for row in reader:
            out.append(DriveSummary(
                game_id=row["game_id"],
                half=int(row["half"]),
                drive_index=int(row["drive_index"]),
                offense=row["offense"],
                defense=row["defense"],
                offense_home=int(row["offense_home"]),
                outcome=ScoringCategory.from_label(row["outcome"]),
                start_pos=float(row["start_pos"]),
                seconds_remaining=float(row["seconds_remaining"]),
                score_diff=float(row["score_diff"]),
                stats={k: float(row[k]) for k in GLOSSARY_FEATURES},
            ))
    return out


def write_drives_csv(path, summaries, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(DRIVE_COLUMNS)
        for d in summaries:
            writer.writerow([
                d.game_id, d.half, d.drive_index, d.offense, d.defense,
                d.offense_home, d.outcome.label, repr(float(d.start_pos)),
                repr(float(d.seconds_remaining)), repr(float(d.score_diff)),
            ] + [repr(float(d.stats[k])) for k in GLOSSARY_FEATURES])


# ---------------------------------------------------------------------------
# Validation


def _group_halves(plays) -> "OrderedDict[tuple, list]":
    halves: OrderedDict[tuple, list] = OrderedDict()
    for p in plays:
        halves.setdefault((p.game_id, p.half), []).append(p)
    return halves


def _spot_turnover(play: PlayRecord) -> bool:
    if play.interception or play.fumble_lost or play.turnover_downs:
        return True
    return play.play_type == "field_goal" and play.points == 0


def _half_problem(rows: list[PlayRecord]) -> str | None:
    """First cleaning rule this half violates, or None if it is clean."""
    for p in rows:
        if p.start_pos is None or p.end_pos is None:
            return "missing_position"
        if not (0.0 <= p.start_pos <= 100.0 and 0.0 <= p.end_pos <= 100.0):
            return "out_of_range"
    for prev, cur in zip(rows, rows[1:]):
        if cur.play_index <= prev.play_index or cur.drive_number < prev.drive_number:
            return "unsorted"
    for p in rows:
        if p.play_type in SCRIMMAGE_TYPES and abs(p.yards - (p.end_pos - p.start_pos)) > 1.0:
            return "yardage_mismatch"
    drives: OrderedDict[int, list] = OrderedDict()
    for p in rows:
        drives.setdefault(p.drive_number, []).append(p)
    drive_list = list(drives.values())
    for plays_of_drive in drive_list:
        for prev, cur in zip(plays_of_drive, plays_of_drive[1:]):
            if prev.play_type in KICK_TYPES:
                continue  # spot after a kick belongs to the other team
            if abs(cur.start_pos - prev.end_pos) > 1.0:
                return "drive_gap"
    for prev_drive, cur_drive in zip(drive_list, drive_list[1:]):
        last = prev_drive[-1]
        scored = any(p.points != 0 for p in prev_drive)
        changed = cur_drive[0].offense != last.offense
        if changed and not scored and _spot_turnover(last):
            if abs(cur_drive[0].start_pos - (100.0 - last.end_pos)) > 1.0:
                return "turnover_spot"
    return None


def validate_and_filter(plays) -> tuple[list[PlayRecord], dict]:
    """Drop every half that contains an inconsistent play.

    Returns the retained plays (original order) and a report with total and
    retained half counts, the retention fraction, per-reason rejection
    counts, and the list of rejected (game_id, half, reason) triples.
    """
    halves = _group_halves(plays)
    retained: list[PlayRecord] = []
    rejected: list[tuple[str, int, str]] = []
    reasons: dict[str, int] = {}
    for (game_id, half), rows in halves.items():
        problem = _half_problem(rows)
        if problem is None:
            retained.extend(rows)
        else:
            rejected.append((game_id, half, problem))
            reasons[problem] = reasons.get(problem, 0) + 1
    total = len(halves)
    kept = total - len(rejected)
    report = {
        "halves_total": total,
        "halves_retained": kept,
        "retention": kept / total if total else 1.0,
        "rejections": dict(sorted(reasons.items())),
        "rejected_halves": [
            {"game_id": g, "half": h, "reason": r} for g, h, r in rejected
        ],
    }
    return retained, report


# ---------------------------------------------------------------------------
# Aggregation


def _drive_outcome(plays_of_drive) -> ScoringCategory:
    for p in plays_of_drive:
        if p.points == 7:
            return ScoringCategory.OFFENSIVE_TD
        if p.points == 3:
            return ScoringCategory.FIELD_GOAL
        if p.points == -2:
            return ScoringCategory.SAFETY
        if p.points == -7:
            return ScoringCategory.DEFENSIVE_TD
    return ScoringCategory.NO_SCORE


def aggregate_drives(plays, league: str = "nfl") -> list[DriveSummary]:
    """Summarize sorted plays into per-drive glossary statistics.

    College mode ("college") drops overtime (half > 2); NFL mode keeps it.
    Raises UnsortedInput when play_index regresses within a half and
    MissingFieldPosition when a play lacks a spot; feed plays through
    validate_and_filter first to reject such halves instead of failing.
    """
    if league not in ("nfl", "college"):
        raise ValueError("league must be 'nfl' or 'college'")
    summaries: list[DriveSummary] = []
    for (game_id, half), rows in _group_halves(plays).items():
        if league == "college" and half > 2:
            continue
        for prev, cur in zip(rows, rows[1:]):
            if cur.play_index <= prev.play_index:
                raise UnsortedInput(f"play_index regresses in {game_id} half {half}")
            if cur.drive_number < prev.drive_number:
                raise UnsortedInput(f"drive_number regresses in {game_id} half {half}")
        drives: OrderedDict[int, list] = OrderedDict()
        for p in rows:
            drives.setdefault(p.drive_number, []).append(p)
        for seq, (_, dplays) in enumerate(drives.items(), start=1):
            first = dplays[0]
            if first.start_pos is None:
                raise MissingFieldPosition(
                    f"drive {seq} of {game_id} half {half} has no starting spot")
            scrim = [p for p in dplays if p.play_type in SCRIMMAGE_TYPES]
            returns = [p for p in dplays if p.play_type in RETURN_TYPES]
            rushes = [p for p in scrim if p.play_type == "rush"]
            stats = {
                "off.ST.yards.gained": sum(p.yards for p in scrim)
                + sum(p.return_yards for p in returns),
                "ST.return.yards.net": sum(p.return_yards - p.kick_distance for p in returns),
                "pts.scored": sum(p.points for p in dplays if p.points > 0),
                "first.downs.gained": sum(p.first_down for p in dplays),
                "third.downs.converted": sum(p.third_down_converted for p in dplays),
                "punt.safety": 0.0,
                "n.completions": sum(p.completion for p in dplays),
                "n.incompletions": sum(p.incompletion for p in dplays),
                "n.stuffed.runs": sum(1 for p in rushes if p.yards <= 0),
                "n.positive.runs": sum(1 for p in rushes if p.yards > 0),
                "n.negative.plays": sum(1 for p in scrim if p.yards < 0),
                "n.sacks": sum(p.sack for p in dplays),
                "n.fumbles": sum(p.fumble for p in dplays),
            }
            outcome = _drive_outcome(dplays)
            if any(p.play_type == "punt" for p in dplays) or outcome == ScoringCategory.SAFETY:
                stats["punt.safety"] = 1.0
            nonscor = outcome == ScoringCategory.NO_SCORE and _spot_turnover(dplays[-1])
            stats["turnover.nonscor"] = 1.0 if nonscor else 0.0
            summaries.append(DriveSummary(
                game_id=game_id,
                half=half,
                drive_index=seq,
                offense=first.offense,
                defense=first.defense,
                offense_home=first.offense_home,
                outcome=outcome,
                start_pos=float(first.start_pos),
                seconds_remaining=first.seconds_remaining,
                score_diff=first.score_diff,
                stats=stats,
            ))
    return summaries


# ---------------------------------------------------------------------------
# Complementary linking


def link_complementary(summaries) -> list[DriveObservation]:
    """Attach each drive's preceding opposing drive as its complementary
    features.

    Within each half, drive k gets cmp_available = 1 and drive k-1's
    statistics exactly when drive k-1 belonged to the current defense.
    Half-opening drives and same-offense successions (possession retained
    after a defensive score) get cmp_available = 0 with zeroed features.
    The takeover spot is attached only when the preceding drive ended in a
    non-scoring turnover, which is when it is causally the defense's doing.
    """
    zero = {k: 0.0 for k in GLOSSARY_FEATURES}
    by_half: OrderedDict[tuple, list] = OrderedDict()
    for d in summaries:
        by_half.setdefault((d.game_id, d.half), []).append(d)
    pair_games: dict[frozenset, list] = {}
    game_index_of: dict[str, int] = {}
    for d in summaries:
        if d.game_id in game_index_of:
            continue
        pair = frozenset((d.offense, d.defense))
        seen = pair_games.setdefault(pair, [])
        seen.append(d.game_id)
        game_index_of[d.game_id] = len(seen)

    observations: list[DriveObservation] = []
    for (game_id, half), drives in sorted(by_half.items()):
        prev: DriveSummary | None = None
        for d in drives:
            linked = prev is not None and prev.offense == d.defense
            nonscor = linked and prev.stats["turnover.nonscor"] == 1.0
            observations.append(DriveObservation(
                offense=d.offense,
                defense=d.defense,
                game_id=game_id,
                half_id=f"{game_id}:h{half}",
                drive_index=d.drive_index,
                game_index=game_index_of[game_id],
                outcome=d.outcome,
                home=d.offense_home,
                half2=1 if half >= 2 else 0,
                seconds_remaining=d.seconds_remaining,
                score_diff=d.score_diff,
                cmp_available=1 if linked else 0,
                cmp_features=dict(prev.stats) if linked else dict(zero),
                start_pos=d.start_pos if nonscor else None,
            ))
            prev = d
    return observations


def group_nonmajor(observations, major_roster, league: str = "college"):
    """Map every team outside the roster to the shared synthetic id.

    NFL mode has no lower-division opponents, so the call warns and returns
    the observations unchanged.
    """
    if league == "nfl":
        warnings.warn("group_nonmajor is a no-op for NFL data", stacklevel=2)
        return list(observations)
    roster = set(major_roster)
    out = []
    for obs in observations:
        off = obs.offense if obs.offense in roster else NONMAJOR_ID
        de = obs.defense if obs.defense in roster else NONMAJOR_ID
        if off == obs.offense and de == obs.defense:
            out.append(obs)
        else:
            out.append(DriveObservation(
                offense=off, defense=de, game_id=obs.game_id,
                half_id=obs.half_id, drive_index=obs.drive_index,
                game_index=obs.game_index, outcome=obs.outcome,
                home=obs.home, half2=obs.half2,
                seconds_remaining=obs.seconds_remaining,
                score_diff=obs.score_diff, cmp_available=obs.cmp_available,
                cmp_features=dict(obs.cmp_features), start_pos=obs.start_pos,
            ))
    return out


def ingest_plays(plays, league: str = "nfl"):
    """validate -> aggregate -> link, returning (observations, summaries, report)."""
    retained, report = validate_and_filter(plays)
    summaries = aggregate_drives(retained, league)
    return link_complementary(summaries), summaries, report
