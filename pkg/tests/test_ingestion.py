"""Play validation, drive aggregation, and complementary linking."""

from dataclasses import replace

import pytest

from drivelogit import (
    DriveSummary,
    GLOSSARY_FEATURES,
    MissingFieldPosition,
    PlayRecord,
    ScoringCategory,
    UnsortedInput,
    aggregate_drives,
    group_nonmajor,
    ingest_plays,
    link_complementary,
    read_drives_csv,
    read_plays_csv,
    validate_and_filter,
    write_drives_csv,
    write_plays_csv,
)
from drivelogit.ingestion import NONMAJOR_ID


def _play(game_id, half, drive, index, offense, defense, play_type,
          start, end, yards=0.0, **kw):
    home = 1 if offense == "A" else 0
    return PlayRecord(
        game_id=game_id, half=half, drive_number=drive, play_index=index,
        offense=offense, defense=defense, offense_home=home,
        play_type=play_type, yards=yards, start_pos=start, end_pos=end, **kw)


def _half_one(game_id="G1"):
    """A clean first half: punt, touchdown, lost fumble, stall.

    Spots are consistent under every cleaning rule, including the mirrored
    takeover spot after the drive-3 fumble (100 - 44 = 56).
    """
    g = game_id
    return [
        # drive 1: A receives, gains a little, punts
        _play(g, 1, 1, 1, "A", "B", "kick_return", 5.0, 25.0,
              return_yards=20.0, kick_distance=65.0),
        _play(g, 1, 1, 2, "A", "B", "pass", 25.0, 33.0, 8.0,
              completion=1, first_down=1),
        _play(g, 1, 1, 3, "A", "B", "rush", 33.0, 31.0, -2.0),
        _play(g, 1, 1, 4, "A", "B", "pass", 31.0, 31.0, 0.0, incompletion=1),
        _play(g, 1, 1, 5, "A", "B", "punt", 31.0, 31.0, kick_distance=40.0),
        # drive 2: B drives the field and scores
        _play(g, 1, 2, 6, "B", "A", "punt_return", 24.0, 29.0,
              return_yards=5.0, kick_distance=40.0),
        _play(g, 1, 2, 7, "B", "A", "rush", 29.0, 36.0, 7.0),
        _play(g, 1, 2, 8, "B", "A", "pass", 36.0, 60.0, 24.0,
              completion=1, first_down=1, third_down_converted=1),
        _play(g, 1, 2, 9, "B", "A", "pass", 60.0, 75.0, 15.0,
              completion=1, first_down=1, points=7.0),
        # drive 3: A loses a fumble at its own 44
        _play(g, 1, 3, 10, "A", "B", "kick_return", 3.0, 25.0,
              return_yards=22.0, kick_distance=70.0),
        _play(g, 1, 3, 11, "A", "B", "pass", 25.0, 45.0, 20.0,
              completion=1, first_down=1),
        _play(g, 1, 3, 12, "A", "B", "rush", 45.0, 44.0, -1.0,
              fumble=1, fumble_lost=1),
        # drive 4: B takes over at the mirrored spot and stalls out the half
        _play(g, 1, 4, 13, "B", "A", "rush", 56.0, 58.0, 2.0),
        _play(g, 1, 4, 14, "B", "A", "pass", 58.0, 58.0, 0.0, incompletion=1),
    ]


def _half_two(game_id="G1"):
    """Field goal, interception, kneel-out."""
    g = game_id
    return [
        _play(g, 2, 1, 1, "B", "A", "kick_return", 10.0, 30.0,
              return_yards=20.0, kick_distance=68.0),
        _play(g, 2, 1, 2, "B", "A", "rush", 30.0, 34.0, 4.0),
        _play(g, 2, 1, 3, "B", "A", "field_goal", 34.0, 34.0, points=3.0),
        _play(g, 2, 2, 4, "A", "B", "kick_return", 20.0, 28.0,
              return_yards=8.0, kick_distance=60.0),
        _play(g, 2, 2, 5, "A", "B", "pass", 28.0, 30.0, 2.0, interception=1),
        _play(g, 2, 3, 6, "B", "A", "kneel", 70.0, 69.0, -1.0),
    ]


def _corrupt(reason, game_id="G2"):
    """A copy of the clean half broken by exactly one rule."""
    rows = _half_one(game_id)
    if reason == "missing_position":
        rows[1] = replace(rows[1], start_pos=None)
    elif reason == "out_of_range":
        rows[1] = replace(rows[1], start_pos=105.0)
    elif reason == "unsorted":
        rows[2] = replace(rows[2], play_index=2)
    elif reason == "yardage_mismatch":
        rows[1] = replace(rows[1], yards=20.0)
    elif reason == "drive_gap":
        rows[2] = replace(rows[2], start_pos=50.0, end_pos=48.0)
    elif reason == "turnover_spot":
        rows[12] = replace(rows[12], start_pos=70.0, end_pos=72.0)
        rows[13] = replace(rows[13], start_pos=72.0, end_pos=72.0)
    else:
        raise AssertionError(reason)
    return rows


class TestValidateAndFilter:
    def test_clean_input_passes_through(self):
        plays = _half_one() + _half_two()
        kept, report = validate_and_filter(plays)
        assert kept == plays
        assert report["halves_total"] == 2
        assert report["halves_retained"] == 2
        assert report["retention"] == 1.0
        assert report["rejections"] == {}

    @pytest.mark.parametrize("reason", [
        "missing_position", "out_of_range", "unsorted",
        "yardage_mismatch", "drive_gap", "turnover_spot",
    ])
    def test_each_rule_names_its_reason(self, reason):
        kept, report = validate_and_filter(_corrupt(reason))
        assert kept == []
        assert report["rejections"] == {reason: 1}
        assert report["rejected_halves"] == [
            {"game_id": "G2", "half": 1, "reason": reason}]

    def test_whole_half_dropped_not_just_bad_play(self):
        plays = _half_one("G1") + _corrupt("out_of_range", "G2")
        kept, report = validate_and_filter(plays)
        # every surviving play comes from the clean half
        assert {p.game_id for p in kept} == {"G1"}
        assert len(kept) == 14
        assert report["retention"] == pytest.approx(0.5)

    def test_empty_input(self):
        kept, report = validate_and_filter([])
        assert kept == [] and report["retention"] == 1.0


class TestAggregateDrives:
    def test_drive_one_statistics_by_hand(self):
        drives = aggregate_drives(_half_one())
        d1 = drives[0]
        assert d1.outcome == ScoringCategory.NO_SCORE
        assert d1.offense == "A" and d1.defense == "B"
        assert d1.start_pos == 5.0
        s = d1.stats
        # scrimmage yards 8 - 2 + 0 plus the 20-yard return
        assert s["off.ST.yards.gained"] == pytest.approx(26.0)
        assert s["ST.return.yards.net"] == pytest.approx(20.0 - 65.0)
        assert s["pts.scored"] == 0.0
        assert s["first.downs.gained"] == 1
        assert s["third.downs.converted"] == 0
        assert s["punt.safety"] == 1.0  # the drive ended in a punt
        assert s["turnover.nonscor"] == 0.0
        assert s["n.completions"] == 1 and s["n.incompletions"] == 1
        assert s["n.stuffed.runs"] == 1 and s["n.positive.runs"] == 0
        assert s["n.negative.plays"] == 1
        assert s["n.sacks"] == 0 and s["n.fumbles"] == 0

    def test_scoring_drive(self):
        d2 = aggregate_drives(_half_one())[1]
        assert d2.outcome == ScoringCategory.OFFENSIVE_TD
        assert d2.stats["pts.scored"] == 7.0
        assert d2.stats["third.downs.converted"] == 1
        assert d2.stats["punt.safety"] == 0.0
        assert d2.stats["ST.return.yards.net"] == pytest.approx(5.0 - 40.0)

    def test_lost_fumble_marks_nonscoring_turnover(self):
        d3 = aggregate_drives(_half_one())[2]
        assert d3.outcome == ScoringCategory.NO_SCORE
        assert d3.stats["turnover.nonscor"] == 1.0
        assert d3.stats["punt.safety"] == 0.0
        assert d3.stats["n.fumbles"] == 1

    def test_interception_marks_turnover(self):
        drives = aggregate_drives(_half_two())
        assert drives[0].outcome == ScoringCategory.FIELD_GOAL
        assert drives[1].stats["turnover.nonscor"] == 1.0

    def test_drive_indices_restart_each_half(self):
        drives = aggregate_drives(_half_one() + _half_two())
        assert [d.drive_index for d in drives] == [1, 2, 3, 4, 1, 2, 3]

    def test_unsorted_raises_without_filtering(self):
        with pytest.raises(UnsortedInput):
            aggregate_drives(_corrupt("unsorted"))

    def test_missing_opening_spot_raises(self):
        rows = _half_one()
        rows[0] = replace(rows[0], start_pos=None)
        with pytest.raises(MissingFieldPosition):
            aggregate_drives(rows)

    def test_college_drops_overtime_nfl_keeps_it(self):
        ot = [replace(p, half=3) for p in _half_one()]
        plays = _half_one() + _half_two() + ot
        assert max(d.half for d in aggregate_drives(plays, "nfl")) == 3
        assert max(d.half for d in aggregate_drives(plays, "college")) == 2

    def test_league_domain(self):
        with pytest.raises(ValueError):
            aggregate_drives(_half_one(), league="arena")


def _summary(game_id, half, idx, offense, defense, outcome,
             start_pos=25.0, **stats):
    base = {k: 0.0 for k in GLOSSARY_FEATURES}
    base.update(stats)
    return DriveSummary(
        game_id=game_id, half=half, drive_index=idx, offense=offense,
        defense=defense, offense_home=1 if offense == "A" else 0,
        outcome=outcome, start_pos=start_pos, seconds_remaining=1200.0,
        score_diff=0.0, stats=base)


class TestDriveSummaryValidation:
    def test_missing_statistic(self):
        stats = {k: 0.0 for k in GLOSSARY_FEATURES[:-1]}
        with pytest.raises(ValueError):
            DriveSummary("G1", 1, 1, "A", "B", 1, ScoringCategory.NO_SCORE,
                         25.0, 1200.0, 0.0, stats)

    def test_indicator_domain(self):
        stats = {k: 0.0 for k in GLOSSARY_FEATURES}
        stats["turnover.nonscor"] = 0.5
        with pytest.raises(ValueError):
            DriveSummary("G1", 1, 1, "A", "B", 1, ScoringCategory.NO_SCORE,
                         25.0, 1200.0, 0.0, stats)


class TestLinkComplementary:
    def test_half_openers_are_unlinked(self):
        rows = [
            _summary("G1", 1, 1, "A", "B", ScoringCategory.NO_SCORE),
            _summary("G1", 2, 1, "B", "A", ScoringCategory.NO_SCORE),
        ]
        obs = link_complementary(rows)
        for o in obs:
            assert o.cmp_available == 0
            assert all(v == 0.0 for v in o.cmp_features.values())
            assert o.start_pos is None

    def test_normal_succession_links_previous_stats(self):
        rows = [
            _summary("G1", 1, 1, "A", "B", ScoringCategory.NO_SCORE,
                     **{"off.ST.yards.gained": 33.0, "punt.safety": 1.0}),
            _summary("G1", 1, 2, "B", "A", ScoringCategory.FIELD_GOAL),
        ]
        obs = link_complementary(rows)
        assert obs[1].cmp_available == 1
        assert obs[1].cmp_features["off.ST.yards.gained"] == 33.0
        # a punt is not a turnover: no takeover spot attached
        assert obs[1].start_pos is None

    def test_takeover_spot_only_after_nonscoring_turnover(self):
        rows = [
            _summary("G1", 1, 1, "A", "B", ScoringCategory.NO_SCORE,
                     **{"turnover.nonscor": 1.0}),
            _summary("G1", 1, 2, "B", "A", ScoringCategory.NO_SCORE,
                     start_pos=61.0),
        ]
        obs = link_complementary(rows)
        assert obs[1].cmp_available == 1
        assert obs[1].start_pos == 61.0

    def test_retained_possession_breaks_the_link(self):
        # after a defensive score the same offense keeps the ball, so the
        # preceding drive belongs to the SAME offense and must not link
        rows = [
            _summary("G1", 1, 1, "A", "B", ScoringCategory.DEFENSIVE_TD),
            _summary("G1", 1, 2, "A", "B", ScoringCategory.NO_SCORE),
        ]
        obs = link_complementary(rows)
        assert obs[1].cmp_available == 0
        assert obs[1].start_pos is None

    def test_links_never_cross_halves(self):
        rows = [
            _summary("G1", 1, 1, "A", "B", ScoringCategory.NO_SCORE,
                     **{"turnover.nonscor": 1.0}),
            _summary("G1", 2, 1, "B", "A", ScoringCategory.NO_SCORE),
        ]
        obs = link_complementary(rows)
        assert obs[1].cmp_available == 0

    def test_game_index_counts_pair_meetings(self):
        rows = [
            _summary("G1", 1, 1, "A", "B", ScoringCategory.NO_SCORE),
            _summary("G2", 1, 1, "B", "A", ScoringCategory.NO_SCORE),
            _summary("G3", 1, 1, "C", "D", ScoringCategory.NO_SCORE),
        ]
        by_game = {o.game_id: o.game_index for o in link_complementary(rows)}
        assert by_game == {"G1": 1, "G2": 2, "G3": 1}

    def test_half_flag(self):
        rows = [
            _summary("G1", 1, 1, "A", "B", ScoringCategory.NO_SCORE),
            _summary("G1", 2, 1, "B", "A", ScoringCategory.NO_SCORE),
        ]
        obs = link_complementary(rows)
        assert obs[0].half2 == 0 and obs[1].half2 == 1


class TestGroupNonmajor:
    def test_college_maps_outsiders(self):
        rows = [_summary("G1", 1, 1, "A", "tiny-school", ScoringCategory.NO_SCORE)]
        obs = group_nonmajor(link_complementary(rows), {"A"}, league="college")
        assert obs[0].offense == "A"
        assert obs[0].defense == NONMAJOR_ID

    def test_nfl_mode_warns_and_passes_through(self):
        rows = [_summary("G1", 1, 1, "A", "B", ScoringCategory.NO_SCORE)]
        base = link_complementary(rows)
        with pytest.warns(UserWarning):
            out = group_nonmajor(base, {"A"}, league="nfl")
        assert out == base


class TestCsvRoundTrips:
    def test_plays_round_trip(self, tmp_path):
        path = tmp_path / "plays.csv"
        plays = _half_one() + _half_two()
        write_plays_csv(path, plays, header_comment="fixture data")
        assert read_plays_csv(path) == plays

    def test_plays_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("game_id,half\nG1,1\n")
        with pytest.raises(ValueError):
            read_plays_csv(path)

    def test_drives_round_trip(self, tmp_path):
        path = tmp_path / "drives.csv"
        drives = aggregate_drives(_half_one() + _half_two())
        write_drives_csv(path, drives, header_comment="fixture data")
        assert read_drives_csv(path) == drives

    def test_drives_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("game_id,half,drive_index\nG1,1,1\n")
        with pytest.raises(ValueError):
            read_drives_csv(path)


class TestIngestPlays:
    def test_end_to_end_counts_and_links(self):
        plays = _half_one("G1") + _half_two("G1") + _corrupt("drive_gap", "G2")
        obs, summaries, report = ingest_plays(plays)
        assert report["halves_total"] == 3
        assert report["halves_retained"] == 2
        assert len(summaries) == 7
        assert len(obs) == 7
        # drive 4 of half 1 follows the lost fumble: linked, spot attached
        fourth = [o for o in obs if o.half_id == "G1:h1"][3]
        assert fourth.cmp_available == 1
        assert fourth.cmp_features["turnover.nonscor"] == 1.0
        assert fourth.start_pos == 56.0

    def test_observations_only_from_retained_halves(self):
        plays = _corrupt("unsorted", "G9") + _half_one("G1")
        obs, summaries, report = ingest_plays(plays)
        assert {o.game_id for o in obs} == {"G1"}
        assert report["rejections"] == {"unsorted": 1}
