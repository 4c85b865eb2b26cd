"""End-to-end CLI behavior: artifacts, hashes, exit codes, determinism."""

import json
import subprocess
import sys

import pytest

from drivelogit.cli import main

SELECT = "turnover.nonscor@4,turnover.nonscor:start.pos"


def _run(argv, capsys=None):
    code = main(argv)
    if capsys is not None:
        return code, capsys.readouterr()
    return code


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One simulated season every CLI test reads from.

    The size is chosen so all five outcome categories occur (checked by
    seed); smaller seasons leave the rare categories empty and fits then
    stop honestly at the boundary.
    """
    out = tmp_path_factory.mktemp("cli")
    code = main(["simulate", "--preset", "nfl", "--seed", "10",
                 "--teams", "8", "--games", "12", "--drives-per-half", "10",
                 "--out", str(out), "--season", "s1"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def drives(workdir):
    return str(workdir / "drives_s1.csv")


@pytest.fixture(scope="module")
def refit_artifact(workdir, drives):
    code = main(["refit", "--drives", drives, "--select", SELECT,
                 "--out", str(workdir), "--season", "s1"])
    assert code == 0
    return workdir / "refit_s1.json"


class TestSimulate:
    def test_artifacts_written(self, workdir):
        drives = workdir / "drives_s1.csv"
        truth = workdir / "truth_s1.json"
        assert drives.exists() and truth.exists()
        payload = json.loads(truth.read_text())
        assert "config_hash" in payload
        assert payload["truth"]["gamma"]  # nfl preset has active features
        # header comment carries the same hash as the json artifact
        first = drives.read_text().splitlines()[0]
        assert first == f"# config_hash={payload['config_hash']}"

    def test_reruns_are_byte_identical(self, tmp_path):
        args = ["simulate", "--preset", "intercept", "--seed", "2",
                "--teams", "4", "--games", "2", "--drives-per-half", "4",
                "--out", str(tmp_path)]
        assert main(args) == 0
        first = (tmp_path / "drives.csv").read_bytes()
        assert main(args) == 0
        assert (tmp_path / "drives.csv").read_bytes() == first


class TestFit:
    def test_fit_writes_artifact(self, workdir, drives):
        code = main(["fit", "--drives", drives, "--lambda", "0.05",
                     "--out", str(workdir), "--season", "s1"])
        assert code == 0
        payload = json.loads((workdir / "fit_s1.json").read_text())
        assert payload["fit"]["converged"] is True
        assert payload["fit"]["lambda"] == 0.05

    def test_rerun_is_byte_identical(self, workdir, drives):
        args = ["fit", "--drives", drives, "--lambda", "0.05",
                "--out", str(workdir), "--season", "s1"]
        assert main(args) == 0
        first = (workdir / "fit_s1.json").read_bytes()
        assert main(args) == 0
        assert (workdir / "fit_s1.json").read_bytes() == first

    def test_config_hash_tracks_flags(self, workdir, drives, tmp_path):
        assert main(["fit", "--drives", drives, "--lambda", "0.05",
                     "--out", str(tmp_path)]) == 0
        a = json.loads((tmp_path / "fit.json").read_text())["config_hash"]
        assert main(["fit", "--drives", drives, "--lambda", "0.08",
                     "--out", str(tmp_path)]) == 0
        b = json.loads((tmp_path / "fit.json").read_text())["config_hash"]
        assert a != b

    def test_nonconvergence_exits_3(self, tmp_path, capsys):
        # 192 drives: the two rare categories never occur, so the fit
        # stops honestly at the boundary and the CLI reports it
        assert main(["simulate", "--preset", "nfl", "--seed", "1",
                     "--teams", "6", "--games", "4", "--drives-per-half", "8",
                     "--out", str(tmp_path)]) == 0
        code, captured = _run(["fit", "--drives", str(tmp_path / "drives.csv"),
                               "--lambda", "0.05", "--out", str(tmp_path)],
                              capsys)
        assert code == 3
        err = json.loads(captured.err.strip())
        assert err["error"] == "NumericalFailure"
        assert err["exit_code"] == 3


class TestCv:
    def test_cv_artifacts(self, workdir, drives):
        code = main(["cv", "--drives", drives, "--seed", "7",
                     "--folds", "5", "--replicates", "2",
                     "--grid-size", "6", "--lambda-min-ratio", "0.1",
                     "--out", str(workdir), "--season", "s1"])
        assert code == 0
        payload = json.loads((workdir / "lambda_sparse_s1.json").read_text())
        reps = payload["replicates"]
        assert len(reps) == 2
        for rep in reps:
            assert rep["lambda_sparse"] >= rep["lambda_best"]
        curve = (workdir / "cv_curve_s1.csv").read_text().splitlines()
        assert curve[0].startswith("# config_hash=")
        assert curve[1] == "replicate,lambda,mean_oos,se_oos"
        assert len(curve) == 2 + 2 * 6  # two replicates on a 6-point grid


class TestStability:
    def test_stability_table(self, workdir, drives):
        code = main(["stability", "--drives", drives, "--seed", "7",
                     "--folds", "5", "--replicates", "1",
                     "--grid-size", "6", "--lambda-min-ratio", "0.1",
                     "--out", str(workdir)])
        assert code == 0
        payload = json.loads((workdir / "stability.json").read_text())
        assert payload["n_results"] == 1
        for entry in payload["entries"]:
            assert 0.0 <= entry["proportion"] <= 1.0


class TestRefitAndSelection:
    def test_refit_artifact(self, refit_artifact):
        payload = json.loads(refit_artifact.read_text())
        assert payload["fit"]["converged"] is True
        assert payload["fit"]["lambda"] == 0.0
        gamma = payload["fit"]["params"]["gamma"]
        # only the selected features may carry weight
        hot = {n for n, v in gamma.items() if v != 0.0}
        assert hot <= {"turnover.nonscor", "turnover.nonscor:start.pos"}

    def test_unknown_selected_feature_exits_2(self, drives, tmp_path, capsys):
        code, captured = _run(["refit", "--drives", drives,
                               "--select", "no.such.stat",
                               "--out", str(tmp_path)], capsys)
        assert code == 2
        err = json.loads(captured.err.strip())
        assert err["error"] == "DataError"

    def test_bad_split_exits_2(self, drives, tmp_path):
        assert main(["refit", "--drives", drives,
                     "--select", "turnover.nonscor@9",
                     "--out", str(tmp_path)]) == 2

    def test_from_cv_selection(self, workdir, drives, tmp_path):
        picks = tmp_path / "lambda_sparse.json"
        picks.write_text(json.dumps({
            "replicates": [{"selected": {"turnover.nonscor": [4]}}]}))
        code = main(["refit", "--drives", drives, "--from-cv", str(picks),
                     "--out", str(tmp_path)])
        assert code == 0
        payload = json.loads((tmp_path / "refit.json").read_text())
        nonzero_s4 = {n for n, v in payload["fit"]["params"]["gamma_s"].get("4", {}).items()
                      if v != 0.0}
        assert nonzero_s4 <= {"turnover.nonscor"}

    def test_from_cv_without_replicates_exits_2(self, drives, tmp_path):
        picks = tmp_path / "empty.json"
        picks.write_text(json.dumps({"replicates": []}))
        assert main(["refit", "--drives", drives, "--from-cv", str(picks),
                     "--out", str(tmp_path)]) == 2


class TestDiagnose:
    def test_binarized_mode_auto(self, workdir, drives, refit_artifact):
        code = main(["diagnose", "--drives", drives,
                     "--fit", str(refit_artifact), "--seed", "3",
                     "--out", str(workdir), "--season", "s1"])
        assert code == 0
        payload = json.loads((workdir / "diagnostics_s1.json").read_text())
        # the refit has a split-4 coefficient, so auto must pick binarized
        assert payload["mode"] == "binarized"
        assert set(payload["equations"]) == {"s2", "s3", "s4", "s5"}
        for eq in payload["equations"].values():
            assert abs(eq["mean"]) < 0.5
            assert 0.5 < eq["qq_slope"] < 1.5

    def test_joint_mode_on_proportional_fit(self, workdir, drives, tmp_path):
        assert main(["refit", "--drives", drives,
                     "--select", "turnover.nonscor",
                     "--out", str(tmp_path)]) == 0
        code = main(["diagnose", "--drives", drives,
                     "--fit", str(tmp_path / "refit.json"), "--seed", "3",
                     "--out", str(tmp_path)])
        assert code == 0
        payload = json.loads((tmp_path / "diagnostics.json").read_text())
        assert payload["mode"] == "joint"
        assert payload["equations"]["joint"]["n"] == 960


class TestProject:
    def test_report_artifacts(self, workdir, drives):
        code = main(["project", "--drives", drives, "--select", SELECT,
                     "--replicates", "8", "--seed", "5",
                     "--out", str(workdir), "--season", "s1"])
        assert code == 0
        payload = json.loads((workdir / "projection_report_s1.json").read_text())
        assert len(payload["teams"]) == 8
        for row in payload["teams"]:
            assert row["shift"] == pytest.approx(
                row["value_cmp"] - row["value_sos"], abs=1e-9)
            lo, hi = row["ci"]
            assert lo <= hi
        table = (workdir / "rank_table_s1.txt").read_text()
        assert "Largest positive shifts" in table

    def test_ci_omitted_without_replicates(self, workdir, drives, tmp_path):
        code = main(["project", "--drives", drives, "--select", SELECT,
                     "--replicates", "0", "--seed", "5", "--out", str(tmp_path)])
        assert code == 0
        payload = json.loads((tmp_path / "projection_report.json").read_text())
        assert all(row["ci"] == [None, None] for row in payload["teams"])


class TestMae:
    def test_three_models_reported(self, workdir, drives):
        code = main(["mae", "--drives", drives, "--select", "turnover.nonscor",
                     "--folds", "5", "--seed", "5",
                     "--out", str(workdir), "--season", "s1"])
        assert code == 0
        payload = json.loads((workdir / "mae_s1.json").read_text())
        assert set(payload["models"]) == {"context", "context_sos", "full"}
        for row in payload["models"].values():
            assert row["mae"] > 0 and row["se"] >= 0


class TestCalibrate:
    def test_table_written(self, workdir, drives):
        code = main(["calibrate", "--drives", drives,
                     "--select", "turnover.nonscor", "--folds", "5",
                     "--bins", "8", "--seed", "5",
                     "--out", str(workdir), "--season", "s1"])
        assert code == 0
        payload = json.loads((workdir / "calibration_s1.json").read_text())
        assert payload["bins"] == 8
        assert payload["entries"] > 0
        rows = (workdir / "calibration_s1.csv").read_text().splitlines()
        assert rows[1] == "category,bin_lo,bin_hi,mean_pred,obs_freq,n"


class TestIngest:
    def test_plays_to_drives(self, tmp_path):
        from test_ingestion import _corrupt, _half_one, _half_two

        from drivelogit import write_plays_csv

        plays_path = tmp_path / "plays.csv"
        write_plays_csv(plays_path,
                        _half_one("G1") + _half_two("G1") + _corrupt("unsorted", "G2"))
        code = main(["ingest", "--plays", str(plays_path), "--out", str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "ingest_report.json").read_text())
        assert report["report"]["halves_retained"] == 2
        assert report["report"]["rejections"] == {"unsorted": 1}
        assert report["drives"] == 7
        assert (tmp_path / "drives.csv").exists()


class TestExitCodes:
    def test_usage_error_is_1(self):
        assert main(["no-such-command"]) == 1
        assert main(["fit"]) == 1  # missing required flags

    def test_help_is_0(self):
        assert main(["--help"]) == 0

    def test_missing_file_is_2_with_json_stderr(self, tmp_path, capsys):
        code, captured = _run(["fit", "--drives", str(tmp_path / "nope.csv"),
                               "--lambda", "0.1", "--out", str(tmp_path)], capsys)
        assert code == 2
        err = json.loads(captured.err.strip())
        assert err["type"] == "FileNotFoundError"

    def test_env_var_output_dir(self, drives, tmp_path, monkeypatch):
        monkeypatch.setenv("DRIVELOGIT_OUT", str(tmp_path))
        assert main(["refit", "--drives", drives,
                     "--select", "turnover.nonscor"]) == 0
        assert (tmp_path / "refit.json").exists()


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "drivelogit.cli", "--help"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert "drivelogit" in proc.stdout
