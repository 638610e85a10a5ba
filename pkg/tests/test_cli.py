import csv
import json

import numpy as np
import pytest

import ui
from adapter import report_adapter
from adapter.adapter import CommandAdapter, RunConfig
from app import EXIT_INVALID, EXIT_OK, CommandController
from app_utils import read_matrix, write_matrix
from engine.errors import InputValidationError


@pytest.fixture
def controller(tmp_path):
    return CommandController(CommandAdapter(str(tmp_path)))


@pytest.fixture
def pair_files(tmp_path, rng):
    x = rng.standard_normal((15, 4))
    y = rng.standard_normal((15, 3))
    x_path, y_path = tmp_path / "x.csv", tmp_path / "y.csv"
    write_matrix(str(x_path), x)
    write_matrix(str(y_path), y)
    return str(x_path), str(y_path)


def _error_record(capsys):
    err = capsys.readouterr().err
    records = [json.loads(line) for line in err.splitlines() if line.startswith("{")]
    assert records, err
    return records[-1]


def _read_json(path):
    with open(path) as f:
        return json.load(f)


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestMatrixFiles:
    def test_round_trip_is_exact(self, tmp_path, rng):
        values = rng.standard_normal((6, 3)) * 10.0 ** rng.integers(-12, 12, (6, 3))
        path = str(tmp_path / "m.csv")
        write_matrix(path, values, header=["a", "b", "c"])
        np.testing.assert_array_equal(read_matrix(path), values)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\n3,4\n5,abc\n")
        with pytest.raises(InputValidationError) as info:
            read_matrix(str(path))
        assert (info.value.row, info.value.column) == (3, 2)

    def test_non_finite_cell(self, tmp_path):
        path = tmp_path / "nan.csv"
        path.write_text("1,2\nnan,4\n")
        with pytest.raises(InputValidationError) as info:
            read_matrix(str(path))
        assert (info.value.row, info.value.column) == (2, 1)

    @pytest.mark.parametrize("first", ["1.0,nan", "inf,2.0", "1.0,-inf"])
    def test_non_finite_first_row_is_not_a_header(self, tmp_path, first):
        path = tmp_path / "first.csv"
        path.write_text(first + "\n2.0,3.0\n4.0,5.0\n")
        with pytest.raises(InputValidationError, match="non-finite") as info:
            read_matrix(str(path))
        assert info.value.row == 1

    def test_header_after_text_cell(self, tmp_path):
        path = tmp_path / "header.csv"
        path.write_text("a,b\n1.0,2.0\n3.0,4.0\n")
        np.testing.assert_array_equal(read_matrix(str(path)), [[1.0, 2.0], [3.0, 4.0]])

    def test_ragged(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(InputValidationError, match="ragged"):
            read_matrix(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputValidationError):
            read_matrix(str(tmp_path / "absent.csv"))


class TestTestCommand:
    def test_identical_files_reject(self, controller, tmp_path, pair_files):
        x_path, _ = pair_files
        out = tmp_path / "result.json"
        code = controller.run(["test", "--x", x_path, "--y", x_path, "--method", "t-dcov", "--out", str(out)])
        assert code == EXIT_OK
        result = _read_json(out)
        assert result["command"] == "test"
        assert result["method"] == "t-dcov"
        assert result["p_value"] < 1e-6
        assert result["decision_at"] == {"0.05": "reject"}

    def test_bare_name_is_studentized(self, controller, tmp_path, pair_files):
        out = tmp_path / "result.json"
        controller.run(["test", "--x", pair_files[0], "--y", pair_files[1], "--method", "hcov",
                        "--kernel", "laplacian", "--out", str(out)])
        result = _read_json(out)
        assert result["method"] == "t-hcov-laplacian"
        assert result["reference"] == "student-t(df={})".format(15 * 12 // 2 - 1)

    def test_permutation_csv(self, controller, tmp_path, pair_files):
        out = tmp_path / "result.csv"
        code = controller.run(["test", "--x", pair_files[0], "--y", pair_files[1], "--method", "mdcov",
                               "--permutations", "49", "--seed", "3", "--format", "csv", "--out", str(out)])
        assert code == EXIT_OK
        rows = _read_csv(out)
        assert rows[0]["reference"] == "permutation(49)"
        assert rows[0]["seed"] == "3"

    def test_non_numeric_cell_reports_location(self, controller, tmp_path, pair_files, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("\n".join(["1,2,3"] * 10 + ["1,abc,3"]) + "\n")
        code = controller.run(["test", "--x", str(bad), "--y", pair_files[1], "--json-errors"])
        assert code == EXIT_INVALID
        record = _error_record(capsys)
        assert record["error"] == "input-validation"
        assert (record["row"], record["column"]) == (11, 2)
        assert record["exit_code"] == EXIT_INVALID

    def test_ragged_file(self, controller, tmp_path, pair_files):
        bad = tmp_path / "ragged.csv"
        bad.write_text("1,2\n3,4,5\n")
        assert controller.run(["test", "--x", str(bad), "--y", pair_files[1]]) == EXIT_INVALID

    def test_row_count_mismatch(self, controller, tmp_path, pair_files, capsys):
        short = tmp_path / "short.csv"
        write_matrix(str(short), np.arange(20.0).reshape(10, 2))
        code = controller.run(["test", "--x", str(short), "--y", pair_files[1], "--json-errors"])
        assert code == EXIT_INVALID
        assert "row-count mismatch" in _error_record(capsys)["message"]

    def test_too_few_rows(self, controller, tmp_path, capsys):
        small = tmp_path / "small.csv"
        write_matrix(str(small), np.arange(6.0).reshape(3, 2))
        code = controller.run(["test", "--x", str(small), "--y", str(small), "--json-errors"])
        assert code == EXIT_INVALID
        assert _error_record(capsys)["message"] == "sample size below 4"

    def test_plain_error_text(self, controller, tmp_path, pair_files, capsys):
        code = controller.run(["test", "--x", str(tmp_path / "absent.csv"), "--y", pair_files[1]])
        assert code == EXIT_INVALID
        assert "error (input-validation)" in capsys.readouterr().err


class TestSimulateCommand:
    ARGS = ["simulate", "--scenario", "ex2-i", "--n", "8", "--p", "5", "--methods", "t-dcov,mdcov",
            "--replicates", "6", "--permutations", "19", "--seed", "12", "--format", "csv"]

    def test_csv_is_byte_identical_across_runs(self, controller, tmp_path):
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        assert controller.run(self.ARGS + ["--out", str(first)]) == EXIT_OK
        assert controller.run(self.ARGS + ["--out", str(second), "--workers", "2"]) == EXIT_OK
        assert first.read_bytes() == second.read_bytes()
        rows = _read_csv(first)
        assert [row["method"] for row in rows] == ["t-dcov", "mdcov"]

    def test_unknown_scenario_lists_names(self, controller, capsys):
        code = controller.run(["simulate", "--scenario", "ex7", "--n", "8", "--p", "5", "--json-errors"])
        assert code == EXIT_INVALID
        message = _error_record(capsys)["message"]
        assert "ex1-i" in message and "ex4-iii" in message

    def test_unknown_method(self, controller, capsys):
        code = controller.run(["simulate", "--scenario", "ex1-i", "--n", "8", "--p", "5",
                               "--methods", "t-rv", "--json-errors"])
        assert code == EXIT_INVALID

    @pytest.mark.parametrize("kernel", ["gaussian", "laplacian"])
    def test_kernel_reaches_bare_methods(self, controller, tmp_path, kernel):
        out = tmp_path / "sim.json"
        code = controller.run(["simulate", "--scenario", "ex1-i", "--n", "8", "--p", "3", "--methods", "t-mhcov,t-hcov",
                               "--kernel", kernel, "--replicates", "2", "--out", str(out)])
        assert code == EXIT_OK
        assert _read_json(out)["methods"] == [f"t-mhcov-{kernel}", f"t-hcov-{kernel}"]


class TestPowerCommand:
    def test_grid(self, controller, tmp_path):
        out = tmp_path / "power.json"
        code = controller.run(["power", "--n", "10,20", "--phi", "0,0.1,0.2,0.3", "--out", str(out)])
        assert code == EXIT_OK
        rows = _read_json(out)["rows"]
        assert len(rows) == 8
        for n in (10, 20):
            values = [row["power_n"] for row in rows if row["n"] == n]
            assert values[0] == pytest.approx(0.05, abs=1e-10)
            assert all(b > a for a, b in zip(values, values[1:]))

    def test_local_alternatives(self, controller, tmp_path):
        out = tmp_path / "power.csv"
        code = controller.run(["power", "--n", "15", "--phi0", "0,3", "--format", "csv", "--out", str(out)])
        assert code == EXIT_OK
        rows = _read_csv(out)
        assert float(rows[0]["power_inf"]) == pytest.approx(0.05, abs=1e-10)
        assert 0.5 < float(rows[1]["power_inf"]) < 1.0

    def test_default_phi_grid(self, controller, tmp_path):
        out = tmp_path / "power.json"
        controller.run(["power", "--n", "10", "--out", str(out)])
        assert [row["phi"] for row in _read_json(out)["rows"]][-1] == 0.5

    @pytest.mark.parametrize("args", [["--phi", "1.0"], ["--alpha", "0.6"], ["--n", "3"]])
    def test_domain_errors(self, controller, args):
        argv = ["power", "--n", "10"] + args if args[0] != "--n" else ["power"] + args
        assert controller.run(argv) == EXIT_INVALID

    def test_unwritable_output(self, controller, tmp_path, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        out = blocker / "sub" / "power.json"
        code = controller.run(["power", "--n", "10", "--phi", "0.1", "--out", str(out), "--json-errors"])
        assert code == EXIT_INVALID
        record = _error_record(capsys)
        assert record["error"] == "io-error"
        assert record["exit_code"] == EXIT_INVALID


class TestDiagnoseCommand:
    def test_decomposition_adds_up(self, controller, tmp_path, rng):
        x = rng.standard_normal((12, 40))
        x_path, y_path = tmp_path / "x.csv", tmp_path / "y.csv"
        write_matrix(str(x_path), x)
        write_matrix(str(y_path), x ** 2)
        out = tmp_path / "diag.json"
        assert controller.run(["diagnose", "--x", str(x_path), "--y", str(y_path), "--out", str(out)]) == EXIT_OK
        report = _read_json(out)
        assert report["leading_term"] + report["remainder"] == pytest.approx(report["statistic"], rel=1e-12, abs=1e-15)
        assert report["taylor_x"]["max_abs_L"] > 0.0

    def test_constant_input(self, controller, tmp_path, rng):
        x_path, y_path = tmp_path / "x.csv", tmp_path / "y.csv"
        write_matrix(str(x_path), np.ones((8, 3)))
        write_matrix(str(y_path), rng.standard_normal((8, 3)))
        out = tmp_path / "diag.json"
        assert controller.run(["diagnose", "--x", str(x_path), "--y", str(y_path), "--out", str(out)]) == EXIT_OK
        report = _read_json(out)
        assert report["degenerate"] is True
        assert (report["statistic"], report["leading_term"], report["remainder"]) == (0.0, 0.0, 0.0)

    def test_scenario_replicates(self, controller, tmp_path):
        out = tmp_path / "diag.json"
        code = controller.run(["diagnose", "--scenario", "ex1-i", "--n", "10", "--p", "50",
                               "--replicates", "20", "--target", "hcov-scaled", "--out", str(out)])
        assert code == EXIT_OK
        report = _read_json(out)
        assert report["replicates"] == 20
        assert report["median_ratio"] >= 0.0

    def test_needs_input(self, controller):
        assert controller.run(["diagnose"]) == EXIT_INVALID


class TestNullSamplesCommand:
    def test_writes_density_sidecar(self, controller, tmp_path):
        out = tmp_path / "null.csv"
        code = controller.run(["null-samples", "--scenario", "ex1-i", "--n", "8", "--p", "5",
                               "--replicates", "10", "--points", "11", "--format", "csv", "--out", str(out)])
        assert code == EXIT_OK
        assert len(_read_csv(out)) == 10
        density = tmp_path / "null_density.csv"
        assert density.exists()
        assert len(_read_csv(density)) == 11

    def test_kernel_reaches_bare_methods(self, controller, tmp_path):
        out = tmp_path / "null.json"
        code = controller.run(["null-samples", "--scenario", "ex1-i", "--n", "8", "--p", "3", "--methods", "mhcov",
                               "--kernel", "laplacian", "--replicates", "4", "--points", "5", "--out", str(out)])
        assert code == EXIT_OK
        assert set(_read_json(out)["statistics"]) == {"t-mhcov-laplacian"}

    def test_zero_replicates(self, controller):
        code = controller.run(["null-samples", "--scenario", "ex1-i", "--n", "8", "--p", "5", "--replicates", "0"])
        assert code == EXIT_INVALID


class TestGenerateCommand:
    def test_generated_files_feed_the_test_command(self, controller, tmp_path):
        x_path, y_path = tmp_path / "gx.csv", tmp_path / "gy.csv"
        code = controller.run(["generate", "--scenario", "ex3-i", "--n", "30", "--p", "30", "--seed", "1",
                               "--x", str(x_path), "--y", str(y_path)])
        assert code == EXIT_OK
        x, y = read_matrix(str(x_path)), read_matrix(str(y_path))
        np.testing.assert_array_equal(y, x * x)

        out = tmp_path / "mdcov.json"
        controller.run(["test", "--x", str(x_path), "--y", str(y_path), "--method", "t-mdcov", "--out", str(out)])
        assert _read_json(out)["p_value"] < 0.05

    @pytest.mark.slow
    def test_marginal_test_beats_joint_test(self, controller, tmp_path):
        x_path, y_path, out = tmp_path / "gx.csv", tmp_path / "gy.csv", tmp_path / "r.json"
        wins = 0
        for seed in range(100):
            controller.run(["generate", "--scenario", "ex3-i", "--n", "30", "--p", "30", "--seed", str(seed),
                            "--x", str(x_path), "--y", str(y_path)])
            p_values = {}
            for method in ("t-dcov", "t-mdcov"):
                controller.run(["test", "--x", str(x_path), "--y", str(y_path), "--method", method, "--out", str(out)])
                p_values[method] = _read_json(out)["p_value"]
            wins += p_values["t-mdcov"] < p_values["t-dcov"]
        assert wins >= 95


class TestRunConfig:
    def test_test_method_selection(self):
        assert RunConfig("test", method="dcov").test_method().id == "t-dcov"
        assert RunConfig("test", method="dcov", permutations=10).test_method().id == "dcov"
        assert RunConfig("test", method="t-mhcov", kernel="laplacian").test_method().id == "t-mhcov-laplacian"
        assert RunConfig("test", method="hcov-gaussian", kernel="laplacian").test_method().id == "t-hcov-gaussian"

    def test_validation_happens_before_work(self):
        with pytest.raises(InputValidationError):
            RunConfig("simulate", scenario="ex1-i", n=8, p=5, alphas=[0.0]).validate()
        with pytest.raises(InputValidationError):
            RunConfig("bogus").validate()

    def test_kernel_applies_to_bare_method_lists(self):
        config = RunConfig("simulate", methods=["t-mhcov", "hcov", "mhcov-gaussian", "t-dcov"], kernel="laplacian")
        assert [m.id for m in config.method_list(["t-dcov"])] == [
            "t-mhcov-laplacian", "hcov-laplacian", "mhcov-gaussian", "t-dcov",
        ]
        assert [m.id for m in RunConfig("simulate").method_list(["t-hcov"])] == ["t-hcov-gaussian"]

    def test_cli_formats_match_the_report_writer(self):
        assert ui.OUTPUT_FORMATS is report_adapter.OUTPUT_FORMATS
        with pytest.raises(SystemExit):
            ui.app_ui.parse_args(["power", "--n", "10", "--format", "xml"])
