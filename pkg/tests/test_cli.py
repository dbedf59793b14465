import json

import pytest

from deployscore import store
from deployscore.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(scope="module")
def model_path(tmp_path_factory, data_dir):
    path = tmp_path_factory.mktemp("cli") / "model.json"
    assert main(["fit", str(data_dir / "table1_responses.csv"), "-o", str(path)]) == EXIT_OK
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestUsage:
    def test_no_command(self, capsys):
        code, _, err = run(capsys)
        assert code == EXIT_USAGE
        assert json.loads(err.splitlines()[-1])["error"] == "usage"

    def test_unknown_flag(self, capsys):
        assert run(capsys, "budget", "--slo", "0.99", "--bogus")[0] == EXIT_USAGE

    def test_bad_choice(self, capsys, data_dir, model_path):
        assert run(capsys, "score", data_dir / "table1_responses.csv", model_path, "--method", "map")[0] == EXIT_USAGE

    def test_help(self, capsys):
        assert run(capsys, "--help")[0] == EXIT_OK


class TestFit:
    def test_flags_negative_discrimination(self, capsys, data_dir, tmp_path):
        code, out, _ = run(capsys, "fit", data_dir / "table1_responses.csv", "-o", tmp_path / "m.json")
        assert code == EXIT_OK
        doc = json.loads(out)
        assert doc["negative_discrimination"] == ["control_d"]
        assert doc["converged"]
        assert -1.0 <= doc["max_information_theta"] <= 0.5
        assert store.load_model(tmp_path / "m.json").model_kind == "2PL"

    def test_one_parameter_model(self, capsys, data_dir, tmp_path):
        code, out, _ = run(capsys, "fit", data_dir / "table1_responses.csv", "-o", tmp_path / "m.json",
                           "--model", "1pl")
        assert code == EXIT_OK
        assert all(i["a"] == 1.0 for i in json.loads(out)["items"])

    def test_too_few_rows(self, capsys, tmp_path):
        csv = tmp_path / "tiny.csv"
        csv.write_text("deployment_id,a,b\nd1,1,0\nd2,0,1\n")
        code, _, err = run(capsys, "fit", csv, "-o", tmp_path / "m.json")
        assert code == EXIT_DATA
        assert "error" in json.loads(err)

    def test_bad_cell(self, capsys, tmp_path):
        csv = tmp_path / "bad.csv"
        csv.write_text("deployment_id,a,b\nd1,1,0\nd2,0,2\nd3,1,1\n")
        code, _, err = run(capsys, "fit", csv, "-o", tmp_path / "m.json")
        assert code == EXIT_DATA
        doc = json.loads(err)
        assert (doc["row"], doc["column"]) == (3, "b")

    def test_missing_input(self, capsys, tmp_path):
        assert run(capsys, "fit", tmp_path / "nope.csv", "-o", tmp_path / "m.json")[0] == EXIT_DATA

    def test_csv_output(self, capsys, data_dir, tmp_path):
        code, out, _ = run(capsys, "fit", data_dir / "table1_responses.csv", "-o", tmp_path / "m.json",
                           "--format", "csv")
        assert code == EXIT_OK
        lines = out.splitlines()
        assert lines[0] == "item_id,discrimination,difficulty,negative_discrimination"
        assert lines[4].startswith("control_d,-") and lines[4].endswith("True")


class TestScoring:
    def test_json_and_csv_agree(self, capsys, data_dir, model_path):
        responses = data_dir / "table1_responses.csv"
        _, js, _ = run(capsys, "score", responses, model_path)
        _, cs, _ = run(capsys, "score", responses, model_path, "--format", "csv")
        reports = json.loads(js)["reports"]
        rows = [line.split(",") for line in cs.splitlines()[1:]]
        assert len(rows) == len(reports) == 43
        for rep, row in zip(reports, rows):
            assert row[0] == rep["deployment_id"]
            assert float(row[-3]) == rep["theta"]
            assert int(row[-2]) == rep["total_raw_score"]
            assert float(row[-1]) == rep["ads"]

    def test_gap_columns_are_optional(self, capsys, data_dir, model_path):
        responses = data_dir / "table1_responses.csv"
        _, plain, _ = run(capsys, "score", responses, model_path, "--format", "csv")
        _, gaps, _ = run(capsys, "score", responses, model_path, "--format", "csv", "--gaps")
        assert "gap" not in plain.splitlines()[0]
        assert "gap" in gaps.splitlines()[0]
        _, js, _ = run(capsys, "score", responses, model_path)
        assert "per_item" not in json.loads(js)["reports"][0]

    def test_deterministic(self, capsys, data_dir, model_path, tmp_path):
        responses = data_dir / "table1_responses.csv"
        for cmd in (["score"], ["report"]):
            first = run(capsys, *cmd, responses, model_path)[1]
            assert run(capsys, *cmd, responses, model_path)[1] == first

    def test_refit_is_byte_identical(self, data_dir, tmp_path):
        paths = [tmp_path / "m1.json", tmp_path / "m2.json"]
        for p in paths:
            assert main(["fit", str(data_dir / "table1_responses.csv"), "-o", str(p)]) == EXIT_OK
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_output_file(self, capsys, data_dir, model_path, tmp_path):
        dest = tmp_path / "scores.json"
        code, out, _ = run(capsys, "score", data_dir / "table1_responses.csv", model_path, "-o", dest)
        assert code == EXIT_OK and out == ""
        assert len(json.loads(dest.read_text())["reports"]) == 43

    def test_report_summary(self, capsys, data_dir, model_path):
        code, out, _ = run(capsys, "report", data_dir / "table1_responses.csv", model_path)
        assert code == EXIT_OK
        doc = json.loads(out)
        assert doc["summary"]["deployments"] == 43
        assert all("improvement_areas" in r for r in doc["reports"])

    def test_schema_mismatch(self, capsys, model_path, tmp_path):
        csv = tmp_path / "other.csv"
        csv.write_text("deployment_id,x,y\nd1,1,0\n")
        assert run(capsys, "score", csv, model_path)[0] == EXIT_DATA

    def test_trend(self, capsys, data_dir, model_path):
        code, out, _ = run(capsys, "trend", data_dir / "history_example.json", model_path)
        assert code == EXIT_OK
        doc = json.loads(out)
        assert len(doc["entries"]) == 4
        assert len(doc["directions"]) == 3


class TestCurves:
    def test_default_grid(self, capsys, model_path):
        code, out, _ = run(capsys, "curves", model_path)
        assert code == EXIT_OK
        assert len(out.splitlines()) == 82

    @pytest.mark.parametrize("grid", [["--step", "0"], ["--min", "2", "--max", "1"], ["--step", "-0.5"]])
    def test_bad_grid(self, capsys, model_path, grid):
        assert run(capsys, "curves", model_path, *grid)[0] == EXIT_DATA


class TestBudgets:
    def test_plain_budget(self, capsys):
        code, out, _ = run(capsys, "budget", "--slo", "0.9999")
        assert code == EXIT_OK
        doc = json.loads(out)
        assert doc["error_budget"] == 0.0001
        assert doc["allowed_downtime_minutes"] == 4.32

    def test_slo_out_of_range(self, capsys):
        assert run(capsys, "budget", "--slo", "1.5")[0] == EXIT_DATA

    def test_soft_budget_worked_example(self, capsys, data_dir):
        code, out, _ = run(capsys, "soft-budget", data_dir / "mesh_worked_example.json", "--service", "target")
        assert code == EXIT_OK
        rec = json.loads(out)["services"][0]["recommended"]
        assert rec["product_id"] == "checkout"
        assert rec["soft_budget"] == pytest.approx(-9.29e-05, abs=5e-11)
        assert rec["soft_budget_clamped"] == 0.0
        assert rec["allowed_downtime_minutes"] == 0.0

    def test_soft_budget_all_services(self, capsys, data_dir):
        code, out, _ = run(capsys, "soft-budget", data_dir / "mesh_figure1.json")
        assert code == EXIT_OK
        assert [s["service_id"] for s in json.loads(out)["services"]] == [
            "service_1", "service_2", "service_3", "service_4"]

    def test_unknown_service(self, capsys, data_dir):
        code, _, err = run(capsys, "soft-budget", data_dir / "mesh_worked_example.json", "--service", "ghost")
        assert code == EXIT_DATA
        assert "ghost" in err


class TestDeployIndex:
    def test_example(self, capsys, data_dir):
        code, out, _ = run(capsys, "deploy-index", data_dir / "outcomes_example.json")
        assert code == EXIT_OK
        docs = json.loads(out)["indices"]
        assert [d["application_id"] for d in docs] == ["payments", "inventory"]

    def test_undefined_correlation(self, capsys, tmp_path):
        doc = {"outcomes": [
            {"application_id": "flat", "version": str(k), "ads": float(k + 1), "achieved_slo": 0.999,
             "live_duration_seconds": 60.0}
            for k in range(3)
        ]}
        path = tmp_path / "flat.json"
        path.write_text(json.dumps(doc))
        code, _, err = run(capsys, "deploy-index", path)
        assert code == EXIT_NUMERICAL
        assert json.loads(err)["error"] == "undefined-correlation"

    def test_too_few_versions(self, capsys, tmp_path):
        doc = {"outcomes": [
            {"application_id": "x", "version": str(k), "ads": float(k), "achieved_slo": 0.99 + k / 1000,
             "live_duration_seconds": 60.0}
            for k in range(2)
        ]}
        path = tmp_path / "two.json"
        path.write_text(json.dumps(doc))
        assert run(capsys, "deploy-index", path)[0] == EXIT_DATA
