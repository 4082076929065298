import json
import warnings

import pytest

from hedonic import fixture
from hedonic.cli import main


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    listings, offenders = fixture.bundled_paths()
    out = tmp_path_factory.mktemp("run")
    assert main(["ingest", "--listings", str(listings), "--offenders", str(offenders), "--out", str(out)]) == 0
    assert main(["fit", "--models", "gam,glm-l,glm-p", "--out", str(out)]) == 0
    assert main(["fit", "--models", "gam", "--env-factors", "--out", str(out)]) == 0
    return out


def test_ingest_outputs(run_dir, tmp_path):
    data = json.loads((run_dir / "dataset.json").read_text())
    assert len(data["records"]) == fixture.N_ROWS - fixture.N_INVALID
    assert data["provenance"]["rows_rejected"] == fixture.N_INVALID
    assert all(r["distance"] is not None for r in data["records"])
    rejections = (run_dir / "rejections.jsonl").read_text().splitlines()
    assert len(rejections) == fixture.N_INVALID
    assert json.loads(rejections[0]) == {"row": 1, "reason": "price below min $50K"}

    listings, offenders = fixture.bundled_paths()
    again = tmp_path / "again"
    assert main(["ingest", "--listings", str(listings), "--offenders", str(offenders), "--out", str(again)]) == 0
    assert (again / "dataset.json").read_bytes() == (run_dir / "dataset.json").read_bytes()


def test_fit_outputs(run_dir):
    stats = json.loads((run_dir / "stats.json").read_text())
    assert set(stats) == {"GAM", "GLM-l", "GLM-p", "GAM-env"}
    assert stats["GAM"]["adj_r2"] > stats["GLM-l"]["adj_r2"]
    model = json.loads((run_dir / "models" / "GAM.json").read_text())
    assert model["model"]["kind"] == "gam"
    assert "waterfront" not in model["significance"]
    assert (run_dir / "models" / "GLM-p.trace.jsonl").is_file()


def test_report_env_table(run_dir, tmp_path, capsys):
    out = tmp_path / "rep"
    args = ["report", "--models", "GAM,GAM-env", "--models-dir", str(run_dir / "models"), "--out", str(out)]
    assert main(args) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["models"] == ["GAM", "GAM-env"]
    env = ["waterfront", "accessible", "green", "air_cond"]
    for f in env:
        assert rep["significance_display"][f]["GAM"] == "NI"
        assert rep["significance_display"][f]["GAM-env"] != "NI"
    assert rep["factors"][-4:] == env
    text = (out / "report.txt").read_text()
    assert "Air Cond" in text and "BIC = n*ln" in text
    assert text in capsys.readouterr().out


def test_report_default_order_and_single_model(run_dir, tmp_path):
    out = tmp_path / "all"
    assert main(["report", "--models-dir", str(run_dir / "models"), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["models"] == ["GLM-l", "GLM-p", "GAM", "GAM-env"]
    assert rep["rankings"]["adj_r2"][-1] == "GLM-l"

    one = tmp_path / "one"
    assert main(["report", "--models", "gam", "--models-dir", str(run_dir / "models"), "--out", str(one)]) == 0
    rep = json.loads((one / "report.json").read_text())
    assert rep["models"] == ["GAM"] and rep["rankings"] == {}


def test_stratified_fit(run_dir, tmp_path):
    out = tmp_path / "strat"
    out.mkdir()
    (out / "dataset.json").write_bytes((run_dir / "dataset.json").read_bytes())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert main(["fit", "--models", "gam", "--stratify", "dwelling=Condo", "--out", str(out)]) == 0
    names = sorted(p.name for p in (out / "models").glob("*.json"))
    assert names == ["GAM-cond.json", "GAM-non.json"]
    cond = json.loads((out / "models" / "GAM-cond.json").read_text())
    non = json.loads((out / "models" / "GAM-non.json").read_text())
    assert cond["n"] + non["n"] == fixture.N_ROWS - fixture.N_INVALID
    assert "dwelling" not in cond["factors"]


def test_distance_requested_without_offenders(tmp_path, capsys):
    listings, _ = fixture.bundled_paths()
    code = main(["ingest", "--listings", str(listings), "--distance",
                 "--offenders", str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
    assert code == 2
    assert "Distance" in capsys.readouterr().err


def test_distance_command(tmp_path):
    listings, offenders = fixture.bundled_paths()
    out = tmp_path / "with_distance.csv"
    assert main(["distance", "--listings", str(listings), "--offenders", str(offenders), "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0]
    assert header.endswith(",distance")


def test_model_failure_exit_code(run_dir, tmp_path, capsys):
    out = tmp_path / "fail"
    out.mkdir()
    (out / "dataset.json").write_bytes((run_dir / "dataset.json").read_bytes())
    # a cubic basis needs more than 3 functions, so the GAM fails and GLM-l still runs
    assert main(["fit", "--models", "gam,glm-l", "--k-basis", "3", "--out", str(out)]) == 1
    assert "GAM: FAILED" in capsys.readouterr().err
    assert (out / "models" / "GLM-l.json").is_file()
    assert not (out / "models" / "GAM.json").exists()


def test_input_errors(tmp_path, capsys):
    assert main(["fit", "--models", "gam,ridge", "--dataset", "x", "--out", str(tmp_path)]) == 2
    assert "ridge" in capsys.readouterr().err
    assert main(["fit", "--out", str(tmp_path)]) == 2
    assert main(["report", "--out", str(tmp_path)]) == 2
    assert main(["ingest", "--listings", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 2
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"out": str(tmp_path), "colour": "red"}))
    assert main(["fit", "--config", str(cfg)]) == 2
    assert "colour" in capsys.readouterr().err


def test_config_file(run_dir, tmp_path):
    out = tmp_path / "cfg"
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"dataset": str(run_dir / "dataset.json"), "models": ["glm-lq"], "out": str(out)}))
    assert main(["fit", "--config", str(cfg)]) == 0
    assert (out / "models" / "GLM-lq.json").is_file()


def test_distfit_command(run_dir, tmp_path):
    out = tmp_path / "dist"
    assert main(["distfit", "--dataset", str(run_dir / "dataset.json"), "--out", str(out)]) == 0
    rep = json.loads((out / "distfit.json").read_text())
    assert {c["family"] for c in rep["curves"]} == {"normal", "nig"}
    assert rep["loglik"]["nig"] >= rep["loglik"]["normal"] - 1e-6


def test_fixture_command(tmp_path):
    assert main(["fixture", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "listings.csv").read_bytes() == fixture.bundled_paths()[0].read_bytes()
