import json
import shutil

import pytest

from fogfair.cli import main


def test_validate_data_ok(synth_fixture, capsys):
    assert main(["validate-data", str(synth_fixture.parent / "data")]) == 0
    assert "24 recordings" in capsys.readouterr().out


def test_validate_data_rejects_bad_label(synth_fixture, tmp_path, capsys):
    data = tmp_path / "data"
    shutil.copytree(synth_fixture.parent / "data", data)
    path = data / "S01.csv"
    lines = path.read_text().splitlines()
    cells = lines[5].split(",")
    cells[-1] = "2"
    lines[5] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    assert main(["validate-data", str(data)]) == 1
    assert "S01.csv:6: malformed row" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"dataset": "data", "model": "svm"}))
    assert main(["audit", "--config", str(bad)]) == 2
    assert main(["audit", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["audit"])
    assert exc.value.code == 2


def test_adversarial_needs_neural(synth_fixture):
    assert main(["mitigate", "--config", str(synth_fixture), "--mitigation", "adversarial"]) == 2


def test_audit_report_compare_pipeline(tmp_path):
    cfg = tmp_path / "fx"
    assert main(["synth", "--out", str(cfg), "--subjects", "12", "--duration", "40"]) == 0
    conf = cfg / "experiment.json"
    before, after = tmp_path / "before.json", tmp_path / "after.json"
    assert main(["audit", "--config", str(conf), "--iterations", "2", "--out", str(before)]) == 0
    assert main(["mitigate", "--config", str(conf), "--iterations", "2", "--mitigation", "threshold",
                 "--out", str(after)]) == 0
    rep = json.loads(before.read_text())
    assert rep["provenance"]["master_seed"] == 7
    assert {r["attribute"] for r in rep["rows"]} == {"Sex", "Age", "DiseaseDuration", "FogPhenotype"}
    assert len(rep["samples"]) == 6
    text = tmp_path / "r.txt"
    assert main(["report", str(before), "--out", str(text)]) == 0
    assert "DPR" in text.read_text()
    comp = tmp_path / "c.csv"
    assert main(["compare", str(before), str(after), "--format", "csv", "--out", str(comp)]) == 0
    assert "delta_DPR" in comp.read_text()
    assert main(["report", str(tmp_path / "nope.json")]) == 2
