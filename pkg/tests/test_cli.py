import csv
import json

import pytest
import yaml

from piconsensus import cli
from piconsensus.scenario import example1_document


def write(tmp_path, doc, name="s.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_validate_example1(capsys):
    assert cli.main(["validate", "example1", "--json"]) == cli.EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    status = {k: v["status"] for k, v in rep["assumptions"].items()}
    assert status == {"1": "pass", "2": "warn", "3": "warn", "4": "pass"}
    assert rep["assumptions"]["2"]["w_bar"] == pytest.approx(58.0, abs=0.1)
    assert rep["assumptions"]["3"]["m_under"] == 2.0
    assert any("hidden" in n for n in rep["assumptions"]["4"]["notes"])


def test_validate_disconnected(tmp_path, capsys):
    doc = example1_document()
    doc["graph"]["edges"] = [[0, 1, 1], [2, 3, 1], [4, 5, 1]]
    assert cli.main(["validate", write(tmp_path, doc)]) == cli.EXIT_INVALID
    assert "Assumption 1" in capsys.readouterr().out


def test_validate_rank_deficient(tmp_path, capsys):
    doc = example1_document()
    doc["plants"][0]["B"] = [[1, 0], [0, 0]]  # C1 B1 = [[3, 0], [0, 0]]
    assert cli.main(["validate", write(tmp_path, doc)]) == cli.EXIT_INVALID
    out = capsys.readouterr().out
    assert "Assumption 4" in out and "agent 1" in out


def test_parse_error_has_line(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("graph:\n  nodes: 6\n  edges: [[0, 1, 1]\nplants: []\n")
    assert cli.main(["validate", str(path)]) == cli.EXIT_PARSE
    assert "line" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    doc = example1_document()
    doc["controller"]["gain"] = 3
    assert cli.main(["validate", write(tmp_path, doc)]) == cli.EXIT_PARSE
    assert "controller" in capsys.readouterr().err


def test_missing_file():
    assert cli.main(["run", "/no/such/file.yaml"]) == cli.EXIT_PARSE


def test_usage_error():
    with pytest.raises(SystemExit) as info:
        cli.main(["run", "example1", "--scheme", "sometimes"])
    assert info.value.code == cli.EXIT_USAGE


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    code = cli.main(["run", "example1", "--scheme", "event", "--horizon", "5", "--dt", "0.01", "--out", str(out)])
    assert code == cli.EXIT_OK
    assert {p.name for p in out.iterdir()} == {"trace.csv", "trace.json", "report.json"}
    rep = json.loads((out / "report.json").read_text())
    assert rep["scheme"] == "event" and rep["tau0"] > 0
    assert rep["events"]["min_gap"] >= 0.2 - 1e-12
    text = capsys.readouterr().out
    assert "final_error" in text and "events" in text


def test_run_default_out_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path))
    assert cli.main(["run", "example1", "--horizon", "0.5"]) == cli.EXIT_OK
    assert (tmp_path / "example1" / "continuous" / "trace.csv").exists()


def test_run_divergence_exit(tmp_path, capsys):
    doc = {
        "name": "blowup",
        "graph": {"nodes": 2, "edges": [[0, 1, 1]]},
        "plants": [{"A": [[0]], "B": [[1]], "C": [[1]], "x0": [1.0]}] * 2,
        "costs": {"functions": [{"terms": [{"type": "quadratic", "hessian": [[-2000]]}]}] * 2},
        "controller": {"scheme": "continuous", "w_bar": 2000, "m_under": 1},
        "sim": {"horizon": 5, "dt": 0.001, "y_star": [0.0]},
    }
    assert cli.main(["run", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == cli.EXIT_DIVERGED
    assert "diverged" in capsys.readouterr().err


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_compare_is_deterministic(tmp_path, capsys):
    args = ["compare", "example1", "--horizon", "4", "--dt", "0.01", "--seed", "3"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == cli.EXIT_OK
    first = capsys.readouterr().out
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == cli.EXIT_OK
    second = capsys.readouterr().out
    assert first.replace(str(tmp_path / "a"), "") == second.replace(str(tmp_path / "b"), "")
    rows = read_csv(tmp_path / "a" / "errors.csv")
    assert rows[0] == ["time", "error_continuous", "error_periodic", "error_event"]
    assert all(cell != "" for row in rows[1:] for cell in row)
    assert rows[1:] == read_csv(tmp_path / "b" / "errors.csv")[1:]
    assert float(rows[-1][1]) < float(rows[1][1])


def test_compare_single_scheme(tmp_path):
    out = tmp_path / "c"
    assert cli.main(["compare", "example1", "--schemes", "periodic", "--horizon", "1", "--out", str(out)]) == 0
    assert (out / "periodic" / "trace.json").exists()
    assert read_csv(out / "errors.csv")[0] == ["time", "error_periodic"]


def test_batch_uses_consecutive_seeds(tmp_path, capsys):
    code = cli.main(["batch", "example1", "--runs", "3", "--horizon", "1", "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    rows = read_csv(tmp_path / "batch.csv")
    assert [r[0] for r in rows[1:]] == ["2", "3", "4"]


def test_sidecar_revalidates(tmp_path):
    out = tmp_path / "r"
    cli.main(["run", "example1", "--horizon", "0.5", "--out", str(out)])
    assert cli.main(["validate", str(out / "trace.json")]) == cli.EXIT_OK
