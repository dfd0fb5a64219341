import json

import numpy as np
import pytest

from ftscomm import cli
from ftscomm.neuralcore import GradReport


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "synth"
    assert cli.main(["synth", "--n-assets", "8", "--n-days", "200", "--communities", "2",
                     "--seed", "3", "--output-dir", str(out)]) == 0
    return out


def _write_config(path, **values):
    body = {"stride": 40, "d_latent": 8, "n_heads": 2, "n_inducing": 4, "train": {"max_epochs": 1}, **values}
    path.write_text(json.dumps(body))
    return path


def test_synth_writes_prices_and_labels(synth_dir):
    head = (synth_dir / "prices.csv").read_text().splitlines()
    assert head[0].split(",")[0] == "date" and len(head) == 201
    labels = (synth_dir / "labels.csv").read_text().splitlines()
    assert labels[0] == "asset_id,label" and len(labels) == 9


def test_ingest_round_trip(synth_dir, tmp_path, capsys):
    assert cli.main(["ingest", "--prices", str(synth_dir / "prices.csv"), "--output-dir", str(tmp_path / "i")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["n_assets"] == 8 and summary["n_days"] == 200
    assert (tmp_path / "i" / "prices.csv").read_text() == (synth_dir / "prices.csv").read_text()


def test_run_then_metrics(synth_dir, tmp_path, capsys):
    cfg = _write_config(tmp_path / "cfg.json")
    out = tmp_path / "run"
    code = cli.main(["run", "--prices", str(synth_dir / "prices.csv"), "--config", str(cfg),
                     "--truth", str(synth_dir / "labels.csv"), "--output-dir", str(out)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert "ARI" in summary and summary["n_windows"] >= 2
    code = cli.main(["metrics", "--prices", str(synth_dir / "prices.csv"), "--config", str(cfg),
                     "--assignments", str(out / "assignments.csv"), "--output-dir", str(out)])
    assert code == 0
    recomputed = json.loads(capsys.readouterr().out)
    stored = json.loads((out / "metrics.json").read_text())["windows"]
    assert recomputed["n_windows"] == len(stored)
    assert recomputed["S"] == pytest.approx(np.mean([r["S"] for r in stored if r["S"] is not None]), abs=1e-12)


def test_output_dir_from_environment(synth_dir, tmp_path, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv(cli.OUTPUT_ENV, str(target))
    assert cli.main(["ingest", "--prices", str(synth_dir / "prices.csv")]) == 0
    assert (target / "prices.csv").exists()
    explicit = tmp_path / "explicit"
    assert cli.main(["ingest", "--prices", str(synth_dir / "prices.csv"), "--output-dir", str(explicit)]) == 0
    assert (explicit / "prices.csv").exists()


def test_config_error_exit_code(synth_dir, tmp_path, capsys):
    cfg = _write_config(tmp_path / "bad.json", windw=89)
    code = cli.main(["run", "--prices", str(synth_dir / "prices.csv"), "--config", str(cfg),
                     "--output-dir", str(tmp_path)])
    assert code == cli.EXIT_CONFIG
    assert "windw" in capsys.readouterr().err


def test_data_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "p.csv"
    bad.write_text("date,A,B\n2020-01-01,1.0,2.0\n2020-01-02,-1.0,2.0\n")
    assert cli.main(["ingest", "--prices", str(bad), "--output-dir", str(tmp_path)]) == cli.EXIT_DATA
    assert "row 3" in capsys.readouterr().err


def test_short_history_is_data_error(synth_dir, tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", window=180)
    code = cli.main(["run", "--prices", str(synth_dir / "prices.csv"), "--config", str(cfg),
                     "--output-dir", str(tmp_path / "o")])
    assert code == cli.EXIT_DATA


def test_sweep_rejects_short_window(synth_dir, tmp_path):
    code = cli.main(["sweep", "--prices", str(synth_dir / "prices.csv"), "--windows", "44,89",
                     "--output-dir", str(tmp_path)])
    assert code == cli.EXIT_CONFIG


def test_ablate_writes_table(synth_dir, tmp_path):
    cfg = _write_config(tmp_path / "cfg.json")
    code = cli.main(["ablate", "--prices", str(synth_dir / "prices.csv"), "--config", str(cfg),
                     "--modes", "full,static", "--output-dir", str(tmp_path / "ab")])
    assert code == 0
    rows = json.loads((tmp_path / "ab" / "ablation.json").read_text())
    assert [r["mode"] for r in rows] == ["static", "full"]


def test_gradcheck_failure_exit_code(monkeypatch, capsys):
    bad = GradReport(errors={"W_Q.weight": 0.3, "W_K.weight": 1e-9}, tolerance=1e-4)
    monkeypatch.setattr(cli, "run_gradcheck", lambda *a, **k: bad)
    assert cli.main(["gradcheck"]) == cli.EXIT_CHECK
    captured = capsys.readouterr()
    assert "W_Q.weight" in captured.err and "W_K.weight" not in captured.err


def test_gradcheck_success_exit_code(monkeypatch, tmp_path):
    good = GradReport(errors={"W_Q.weight": 1e-9}, tolerance=1e-4)
    monkeypatch.setattr(cli, "run_gradcheck", lambda *a, **k: good)
    assert cli.main(["gradcheck", "--output-dir", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "gradcheck.json").read_text())["passed"]


def test_selftest(tmp_path):
    assert cli.main(["selftest"]) == 0
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tau": 0.8}))
    assert cli.main(["selftest", "--config", str(cfg)]) == cli.EXIT_CHECK
