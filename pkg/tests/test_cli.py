from __future__ import annotations

import subprocess
import sys

import pytest

from ambisense import cli
from ambisense.encoder import save_params
from ambisense.metrics import Metrics
from ambisense.robustness import rows_from_csv


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_reason_hygiene(capsys):
    code, out, _ = run(capsys, "reason", "eat -> basketball -> teeth", "-q")
    assert code == 0
    assert out.splitlines() == [
        "corrected: teeth -> hand_wash -> eat -> basketball",
        "label: unhygienic behavior [warning] Brush your teeth and wash your hands before eating.",
    ]


def test_reason_malformed_sequence(capsys):
    code, _, err = run(capsys, "reason", "eat -> -> teeth", "-q")
    assert code == 1 and "malformed" in err


def test_reason_satisfied(capsys):
    code, out, _ = run(capsys, "reason", "light_switch, paperdis", "-q")
    assert code == 0 and "label: none" in out


def test_reason_with_mock_llm(capsys):
    code, out, _ = run(capsys, "reason", "teeth,hand_wash,pour_water,eat", "--llm-mock", "-q")
    assert code == 0
    assert "take_medication" in out and "source: llm" in out


def test_unknown_label_is_one_line_user_error(capsys):
    code, out, err = run(capsys, "reason", "eat, frobnicate", "-q")
    assert code == 1 and out == ""
    assert err.strip().splitlines() == [err.strip()]
    assert "frobnicate" in err and "Traceback" not in err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "a.toml"
    cfg.write_text("[train]\nlearning_rat = 0.1\n")
    code, _, err = run(capsys, "reason", "eat", "-c", str(cfg), "-q")
    assert code == 1 and "learning_rat" in err
    code, _, err = run(capsys, "reason", "eat", "--set", "bogus.key=1", "-q")
    assert code == 1 and "bogus" in err


def test_bad_arguments_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1
    capsys.readouterr()


def test_missing_model_is_user_error(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--model", str(tmp_path / "none.ambm"), "--corpus", str(tmp_path / "c"), "-q")
    assert code == 1 and "none.ambm" in err


def test_gen_train_eval_sweep(tmp_path, capsys):
    corpus, model = str(tmp_path / "corpus"), str(tmp_path / "m.ambm")
    common = ["--corpus", corpus, "--model", model, "-q"]
    assert run(capsys, "gen", "--n-per-class", "10", *common)[0] == 0
    assert (tmp_path / "corpus" / "train.npz").exists()
    assert run(capsys, "train", "--epochs", "8", *common)[0] == 0
    loss = (tmp_path / "m.ambm.loss.csv").read_text().splitlines()
    assert loss[0] == "epoch,loss" and len(loss) == 10
    code, out, _ = run(capsys, "eval", "--json", str(tmp_path / "m.json"), *common)
    assert code == 0 and "macro" in out
    metrics = Metrics.from_json((tmp_path / "m.json").read_text())
    assert metrics.macro_f1 > 0.5
    sweep = tmp_path / "s.csv"
    code, _, _ = run(capsys, "sweep", "--out", str(sweep), "--sigmas", "0,1", "--rates", "90,30", *common)
    assert code == 0
    rows = rows_from_csv(sweep.read_text())
    assert len(rows) == 4
    assert (tmp_path / "s.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_eval_untrained_near_chance(tmp_path, capsys):
    corpus = str(tmp_path / "corpus")
    assert run(capsys, "gen", "--n-per-class", "10", "--corpus", corpus, "-q")[0] == 0
    out = tmp_path / "u.json"
    code, _, _ = run(capsys, "eval", "--untrained", "--corpus", corpus, "--model", str(tmp_path / "x"), "--json", str(out), "-q")
    assert code == 0
    m = Metrics.from_json(out.read_text())
    assert abs(m.macro_f1 - 0.05) <= 0.05


def test_scenario_trace_and_run_edge_offline(tmp_path, model, capsys):
    path = str(tmp_path / "m.ambm")
    save_params(model, path)
    trace = tmp_path / "t.csv"
    code, _, _ = run(capsys, "gen", "--scenario", "medication", "--trace-out", str(trace), "-q")
    assert code == 0 and trace.read_text().startswith("t,")
    # nothing listens on this port: every event is spilled and the run reports failure
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'[paths]\nspill = "{tmp_path / "spill.ndjson"}"\n[gateway]\nport = 1\nretry_attempts = 1\nretry_backoff_s = 0.0\n')
    code, out, _ = run(capsys, "run-edge", "--trace", str(trace), "--model", path, "-c", str(cfg), "-q")
    assert code == 2
    assert "4 events spilled" in out
    assert len((tmp_path / "spill.ndjson").read_text().splitlines()) == 4


def test_e2e_medication(tmp_path, model, capsys):
    path = str(tmp_path / "m.ambm")
    save_params(model, path)
    code, out, _ = run(capsys, "e2e", "--scenario", "medication", "--model", path, "-q")
    assert code == 0
    reminders = [line for line in out.splitlines() if line.startswith("reminder ")]
    assert len(reminders) == 1 and "forgetting medication" in reminders[0]
    assert "e2e medication: PASS" in out


def test_e2e_unknown_scenario(capsys):
    code, _, err = run(capsys, "e2e", "--scenario", "nope", "-q")
    assert code == 1 and "nope" in err


def test_module_entry_point_no_traceback():
    proc = subprocess.run(
        [sys.executable, "-m", "ambisense.cli", "reason", "eat, frobnicate"],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == 1
    assert "Traceback" not in proc.stderr
    assert proc.stderr.strip().splitlines()[-1].startswith("ambisense: error:")
