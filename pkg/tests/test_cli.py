import json

import pytest

from si_lab.cli import main
from si_lab.model import load_history, save_history

from conftest import SPECULATIVE, session_not_si_history


def test_gen_then_check_passes(tmp_path, capsys):
    out = tmp_path / "h.jsonl"
    assert main(["gen", "--deployment", "rs", "--seed", "3", "--txn-num", "60", "--out", str(out)]) == 0
    h = load_history(str(out))
    assert h.deployment == "rs" and h.header["seed"] == 3
    assert main(["check", "--in", str(out)]) == 0
    assert "realtime-si PASS" in capsys.readouterr().out


def test_check_detects_a_model_the_history_misses(tmp_path, capsys):
    out = tmp_path / "h.jsonl"
    main(["gen", "--deployment", "sc", "--seed", "1", "--txn-num", "80", "--out", str(out)])
    assert main(["check", "--in", str(out), "--model", "strong-si"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_mutate_then_check_names_the_axiom(tmp_path, capsys):
    h, bad = tmp_path / "h.jsonl", tmp_path / "bad.jsonl"
    main(["gen", "--deployment", "wt", "--seed", "2", "--txn-num", "60", "--out", str(h)])
    assert main(["mutate", "--axiom", "ext", "--in", str(h), "--out", str(bad), "--seed", "1"]) == 0
    assert main(["check", "--in", str(bad)]) == 1
    assert "(EXT)" in capsys.readouterr().out


def test_oracle_command(tmp_path):
    p = tmp_path / "small.jsonl"
    main(["gen", "--deployment", "wt", "--txn-num", "4", "--concurrency", "1", "--out", str(p)])
    assert main(["oracle", "--in", str(p)]) == 0
    big = tmp_path / "big.jsonl"
    main(["gen", "--deployment", "wt", "--txn-num", "30", "--out", str(big)])
    assert main(["oracle", "--in", str(big)]) == 2


def test_oracle_on_untagged_history_needs_a_model(tmp_path):
    p = tmp_path / "ex.jsonl"
    save_history(session_not_si_history(), str(p))
    assert main(["oracle", "--in", str(p)]) == 2
    assert main(["oracle", "--in", str(p), "--model", "si"]) == 0
    assert main(["oracle", "--in", str(p), "--model", "session-si"]) == 1


def test_script_command(tmp_path, capsys):
    script, out = tmp_path / "script.txt", tmp_path / "h.jsonl"
    script.write_text(SPECULATIVE)
    assert main(["script", "--in", str(script), "--out", str(out)]) == 0
    assert main(["check", "--in", str(out)]) == 0
    assert main(["check", "--in", str(out), "--model", "strong-si"]) == 1
    assert "(INRB)" in capsys.readouterr().out


def test_report_files(tmp_path):
    rep = tmp_path / "report.txt"
    assert main(["pipeline", "--deployment", "wt", "--seed", "4", "--txn-num", "50",
                 "--report", str(rep)]) == 0
    body = json.loads((tmp_path / "report.txt.json").read_text())
    assert body["header"]["tool"] == "si-lab" and body["header"]["seed"] == 4
    assert body["verdict"] is True and body["model"] == "strong-si"
    assert "elapsedNanos" not in body
    text = rep.read_text()
    assert text.startswith("# si-lab") and "strong-si: PASS" in text


@pytest.mark.parametrize("deployment", ["wt", "rs", "sc"])
def test_pipeline_reports_are_byte_identical(tmp_path, deployment):
    paths = []
    for i in range(2):
        rep = tmp_path / f"r{i}.txt"
        main(["pipeline", "--deployment", deployment, "--seed", "8", "--txn-num", "80",
              "--out", str(tmp_path / f"h{i}.jsonl"), "--report", str(rep)])
        paths.append(rep)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "r0.txt.json").read_bytes() == (tmp_path / "r1.txt.json").read_bytes()
    assert (tmp_path / "h0.jsonl").read_bytes() == (tmp_path / "h1.jsonl").read_bytes()


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SI_LAB_SEED", "5")
    main(["gen", "--txn-num", "20", "--out", str(tmp_path / "a.jsonl")])
    main(["gen", "--txn-num", "20", "--seed", "5", "--out", str(tmp_path / "b.jsonl")])
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert load_history(str(tmp_path / "a.jsonl")).header["seed"] == 5
    monkeypatch.setenv("SI_LAB_SEED", "five")
    assert main(["gen", "--txn-num", "20", "--out", str(tmp_path / "c.jsonl")]) == 2


@pytest.mark.parametrize("argv", [
    [],
    ["gen"],
    ["check", "--in", "x", "--model", "serializable"],
    ["gen", "--out", "x", "--concurrency", "0"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_bad_inputs_exit_2(tmp_path):
    missing = tmp_path / "nope.jsonl"
    assert main(["check", "--in", str(missing)]) == 2
    trunc = tmp_path / "trunc.jsonl"
    trunc.write_text('{"txnId": 1, "sessionId"\n')
    assert main(["check", "--in", str(trunc)]) == 2
    h = tmp_path / "h.jsonl"
    main(["gen", "--deployment", "rs", "--txn-num", "30", "--out", str(h)])
    assert main(["mutate", "--axiom", "session", "--in", str(h), "--out", str(tmp_path / "o")]) == 2
    bad_script = tmp_path / "s.txt"
    bad_script.write_text("session a\nbegin b\n")
    assert main(["script", "--in", str(bad_script), "--out", str(tmp_path / "o")]) == 2


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert capsys.readouterr().out.startswith("si-lab ")
