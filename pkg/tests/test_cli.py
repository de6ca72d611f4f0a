import json
import shutil
from importlib import resources

import pytest

from shaheen_sim.cli import main

PROG = """
    li x1, 3
    lp.setupi 0, 4, e
    addi x2, x2, 1
e:
    ecall
"""


@pytest.fixture
def prog(tmp_path):
    p = tmp_path / "k.s"
    p.write_text(PROG)
    return p


def test_run_prints_stats(prog, capsys):
    assert main(["run", str(prog), "--cores", "2", "--warm"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["issued"] == [7, 7]


def test_run_stats_and_trace_files(prog, tmp_path):
    st, tr = tmp_path / "s.json", tmp_path / "t.csv"
    assert main(["run", str(prog), "--stats", str(st), "--trace", str(tr)]) == 0
    assert json.loads(st.read_text())["total_cycles"] > 0
    assert tr.read_text().splitlines()[0] == "cycle,core,event,detail"


def test_run_assembly_error(tmp_path, capsys):
    p = tmp_path / "bad.s"
    p.write_text("nop\naddq x1, x2, x3\n")
    assert main(["run", str(p)]) == 2
    assert f"{p}:2:1: error" in capsys.readouterr().err


def test_run_missing_file():
    assert main(["run", "/nonexistent/k.s"]) == 2


def test_run_cycle_limit(tmp_path):
    p = tmp_path / "spin.s"
    p.write_text("top:\n j top\n")
    assert main(["run", str(p), "--max-cycles", "500"]) == 3


def test_unknown_subcommand():
    assert main(["frobnicate"]) == 2


def test_bad_config_name(prog):
    assert main(["--config", "nope", "run", str(prog)]) == 2


def test_config_dir_from_env(prog, tmp_path, monkeypatch, capsys):
    src = resources.files("shaheen_sim.data").joinpath("configs/default.json")
    cfg = json.loads(src.read_text())
    cfg["cluster"] = dict(cfg.get("cluster", {}), n_cores=3)
    (tmp_path / "default.json").write_text(json.dumps(cfg))
    monkeypatch.setenv("SHAHEEN_CONFIG_DIR", str(tmp_path))
    assert main(["run", str(prog)]) == 0
    assert len(json.loads(capsys.readouterr().out)["issued"]) == 3


def test_covert_outputs(tmp_path, capsys):
    assert main(["covert", "--n", "16", "--out", str(tmp_path)]) == 0
    names = {p.name for p in tmp_path.iterdir()}
    for key in ("nofence", "fence"):
        assert {f"heatmap_{key}.pgm", f"matrix_{key}.csv", f"samples_{key}.csv"} <= names
    summary = json.loads((tmp_path / "covert.json").read_text())
    assert summary["fence"]["mi_bits"] == 0


def test_covert_check_fails_below_threshold(tmp_path, capsys):
    # 17 secrets carry only ~4.1 bits, short of the 7-bit criterion
    assert main(["covert", "--n", "16", "--out", str(tmp_path), "--check"]) == 4
    assert "FAIL MI without fence" in capsys.readouterr().out


def test_covert_rejects_bad_n(tmp_path):
    assert main(["covert", "--n", "100000", "--out", str(tmp_path)]) == 2


def test_covert_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["covert", "--n", "24", "--trials", "3", "--noise", "30", "--seed", "5",
                     "--out", str(d)]) == 0
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_tlbtest(capsys):
    assert main(["tlbtest", "--tables", "1", "--window", "256", "--check"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["ok"] and res["faulted_read_beats_ok"]


def test_hypertest_paper_config(capsys):
    assert main(["--config", "paper", "hypertest", "--rows", "32", "--check"]) == 0
    cap = capsys.readouterr()
    assert "PASS per-bus 1.6 Gbps" in cap.err
    assert json.loads(cap.out)["config"] == "paper"


def test_bench_tiling_writes_tables(tmp_path, capsys):
    assert main(["bench", "tiling", "--out", str(tmp_path), "--check"]) == 0
    rows = json.loads((tmp_path / "tiling.json").read_text())
    assert [r["case"] for r in rows] == ["compute-bound", "memory-bound", "whole-layer"]
    assert (tmp_path / "tiling.csv").read_text().startswith("case,")


def test_bench_missing_table_config(tmp_path):
    assert main(["bench", "table3", "--table-config", str(tmp_path / "x.json"),
                 "--out", str(tmp_path)]) == 2
