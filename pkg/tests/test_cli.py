import csv
import io
import json
import math

import pytest

from semsim import cli

SCN = """name = tiny
graph.0.preset = complete
graph.0.n = 3
sim.duration_s = 1.6
load_event.0.time_s = 0.5
load_event.0.scale = 1.5
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.scn"
    p.write_text(SCN)
    return p


def test_bound_ring_seven(capsys):
    assert cli.main(["bound", "--preset", "ring", "--n", "7"]) == 0
    out = capsys.readouterr().out
    assert "lambda_max: 3.8019377358" in out
    assert "delay_bound_s: 0.41315677319" in out


def test_bound_line_two_and_directed(capsys):
    assert cli.main(["bound", "--preset", "line", "--n", "2"]) == 0
    out = capsys.readouterr().out
    bound = float(out.split("delay_bound_s:")[1].split()[0])
    assert bound == pytest.approx(math.pi / 4, rel=1e-11)
    assert cli.main(["bound", "--weights", "[[0,1],[0,0]]", "--directed"]) == 0
    assert "advisory" in capsys.readouterr().out
    assert cli.main(["bound", "--weights", "[[0,0],[0,0]]"]) == cli.EXIT_INVALID


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("garbage line\n")
    assert cli.main(["run", str(bad), "--out", str(tmp_path)]) == cli.EXIT_PARSE
    inval = tmp_path / "inval.scn"
    inval.write_text("graph.0.preset = complete\ngraph.0.n = 3\nsim.duration_s = -2\n")
    assert cli.main(["run", str(inval), "--out", str(tmp_path)]) == cli.EXIT_INVALID
    assert cli.main(["run", "no_such_thing", "--out", str(tmp_path)]) == cli.EXIT_MISSING
    assert cli.main(["metrics", str(tmp_path / "none.csv")]) == cli.EXIT_MISSING
    err = capsys.readouterr().err
    assert ":1:" in err


def test_diverging_run_keeps_partial_trace(tmp_path, capsys):
    code = cli.main(["run", "latency_0p05", "--no-compensation", "--out", str(tmp_path)])
    assert code == cli.EXIT_DIVERGED
    assert (tmp_path / "latency_0p05_nocomp.csv").exists()
    assert "diverged" in capsys.readouterr().err


def test_run_writes_outputs_and_env_default(tiny, tmp_path, monkeypatch, capsys):
    out = tmp_path / "o"
    monkeypatch.setenv("SEMSIM_OUT", str(out))
    assert cli.main(["run", str(tiny)]) == 0
    assert capsys.readouterr().out.strip() == str(out / "tiny.csv")
    man = json.loads((out / "tiny.manifest.json").read_text())
    assert set(man["files"]) == {"tiny.csv", "tiny.events.jsonl"}
    assert (out / "tiny.events.jsonl").read_text().startswith('{"backend"')


def test_sweep_matches_run_then_metrics(tiny, tmp_path, capsys):
    assert cli.main(["run", str(tiny), "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    assert cli.main(["metrics", str(tmp_path / "tiny.csv")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert cli.main(["sweep", str(tiny), "--axis", "alpha", "--values", "0.3"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1
    assert float(rows[0]["tc_o1_s"]) == rep["tc_o1_s"]
    assert float(rows[0]["tc_o2_s"]) == rep["tc_o2_s"]


def test_plotdata_fig13_has_six_series(tiny, tmp_path, capsys):
    cli.main(["run", str(tiny), "--out", str(tmp_path)])
    capsys.readouterr()
    assert cli.main(["plotdata", "fig13", "--trace", str(tmp_path / "tiny.csv")]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert list(rows[0]) == ["t", "series", "agent", "value"]
    assert len({r["series"] for r in rows}) == 6
    assert {r["agent"] for r in rows} == {"1"}


def test_plotdata_errors(tmp_path):
    assert cli.main(["plotdata", "fig99", "--trace", "x"]) == cli.EXIT_INVALID
    assert cli.main(["plotdata", "fig13"]) == cli.EXIT_PARSE


def test_codec_roundtrip(capsys):
    assert cli.main(["codec", "encode", "--values", "314.15,0,0"]) == 0
    hexs = capsys.readouterr().out.strip()
    assert hexs == "534701410000000000000000000000000000002fef7c0000000000000000a0dfb6e9"
    assert cli.main(["codec", "decode", hexs]) == 0
    assert json.loads(capsys.readouterr().out)["values"] == [314.15, 0.0, 0.0]
    assert cli.main(["codec", "decode", hexs[:20]]) == cli.EXIT_INVALID
    assert cli.main(["codec", "decode", "zz"]) == cli.EXIT_PARSE
