import csv
import io
import json

import pytest

from snk import serialize
from snk.cli import main


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def test_build_writes_model(tmp_path, capsys):
    path = tmp_path / "g3.snf"
    code, out, _ = run(["build", "--groups", "3", "--scale", "0.5", "--out", str(path)], capsys)
    assert code == 0
    assert "50 weighted layers" in out
    net = serialize.load(path)
    assert net.groups == 3 and net.scale == 0.5 and net.materialized


def test_build_json_shallow(capsys):
    code, out, _ = run(["build", "--shallow", "--format", "json"], capsys)
    data = json.loads(out)
    assert code == 0 and data["weighted_layers"] == 26


@pytest.mark.parametrize("argv", [["build", "--scale", "0"], ["build", "--scale", "-1"], ["build", "--groups", "5"],
                                  ["analyze", "--resolution", "abc"], ["frobnicate"], []])
def test_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 1
    assert "error" in err


def test_analyze_csv_and_figure(tmp_path, capsys):
    model = tmp_path / "m.snf"
    run(["build", "--groups", "8", "--scale", "0.5", "--out", str(model)], capsys)
    out = tmp_path / "report.csv"
    code, _, _ = run(["analyze", str(model), "--format", "csv", "--out", str(out)], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert rows[-1]["layer"] == "total"
    assert {"conv", "pw", "gpw", "dw", "fc", "pool"} <= {r["kind"] for r in rows[:-1]}
    png = out.with_suffix(".png")
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_analyze_resolution_scaling(capsys):
    def total(res):
        code, out, _ = run(["analyze", "--groups", "3", "--resolution", res, "--format", "json"], capsys)
        assert code == 0
        return json.loads(out)["totals"]["mult_adds"]

    fc = 960 * 1000
    assert total("448x448") - fc == 4 * (total("224x224") - fc)


def test_analyze_connectivity(capsys):
    code, out, _ = run(["analyze", "--groups", "3", "--connectivity", "--format", "json"], capsys)
    conn = json.loads(out)["connectivity"]
    assert code == 0 and len(conn) == 16
    assert all(r["with_shuffle"] == "full" for r in conn)
    assert conn[1]["without_shuffle"] == "block-diagonal(3)"


def test_corrupt_and_missing_model(tmp_path, capsys):
    model = tmp_path / "m.snf"
    run(["build", "--scale", "0.25", "--out", str(model)], capsys)
    model.write_bytes(model.read_bytes()[:100])
    code, _, err = run(["analyze", str(model)], capsys)
    assert code == 3 and "corrupt" in err
    code, _, _ = run(["analyze", str(tmp_path / "nope.snf")], capsys)
    assert code == 3


def test_verify_and_fault_injection(capsys):
    code, out, _ = run(["verify", "--suite", "shuffle", "--suite", "flops"], capsys)
    assert code == 0
    assert out.count("PASS") == 2 and "conv" not in out
    code, out, _ = run(["verify", "--suite", "shuffle", "--inject-fault", "shuffle-off-by-one"], capsys)
    assert code == 2
    assert "FAIL shuffle" in out and "first failure" in out


def test_bench_small(tmp_path, capsys):
    out = tmp_path / "bench.json"
    code, _, _ = run(["bench", "--scales", "0.25,0.5", "--resolutions", "32x32,64x64", "--warmup", "3",
                      "--iters", "10", "--format", "json", "--out", str(out)], capsys)
    data = json.loads(out.read_text())
    assert code == 0
    assert len(data["results"]) == 4
    assert "speedup" in data
    assert out.with_suffix(".png").exists()


def test_bench_rejects_short_runs(capsys):
    code, _, _ = run(["bench", "--iters", "3"], capsys)
    assert code == 1


def test_bench_thread_guard(monkeypatch, capsys):
    monkeypatch.setenv("SNK_THREADS", "8")
    code, _, err = run(["bench", "--scales", "0.25", "--resolutions", "32x32", "--warmup", "3", "--iters", "10"],
                       capsys)
    assert code == 1 and "SNK_THREADS" in err


def test_compare_table(capsys):
    code, out, _ = run(["compare", "--groups", "4", "--scale", "0.5", "--format", "json"], capsys)
    data = json.loads(out)
    assert code == 0
    assert [r["kind"] for r in data["rows"]][-1] == "shufflenet"
    assert all(abs(r["delta"]) <= 0.02 for r in data["rows"])
