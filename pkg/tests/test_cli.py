import json
import subprocess
import sys

import pytest

from bmllab import cli, mesh

SPOT = 1.5997641376570748


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_norm_indicator(capsys):
    code, out, _ = run(capsys, "norm", "--indicator", "j=0", "--exps", "2,2,3,4")
    assert code == 0
    data = json.loads(out)
    assert data["breakdown"]["total"] == pytest.approx(SPOT, rel=1e-12)


def test_norm_divergent(capsys):
    code, _, err = run(capsys, "norm", "--indicator", "j=0", "--exps", "3,2,2,4")
    assert code == 2
    assert "divergent by nontriviality theorem" in err


def test_norm_lorentz_only(capsys, tmp_path):
    f = mesh.dyadic_indicator(0, (0,), 1, 1, 0)
    path = tmp_path / "f.json"
    path.write_text(json.dumps(f.to_dict()))
    code, out, _ = run(capsys, "norm", "--file", str(path), "--lorentz", "2,2")
    assert code == 0
    data = json.loads(out)
    assert set(data) == {"mesh", "lorentz"}
    assert data["lorentz"]["value"] == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("argv", [
    ("norm",),
    ("norm", "--indicator", "j=x"),
    ("norm", "--indicator", "j=0", "--exps", "2,2"),
    ("norm", "--file", "/nonexistent/f.json"),
    ("verify", "nosuch"),
    ("factorize", "--M", "abc"),
    ("factorize", "--rounds", "-1"),
])
def test_input_errors(capsys, argv):
    code, _, _ = run(capsys, *argv)
    assert code == 1


def test_op_hilbert_csv(capsys):
    code, out, _ = run(capsys, "op", "hilbert", "--indicator", "j=0", "--mesh", "1,2,0", "--format", "csv")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "x,value"
    assert len(lines) == 1 + 8


def test_op_commutator_needs_symbol(capsys):
    code, _, err = run(capsys, "op", "commutator", "--random", "1")
    assert code == 1 and "symbol" in err


def test_op_json_flags_exactness(capsys):
    code, out, _ = run(capsys, "op", "fractional", "--random", "0", "--mesh", "2,1,0")
    assert code == 0
    assert json.loads(out)["exact"] is False


def test_factorize_rejects_small_M(capsys):
    code, _, err = run(capsys, "factorize", "--M", "8")
    assert code == 1
    assert "M must exceed 10" in err


def test_factorize_zero_rounds(capsys):
    code, out, _ = run(capsys, "factorize", "--M", "16", "--rounds", "0", "--mesh", "1,5,6")
    assert code == 0
    trace = json.loads(out)
    assert trace["rounds"] == [] and trace["ratios"] == []
    assert trace["total_reconstruction_error"] == 0.0


def test_factorize_trace(capsys, tmp_path):
    path = tmp_path / "trace.json"
    code, _, err = run(capsys, "factorize", "--M", "16", "--mesh", "1,6,6", "--out", str(path))
    assert code == 0
    trace = json.loads(path.read_text())
    l1 = [r["residual_l1"] for r in trace["rounds"]]
    assert len(l1) == 3 and l1[0] > l1[1] > l1[2]
    assert "round 3" in err
    code, out, _ = run(capsys, "report", str(path), "--format", "csv")
    assert code == 0
    assert out.splitlines()[0] == "round,residual_l1,certified_bound"


def test_verify_deterministic(capsys, monkeypatch):
    code1, out1, _ = run(capsys, "verify", "lorentz", "--corpus", "8", "--seed", "3")
    monkeypatch.setenv("BMLLAB_THREADS", "4")
    code2, out2, _ = run(capsys, "verify", "lorentz", "--corpus", "8", "--seed", "3")
    assert code1 == code2 == 0
    assert out1 == out2
    rec = json.loads(out1)["records"]
    assert rec and all({"name", "anchor", "inputs", "measured", "bound", "passed", "kind"} <= set(r) for r in rec)
    assert all(r["kind"] in ("certified", "empirical") for r in rec)


def test_verify_bml_and_report(capsys, tmp_path):
    path = tmp_path / "v.json"
    code, _, _ = run(capsys, "verify", "bml", "--corpus", "4", "--out", str(path))
    assert code == 0
    code, out, _ = run(capsys, "report", str(path))
    assert code == 0
    rows = json.loads(out)["rows"]
    assert rows and all(r["passed"] for r in rows)


def test_report_envelope_csv(capsys):
    code, out, _ = run(capsys, "report", "--envelope", "16,64", "--format", "csv")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "M,envelope_constant,kind"
    assert len(lines) == 3


def test_report_needs_input(capsys):
    assert run(capsys, "report")[0] == 1


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bmllab.cli", "norm", "--indicator", "j=1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["breakdown"]["total"] == pytest.approx(SPOT * 2 ** (-1 / 3), rel=1e-12)


def test_factorize_default_run(capsys):
    code, out, err = run(capsys, "factorize")
    assert code == 0
    trace = json.loads(out)
    assert trace["M"] == 16
    l1 = [r["residual_l1"] for r in trace["rounds"]]
    assert len(l1) == 3 and l1[0] > l1[1] > l1[2]


@pytest.mark.parametrize("certified,expected", [(True, 3), (False, 0)])
def test_verify_exit_code_tracks_certified_failures(capsys, monkeypatch, certified, expected):
    rec = cli._record("forced", "plumbing", {}, 1.0, 0.0, False, certified=certified)
    monkeypatch.setitem(cli._SUITE_FUNCS, "lorentz", lambda seed, size: [rec])
    code, out, _ = run(capsys, "verify", "lorentz")
    assert code == expected
    assert json.loads(out)["certified_failures"] == (["forced"] if certified else [])
