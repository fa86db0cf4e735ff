import json

import pytest

from conftest import KERNELS
from imitatio.cli import main


def kernel(name):
    return str(KERNELS / f"{name}.json")


def test_analyze_k_unique(tmp_path):
    out = tmp_path / "r.json"
    assert main(["analyze", kernel("k_unique"), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["structure"]["verdict"] == "Unique"
    assert doc["invariant"] == [0.5, 0.5]
    assert doc["certificate"]["n0_bar"] == 2
    assert doc["coalescence"]["verdict"] == "ProvenCoalescent"


def test_analyze_k_periodic(tmp_path):
    out = tmp_path / "r.json"
    assert main(["analyze", kernel("k_periodic"), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["structure"]["verdict"] == "NonUniquePeriodic"
    assert doc["structure"]["chain_period"] == 2
    assert doc["structure"]["periodic_partition"] == [[1], [2]]
    assert doc["certificate"] is None


def test_analyze_identity_needs_weights(tmp_path):
    out = tmp_path / "r.json"
    assert main(["analyze", kernel("identity"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["invariant"] is None
    assert main(["analyze", kernel("identity"), "--out", str(out), "--invariant-weights", "0.3,0.7"]) == 0
    assert json.loads(out.read_text())["invariant"] == [0.3, 0.7]


def test_analyze_bad_kernel(capsys, tmp_path):
    assert main(["analyze", kernel("bad_rows")]) == 2
    assert "row 1 sums to 1.4" in capsys.readouterr().err
    assert main(["analyze", str(tmp_path / "missing.json")]) == 2


def test_sample_shape(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sample", kernel("k_unique"), "--window", "0..1", "--algorithm", "cftp", "--replicas", "1000", "--seed", "7", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "replica,site,state" and len(lines) == 2001
    diag = json.loads((tmp_path / "s.csv.diagnostics.json").read_text())
    assert diag["algorithm"] == "cftp" and diag["seed"] == 7


def test_sample_negative_window(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sample", kernel("k_unique"), "--window=-3..-2", "--algorithm", "eps", "--threshold", "-20", "--replicas", "5", "--out", str(out)]) == 0
    sites = {line.split(",")[1] for line in out.read_text().splitlines()[1:]}
    assert sites == {"-3", "-2"}


def test_sample_usage_errors(capsys):
    assert main(["sample", kernel("k_unique"), "--window", "0..1", "--algorithm", "eps"]) == 3
    assert main(["sample", kernel("k_unique"), "--window", "0..1", "--algorithm", "eps", "--threshold", "0"]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["sample", kernel("k_unique"), "--window", "2..1"])
    assert exc.value.code == 3
    with pytest.raises(SystemExit) as exc:
        main(["sample", kernel("k_unique"), "--window", "0..1", "--replicas", "0"])
    assert exc.value.code == 3


def test_sample_cftp_refuses_heavy_tail(capsys):
    assert main(["sample", kernel("powerlaw_1.2"), "--window", "0..1", "--algorithm", "cftp", "--replicas", "5"]) == 3
    assert "eps" in capsys.readouterr().err


def test_sample_doeblin_on_periodic_is_precondition():
    assert main(["sample", kernel("k_periodic"), "--window", "0..1", "--algorithm", "doeblin", "--replicas", "5"]) == 3


def test_sample_deterministic(tmp_path):
    args = ["sample", kernel("k_unique"), "--window", "0..2", "--algorithm", "doeblin", "--replicas", "200", "--seed", "3"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.diagnostics.json").read_bytes() == (tmp_path / "b.csv.diagnostics.json").read_bytes()


def test_validate_codes(tmp_path):
    assert main(["validate", kernel("k_periodic"), "--replicas", "10"]) == 3
    assert main(["validate", kernel("k_unique"), "--replicas", "50", "--out", str(tmp_path / "v.json")]) == 4
    doc = json.loads((tmp_path / "v.json").read_text())
    assert doc["passed"] is False


def test_walks(tmp_path):
    out, summary = tmp_path / "w.csv", tmp_path / "w.json"
    assert main(["walks", kernel("k_unique"), "--replicas", "2000", "--horizon", "100000", "--out", str(out), "--summary", str(summary)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "replica,start_distance,hit_step_or_-1" and len(lines) == 2001
    assert json.loads(summary.read_text())["hit_fraction"] == 1.0


def test_walks_heavy_tail_and_tail_estimate(tmp_path):
    summary = tmp_path / "w.json"
    assert main(["walks", kernel("powerlaw_1.2"), "--replicas", "100", "--horizon", "2000", "--out", str(tmp_path / "w.csv"),
                 "--summary", str(summary), "--window", "0..1", "--threshold", "-30"]) == 0
    doc = json.loads(summary.read_text())
    assert doc["hit_fraction"] < 1.0
    assert doc["s_hat_below_threshold"]["heuristic"] is True


def test_walks_usage():
    with pytest.raises(SystemExit) as exc:
        main(["walks", kernel("k_unique"), "--replicas", "0"])
    assert exc.value.code == 3
    assert main(["walks", kernel("k_unique"), "--threshold", "-3"]) == 3
