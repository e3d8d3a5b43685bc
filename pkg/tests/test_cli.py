import json
import subprocess
import sys

import numpy as np
import pytest

from rebel import cli, inference
from rebel.chain_models import read_path_csv
from rebel.errors import EmptyRegion
from rebel.regeneration import BlockPartition, atomic_blocks, value_atom

TRANSITION = "[[0.7,0.3],[0.2,0.8]]"


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def finite_path(tmp_path):
    out = tmp_path / "sim"
    assert run("simulate", "--model", "finite", "--transition", TRANSITION, "--n", 2000,
               "--seed", 4, "-o", out) == 0
    return out / "path.csv"


@pytest.fixture
def finite_blocks(tmp_path, finite_path):
    out = tmp_path / "split"
    assert run("split", "--input", finite_path, "--atom-value", 0, "-o", out) == 0
    return out / "blocks.csv"


def test_simulate_rows(tmp_path):
    assert run("simulate", "--model", "ar1", "--rho", 0.9, "--n", 1000, "--seed", 1,
               "-o", tmp_path) == 0
    lines = (tmp_path / "path.csv").read_text().splitlines()
    assert lines[0] == "x1" and len(lines) == 1001
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["rows"] == 1000
    assert manifest["model_spec"]["params"]["rho"] == 0.9


def test_simulate_empty(tmp_path):
    assert run("simulate", "--model", "tgarch", "--n", 0, "-o", tmp_path) == 0
    assert (tmp_path / "path.csv").read_text() == "x1\n"


def test_simulate_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "--model", "tgarch", "--n", 300, "--seed", 9,
                   "-o", tmp_path / d) == 0
    assert (tmp_path / "a" / "path.csv").read_bytes() == (tmp_path / "b" / "path.csv").read_bytes()


def test_manifest_reproduces_run(tmp_path):
    assert run("simulate", "--model", "ar1", "--n", 200, "--seed", 3, "-o", tmp_path / "a") == 0
    manifest = tmp_path / "a" / "manifest.json"
    first = (tmp_path / "a" / "path.csv").read_bytes()
    assert run("simulate", "--config", manifest, "-o", tmp_path / "b") == 0
    assert (tmp_path / "b" / "path.csv").read_bytes() == first


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "ar1", "n": 50, "seed": 2}))
    assert run("simulate", "--config", cfg, "--n", 20, "-o", tmp_path / "o") == 0
    assert len((tmp_path / "o" / "path.csv").read_text().splitlines()) == 21
    resolved = json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]
    assert resolved["n"] == 20 and resolved["seed"] == 2


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"modle": "ar1"}))
    assert run("simulate", "--config", cfg, "-o", tmp_path) == 2


def test_split_atom_matches_library(tmp_path, finite_path, finite_blocks):
    part = BlockPartition.from_csv(finite_blocks)
    expected = atomic_blocks(read_path_csv(finite_path), value_atom(0.0))
    assert part == expected
    manifest = json.loads((finite_blocks.parent / "manifest.json").read_text())
    assert manifest["complete_blocks"] == expected.complete_count


def test_split_tgarch_small_set(tmp_path):
    assert run("simulate", "--model", "tgarch", "--n", 1000, "--seed", 0,
               "-o", tmp_path) == 0
    assert run("split", "--input", tmp_path / "path.csv", "--stack", 2,
               "--box=-1.3,4.7", "-o", tmp_path / "s") == 0
    small = json.loads((tmp_path / "s" / "smallset.json").read_text())
    assert np.allclose(small["box"], [[-1.3, 4.7], [-1.3, 4.7]])
    part = BlockPartition.from_csv(tmp_path / "s" / "blocks.csv")
    assert part.n == 999 and part.complete_count >= 2


def test_split_order_auto(tmp_path):
    assert run("simulate", "--model", "ar1", "--n", 1000, "--seed", 5, "-o", tmp_path) == 0
    assert run("split", "--input", tmp_path / "path.csv", "--order", "auto",
               "--max-order", 2, "-o", tmp_path / "s") == 0
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert manifest["order"]["order"] == manifest["stack"] == 1


def test_el_ci_methods_and_curve(tmp_path, finite_path, finite_blocks):
    out = tmp_path / "ci"
    assert run("el-ci", "--input", finite_path, "--blocks", finite_blocks,
               "--methods", "rebel,bel,mean,trunc", "--curve", 25, "-o", out) == 0
    report = json.loads((out / "ci.json").read_text())
    assert set(report) == {"rebel", "bel", "mean", "trunc"}
    trunc = report["trunc"]["estimate"]
    assert report["rebel"]["ci"]["lower"] <= trunc <= report["rebel"]["ci"]["upper"]
    assert report["rebel"]["estimate"] == pytest.approx(trunc, abs=1e-8)
    curve = (out / "curve.csv").read_text().splitlines()
    assert curve[0] == "theta,two_r_n" and len(curve) == 26


def test_el_ci_indicator_threshold(tmp_path, finite_path, finite_blocks):
    out = tmp_path / "ci"
    assert run("el-ci", "--input", finite_path, "--blocks", finite_blocks,
               "--indicator-ge", 1, "--methods", "rebel", "-o", out) == 0
    report = json.loads((out / "ci.json").read_text())
    assert 0.5 < report["rebel"]["estimate"] < 0.7


def test_el_ci_rerun_from_manifest(tmp_path, finite_path, finite_blocks):
    assert run("el-ci", "--input", finite_path, "--blocks", finite_blocks,
               "--methods", "rebel,mean", "-o", tmp_path / "a") == 0
    assert run("el-ci", "--config", tmp_path / "a" / "manifest.json",
               "-o", tmp_path / "b") == 0
    assert (tmp_path / "a" / "ci.json").read_bytes() == (tmp_path / "b" / "ci.json").read_bytes()


def test_exit_usage(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("simulate", "--model", "garch")
    assert exc.value.code == 2
    assert run("split", "-o", tmp_path) == 2  # missing --input
    assert run("split", "--input", tmp_path / "missing.csv", "-o", tmp_path) == 2
    assert run("simulate", "--model", "ar1", "--rho", 1.5, "-o", tmp_path) == 2
    assert "rebel" in capsys.readouterr().err


def test_exit_stack_mismatch(tmp_path, finite_path, finite_blocks):
    assert run("el-ci", "--input", finite_path, "--blocks", finite_blocks, "--stack", 2,
               "-o", tmp_path) == 2


def test_exit_no_regeneration(tmp_path, finite_path):
    assert run("split", "--input", finite_path, "--atom-value", 7, "-o", tmp_path) == 3


def test_exit_empty_region(tmp_path, finite_path, finite_blocks, monkeypatch):
    def boom(*a, **k):
        raise EmptyRegion("ratio infinite everywhere")
    monkeypatch.setattr(inference, "confidence_interval", boom)
    assert run("el-ci", "--input", finite_path, "--blocks", finite_blocks, "-o", tmp_path) == 4


def test_exit_numerical_failure(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("x1\n1\n0\n2\n0\n")
    assert run("split", "--input", path, "--atom-value", 0, "-o", tmp_path / "s") == 0
    # one complete block: too few for an interval
    assert run("el-ci", "--input", path, "--blocks", tmp_path / "s" / "blocks.csv",
               "-o", tmp_path) == 5


def test_mc_small_table(tmp_path):
    args = ("mc", "--preset", "table1", "--n", 250, "--reps", 3, "--seed", 1)
    assert run(*args, "-o", tmp_path / "a") == 0
    assert run(*args, "--workers", 2, "-o", tmp_path / "b") == 0
    lines = (tmp_path / "a" / "report.csv").read_text().splitlines()
    assert lines[0].startswith("method,n,alternative,rate,se")
    assert [l.split(",")[0] for l in lines[1:]] == ["ReBEL", "BEL"]
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    assert "ReBEL" in (tmp_path / "a" / "report.txt").read_text()


def test_qq_small(tmp_path):
    assert run("qq", "--n", 2000, "--reps", 4, "-o", tmp_path) == 0
    lines = (tmp_path / "qq.csv").read_text().splitlines()
    assert lines[0] == "empirical,chi2" and len(lines) == 5
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest["markers"]) == {"50%", "90%", "95%"}


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "rebel.cli", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "split", "el-ci", "mc", "qq"):
        assert cmd in res.stdout
