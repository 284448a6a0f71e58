import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from cli_helpers import CONFIGS, QUICK, artefacts, invoke, write_config
from golden import DELTA
from mixbias.config import load_schema


@pytest.fixture
def quick(tmp_path):
    def make(command, **changes):
        return write_config(tmp_path / f"{command}.json", {**QUICK[command], **changes})
    return make


@pytest.mark.parametrize("command", sorted(QUICK))
def test_outputs_validate(command, quick, tmp_path):
    out = tmp_path / "out"
    assert invoke(command, quick(command), out) == 0
    report = json.loads((out / "report.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    jsonschema.validate(report, load_schema("report.schema.json"))
    jsonschema.validate(manifest, load_schema("manifest.schema.json"))
    assert report["command"] == command
    assert set(manifest["outputs"]) == {p.name for p in out.iterdir()}
    for csv in out.glob("*.csv"):
        assert b"\r" not in csv.read_bytes()


@pytest.mark.parametrize("command", sorted(QUICK))
def test_manifest_rerun_is_byte_identical(command, quick, tmp_path):
    first, second, third = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert invoke(command, quick(command), first, "--threads", 1) == 0
    assert invoke(command, first / "manifest.json", second) == 0
    assert invoke(command, first / "manifest.json", third, "--threads", 3) == 0
    assert artefacts(first) == artefacts(second) == artefacts(third)
    m1 = json.loads((first / "manifest.json").read_text())
    m2 = json.loads((second / "manifest.json").read_text())
    assert m1["resolved_config"] == m2["resolved_config"]


def test_lambda_column_is_closed_form(tmp_path):
    out = tmp_path / "out"
    assert invoke("lambda", CONFIGS / "basic_gaussian.json", out) == 0
    data = np.genfromtxt(out / "lambda.csv", delimiter=",", names=True)
    np.testing.assert_allclose(data["lambda"], 0.5 - data["theta"], atol=1e-8)


def test_canonical_root_offset(tmp_path):
    out = tmp_path / "out"
    assert invoke("lambda", CONFIGS / "canonical_mixture.json", out) == 0
    result = json.loads((out / "report.json").read_text())["result"]
    assert result["root_offset"] == pytest.approx(DELTA, abs=1e-6)


def test_proposition_writes_sign_audit(quick, tmp_path):
    out = tmp_path / "out"
    assert invoke("proposition", quick("proposition"), out) == 0
    lines = (out / "sign_audit.csv").read_text().splitlines()
    assert lines[0] == "source,row,component,coordinate,bias,sign,detectable,agrees"
    assert len(lines) == 1 + 2 + 3 * 2
    assert json.loads((out / "report.json").read_text())["result"]["verdict"] == "biased"


def test_seed_override_lands_in_manifest(quick, tmp_path):
    out = tmp_path / "out"
    assert invoke("consistency", quick("consistency"), out, "--seed", 123) == 0
    assert json.loads((out / "manifest.json").read_text())["master_seed"] == 123


@pytest.mark.parametrize("command, changes", [
    ("bias", {"family": "cauchy"}),
    ("bias", {"mixing": [[0.5, 0.6], [1.0, 0.0]]}),
    ("bias", {"mixing": [[0.5, 0.5, 0.0]]}),
    ("bias", {"components": [[1.0], [-4.0]]}),
    ("bias", {"components": [[1.0], [1.0]]}),
    ("bias", {"tol_abs": 0}),
    ("consistency", {"consistency": {"regime": "fixed-membership", "sample_sizes": [100, 100],
                                     "replicates": 2}}),
    ("consistency", {"consistency": {"regime": "fixed-membership", "sample_sizes": [100],
                                     "replicates": 2, "target_component": 5}}),
    ("lambda", {"lambda": {"grid": {"lower": 1.0, "upper": -1.0, "points": 5}}}),
    ("regularity", {"regularity": {"theta": [0.0, -1.0]}}),
])
def test_invalid_config_exits_2(command, changes, quick, tmp_path, capsys):
    assert invoke(command, quick(command, **changes), tmp_path / "out") == 2
    assert "config error" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_unreadable_and_malformed_files(tmp_path, capsys):
    assert invoke("bias", tmp_path / "missing.json", tmp_path / "out") == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"family": "poisson",\n  "components": [1.0,]}')
    assert invoke("bias", bad, tmp_path / "out") == 2
    assert "line 2" in capsys.readouterr().err


def test_consistency_section_required(quick, tmp_path):
    assert invoke("consistency", quick("bias"), tmp_path / "out") == 2


def test_numerical_failure_exits_1(quick, tmp_path, capsys):
    cfg = quick("lambda", family="gaussian_mean_var", components=[[0.0, 0.05], [2.0, 3.0]],
                max_subdivisions=1)
    assert invoke("lambda", cfg, tmp_path / "out", "--tol-abs", 1e-15, "--tol-rel", 1e-15) == 1
    assert "numerical failure" in capsys.readouterr().err


@pytest.mark.parametrize("flag", [["--threads", "0"], ["--seed", "-1"]])
def test_bad_flags_exit_2(flag, quick, tmp_path):
    assert invoke("bias", quick("bias"), tmp_path / "out", *flag) == 2


def test_module_entry_point(quick, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mixbias", "regularity", "--config",
                           str(quick("regularity")), "--out", str(tmp_path / "out")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["result"]["info_identity_residual"] < 2e-6
