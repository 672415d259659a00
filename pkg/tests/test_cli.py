import json
import os

import numpy as np
import pytest

from mdspde.cli import main, parse_event, parse_psi
from mdspde.errors import ConfigError

LIN_CFG = """
[model]
length = 3.141592653589793
modes = 16
f_family = linear_y
f_b = 0.3
g_family = zero
sigma_family = constant
sigma_c = 1.0

[regime]
epsilon = 0.04
regime = R1

[run]
T = 1.0
seed = 123

[output]
directory = {out}
"""

BAD_CFG = """
[model]
length = 3.141592653589793
modes = 16
g_family = linear_y
g_b = 1.5
sigma_family = constant
sigma_c = 1.0

[regime]
epsilon = 0.05

[run]
T = 0.2
seed = 7

[output]
directory = {out}
"""


@pytest.fixture
def lin_cfg(tmp_path):
    out = tmp_path / "out"
    path = tmp_path / "lin.cfg"
    path.write_text(LIN_CFG.format(out=out))
    return str(path), str(out)


def test_parse_helpers():
    assert parse_psi("linear:mode=2,slope=0.5") == {"family": "linear", "mode": 2, "slope": 0.5}
    assert parse_event("terminal_mode:1,0.6") == {"kind": "terminal_mode", "mode": 1, "r": 0.6}
    assert parse_event("sup_norm:0.4") == {"kind": "sup_norm", "r": 0.4}
    with pytest.raises(ConfigError):
        parse_event("nope:1")
    with pytest.raises(ConfigError):
        parse_psi("spline:k=3")


def test_validate_writes_report_and_manifest(lin_cfg, capsys):
    cfg, out = lin_cfg
    assert main(["validate", "--config", cfg]) == 0
    report = json.loads(open(os.path.join(out, "hypothesis_report.json")).read())
    assert report["overall_pass"]
    manifest = json.loads(open(os.path.join(out, "manifest.json")).read())
    assert manifest["command"] == "validate"
    assert len(manifest["config_sha256"]) == 64


def test_validate_failing_model_exits_two(tmp_path):
    out = tmp_path / "out"
    path = tmp_path / "bad.cfg"
    path.write_text(BAD_CFG.format(out=out))
    assert main(["validate", "--config", str(path)]) == 2


def test_hypothesis_failure_exits_two(tmp_path):
    out = tmp_path / "out"
    path = tmp_path / "bad.cfg"
    path.write_text(BAD_CFG.format(out=out))
    assert main(["invariant", "--config", str(path), "--count", "10"]) == 2


def test_usage_errors_exit_one(lin_cfg, capsys):
    cfg, _ = lin_cfg
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--config", cfg])  # missing --event
    assert exc.value.code == 1
    assert main([]) == 1
    assert main(["rate", "--config", "/nonexistent.cfg", "--psi", "linear:mode=1,slope=1"]) == 1


def test_rate_command_value(lin_cfg, capsys):
    cfg, out = lin_cfg
    assert main(["rate", "--config", cfg, "--psi", "linear:mode=1,slope=1,dt=1e-3",
                 "--regime", "R1"]) == 0
    body = json.loads(open(os.path.join(out, "rate.json")).read())
    assert abs(body["S"] - 7.0 / 6.0) < 1e-5


def test_estimate_command_writes_seeded_filename(lin_cfg):
    cfg, out = lin_cfg
    assert main(["estimate", "--config", cfg, "--event", "terminal_mode:1,0.0",
                 "--method", "plain", "--n", "40"]) == 0
    assert os.path.exists(os.path.join(out, "estimate_plain_seed123_n40.json"))


def test_seed_override_changes_filename(lin_cfg):
    cfg, out = lin_cfg
    assert main(["estimate", "--config", cfg, "--event", "terminal_mode:1,0.0",
                 "--method", "plain", "--n", "40", "--seed", "999"]) == 0
    assert os.path.exists(os.path.join(out, "estimate_plain_seed999_n40.json"))


def test_manifest_round_trip_reproducibility(lin_cfg):
    cfg, out = lin_cfg
    args = ["simulate", "--config", cfg, "--store-stride", "20"]
    assert main(args) == 0
    first = open(os.path.join(out, "bundle_seed123.csv")).read()
    first_manifest = open(os.path.join(out, "manifest.json")).read()
    assert main(args) == 0
    second = open(os.path.join(out, "bundle_seed123.csv")).read()
    assert first == second
    assert open(os.path.join(out, "manifest.json")).read() == first_manifest


def test_env_seed_fallback(tmp_path, monkeypatch):
    out = tmp_path / "out"
    cfg_text = LIN_CFG.format(out=out).replace("seed = 123\n", "")
    path = tmp_path / "noseed.cfg"
    path.write_text(cfg_text)
    monkeypatch.setenv("MDSPDE_SEED", "777")
    assert main(["estimate", "--config", str(path), "--event", "terminal_mode:1,0.0",
                 "--method", "plain", "--n", "20"]) == 0
    assert os.path.exists(os.path.join(str(out), "estimate_plain_seed777_n20.json"))
