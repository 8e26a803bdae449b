import json

import pytest

from kickwave import cli, manifest
from kickwave.config import ConfigError, default_config, from_dict, loads

SHAPE = """\
schema_version: 1
grid: {h: 0.03125, margin: 4.0}
experiment:
  kind: shape
  seed_count: 2
  params: {vs: [0.0, 0.5], n: 8, diagnostics: false}
"""

NO_PAIR = """\
schema_version: 1
environment: {intensity: 0.0}
grid: {h: 0.03125, margin: 4.0}
experiment:
  kind: busemann
  params: {horizon: 16, points: [[0, 0.0], [0, 1.0]], refine: false}
"""


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# config

def test_defaults_fill_every_field():
    cfg = default_config("shape")
    assert cfg.kind == "shape" and cfg.seeds == [0]
    assert cfg.params["vs"] == [0.0, 0.5, 1.0]
    assert cfg.policy.h == 2.0**-6


def test_unknown_key_reports_path_and_line():
    with pytest.raises(ConfigError) as e:
        loads("schema_version: 1\ngrid:\n  h: 0.01\n  hh: 2\n")
    assert e.value.path == "grid.hh" and e.value.line == 4


def test_unknown_param_key_rejected():
    with pytest.raises(ConfigError) as e:
        loads("experiment:\n  kind: shape\n  params: {nn: 3}\n")
    assert e.value.path == "experiment.params.nn"


@pytest.mark.parametrize("text", [
    "schema_version: 2\n",
    "grid: {h: -1}\n",
    "action: {p: 1.5}\n",
    "experiment: {kind: nope}\n",
    "experiment: {seeds: [1, 1]}\n",
    "environment: {intensity: -1}\n",
    "a: [unclosed\n",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError):
        loads("grid: {h: 0.1}\ngrid: {h: 0.2}\n")


def test_hash_is_stable_and_seed_sensitive():
    a, b = loads(SHAPE), loads(SHAPE)
    assert a.hash() == b.hash()
    c = a.with_seed(10)
    assert c.seeds == [10, 11] and c.hash() != a.hash()
    assert from_dict(a.canonical()).hash() == a.hash()


# cli

def test_shape_run_writes_manifest(tmp_path):
    out = tmp_path / "o"
    code = cli.main(["shape", "--config", _write(tmp_path, SHAPE), "--out", str(out)])
    assert code == 0
    man = manifest.load(out)
    assert man["experiment"] == "shape" and man["seeds"] == [0, 1]
    assert man["outputs"] and manifest.digest_mismatches(man, out) == []


def test_seed_flag_shifts_seeds(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["shape", "--config", _write(tmp_path, SHAPE), "--seed", "7", "--out", str(out)]) == 0
    assert manifest.load(out)["seeds"] == [7, 8]


def test_env_var_overrides_out(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("KICKWAVE_OUT", str(target))
    assert cli.main(["shape", "--config", _write(tmp_path, SHAPE), "--out", str(tmp_path / "x")]) == 0
    assert (target / "manifest.json").exists()
    assert not (tmp_path / "x").exists()


def test_flagged_run_exits_2(tmp_path):
    out = tmp_path / "o"
    code = cli.main(["busemann", "--config", _write(tmp_path, NO_PAIR), "--out", str(out)])
    assert code == 2
    assert "no_pairing" in manifest.load(out)["flags"]


def test_config_errors_exit_1(tmp_path, capsys):
    bad = _write(tmp_path, "grid: {hh: 1}\n")
    assert cli.main(["shape", "--config", bad, "--out", str(tmp_path / "o")]) == 1
    assert "grid.hh" in capsys.readouterr().err


def test_kind_mismatch_exits_1(tmp_path):
    assert cli.main(["evolve", "--config", _write(tmp_path, SHAPE), "--out", str(tmp_path / "o")]) == 1


def test_missing_config_exits_1(tmp_path):
    assert cli.main(["shape", "--config", str(tmp_path / "none.yaml")]) == 1


def test_bad_workers_exits_1(tmp_path):
    assert cli.main(["shape", "--config", _write(tmp_path, SHAPE), "--workers", "0"]) == 1


def test_workers_do_not_change_outputs(tmp_path):
    cfg = _write(tmp_path, SHAPE)
    assert cli.main(["shape", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["shape", "--config", cfg, "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    assert manifest.same(manifest.load(tmp_path / "a"), manifest.load(tmp_path / "b"))


def test_verify_replays_manifest(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["shape", "--config", _write(tmp_path, SHAPE), "--out", str(out)]) == 0
    vout = tmp_path / "v"
    code = cli.main(["verify", "--manifest", str(out), "--skip-battery", "--out", str(vout)])
    assert code == 0
    rep = json.loads((vout / "verify_report.json").read_text())
    assert rep["replay"]["identical"] is True


def test_verify_detects_tampered_manifest(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["shape", "--config", _write(tmp_path, SHAPE), "--out", str(out)]) == 0
    man = manifest.load(out)
    name = sorted(man["outputs"])[0]
    man["outputs"][name] = "0" * 64
    manifest.write(man, out)
    code = cli.main(["verify", "--manifest", str(out), "--skip-battery", "--out", str(tmp_path / "v")])
    assert code == 2


def test_usage_errors_exit_1():
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["shape"]) == 1


def test_help_exits_0(capsys):
    assert cli.main(["--help"]) == 0
    assert "verify" in capsys.readouterr().out
