import json
import subprocess
import sys

import pytest
import yaml

from adiabatic_ness.cli import main
from adiabatic_ness.errors import ConfigError
from adiabatic_ness.runner import (SCHEMA_VERSION, _exit_code, dump_config, load_config,
                                   presets, validate_config)

ARTIFACTS = ("ness_report.csv", "certificates.csv", "rate_report.csv", "diagnostics.csv")


def _small():
    return presets()["small"]


def test_presets_validate():
    for name, raw in presets().items():
        cfg = validate_config(raw)
        assert cfg.etas == sorted(cfg.etas, reverse=True), name
        assert len(cfg.content_hash()) == 40


@pytest.mark.parametrize("patch, field", [
    ({"fermi": {"kT": -0.1, "mu": 0.3}}, "fermi.kT"),
    ({"fermi": {"mu": 0.3}}, "fermi.kT"),
    ({"etas": []}, "etas"),
    ({"etas": [0.1, -0.2]}, "etas"),
    ({"etas": [0.1, 0.1]}, "etas"),
    ({"schema_version": 99}, "schema_version"),
    ({"tolerances": {"bogus": 1.0}}, "tolerances.bogus"),
    ({"tolerances": {"hermiticity": 1e-20}}, "tolerances.hermiticity"),
    ({"geometry": {"h": 1.0, "L": 100.5, "a": 2.0, "a_tilde": 2.5}}, "geometry"),
    ({"bias": {"v_plus": "abc"}}, "bias.v_plus"),
    ({"panel": {"delta": 0.05}}, "panel"),
])
def test_config_errors_name_the_field(patch, field):
    raw = {**_small(), **patch}
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        validate_config(raw)


def test_null_bias_block_accepted():
    validate_config({**_small(), "bias": None})


def test_tolerance_scale():
    base = validate_config(_small())
    scaled = validate_config(_small(), tolerance_scale=10.0)
    assert scaled.tolerances["commutator"] == pytest.approx(10 * base.tolerances["commutator"])
    assert scaled.tolerances["slack"] == base.tolerances["slack"]
    with pytest.raises(ConfigError):
        validate_config(_small(), tolerance_scale=0.0)


def test_yaml_round_trip(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(_small()))
    cfg = load_config(p)
    assert cfg.content_hash() == validate_config(_small()).content_hash()
    p.write_text("geometry: [unclosed")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(p)


def test_exit_code_precedence():
    bad = {"x": {"pass": False}}
    assert _exit_code([], {}) == 0
    assert _exit_code([], bad) == 1
    assert _exit_code([{"error": "NumericalError"}], bad) == 3
    assert _exit_code([{"config": True}, {"error": "X"}], bad) == 2


def test_cli_presets(capsys):
    assert main(["presets"]) == 0
    assert "reference-desk" in capsys.readouterr().out
    assert main(["presets", "--preset", "small"]) == 0
    assert yaml.safe_load(capsys.readouterr().out)["schema_version"] == SCHEMA_VERSION
    assert main(["presets", "--preset", "nope"]) == 2


def test_cli_config_error_writes_manifest(tmp_path):
    raw = {**_small(), "fermi": {"kT": -1.0, "mu": 0.3}}
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(raw))
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(p), "--out", str(out)]) == 2
    man = json.loads((out / "manifest").read_text())
    assert man["exit_code"] == 2 and "fermi.kT" in man["errors"][0]["message"]
    assert main(["sweep", "--preset", "small", "--config", str(p)]) == 2
    assert main(["sweep", "--preset", "unknown"]) == 2


def test_sweep_deterministic_across_workers(tmp_path):
    outs = []
    for i, w in enumerate((1, 3, 1)):
        out = tmp_path / f"run{i}"
        assert main(["sweep", "--preset", "small", "--out", str(out), "--workers", str(w)]) == 0
        outs.append(out)
    for name in ARTIFACTS:
        ref = (outs[0] / name).read_bytes()
        assert all((o / name).read_bytes() == ref for o in outs[1:]), name
    man = json.loads((outs[0] / "manifest").read_text())
    assert man["exit_code"] == 0 and man["verdicts"]["certificates"]["pass"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "adiabatic_ness", "presets"],
                       capture_output=True, text=True, timeout=120)
    assert r.returncode == 0 and "null-bias" in r.stdout
