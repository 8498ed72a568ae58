import csv
import hashlib
import json

import numpy as np
import pytest

from mhdconvex.cli_io import container
from mhdconvex.cli_io.commands import (build_level0, pack_skew, pack_sym, read_state, unpack_skew,
                                       unpack_sym, write_state)
from mhdconvex.cli_io.config import ConfigError, load, persisted
from mhdconvex.cli_io.main import run
from mhdconvex.cli_io.report import COLUMNS, Report
from mhdconvex.convex_step import causality_fingerprint


def _digests(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir()) if p.is_file()}


def test_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"times": np.linspace(0, 1, 3), "u": rng.standard_normal((3, 3, 4, 4, 4)),
              "c": rng.standard_normal((2, 5)) + 1j * rng.standard_normal((2, 5))}
    p = tmp_path / "a.mhdf"
    digest = container.write(p, arrays, {"kind": "test", "level": 2, "grid": 4})
    got, meta = container.read(p, expect_level=2)
    for k, v in arrays.items():
        assert np.array_equal(got[k], v)
    assert meta["container"]["sha256"] == digest == hashlib.sha256(p.read_bytes()).hexdigest()
    head = json.loads(p.read_bytes()[9:9 + int.from_bytes(p.read_bytes()[5:9], "little")])
    assert head["grid"] == [4, 4, 4] and head["time_samples"] == 3
    assert head["components"]["u"] == [3, 4, 4, 4]


def _kind(fn):
    with pytest.raises(container.ContainerError) as e:
        fn()
    return e.value.kind


def test_container_errors(tmp_path):
    p = tmp_path / "a.mhdf"
    container.write(p, {"times": np.zeros(2), "x": np.ones((2, 8))}, {"kind": "test", "level": 0})
    assert _kind(lambda: container.read(tmp_path / "none.mhdf")) == "missing_file"
    assert _kind(lambda: container.read(p, expect_level=1)) == "level_mismatch"
    body = p.read_bytes()
    p.write_bytes(body[:-8])
    assert _kind(lambda: container.read(p)) == "hash_mismatch"
    side = json.loads(container.sidecar_path(p).read_text())
    side["container"].pop("sha256")
    container.sidecar_path(p).write_text(json.dumps(side))
    assert _kind(lambda: container.read(p)) == "truncated"
    p.write_bytes(b"XXXXX" + body[5:])
    assert _kind(lambda: container.read(p)) == "bad_magic"
    container.sidecar_path(p).write_text("{")
    assert _kind(lambda: container.read(p)) == "bad_sidecar"
    container.sidecar_path(p).unlink()
    assert _kind(lambda: container.read(p)) == "missing_sidecar"
    e = container.ContainerError("x", "msg", p).to_json()
    assert e["error"] == "x" and e["path"] == str(p)


def test_pack_unpack():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 3, 2))
    S, K = A + np.swapaxes(A, 0, 1), A - np.swapaxes(A, 0, 1)
    assert np.array_equal(unpack_sym(pack_sym(S)), S)
    assert np.array_equal(unpack_skew(pack_skew(K)), K)
    assert pack_sym(S).shape == (6, 2) and pack_skew(K).shape == (3, 2)


def test_state_round_trip(tmp_path):
    cfg = load(env={})
    s0 = build_level0(cfg)
    p = tmp_path / "state_q0.mhdf"
    write_state(p, s0, cfg)
    back, bcfg, meta = read_state(p, expect_level=0)
    ts = [0.3, 0.55]
    assert causality_fingerprint(back, ts) == causality_fingerprint(s0, ts)
    assert meta["recipe"] == "level0" and "output" not in bcfg
    side = json.loads(container.sidecar_path(p).read_text())
    side["noise_fingerprint"] = "0" * 64
    container.sidecar_path(p).write_text(json.dumps(side))
    assert _kind(lambda: read_state(p)) == "noise_mismatch"


def test_config_defaults_and_seed_precedence(tmp_path):
    assert load(env={})["seed"] == 7
    assert load(text='{"seed": 11}', env={})["seed"] == 11
    assert load(text='{"seed": 11}', env={"RNG_SEED": "12"})["seed"] == 12
    with pytest.raises(ConfigError):
        load(env={"RNG_SEED": "abc"})
    with pytest.raises(ConfigError):
        load(env={"RNG_SEED": str(2 ** 64)})
    assert persisted(load(env={})).keys() == load(env={}).keys() - {"output"}


def test_config_error_locations(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "grid": 32,\n  "params": {\n    "nu": -1\n  }\n}\n')
    with pytest.raises(ConfigError) as e:
        load(p, env={})
    assert (e.value.line, e.value.column) == (4, 11)
    assert e.value.path == ("params", "nu")
    assert str(e.value).startswith(f"{p}:4:11")
    p.write_text('{\n  "grid": 32,\n  "bogus": 1\n}\n')
    with pytest.raises(ConfigError) as e:
        load(p, env={})
    assert e.value.line == 3 and "bogus" in e.value.message
    p.write_text('{"grid": 32,\n  "seed": [}\n')
    with pytest.raises(ConfigError) as e:
        load(p, env={})
    assert e.value.line == 2
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.json", env={})
    with pytest.raises(ConfigError):
        load(text="[1, 2]", env={})


def test_yaml_config_accepted(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("grid: 16\nseed: 3\n")
    cfg = load(p, env={})
    assert cfg["grid"] == 16 and cfg["seed"] == 3


def test_report_rows_and_csv(tmp_path):
    rep = Report("demo")
    assert rep.bound("a", 1e-13, 1e-12)
    assert not rep.bound("b", 2.0, 1.0, reference=0.5)
    rep.info("c", float("inf"))
    with pytest.raises(ValueError):
        rep.info("a", 1.0)
    assert not rep.passed and rep.failures() == ["b"]
    jp, cp = rep.write(tmp_path)
    with cp.open() as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0].keys()) == COLUMNS
    assert [r["status"] for r in rows] == ["pass", "fail", "info"]
    assert json.loads(jp.read_text())["rows"][2]["measured"] == "inf"


@pytest.mark.parametrize("command", ["geom", "blocks", "noise", "galerkin", "init"])
def test_cli_bit_reproducible(tmp_path, command, monkeypatch, capsys):
    monkeypatch.delenv("RNG_SEED", raising=False)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run([command, "--out", str(a)]) == 0
    assert run([command, "--out", str(b)]) == 0
    da, db = _digests(a), _digests(b)
    assert da and da == db
    assert f"{command}: PASS" in capsys.readouterr().out


def test_cli_seed_changes_noise(tmp_path, monkeypatch):
    monkeypatch.delenv("RNG_SEED", raising=False)
    run(["noise", "--out", str(tmp_path / "a")])
    monkeypatch.setenv("RNG_SEED", "8")
    run(["noise", "--out", str(tmp_path / "b")])
    run(["noise", "--seed", "7", "--out", str(tmp_path / "c")])
    a, b, c = (_digests(tmp_path / x) for x in "abc")
    assert a != b and a == c


def test_cli_invalid_input(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"grid": 30}')
    assert run(["geom", "--config", str(bad), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert json.loads(err.splitlines()[0])["error"] == "config"
    assert run(["geom", "--grid", "10", "--out", str(tmp_path)]) == 2
    assert run(["step", "--out", str(tmp_path)]) == 2
    assert run(["step", str(tmp_path / "none.mhdf"), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err.splitlines()[-2])["error"] == "missing_file"


def test_cli_fault_injection_fails(tmp_path):
    cfg = tmp_path / "f.json"
    cfg.write_text('{"verify": {"fault": "geometry"}}')
    assert run(["geom", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
