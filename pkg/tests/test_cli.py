"""Command-line contract: files, manifests and exit codes."""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np
import pytest

from lorafb.cli import (
    EXIT_NO_RESULT,
    EXIT_OK,
    EXIT_SUSPECTED,
    EXIT_USAGE,
    RunManifest,
    TraceFile,
    main,
    manifest_path,
)
from lorafb.signal import IqTrace


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _synth(tmp_path, capsys, name="t.iq", *extra):
    out = tmp_path / name
    code, _, err = _run(capsys, "synth", "--seed", 1, "--out", out, *extra)
    assert code == EXIT_OK, err
    return out


def test_synth_sample_count(tmp_path, capsys):
    out = tmp_path / "a.iq"
    code, stdout, _ = _run(
        capsys, "synth", "--sf", 7, "--bw", 125000, "--fs", 2000000, "--preamble", 8, "--symbols", "",
        "--seed", 0, "--out", out,
    )
    assert code == EXIT_OK
    assert out.stat().st_size == 16384 * 8
    assert len(TraceFile.read(out).trace) == 16384 == 8 * 2048
    assert json.loads(stdout)["samples"] == 16384


def test_synth_missing_out_is_usage_error(capsys):
    code, _, err = _run(capsys, "synth", "--sf", 7, "--seed", 1)
    assert code == EXIT_USAGE
    assert "usage" in err and "--out" in err


def test_synth_invalid_flags(tmp_path, capsys):
    code, _, err = _run(capsys, "synth", "--sf", 13, "--seed", 1, "--out", tmp_path / "x.iq")
    assert code == EXIT_USAGE and "spreading factor" in err
    code, _, _ = _run(capsys, "synth", "--out", tmp_path / "x.iq")
    assert code == EXIT_USAGE  # --seed is mandatory


def test_trace_file_round_trip_bytes(tmp_path, capsys):
    a = _synth(tmp_path, capsys, "a.iq", "--symbols", "1,2,3", "--snr", "3", "--lead", "100")
    tf = TraceFile.read(a)
    b = tmp_path / "b.iq"
    tf.write(b)
    assert a.read_bytes() == b.read_bytes()
    assert TraceFile.sidecar_path(a).read_text() == TraceFile.sidecar_path(b).read_text()
    # and once more through the reader
    TraceFile.read(b).write(tmp_path / "c.iq")
    assert (tmp_path / "c.iq").read_bytes() == a.read_bytes()


def test_trace_file_layout(tmp_path):
    x = IqTrace(1e6, np.array([1 + 2j, -3.5 + 0.25j]))
    p = tmp_path / "x.iq"
    TraceFile(x, {"W": 125e3, "S": 7}).write(p)
    np.testing.assert_array_equal(np.frombuffer(p.read_bytes(), "<f4"), [1, 2, -3.5, 0.25])
    meta = json.loads((tmp_path / "x.meta.json").read_text())
    assert meta["f_s"] == 1e6


def test_trace_file_rejects(tmp_path):
    p = tmp_path / "bad.iq"
    p.write_bytes(b"\0" * 12)
    (tmp_path / "bad.meta.json").write_text(json.dumps({"f_s": 1e6}))
    with pytest.raises(ValueError):
        TraceFile.read(p)
    p.write_bytes(b"\0" * 16)
    (tmp_path / "bad.meta.json").write_text(json.dumps({"f_s": 0}))
    with pytest.raises(ValueError):
        TraceFile.read(p)


def test_manifest_checksums(tmp_path, capsys):
    a = _synth(tmp_path, capsys)
    man = RunManifest.read(manifest_path(a))
    assert man.command == "synth" and man.seed == 1
    assert man.outputs[str(a)] == hashlib.sha256(a.read_bytes()).hexdigest()
    assert man.params["sf"] == 7 and man.version


def test_rerun_reproduces(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    _run(capsys, "synth", "--seed", 5, "--snr", "-3", "--out", "r.iq")
    code, _, _ = _run(capsys, "rerun", "r.manifest.json")
    assert code == EXIT_OK
    (tmp_path / "r.iq").write_bytes(b"\0" * 8)
    man = RunManifest.read("r.manifest.json")
    man.argv = ["synth", "--seed", "6", "--snr", "-3", "--out", "r.iq", "--manifest", "other.json"]
    man.write("r.manifest.json")
    code, _, err = _run(capsys, "rerun", "r.manifest.json")
    assert code == 1 and "mismatch" in err


@pytest.mark.parametrize("method", ["fft", "linreg", "lsq"])
def test_fb_on_synthetic_trace(tmp_path, capsys, method):
    a = _synth(tmp_path, capsys, "a.iq", "--delta-tx", "-20000")
    code, stdout, _ = _run(capsys, "fb", a, "--method", method)
    rep = json.loads(stdout)
    assert code == EXIT_OK and rep["method"] == method and rep["onset"] == 0
    if method == "fft":
        assert (rep["delta_hz"] / 976.5625).is_integer()
        assert abs(rep["delta_hz"] + 20000) <= 488.3
    else:
        assert rep["delta_hz"] == pytest.approx(-20000, abs=10)


def test_fb_zero_bias_round_trip(tmp_path, capsys):
    a = _synth(tmp_path, capsys, "z.iq", "--delta-tx", "0")
    rep = json.loads(_run(capsys, "fb", a, "--method", "lsq")[1])
    assert abs(rep["delta_hz"]) < 10


def test_fb_default_chirp_index_is_second(tmp_path, capsys):
    a = _synth(tmp_path, capsys, "a.iq", "--delta-tx", "-7000", "--lead", "4096", "--snr", "10")
    rep_default = json.loads(_run(capsys, "fb", a, "--out", tmp_path / "r.json")[1])
    rep_one = json.loads(_run(capsys, "fb", a, "--chirp-index", "1")[1])
    rep_zero = json.loads(_run(capsys, "fb", a, "--chirp-index", "0")[1])
    assert rep_default == rep_one
    assert rep_default != rep_zero
    man = RunManifest.read(tmp_path / "r.manifest.json")
    assert man.params["chirp_index"] == 1


def test_fb_with_sfd_and_noise(tmp_path, capsys):
    a = _synth(
        tmp_path, capsys, "s.iq", "--sf", "12", "--fs", "500000", "--delta-tx", "-20000", "--sfd", "2",
        "--lead", "3000", "--snr", "-10", "--symbols", "5,6",
    )
    rep = json.loads(_run(capsys, "fb", a)[1])
    assert rep["onset"] == 3000
    assert rep["delta_hz"] == pytest.approx(-20000, abs=50)


def test_fb_no_frame(tmp_path, capsys):
    p = tmp_path / "zero.iq"
    TraceFile(IqTrace(1e6, np.zeros(5000)), {"W": 125e3, "S": 7}).write(p)
    code, _, err = _run(capsys, "fb", p)
    assert code == EXIT_NO_RESULT and "NoFrame" in err


def test_grid_command(tmp_path, capsys):
    out = tmp_path / "g.csv"
    code, stdout, _ = _run(
        capsys, "grid", "--scr-min", "-20", "--scr-max", "20", "--scr-step", "20", "--rtm-min", "0.05",
        "--rtm-max", "0.2", "--rtm-step", "0.15", "--trials", "3", "--seed", "1", "--out", out,
    )
    assert code == EXIT_OK
    rows = [r.split(",") for r in out.read_text().splitlines()]
    assert rows[0] == ["scr_db", "0.05", "0.2"]
    assert rows[1][1] == "CollisionReceived"
    assert rows[2][2] in ("StealthyDrop", "BadFrame")
    assert rows[3][1:] == ["VictimReceived", "VictimReceived"]
    man = RunManifest.read(tmp_path / "g.manifest.json")
    assert set(man.outputs) == {str(out), str(tmp_path / "g.counts.json")}


def test_area_command(tmp_path, capsys):
    geo = tmp_path / "geo.json"
    geo.write_text(json.dumps({"p_c_dbm": 2.0, "pathloss": {"f_mhz": 868.0, "min_height_m": 1.0}}))
    out = tmp_path / "area.json"
    code, stdout, _ = _run(capsys, "area", "--geometry", geo, "--grid-res", "4", "--masks", "--out", out)
    assert code == EXIT_OK
    rep = json.loads(out.read_text())
    assert 40e3 < rep["core_area_m2"] < 50e3
    core = np.loadtxt(tmp_path / "area.core.csv", delimiter=",")
    assert core.sum() * 16 == rep["core_area_m2"]


def test_area_rejects_unknown_key(tmp_path, capsys):
    geo = tmp_path / "geo.json"
    geo.write_text(json.dumps({"gateway_height": 3}))
    assert _run(capsys, "area", "--geometry", geo)[0] == EXIT_USAGE


def test_detect_command_exit_codes(tmp_path, capsys):
    db = tmp_path / "db.json"
    code, _, _ = _run(capsys, "detect", "--db", db, "--device", "d", "--enroll=-20000,-20010,-19990")
    assert code == EXIT_OK
    code, stdout, _ = _run(capsys, "detect", "--db", db, "--device", "d", "--fb", "-20100")
    assert code == EXIT_OK and json.loads(stdout)["verdict"] == "Accept"
    code, stdout, _ = _run(capsys, "detect", "--db", db, "--device", "d", "--fb", "-20600")
    assert code == EXIT_SUSPECTED
    assert json.loads(stdout)["margin_hz"] == pytest.approx(600 - 500 - 25, abs=1e-6)
    assert _run(capsys, "detect", "--db", db, "--device", "nobody", "--fb", "1")[0] == EXIT_NO_RESULT


def test_detect_from_trace(tmp_path, capsys):
    db = tmp_path / "db.json"
    _run(capsys, "detect", "--db", db, "--device", "d", "--enroll=-20000,-20001,-19999")
    a = _synth(tmp_path, capsys, "a.iq", "--delta-tx", "-20700")
    code, stdout, _ = _run(capsys, "detect", a, "--db", db, "--device", "d")
    assert code == EXIT_SUSPECTED
    assert json.loads(stdout)["fb_hz"] == pytest.approx(-20700, abs=10)


def test_windows_command(capsys):
    code, stdout, _ = _run(capsys, "windows", "--sf", 9, "--payload", 30)
    assert code == EXIT_OK and json.loads(stdout)["w3_ms"] == 274
    assert _run(capsys, "windows", "--sf", 10, "--payload", 30)[0] == EXIT_NO_RESULT


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert "lorafb" in capsys.readouterr().out


def test_nonfinite_params_serialise(tmp_path, capsys):
    a = _synth(tmp_path, capsys)
    man = json.loads(manifest_path(a).read_text())
    assert man["params"]["snr"] == str(math.inf)
