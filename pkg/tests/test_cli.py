import json
import subprocess
import sys

import numpy as np
import pytest

from eventdeblur import __version__
from eventdeblur.cli import EXIT_FLAGS, EXIT_IO, EXIT_NONFINITE, EXIT_OK, main
from eventdeblur.events import parse_frame_manifest, read_event_file
from eventdeblur.imaging import read_pgm


def _simulate(out, *extra):
    args = ["simulate", "--out", str(out), "--size", "32", "--frames", "55", "--blur-span", "11", "--c", "0.23"]
    assert main(args + list(extra)) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    return _simulate(tmp_path_factory.mktemp("sim") / "data")


def _inputs(d):
    return ["--events", str(d / "events.txt"), "--frames", str(d / "blurred" / "frames.txt")]


def _pgms(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.pgm"))}


def test_simulate_example(tmp_path):
    out = tmp_path / "a" / "b"
    assert main(["simulate", "--out", str(out), "--scene", "translating-bar", "--size", "64", "--frames", "110", "--blur-span", "11", "--c", "0.23"]) == EXIT_OK
    assert len(parse_frame_manifest(out / "blurred" / "frames.txt")) == 10
    assert len(parse_frame_manifest(out / "gt" / "frames.txt")) == 10
    assert len(read_event_file(out / "events.txt")) > 0
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["config"]["c"] == 0.23


def test_simulate_static_scene(tmp_path):
    out = _simulate(tmp_path / "s", "--speed", "0")
    assert len(read_event_file(out / "events.txt")) == 0
    assert _pgms(out / "blurred") == _pgms(out / "gt")


def test_simulate_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", "--out", str(blocker / "sub"), "--size", "8", "--frames", "11"]) == EXIT_IO
    assert "error" in capsys.readouterr().err


def test_simulate_bad_flags():
    assert main(["simulate", "--out", "x", "--blur-span", "4"]) == EXIT_FLAGS
    assert main(["simulate", "--out", "x", "--frames", "5"]) == EXIT_FLAGS
    assert main(["simulate", "--out", "x", "--c", "-1"]) == EXIT_FLAGS
    assert main(["simulate", "--out", "x", "--scene", "spiral"]) == EXIT_FLAGS


def test_reconstruct_edi_c_zero_returns_inputs(sim_dir, tmp_path):
    out = tmp_path / "r"
    assert main(["reconstruct", "--out", str(out), *_inputs(sim_dir), "--mode", "edi", "--c", "0", "--no-video"]) == EXIT_OK
    assert _pgms(out / "latent") == _pgms(sim_dir / "blurred")
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["c"] == [0.0] * 5
    assert manifest["c_estimated"] is False


def test_reconstruct_medi_single_frame_matches_edi(sim_dir, tmp_path):
    lines = (sim_dir / "blurred" / "frames.txt").read_text().splitlines()
    one = sim_dir / "blurred" / "one.txt"
    one.write_text("\n".join([lines[0], lines[3]]) + "\n")
    args = ["--events", str(sim_dir / "events.txt"), "--frames", str(one), "--c", "0.3", "--no-video"]
    assert main(["reconstruct", "--out", str(tmp_path / "m"), "--mode", "medi", *args]) == EXIT_OK
    assert main(["reconstruct", "--out", str(tmp_path / "e"), "--mode", "edi", *args]) == EXIT_OK
    a, b = _pgms(tmp_path / "m" / "latent"), _pgms(tmp_path / "e" / "latent")
    assert len(a) == 1 and a == b


def test_reconstruct_auto_writes_outputs(sim_dir, tmp_path):
    out = tmp_path / "auto"
    assert main(["reconstruct", "--out", str(out), *_inputs(sim_dir), "--mode", "medi", "--c", "auto"]) == EXIT_OK
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["c_estimated"] is True
    assert 0.01 <= manifest["c"] <= 1.0
    assert (out / "trace.txt").exists() and (out / "trace.json").exists()
    rows = [line.split() for line in (out / "video" / "frames.txt").read_text().splitlines() if not line.startswith("#")]
    assert len(rows) == manifest["video_frames"] > 5
    assert np.all(np.diff([float(t) for t, _ in rows]) > 0)
    assert all((out / "video" / name).exists() for _, name in rows)
    # latent manifest carries the exposure so it can be fed back in
    assert parse_frame_manifest(out / "latent" / "frames.txt")[0].T == pytest.approx(0.011)


def test_reconstruct_edi_auto_per_frame_traces(sim_dir, tmp_path):
    out = tmp_path / "ea"
    assert main(["reconstruct", "--out", str(out), *_inputs(sim_dir), "--mode", "edi", "--c", "auto", "--no-video", "--threads", "2"]) == EXIT_OK
    manifest = json.loads((out / "run.json").read_text())
    assert len(manifest["c"]) == 5
    assert len(list(out.glob("trace_*.txt"))) == 5


def test_reconstruct_reproducible(sim_dir, tmp_path):
    for name in ("x", "y"):
        assert main(["reconstruct", "--out", str(tmp_path / name), *_inputs(sim_dir), "--c", "auto", "--threads", "3"]) == EXIT_OK
    for sub in ("latent", "video"):
        assert _pgms(tmp_path / "x" / sub) == _pgms(tmp_path / "y" / sub)
    assert (tmp_path / "x" / "trace.txt").read_bytes() == (tmp_path / "y" / "trace.txt").read_bytes()


def test_reconstruct_non_finite_exit(sim_dir, tmp_path, capsys):
    out = tmp_path / "nf"
    code = main(["reconstruct", "--out", str(out), *_inputs(sim_dir), "--mode", "edi", "--c", "500", "--no-video"])
    assert code == EXIT_NONFINITE
    assert "error" in capsys.readouterr().err


def test_reconstruct_missing_inputs(tmp_path):
    code = main(["reconstruct", "--out", str(tmp_path / "o"), "--events", str(tmp_path / "none.txt"), "--frames", str(tmp_path / "none2.txt")])
    assert code == EXIT_IO


def test_sweep_writes_previews(sim_dir, tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", "--out", str(out), *_inputs(sim_dir), "--grid", "0.10,0.22,0.23,0.60"]) == EXIT_OK
    names = sorted(p.name for p in (out / "previews").glob("*.pgm"))
    assert names == ["c_0.1000.pgm", "c_0.2200.pgm", "c_0.2300.pgm", "c_0.6000.pgm"]
    assert "argmin c" in capsys.readouterr().out
    assert len((out / "trace.txt").read_text().splitlines()) == 4


def test_sweep_range_grid_and_errors(sim_dir, tmp_path):
    assert main(["sweep", "--out", str(tmp_path / "g"), *_inputs(sim_dir), "--grid", "0.1:0.5:5", "--mode", "medi"]) == EXIT_OK
    assert len(list((tmp_path / "g" / "previews").glob("*.pgm"))) == 5
    assert main(["sweep", "--out", str(tmp_path / "h"), *_inputs(sim_dir), "--grid", "0.5,0.1"]) == EXIT_FLAGS
    assert main(["sweep", "--out", str(tmp_path / "h"), *_inputs(sim_dir), "--preview-frame", "9"]) == EXIT_FLAGS


def test_metrics_identical(sim_dir, tmp_path, capsys):
    d = sim_dir / "gt"
    assert main(["metrics", str(d), str(d), "--out", str(tmp_path / "m")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "identical" in out
    summary = json.loads(out.strip().splitlines()[-1])
    assert summary["mean_psnr"] == "identical"
    assert summary["mean_ssim"] == 1.0
    assert json.loads((tmp_path / "m" / "metrics.json").read_text()) == summary


def test_metrics_reports_gain(sim_dir, capsys):
    assert main(["metrics", str(sim_dir / "gt"), str(sim_dir / "blurred")]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["frames"] == 5
    assert 0 < summary["mean_psnr"] < 100


def test_metrics_count_mismatch(sim_dir, tmp_path):
    partial = tmp_path / "partial"
    partial.mkdir()
    for p in sorted((sim_dir / "gt").glob("*.pgm"))[:3]:
        (partial / p.name).write_bytes(p.read_bytes())
    assert main(["metrics", str(sim_dir / "gt"), str(partial)]) == EXIT_FLAGS


def test_help_version_and_unknown_flag(capsys):
    for argv in (["--help"], ["simulate", "--help"], ["reconstruct", "--help"], ["sweep", "--help"], ["metrics", "--help"]):
        assert main(argv) == EXIT_OK
    assert main(["--version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out
    assert main(["reconstruct", "--version"]) == EXIT_OK
    assert main(["simulate", "--out", "x", "--bogus"]) == EXIT_FLAGS
    assert main([]) == EXIT_FLAGS


def test_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("EVENTDEBLUR_SPEED", "0")
    out = tmp_path / "env"
    assert main(["simulate", "--out", str(out), "--size", "16", "--frames", "11"]) == EXIT_OK
    assert len(read_event_file(out / "events.txt")) == 0
    assert json.loads((out / "run.json").read_text())["config"]["speed"] == 0.0
    # explicit flags still win over the environment
    assert main(["simulate", "--out", str(tmp_path / "flag"), "--size", "16", "--frames", "11", "--speed", "1"]) == EXIT_OK
    assert len(read_event_file(tmp_path / "flag" / "events.txt")) > 0


def test_env_override_rejects_bad_value(monkeypatch):
    monkeypatch.setenv("EVENTDEBLUR_SCENE", "spiral")
    assert main(["simulate", "--out", "x"]) == EXIT_FLAGS


def test_console_script_runs():
    res = subprocess.run([sys.executable, "-m", "eventdeblur.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert __version__ in res.stdout


def test_reconstructed_frames_readable(sim_dir, tmp_path):
    out = tmp_path / "rd"
    assert main(["reconstruct", "--out", str(out), *_inputs(sim_dir), "--mode", "edi", "--c", "0.23", "--no-video"]) == EXIT_OK
    for fr in parse_frame_manifest(out / "latent" / "frames.txt"):
        img = read_pgm(out / "latent" / fr.name)
        assert img.shape == (32, 32)
