"""Acceptance suite: one verdict line per criterion, printed in the summary."""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from eventdeblur.edi import edi_deblur, expand_video, frame_windows, stitch
from eventdeblur.events import EventIndex, events_between, parse_frame_manifest
from eventdeblur.imaging import IDENTICAL, psnr, read_pgm, ssim
from eventdeblur.integrals import build_exposure_profile, double_integral_J
from eventdeblur.medi import (
    FIB_MAX_N,
    MediProblem,
    TridiagonalSystem,
    continuant,
    normal_diagonal,
    solve_fibonacci_lu,
    solve_oracle,
)
from eventdeblur.optimize import GOLDEN, SearchConfig, fibonacci_search, golden_section

from conftest import C_TRUE, make_index, report


def _fib(k):
    a, b = 0, 1
    for _ in range(k):
        a, b = b, a + b
    return a


def test_solver_oracle_equivalence():
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 41))
        rhs = rng.normal(0.0, 2.0, n)
        system = TridiagonalSystem(normal_diagonal(n), -np.ones(n - 1), rhs)
        x, ref = solve_fibonacci_lu(system), solve_oracle(system)
        worst = max(worst, float(np.max(np.abs(x - ref)) / np.max(np.abs(ref))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 5.0
    report("solver oracle equivalence", ok, f"max rel diff {worst:.2e} (<= 1e-9), {elapsed:.2f} s (< 5 s)")
    assert ok


def test_fibonacci_determinant_identity():
    start = time.perf_counter()
    dets = [continuant(normal_diagonal(n), -np.ones(n - 1)) for n in range(2, FIB_MAX_N + 1)]
    elapsed = time.perf_counter() - start
    expected = [_fib(2 * n) for n in range(2, FIB_MAX_N + 1)]
    ok = dets == expected and dets[:3] == [3, 8, 21] and elapsed < 1.0
    report("Fibonacci determinant identity", ok, f"n = 2..{FIB_MAX_N} exact, {elapsed * 1e3:.1f} ms (< 1 s)")
    assert ok


def test_trivial_fixed_points(bar_dataset):
    data = bar_dataset
    frames, index = data.frames, data.index
    empty = EventIndex.empty(index.resolution)
    checks = {}
    checks["EDI c=0"] = all(np.array_equal(edi_deblur(fr, index, 0.0).image, fr.image) for fr in frames)
    checks["mEDI c=0"] = all(
        np.array_equal(lf.image, fr.image) for lf, fr in zip(MediProblem(frames, index).reconstruct(0.0), frames)
    )
    checks["EDI no events"] = all(np.array_equal(edi_deblur(fr, empty, C_TRUE).image, fr.image) for fr in frames)
    checks["mEDI no events"] = all(
        np.array_equal(lf.image, fr.image) for lf, fr in zip(MediProblem(frames, empty).reconstruct(C_TRUE), frames)
    )
    gap = max(
        float(np.max(np.abs(MediProblem([fr], index).reconstruct(C_TRUE)[0].log_image - edi_deblur(fr, index, C_TRUE).log_image)))
        for fr in frames
    )
    checks["n=1 mEDI == EDI"] = gap <= 1e-12
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    report("trivial fixed points", ok, f"{len(checks) - len(failed)}/{len(checks)} exact, n=1 gap {gap:.1e}" + (f"; failed {failed}" if failed else ""))
    assert ok


def test_log_update_identity(bar_dataset):
    data = bar_dataset
    windows = frame_windows([fr.f for fr in data.frames], data.frames[0].T)
    seqs = []
    for i, (fr, w) in enumerate(zip(data.frames, windows)):
        latent = edi_deblur(fr, data.index, C_TRUE)
        latent.source = i
        seqs.append(expand_video(latent, data.index, w, 75))
    video = stitch(seqs)
    worst = 0.0
    pairs = 0
    for seq in seqs:
        for a, b in zip(seq, list(seq)[1:]):
            diff = b.log_image - a.log_image
            worst = max(worst, float(np.max(np.abs(diff - C_TRUE * data.index.count_image(a.timestamp, b.timestamp)))))
            pairs += 1
    rng = np.random.default_rng(1)
    for _ in range(50):
        k = int(rng.integers(len(seqs)))
        seq = seqs[k]
        i, j = sorted(rng.choice(len(seq), 2, replace=False))
        diff = seq[j].log_image - seq[i].log_image
        worst = max(worst, float(np.max(np.abs(diff - C_TRUE * data.index.count_image(seq[i].timestamp, seq[j].timestamp)))))
        pairs += 1
    # the per-pixel query agrees with the image-wide counts
    a, b = seqs[4][0], seqs[4][-1]
    for x, y in [(0, 0), (20, 31), (40, 10), (63, 63)]:
        n = events_between(data.index, (x, y), a.timestamp, b.timestamp)
        worst = max(worst, abs(b.log_image[y, x] - a.log_image[y, x] - C_TRUE * n))
    ok = worst <= 1e-12
    report("log-update identity", ok, f"max error {worst:.1e} (<= 1e-12) over {pairs} frame pairs, {len(video)} frames")
    assert ok


def _riemann_J(events, f, T, c, steps=1_000_000):
    dt = T / steps
    t = f - T / 2 + (np.arange(steps) + 0.5) * dt
    E = np.zeros(steps)
    for te, s in events:
        if te > f:
            E += s * (t >= te)
        else:
            E -= s * (t < te)
    return float(np.exp(c * E).sum() * dt / T)


def test_double_integral_exactness():
    rng = np.random.default_rng(7)
    f, T = 1.5, 0.011
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        count = int(rng.integers(1, 6))
        events = list(zip(rng.uniform(f - T / 2, f + T / 2, count).tolist(), rng.choice([-1, 1], count).tolist()))
        c = float(rng.uniform(0.05, 0.6))
        index = make_index([(t, 0, 0, s) for t, s in events], (1, 1))
        got = double_integral_J(build_exposure_profile(index, (0, 0), f, T), c)
        ref = _riemann_J(events, f, T, c)
        worst = max(worst, abs(got - ref) / abs(ref))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 10.0
    report("double-integral exactness", ok, f"max rel diff {worst:.1e} (<= 1e-6) on 100 placements, {elapsed:.2f} s (< 10 s)")
    assert ok


def _cli(*args):
    res = subprocess.run([sys.executable, "-m", "eventdeblur.cli", *args], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    return res


def _mean_psnr(ref_dir: Path, test_dir: Path, names) -> float:
    values = [psnr(read_pgm(ref_dir / n), read_pgm(test_dir / n)) for n in names]
    return float(np.mean(values))


def test_scaled_synthetic_benchmark(tmp_path):
    data, out = tmp_path / "data", tmp_path / "run"
    start = time.perf_counter()
    _cli("simulate", "--out", str(data), "--scene", "translating-bar", "--size", "64", "--frames", "110", "--blur-span", "11", "--c", str(C_TRUE))
    _cli(
        "reconstruct", "--out", str(out), "--events", str(data / "events.txt"), "--frames", str(data / "blurred" / "frames.txt"),
        "--mode", "medi", "--c", "auto",
    )
    elapsed = time.perf_counter() - start
    manifest = json.loads((out / "run.json").read_text())
    names = [fr.name for fr in parse_frame_manifest(data / "blurred" / "frames.txt")]
    c_err = (manifest["c"] - C_TRUE) / C_TRUE
    latent = _mean_psnr(data / "gt", out / "latent", names)
    blurred = _mean_psnr(data / "gt", data / "blurred", names)
    per_frame = manifest["frames_per_blurred"]
    checks = [abs(c_err) <= 0.15, latent >= blurred + 3.0, per_frame >= 100, elapsed < 60.0]
    ok = all(checks)
    report(
        "scaled analogue",
        ok,
        f"c = {manifest['c']:.4f} ({c_err:+.1%} of {C_TRUE}, <= 15%), PSNR {latent:.2f} vs {blurred:.2f} dB "
        f"(gain {latent - blurred:.2f} >= 3), {per_frame:.1f} video frames per blurred (>= 100), {elapsed:.1f} s (< 60 s)",
    )
    assert ok


def test_search_correctness():
    quad = lambda c: (c - 0.23) ** 2  # noqa: E731
    lo, hi = 0.01, 1.0
    golden = golden_section(quad, SearchConfig((lo, hi), 1e-4))
    fib = fibonacci_search(quad, SearchConfig((lo, hi), 1e-3))
    g_err, f_err = abs(golden.c_star - 0.23), abs(fib.c_star - 0.23)
    contraction = max(abs(w - (hi - lo) * GOLDEN**k) for k, w in enumerate(golden.widths))
    ok = g_err <= 1e-4 and f_err <= 1e-3 and contraction <= 1e-12
    report(
        "search correctness",
        ok,
        f"golden |err| {g_err:.1e} (<= 1e-4), Fibonacci |err| {f_err:.1e} (<= 1e-3), contraction error {contraction:.1e} (<= 1e-12)",
    )
    assert ok


def test_metrics_sanity():
    img = np.random.default_rng(0).random((32, 32))
    zeros = np.zeros((16, 16))
    p_self, s_self = psnr(img, img), ssim(img, img)
    p20 = psnr(zeros, np.full((16, 16), 0.1))
    ok = p_self == IDENTICAL and s_self == 1.0 and abs(p20 - 20.0) <= 1e-12
    report("metrics sanity", ok, f"self PSNR {'identical' if p_self == IDENTICAL else p_self}, self SSIM {s_self}, MSE 0.01 -> {p20!r} dB")
    assert ok
