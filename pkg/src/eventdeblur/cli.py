"""Command-line entry point: simulate, reconstruct, sweep and metrics.

Every flag can also be set through the environment as
``EVENTDEBLUR_<FLAG>`` (upper case, dashes as underscores); an explicit flag
wins over the environment. Exit codes: 0 ok, 1 I/O or input failure,
2 bad flags, 3 non-finite energy during optimisation.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .edi import LatentSequence, edi_deblur, expand_video, frame_windows, stitch
from .events import EventIndex, ParseError, ValidationError, check_coverage, parse_frame_manifest, read_event_file
from .imaging import IDENTICAL, psnr, read_pgm, ssim, write_pgm
from .integrals import IntegralRangeError
from .medi import DEFAULT_WINDOW, MediProblem
from .optimize import (
    DEFAULT_BRACKET,
    DEFAULT_LAMBDA,
    DEFAULT_TOLERANCE,
    EdiEnergy,
    EnergyTrace,
    NonFiniteEnergyError,
    SearchConfig,
    fibonacci_search,
    golden_section,
    sweep_c,
)
from .simulator import SCENES, SimConfig, make_test_scene, simulate, write_dataset

log = logging.getLogger("eventdeblur")

EXIT_OK, EXIT_IO, EXIT_FLAGS, EXIT_NONFINITE = 0, 1, 2, 3
ENV_PREFIX = "EVENTDEBLUR_"
DEFAULT_EVENTS_PER_FRAME = 75


class FlagError(Exception):
    """A flag value that argparse accepted but the command cannot use."""


# ---------------------------------------------------------------- flag types

def _c_value(text: str):
    if text == "auto":
        return "auto"
    c = _nonneg_float(text)
    return c


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"must be a finite non-negative number: {text!r}")
    return v


def _pos_float(text: str) -> float:
    v = _nonneg_float(text)
    if v == 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _pos_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text!r}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {text!r}")
    return v


def _size(text: str) -> tuple[int, int]:
    """``64`` or ``64x48`` (width x height)."""
    parts = text.lower().split("x")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must be N or WxH: {text!r}") from None
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"size must be N or WxH: {text!r}")
    return dims[0], dims[1]


def _bracket(text: str) -> tuple[float, float]:
    parts = text.replace(":", ",").split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"bracket must be lo,hi: {text!r}")
    lo, hi = (_pos_float(p) for p in parts)
    if not lo < hi:
        raise argparse.ArgumentTypeError(f"bracket needs lo < hi: {text!r}")
    return lo, hi


def _grid(text: str) -> list[float]:
    """Comma list ``0.1,0.2`` or range ``lo:hi:count``."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"grid range must be lo:hi:count: {text!r}")
        lo, hi = _nonneg_float(parts[0]), _nonneg_float(parts[1])
        count = _pos_int(parts[2])
        return np.linspace(lo, hi, count).tolist()
    values = [_nonneg_float(p) for p in text.split(",") if p.strip()]
    if not values:
        raise argparse.ArgumentTypeError("grid must not be empty")
    return values


def _lambda(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(v) or v > 0:
        raise argparse.ArgumentTypeError(f"lambda must be finite and <= 0: {text!r}")
    return v


def _bool_env(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


# ---------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, required=True, help="output directory (created if missing)")
    p.add_argument("--threads", type=_nonneg_int, default=0, help="worker threads, 0 = one per core")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")


def _inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--events", type=Path, required=True, help="event file (t x y p per line)")
    p.add_argument("--frames", type=Path, required=True, help="frame manifest (t filename per line)")
    p.add_argument("--exposure", type=_pos_float, default=None, help="exposure in seconds; overrides the manifest header")
    p.add_argument("--timestamp-mode", choices=("mid", "start"), default="mid", help="manifest times mark the exposure midpoint or start")


def _search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=_pos_int, default=DEFAULT_WINDOW, help="mEDI sliding window in frames")
    p.add_argument("--lambda", dest="lam", type=_lambda, default=DEFAULT_LAMBDA, help="edge weight of the EDI energy (<= 0)")
    p.add_argument("--decay", type=_pos_float, default=None, help="decay rate of the event edge signal in 1/s (default 2/T)")
    p.add_argument("--energy-domain", choices=("log", "linear"), default="log", help="residual domain of the mEDI energy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eventdeblur", description="Event-based motion deblurring and video reconstruction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="synthesise events, blurred frames and ground truth")
    _common(p)
    p.add_argument("--scene", choices=SCENES, default="translating-bar")
    p.add_argument("--size", type=_size, default=(64, 64), help="N or WxH pixels")
    p.add_argument("--frames", type=_pos_int, default=110, help="number of sharp frames")
    p.add_argument("--blur-span", type=_pos_int, default=11, help="sharp frames averaged per blurred frame (odd)")
    p.add_argument("--c", type=_pos_float, default=0.23, help="true contrast threshold")
    p.add_argument("--speed", type=_nonneg_float, default=1.0, help="scene motion in px per sharp frame")
    p.add_argument("--rate", type=_pos_float, default=1000.0, help="sharp frame rate in Hz")
    p.add_argument("--seed", type=_nonneg_int, default=0)

    p = sub.add_parser("reconstruct", help="deblur frames and expand them into a video")
    _common(p)
    _inputs(p)
    p.add_argument("--mode", choices=("edi", "medi"), default="medi")
    p.add_argument("--c", type=_c_value, default="auto", help="contrast threshold or 'auto'")
    p.add_argument("--events-per-frame", type=_pos_int, default=DEFAULT_EVENTS_PER_FRAME, help="sensor-wide events per video frame")
    p.add_argument("--bracket", type=_bracket, default=DEFAULT_BRACKET, help="search bracket lo,hi for --c auto")
    p.add_argument("--tolerance", type=_pos_float, default=DEFAULT_TOLERANCE, help="search tolerance in c")
    p.add_argument("--max-evals", type=_pos_int, default=60)
    p.add_argument("--no-video", action="store_true", help="skip video expansion")
    _search_flags(p)

    p = sub.add_parser("sweep", help="evaluate the energy and preview reconstructions over a grid of c")
    _common(p)
    _inputs(p)
    p.add_argument("--mode", choices=("edi", "medi"), default="edi")
    p.add_argument("--grid", type=_grid, default=[0.10, 0.22, 0.23, 0.60], help="c values: a,b,c or lo:hi:count")
    p.add_argument("--preview-frame", type=_nonneg_int, default=None, help="frame to preview (default: middle)")
    _search_flags(p)

    p = sub.add_parser("metrics", help="PSNR and SSIM between two directories of equal-named frames")
    p.add_argument("reference", type=Path)
    p.add_argument("test", type=Path)
    p.add_argument("--out", type=Path, default=None, help="also write the summary as metrics.json here")
    p.add_argument("--threads", type=_nonneg_int, default=0, help="accepted for uniformity; unused")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def _subparsers(parser: argparse.ArgumentParser) -> dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def apply_env_defaults(parser: argparse.ArgumentParser, environ=None) -> None:
    """Replace flag defaults with ``EVENTDEBLUR_<FLAG>`` values when present."""
    environ = os.environ if environ is None else environ
    for name, sp in _subparsers(parser).items():
        for action in sp._actions:
            flags = [s for s in action.option_strings if s.startswith("--")]
            if not flags or action.dest in ("help", "version"):
                continue
            key = ENV_PREFIX + flags[0][2:].upper().replace("-", "_")
            if key not in environ:
                continue
            raw = environ[key]
            try:
                if isinstance(action, argparse._StoreTrueAction):
                    value = _bool_env(raw)
                else:
                    value = action.type(raw) if action.type else raw
                    if action.choices is not None and value not in action.choices:
                        raise argparse.ArgumentTypeError(f"must be one of {', '.join(map(str, action.choices))}")
            except argparse.ArgumentTypeError as exc:
                sp.error(f"{key}: {exc}")
            action.default = value
            action.required = False


# ---------------------------------------------------------------- helpers

def _threads(n: int) -> int:
    return n or os.cpu_count() or 1


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def write_manifest(out: Path, command: str, args: argparse.Namespace, inputs: dict, outputs: dict, started: float, **extra) -> Path:
    """The run record: resolved flags, paths, timing and results."""
    config = {k: v for k, v in vars(args).items() if k not in ("command", "func", "verbose", "out")}
    manifest = {
        "command": command,
        "version": __version__,
        "config": _jsonable(config),
        "inputs": _jsonable(inputs),
        "outputs": _jsonable(outputs),
        "timing": {"seconds": round(time.perf_counter() - started, 6)},
    }
    manifest.update(_jsonable(extra))
    path = out / "run.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _prepare_out(out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory is not writable: {out}")
    return out


def load_inputs(args) -> tuple[list, EventIndex]:
    frames = parse_frame_manifest(args.frames, exposure=args.exposure, timestamp_mode=args.timestamp_mode)
    if not frames:
        raise ValidationError(f"no frames listed in {args.frames}")
    height, width = frames[0].image.shape
    index = read_event_file(args.events, resolution=(width, height))
    check_coverage(frames, index)
    log.info("loaded %d frames (%dx%d) and %d events", len(frames), width, height, len(index))
    return frames, index


def _write_frames(directory: Path, entries: list[tuple[float, str, np.ndarray]], exposure: float | None = None) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"# exposure {exposure!r}"] if exposure is not None else []
    for t, name, image in entries:
        write_pgm(directory / name, image)
        lines.append(f"{t!r} {name}")
    manifest = directory / "frames.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def _write_trace(out: Path, trace: EnergyTrace, stem: str = "trace") -> dict:
    txt = out / f"{stem}.txt"
    txt.write_text(trace.to_text(), encoding="utf-8")
    js = out / f"{stem}.json"
    js.write_text(json.dumps(_jsonable(trace.summary()), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"text": str(txt), "summary": str(js)}


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    started = time.perf_counter()
    if args.blur_span % 2 == 0:
        raise FlagError(f"--blur-span must be odd, got {args.blur_span}")
    if args.frames < args.blur_span:
        raise FlagError(f"--frames ({args.frames}) must be at least --blur-span ({args.blur_span})")
    out = _prepare_out(args.out)
    config = SimConfig(c_true=args.c, rate=args.rate, blur_span=args.blur_span, resolution=args.size)
    sharp = make_test_scene(args.scene, args.size, args.frames, args.speed, args.seed)
    data = simulate(sharp, config)
    paths = write_dataset(out, data)
    write_manifest(
        out, "simulate", args, {}, paths, started,
        events=len(data.index), blurred_frames=len(data.frames), c_true=args.c,
    )
    print(f"wrote {len(data.frames)} blurred frames and {len(data.index)} events to {out}")
    return EXIT_OK


def _edi_auto(frames, index, args) -> tuple[list[float], list[EnergyTrace]]:
    config = SearchConfig(bracket=args.bracket, tolerance=args.tolerance, max_evals=args.max_evals, method="golden")

    def run(fr):
        return golden_section(EdiEnergy(fr, index, args.lam, args.decay), config)

    with ThreadPoolExecutor(max_workers=_threads(args.threads)) as pool:
        traces = list(pool.map(run, frames))
    return [t.c_star for t in traces], traces


def cmd_reconstruct(args) -> int:
    started = time.perf_counter()
    frames, index = load_inputs(args)
    out = _prepare_out(args.out)
    traces: list[EnergyTrace] = []
    trace_paths: dict = {}
    diagnostics: dict = {}

    if args.mode == "medi":
        problem = MediProblem(frames, index, args.window)
        if args.c == "auto":
            config = SearchConfig(bracket=args.bracket, tolerance=args.tolerance, max_evals=args.max_evals, method="fibonacci")
            trace = fibonacci_search(lambda c: problem.energy(c, args.energy_domain), config)
            traces = [trace]
            c = trace.c_star
        else:
            c = args.c
        latent = problem.reconstruct(c)
        c_per_frame = [c] * len(frames)
        diagnostics = dict(problem.diagnostics)
    else:
        if args.c == "auto":
            c_per_frame, traces = _edi_auto(frames, index, args)
        else:
            c_per_frame = [args.c] * len(frames)
        latent = []
        for i, (fr, c) in enumerate(zip(frames, c_per_frame)):
            lf = edi_deblur(fr, index, c)
            lf.source = i
            latent.append(lf)

    if traces:
        if len(traces) == 1:
            trace_paths = _write_trace(out, traces[0])
        else:
            trace_paths = {fr.name: _write_trace(out, tr, f"trace_{i:04d}") for i, (fr, tr) in enumerate(zip(frames, traces))}
    if any(not tr.converged for tr in traces):
        log.warning("search did not converge: %s", "; ".join(tr.message for tr in traces if not tr.converged))

    latent_manifest = _write_frames(
        out / "latent", [(lf.timestamp, fr.name, lf.image) for lf, fr in zip(latent, frames)], exposure=frames[0].T
    )
    outputs = {"latent": str(latent_manifest)}

    video_frames = 0
    if not args.no_video:
        windows = frame_windows([fr.f for fr in frames], frames[0].T)
        sequences = [expand_video(lf, index, w, args.events_per_frame) for lf, w in zip(latent, windows)]
        video: LatentSequence = stitch(sequences)
        video_frames = len(video)
        outputs["video"] = str(_write_frames(out / "video", [(vf.timestamp, f"frame_{k:06d}.pgm", vf.image) for k, vf in enumerate(video)]))
    outputs["trace"] = trace_paths

    c_report = c_per_frame[0] if args.mode == "medi" else c_per_frame
    write_manifest(
        out, "reconstruct", args,
        {"events": str(args.events), "frames": str(args.frames)}, outputs, started,
        c=c_report, c_estimated=args.c == "auto", video_frames=video_frames,
        frames_per_blurred=video_frames / len(frames), diagnostics=diagnostics,
        converged=all(tr.converged for tr in traces) if traces else None,
    )
    if args.mode == "medi":
        print(f"c = {c_per_frame[0]:.6f}")
    else:
        print("c = " + " ".join(f"{c:.6f}" for c in c_per_frame))
    print(f"{len(latent)} latent frames, {video_frames} video frames -> {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    frames, index = load_inputs(args)
    if any(b <= a for a, b in zip(args.grid, args.grid[1:])):
        raise FlagError("--grid must be strictly ascending")
    if args.preview_frame is not None and args.preview_frame >= len(frames):
        raise FlagError(f"--preview-frame {args.preview_frame} out of range for {len(frames)} frames")
    out = _prepare_out(args.out)
    which = len(frames) // 2 if args.preview_frame is None else args.preview_frame

    if args.mode == "medi":
        problem = MediProblem(frames, index, args.window)

        def energy(c):
            return problem.energy(c, args.energy_domain)

        def preview(c):
            return problem.reconstruct(c)[which].image
    else:
        energies = [EdiEnergy(fr, index, args.lam, args.decay) for fr in frames]

        def energy(c):
            return math.fsum(e(c) for e in energies)

        def preview(c):
            return energies[which].reconstruct(c)

    result = sweep_c(energy, args.grid, preview, workers=_threads(args.threads))
    previews = out / "previews"
    previews.mkdir(parents=True, exist_ok=True)
    names = []
    for c, img in zip(args.grid, result.previews):
        name = f"c_{c:.4f}.pgm"
        write_pgm(previews / name, img)
        names.append(name)
    trace_paths = _write_trace(out, result.trace)
    write_manifest(
        out, "sweep", args,
        {"events": str(args.events), "frames": str(args.frames)},
        {"previews": [str(previews / n) for n in names], "trace": trace_paths}, started,
        argmin=result.trace.c_star, preview_frame=which,
    )
    for c, e in result.trace.evaluations:
        print(f"{c:10.4f}  {e:.6g}")
    print(f"argmin c = {result.trace.c_star:.4f}")
    return EXIT_OK


def _fmt_psnr(v: float) -> str:
    return "identical" if v == IDENTICAL else f"{v:.4f}"


def cmd_metrics(args) -> int:
    for d in (args.reference, args.test):
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    ref = sorted(p.name for p in args.reference.glob("*.pgm"))
    tst = sorted(p.name for p in args.test.glob("*.pgm"))
    if len(ref) != len(tst):
        print(f"error: frame count mismatch: {len(ref)} in {args.reference}, {len(tst)} in {args.test}", file=sys.stderr)
        return EXIT_FLAGS
    if ref != tst:
        missing = sorted(set(ref) ^ set(tst))
        print(f"error: frame names differ: {', '.join(missing[:5])}", file=sys.stderr)
        return EXIT_FLAGS
    if not ref:
        print("error: no .pgm frames found", file=sys.stderr)
        return EXIT_FLAGS

    rows = []
    for name in ref:
        a, b = read_pgm(args.reference / name), read_pgm(args.test / name)
        if a.shape != b.shape:
            print(f"error: {name}: shape {a.shape} vs {b.shape}", file=sys.stderr)
            return EXIT_FLAGS
        rows.append((name, psnr(a, b), ssim(a, b)))

    width = max(len(n) for n in ref + ["frame"])
    print(f"{'frame':<{width}}  {'PSNR(dB)':>10}  {'SSIM':>8}")
    for name, p, s in rows:
        print(f"{name:<{width}}  {_fmt_psnr(p):>10}  {s:8.4f}")
    finite = [p for _, p, _ in rows if p != IDENTICAL]
    mean_psnr = IDENTICAL if not finite else float(np.mean(finite))
    mean_ssim = float(np.mean([s for _, _, s in rows]))
    print(f"{'mean':<{width}}  {_fmt_psnr(mean_psnr):>10}  {mean_ssim:8.4f}")

    summary = {
        "frames": len(rows),
        "identical_frames": len(rows) - len(finite),
        "mean_psnr": "identical" if mean_psnr == IDENTICAL else mean_psnr,
        "mean_ssim": mean_ssim,
        "per_frame": [{"name": n, "psnr": "identical" if p == IDENTICAL else p, "ssim": s} for n, p, s in rows],
    }
    text = json.dumps(summary, sort_keys=True)
    print(text)
    if args.out is not None:
        _prepare_out(args.out)
        (args.out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        apply_env_defaults(parser)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FlagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except (NonFiniteEnergyError, IntegralRangeError) as exc:
        print(f"error: optimisation failed: {exc}", file=sys.stderr)
        trace = getattr(exc, "trace", None)
        if trace is not None and getattr(args, "out", None) is not None:
            try:
                _prepare_out(args.out)
                _write_trace(args.out, trace)
            except OSError:
                pass
        return EXIT_NONFINITE
    except (OSError, ParseError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
