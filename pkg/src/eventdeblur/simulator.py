"""Synthetic events and blurred frames from a sharp, high-rate frame sequence.

Events follow the reference-level rule: a pixel fires whenever its log
intensity has moved at least ``c`` away from the level stored at its last
event, and the stored level then moves by exactly ``c``. Log intensity is
taken to vary linearly between consecutive sharp frames; each event is
stamped at the time that linear ramp crosses its new reference level.

Blurred frames average ``blur_span`` consecutive sharp frames in linear
intensity; the middle frame of each group is the ground truth.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .events import EventIndex, FrameRecord, write_event_file
from .imaging import LOG_EPS, write_pgm

log = logging.getLogger(__name__)

# log-intensity changes within this fraction of a whole number of thresholds
# count as that whole number, so rounding never drops or adds an event
QUANTUM_SNAP = 1e-9

SCENES = ("translating-bar", "drifting-sinusoid", "two-level-checker")


@dataclass
class SimConfig:
    c_true: float = 0.23
    rate: float = 1000.0
    blur_span: int = 11
    resolution: tuple[int, int] = (64, 64)
    eps: float = LOG_EPS

    def __post_init__(self):
        if not self.c_true > 0:
            raise ValueError(f"c_true must be positive, got {self.c_true}")
        if self.blur_span < 1 or self.blur_span % 2 == 0:
            raise ValueError(f"blur_span must be odd and >= 1, got {self.blur_span}")
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        self.resolution = tuple(int(v) for v in self.resolution)

    def times(self, count: int) -> np.ndarray:
        return np.arange(count, dtype=np.float64) / self.rate


def _coverage(lo: np.ndarray, hi: np.ndarray, start: float, width: float) -> np.ndarray:
    """Overlap length of unit cells [lo, hi) with [start, start + width)."""
    return np.clip(np.minimum(hi, start + width) - np.maximum(lo, start), 0.0, None)


def make_test_scene(
    kind: str,
    resolution: tuple[int, int] = (64, 64),
    frames: int = 110,
    speed: float = 1.0,
    seed: int = 0,
) -> np.ndarray:
    """Sharp sequence of shape (frames, height, width) with values in [0.1, 0.9].

    * ``translating-bar``: a bright vertical bar on a dark background moving
      right by ``speed`` px/frame and wrapping around. Its brightness varies
      smoothly down the rows so that pixels see a spread of contrasts.
      Sub-pixel positions are area-sampled.
    * ``drifting-sinusoid``: a horizontal grating drifting by ``speed`` px/frame.
    * ``two-level-checker``: a two-level checkerboard translating diagonally.

    ``seed`` sets the random phase of the row brightness profile (bar), the
    grating phase, and the checker offset.
    """
    width, height = resolution
    rng = np.random.default_rng(seed)
    k = np.arange(frames, dtype=np.float64)[:, None, None]
    xs = np.arange(width, dtype=np.float64)[None, None, :]
    ys = np.arange(height, dtype=np.float64)[None, :, None]

    if kind == "translating-bar":
        bar_w = max(2, width // 4)
        low = 0.1
        phase = rng.uniform(0, 2 * np.pi)
        high = 0.6 + 0.3 * (0.5 + 0.5 * np.sin(2 * np.pi * ys / height + phase))
        start = np.mod(width // 8 + speed * k, width)
        cov = _coverage(xs, xs + 1, start, bar_w) + _coverage(xs, xs + 1, start - width, bar_w)
        seq = low + (high - low) * cov
    elif kind == "drifting-sinusoid":
        period = max(4.0, width / 4)
        phase = rng.uniform(0, 2 * np.pi)
        seq = 0.5 + 0.4 * np.sin(2 * np.pi * (xs - speed * k) / period + phase) + 0 * ys
    elif kind == "two-level-checker":
        cell = max(2, width // 8)
        off = rng.integers(0, cell)
        shift = np.round(speed * k).astype(np.int64)
        cx = np.floor_divide(xs.astype(np.int64) + off - shift, cell)
        cy = np.floor_divide(ys.astype(np.int64) + off - shift, cell)
        seq = np.where((cx + cy) % 2 == 0, 0.2, 0.8).astype(np.float64)
    else:
        raise ValueError(f"unknown scene {kind!r}; choose from {', '.join(SCENES)}")
    return np.clip(np.broadcast_to(seq, (frames, height, width)).astype(np.float64), 0.1, 0.9)


def simulate_events(sharp: np.ndarray, times, config: SimConfig) -> EventIndex:
    """Events from sharp frames (K, H, W) sampled at ``times``."""
    sharp = np.asarray(sharp, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if sharp.ndim != 3 or len(times) != len(sharp):
        raise ValueError("sharp frames must be (K, H, W) with one timestamp each")
    if np.any(np.diff(times) <= 0):
        raise ValueError("sharp frame timestamps must be strictly increasing")
    if np.any(sharp < config.eps):
        log.warning("intensities below %.4g clamped before simulation", config.eps)
        sharp = np.maximum(sharp, config.eps)
    height, width = sharp.shape[1:]
    c = config.c_true
    logs = np.log(sharp).reshape(len(sharp), -1)
    # reference level of each pixel is base + level * c with an integer level
    base = logs[0].copy()
    level = np.zeros(base.shape, dtype=np.int64)

    chunks_t, chunks_p, chunks_s = [], [], []
    for k in range(1, len(sharp)):
        prev, cur = logs[k - 1], logs[k]
        t0, dt = times[k - 1], times[k] - times[k - 1]
        q = (cur - base) / c
        q_near = np.round(q)
        q = np.where(np.abs(q - q_near) < QUANTUM_SNAP, q_near, q)
        target = np.where(q >= level + 1, np.floor(q), np.where(q <= level - 1, np.ceil(q), level)).astype(np.int64)
        steps = target - level
        idx = np.flatnonzero(steps)
        if not len(idx):
            continue
        sig = np.sign(steps[idx])
        slope = (cur - prev)[idx]
        for j in range(1, int(np.abs(steps[idx]).max()) + 1):
            active = np.abs(steps[idx]) >= j
            ii = idx[active]
            crossing = base[ii] + (level[ii] + j * sig[active]) * c
            frac = np.clip((crossing - prev[ii]) / slope[active], 0.0, 1.0)
            chunks_t.append(t0 + frac * dt)
            chunks_p.append(ii)
            chunks_s.append(sig[active])
        level = target

    if chunks_t:
        t = np.concatenate(chunks_t)
        p = np.concatenate(chunks_p)
        s = np.concatenate(chunks_s)
        # per pixel, emission order is already time order; sort globally by
        # (t, emission) so the stored stream is in time order
        order = np.argsort(t, kind="stable")
        t, p, s = t[order], p[order], s[order]
    else:
        t = np.zeros(0)
        p = np.zeros(0, dtype=np.int64)
        s = np.zeros(0, dtype=np.int64)
    return EventIndex(t, p % width, p // width, s, (width, height))


def simulate_blur(sharp: np.ndarray, times, config: SimConfig) -> tuple[list[FrameRecord], np.ndarray]:
    """Average consecutive groups of ``blur_span`` frames; return blurred frames and ground truth."""
    sharp = np.asarray(sharp, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    span = config.blur_span
    if len(sharp) < span:
        raise ValueError(f"need at least {span} sharp frames, got {len(sharp)}")
    count = len(sharp) // span
    exposure = span / config.rate
    frames, gt = [], []
    for i in range(count):
        group = sharp[i * span : (i + 1) * span]
        mid = i * span + span // 2
        # shifted mean: exact when the span is constant
        image = group[0] + (group - group[0]).mean(axis=0)
        frames.append(FrameRecord(f=float(times[mid]), T=exposure, image=image, name=f"frame_{i:04d}.pgm"))
        gt.append(sharp[mid])
    return frames, np.stack(gt)


@dataclass
class SimulatedDataset:
    sharp: np.ndarray
    times: np.ndarray
    index: EventIndex
    frames: list[FrameRecord]
    ground_truth: np.ndarray
    config: SimConfig


def simulate(sharp: np.ndarray, config: SimConfig) -> SimulatedDataset:
    times = config.times(len(sharp))
    index = simulate_events(sharp, times, config)
    frames, gt = simulate_blur(sharp, times, config)
    return SimulatedDataset(sharp, times, index, frames, gt, config)


def write_dataset(out: Path, data: SimulatedDataset) -> dict:
    """Write events, blurred frames and ground truth in the interchange formats.

    Layout: ``events.txt``, ``blurred/frames.txt`` + PGMs, ``gt/frames.txt`` + PGMs.
    Blurred and ground-truth frames share file names.
    Returns the written paths.
    """
    out = Path(out)
    (out / "blurred").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    write_event_file(out / "events.txt", data.index)
    exposure = data.frames[0].T if data.frames else 0.0
    blurred_lines = [f"# exposure {exposure!r}"]
    gt_lines = [f"# exposure {exposure!r}"]
    for i, (fr, gt) in enumerate(zip(data.frames, data.ground_truth)):
        write_pgm(out / "blurred" / fr.name, fr.image)
        write_pgm(out / "gt" / fr.name, gt)
        blurred_lines.append(f"{fr.f!r} {fr.name}")
        gt_lines.append(f"{fr.f!r} {fr.name}")
    (out / "blurred" / "frames.txt").write_text("\n".join(blurred_lines) + "\n", encoding="utf-8")
    (out / "gt" / "frames.txt").write_text("\n".join(gt_lines) + "\n", encoding="utf-8")
    cfg = asdict(data.config)
    (out / "sim.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {
        "events": str(out / "events.txt"),
        "blurred": str(out / "blurred" / "frames.txt"),
        "gt": str(out / "gt" / "frames.txt"),
    }
