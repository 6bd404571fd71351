"""Single-frame event-based double integral (EDI) deblurring and video expansion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EventIndex, FrameRecord
from .imaging import safe_log
from .integrals import ExposureSegments


@dataclass
class LatentFrame:
    """A reconstructed sharp frame.

    ``log_image`` is the unclamped log intensity; ``image`` is the linear
    output clamped to [0, 1]. Pixels the model leaves untouched carry the
    input value bit for bit.
    """

    timestamp: float
    image: np.ndarray
    log_image: np.ndarray
    c_used: float
    source: int | None = None


@dataclass
class LatentSequence:
    frames: list[LatentFrame] = field(default_factory=list)
    sources: tuple[int, ...] = ()

    def __post_init__(self):
        ts = self.timestamps
        if np.any(np.diff(ts) <= 0):
            raise ValueError("latent sequence timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([fr.timestamp for fr in self.frames], dtype=np.float64)


def latent_from_log(log_image: np.ndarray, fallback: np.ndarray, untouched: np.ndarray) -> np.ndarray:
    """Exponentiate and clamp, copying ``fallback`` wherever ``untouched`` holds."""
    return np.where(untouched, fallback, np.clip(np.exp(log_image), 0.0, 1.0))


def edi_deblur(frame: FrameRecord, index: EventIndex, c: float, segments: ExposureSegments | None = None) -> LatentFrame:
    """Sharp image at the exposure midpoint: log L(f) = log B - log J(c)."""
    if c < 0:
        raise ValueError(f"contrast threshold must be non-negative, got {c}")
    if segments is None:
        segments = ExposureSegments(index, frame.f, frame.T)
    log_J = segments.log_J(c)
    log_L = safe_log(frame.image) - log_J
    image = latent_from_log(log_L, frame.image, log_J == 0)
    return LatentFrame(frame.f, image, log_L, c)


def frame_windows(times, exposure: float | None = None) -> list[tuple[float, float]]:
    """Expansion window per frame: halfway to each neighbour.

    The outer edges mirror the nearest gap; a lone frame uses its exposure.
    """
    times = np.asarray(times, dtype=np.float64)
    if len(times) == 1:
        if exposure is None:
            raise ValueError("a single frame needs the exposure duration to set its window")
        return [(times[0] - exposure / 2, times[0] + exposure / 2)]
    mids = 0.5 * (times[1:] + times[:-1])
    lo = np.concatenate([[times[0] - (mids[0] - times[0])], mids])
    hi = np.concatenate([mids, [times[-1] + (times[-1] - mids[-1])]])
    return list(zip(lo.tolist(), hi.tolist()))


def expand_video(
    latent: LatentFrame,
    index: EventIndex,
    window: tuple[float, float],
    events_per_frame: int,
) -> LatentSequence:
    """Emit a frame every ``events_per_frame`` sensor-wide events around ``latent``.

    Each frame is ``log L(t) = log L(f) + c * E(t)`` with E the signed count
    over (f, t]. Going backwards in time, a frame at ``t`` sits just after the
    event that closes its budget, so it differs from the anchor by exactly
    the budgeted events; the earliest one may sit at ``window[0]``.
    """
    if events_per_frame < 1:
        raise ValueError("events_per_frame must be at least 1")
    t_lo, t_hi = window
    f = latent.timestamp
    if not t_lo <= f <= t_hi:
        raise ValueError(f"anchor {f} outside window ({t_lo}, {t_hi})")

    sl = index.window(t_lo, t_hi)
    tw = index.t[sl]
    k0 = int(np.searchsorted(tw, f, side="right"))
    budget = events_per_frame

    forward = [float(tw[j]) for j in range(k0 + budget - 1, len(tw), budget)]
    backward = []
    j = k0 - budget - 1
    while j >= -1:
        backward.append(float(tw[j]) if j >= 0 else t_lo)
        j -= budget

    times = sorted(set(backward + forward) - {f})
    times = [t for t in times if t_lo <= t <= t_hi]
    before = [t for t in times if t < f][::-1]
    after = [t for t in times if t > f]

    c = latent.c_used
    shape = latent.log_image.shape
    frames = {f: latent}
    for direction in (before, after):
        counts = np.zeros(shape, dtype=np.int64)
        prev = f
        for t in direction:
            counts += index.count_image(prev, t)
            prev = t
            log_L = latent.log_image + c * counts
            image = latent_from_log(log_L, latent.image, counts == 0)
            frames[t] = LatentFrame(t, image, log_L, c, latent.source)
    ordered = [frames[t] for t in sorted(frames)]
    return LatentSequence(ordered, (latent.source,) if latent.source is not None else ())


def stitch(sequences: list[LatentSequence]) -> LatentSequence:
    """Concatenate per-frame expansions, dropping frames that repeat a timestamp."""
    out: list[LatentFrame] = []
    sources: list[int] = []
    for seq in sequences:
        for fr in seq:
            if out and fr.timestamp <= out[-1].timestamp:
                continue
            out.append(fr)
        sources.extend(seq.sources)
    return LatentSequence(out, tuple(sources))
