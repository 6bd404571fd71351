"""Event stream ingestion, per-pixel indexing and frame manifests.

Events are stored twice: once in global time order (for whole-sensor
queries such as signed count images) and once bucketed per pixel (for
timeline queries). Both orderings are stable, so events sharing a
timestamp keep their ingestion order.

Interval convention: a signed count over ``(t0, t1]`` excludes an event
exactly at ``t0`` and includes one exactly at ``t1``. Reversed bounds
return the negated count.
"""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .imaging import read_pgm

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed line in an events file or frame manifest."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    """Well-formed input that violates a declared constraint."""


_POLARITY = {0: -1, 1: 1, -1: -1}


@dataclass(frozen=True)
class Event:
    t: float
    x: int
    y: int
    sigma: int


class EventIndex:
    """Immutable, time-sorted event store with per-pixel timelines.

    Parameters
    ----------
    t, x, y, sigma : array_like
        Event fields in ingestion order. ``sigma`` must already be +1/-1.
    resolution : (width, height)
    """

    def __init__(self, t, x, y, sigma, resolution: tuple[int, int]):
        width, height = (int(v) for v in resolution)
        if width <= 0 or height <= 0:
            raise ValidationError(f"invalid resolution {resolution}")
        t = np.asarray(t, dtype=np.float64).ravel()
        x = np.asarray(x, dtype=np.int64).ravel()
        y = np.asarray(y, dtype=np.int64).ravel()
        sigma = np.asarray(sigma, dtype=np.int64).ravel()
        if not (len(t) == len(x) == len(y) == len(sigma)):
            raise ValidationError("event field arrays differ in length")
        if len(t):
            if np.any((x < 0) | (x >= width) | (y < 0) | (y >= height)):
                bad = int(np.flatnonzero((x < 0) | (x >= width) | (y < 0) | (y >= height))[0])
                raise ValidationError(
                    f"event {bad} at ({x[bad]}, {y[bad]}) outside resolution {width}x{height}"
                )
            if np.any(np.abs(sigma) != 1):
                raise ValidationError("polarity must be +1 or -1")
            if not np.all(np.isfinite(t)):
                raise ValidationError("non-finite event timestamp")

        self.resolution = (width, height)
        order = np.argsort(t, kind="stable")
        self.t = t[order]
        self.x = x[order]
        self.y = y[order]
        self.sigma = sigma[order].astype(np.int8)
        self.pixel = self.y * width + self.x
        for arr in (self.t, self.x, self.y, self.sigma, self.pixel):
            arr.flags.writeable = False

        # per-pixel CSR view; the time order inside each bucket is inherited
        by_pixel = np.argsort(self.pixel, kind="stable")
        self._pix_order = by_pixel
        counts = np.bincount(self.pixel, minlength=width * height)
        self._offsets = np.concatenate([[0], np.cumsum(counts)])
        self._pix_t = self.t[by_pixel]
        self._pix_sigma = self.sigma[by_pixel].astype(np.int64)
        self._pix_cum = np.concatenate([[0], np.cumsum(self._pix_sigma)])

    @classmethod
    def empty(cls, resolution: tuple[int, int]) -> EventIndex:
        return cls([], [], [], [], resolution)

    @classmethod
    def from_events(cls, events: Iterable[Event], resolution: tuple[int, int]) -> EventIndex:
        events = list(events)
        return cls(
            [e.t for e in events],
            [e.x for e in events],
            [e.y for e in events],
            [e.sigma for e in events],
            resolution,
        )

    def __len__(self) -> int:
        return len(self.t)

    def __repr__(self) -> str:
        w, h = self.resolution
        return f"EventIndex({len(self)} events, {w}x{h})"

    @property
    def shape(self) -> tuple[int, int]:
        """Image shape ``(height, width)``."""
        return self.resolution[1], self.resolution[0]

    @property
    def span(self) -> tuple[float, float] | None:
        if not len(self):
            return None
        return float(self.t[0]), float(self.t[-1])

    def _check_pixel(self, x: int, y: int) -> int:
        width, height = self.resolution
        if not (0 <= x < width and 0 <= y < height):
            raise ValidationError(f"pixel ({x}, {y}) outside resolution {width}x{height}")
        return y * width + x

    def timeline(self, x: int, y: int) -> tuple[np.ndarray, np.ndarray]:
        """Time-ascending ``(t, sigma)`` arrays for one pixel."""
        p = self._check_pixel(x, y)
        lo, hi = self._offsets[p], self._offsets[p + 1]
        return self._pix_t[lo:hi], self._pix_sigma[lo:hi]

    def timeline_lengths(self) -> np.ndarray:
        return np.diff(self._offsets)

    def events(self) -> Iterable[Event]:
        for t, x, y, s in zip(self.t, self.x, self.y, self.sigma):
            yield Event(float(t), int(x), int(y), int(s))

    def window(self, t0: float, t1: float) -> slice:
        """Slice of the time-sorted arrays holding events with t in (t0, t1]."""
        lo = int(np.searchsorted(self.t, t0, side="right"))
        hi = int(np.searchsorted(self.t, t1, side="right"))
        return slice(lo, max(lo, hi))

    def count_image(self, t0: float, t1: float) -> np.ndarray:
        """Signed event count per pixel over (t0, t1], as an (H, W) int array.

        For ``t1 < t0`` the result is the negated count over (t1, t0].
        """
        if t1 < t0:
            return -self.count_image(t1, t0)
        sl = self.window(t0, t1)
        counts = np.bincount(
            self.pixel[sl], weights=self.sigma[sl], minlength=self.resolution[0] * self.resolution[1]
        )
        return counts.astype(np.int64).reshape(self.shape)


def events_between(index: EventIndex, pixel: tuple[int, int], t0: float, t1: float) -> int:
    """Signed polarity sum at ``pixel`` over (t0, t1]; antisymmetric in the bounds."""
    p = index._check_pixel(*pixel)
    if t1 < t0:
        return -events_between(index, pixel, t1, t0)
    lo = index._offsets[p]
    ts = index._pix_t[lo : index._offsets[p + 1]]
    i0 = int(np.searchsorted(ts, t0, side="right"))
    i1 = int(np.searchsorted(ts, t1, side="right"))
    return int(index._pix_cum[lo + i1] - index._pix_cum[lo + i0])


def _read_text(source) -> str:
    if isinstance(source, os.PathLike):
        return Path(source).read_text(encoding="utf-8")
    if isinstance(source, str):
        return source
    return source.read()


def parse_event_stream(source: str | TextIO, resolution: tuple[int, int] | None = None) -> EventIndex:
    """Parse ``t x y p`` lines into an :class:`EventIndex`.

    ``source`` is the text itself or an open text stream; use
    :func:`read_event_file` for paths. ``#`` starts a comment. A header
    comment ``# resolution W H`` supplies the resolution when the caller
    does not; otherwise it is inferred from the largest coordinates.
    """
    text = source if isinstance(source, str) else source.read()
    ts, xs, ys, ps = [], [], [], []
    header_res = None
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 3 and parts[0] == "resolution":
                try:
                    header_res = (int(parts[1]), int(parts[2]))
                except ValueError:
                    raise ParseError(f"bad resolution header {line!r}", lineno) from None
            continue
        parts = line.split("#", 1)[0].split()
        if len(parts) != 4:
            raise ParseError(f"expected 't x y p', got {line!r}", lineno)
        try:
            t = float(parts[0])
            x = int(parts[1])
            y = int(parts[2])
            p = int(parts[3])
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", lineno) from None
        if p not in _POLARITY:
            raise ParseError(f"polarity {p} not in {{0, 1, -1, +1}}", lineno)
        if not np.isfinite(t) or t < 0:
            raise ParseError(f"timestamp {parts[0]} must be finite and non-negative", lineno)
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(_POLARITY[p])

    if resolution is None:
        resolution = header_res
    if resolution is None:
        if not xs:
            raise ValidationError("cannot infer resolution of an empty stream")
        resolution = (max(xs) + 1, max(ys) + 1)
    return EventIndex(ts, xs, ys, ps, resolution)


def read_event_file(path, resolution: tuple[int, int] | None = None) -> EventIndex:
    with open(path, encoding="utf-8") as fh:
        return parse_event_stream(fh, resolution)


def format_event_stream(index: EventIndex, header: bool = True) -> str:
    """Dump events in global time order; polarity written as 1/0."""
    out = io.StringIO()
    if header:
        out.write("# t x y p\n")
        out.write("# resolution {} {}\n".format(*index.resolution))
    for t, x, y, s in zip(index.t.tolist(), index.x.tolist(), index.y.tolist(), index.sigma.tolist()):
        out.write(f"{t!r} {x} {y} {1 if s > 0 else 0}\n")
    return out.getvalue()


def write_event_file(path, index: EventIndex) -> None:
    Path(path).write_text(format_event_stream(index), encoding="utf-8")


@dataclass
class FrameRecord:
    """One intensity frame; ``f`` is the exposure midpoint, ``T`` its duration."""

    f: float
    T: float
    image: np.ndarray
    name: str = ""
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.T > 0:
            raise ValidationError(f"exposure duration must be positive, got {self.T}")
        self.image = np.asarray(self.image, dtype=np.float64)

    @property
    def window(self) -> tuple[float, float]:
        return self.f - self.T / 2, self.f + self.T / 2


def parse_frame_manifest(
    source,
    exposure: float | None = None,
    base_dir=None,
    timestamp_mode: str = "mid",
) -> list[FrameRecord]:
    """Read a ``t filename`` manifest and load the referenced PGM images.

    ``source`` is a manifest path or its text (then ``base_dir`` resolves the
    filenames). Timestamps are exposure midpoints by default; with
    ``timestamp_mode="start"`` they mark the exposure start and ``f = t + T/2``.
    When ``exposure`` is None a ``# exposure <seconds>`` comment supplies it.
    """

    if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
        path = Path(source)
        text = path.read_text(encoding="utf-8")
        base = Path(base_dir) if base_dir is not None else path.parent
    else:
        text = _read_text(source)
        base = Path(base_dir) if base_dir is not None else Path.cwd()
    if timestamp_mode not in ("mid", "start"):
        raise ValueError(f"timestamp_mode must be 'mid' or 'start', not {timestamp_mode!r}")

    entries = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "exposure" and exposure is None:
                try:
                    exposure = float(parts[1])
                except ValueError:
                    raise ParseError(f"bad exposure header {line!r}", lineno) from None
            continue
        parts = line.split(maxsplit=1)
        if len(parts) != 2:
            raise ParseError(f"expected 't filename', got {line!r}", lineno)
        try:
            t = float(parts[0])
        except ValueError:
            raise ParseError(f"bad timestamp {parts[0]!r}", lineno) from None
        entries.append((t, parts[1].strip(), lineno))

    if exposure is None:
        raise ValidationError("exposure duration not given and no '# exposure' header found")
    if not exposure > 0:
        raise ValidationError(f"exposure must be positive, got {exposure}")
    for (t_prev, _, _), (t, _, lineno) in zip(entries, entries[1:]):
        if not t > t_prev:
            raise ValidationError(f"non-monotonic timestamps at line {lineno}")

    frames = []
    shape = None
    for t, name, lineno in entries:
        path = base / name
        if not path.is_file():
            raise FileNotFoundError(f"frame file not found: {path}")
        image = read_pgm(path)
        if shape is None:
            shape = image.shape
        elif image.shape != shape:
            raise ValidationError(f"inconsistent resolutions: {name} is {image.shape[::-1]}, expected {shape[::-1]}")
        f = t if timestamp_mode == "mid" else t + exposure / 2
        frames.append(FrameRecord(f=f, T=exposure, image=image, name=name))
    return frames


def check_coverage(frames: list[FrameRecord], index: EventIndex) -> list[int]:
    """Indices of frames whose exposure window overhangs the event span (logged, not fatal)."""
    span = index.span
    if span is None:
        return []
    overhang = [i for i, fr in enumerate(frames) if fr.window[0] < span[0] or fr.window[1] > span[1]]
    if overhang:
        log.warning("%d frame exposure window(s) extend beyond the event stream span", len(overhang))
    return overhang
