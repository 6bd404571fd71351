"""Exact evaluation of the event integral E(t), the blur gain J(c) and the
decayed event signal M, per pixel and per image.

E(t) is a right-continuous step function: zero at the frame centre f and
jumping by the event polarity at every event timestamp. Over one exposure
it is therefore a handful of constant segments, and every integral of a
function of E reduces to a finite weighted sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .events import EventIndex, events_between

# exponent bound for exp(c * level); beyond this we refuse rather than overflow
MAX_EXPONENT = 700.0


class IntegralRangeError(ArithmeticError):
    """c * max|E| exceeds the safe exponent range."""


@dataclass(frozen=True)
class ExposureProfile:
    pixel: tuple[int, int]
    T: float
    durations: tuple[float, ...]
    levels: tuple[int, ...]

    @property
    def segments(self) -> list[tuple[float, int]]:
        return list(zip(self.durations, self.levels))

    def __len__(self) -> int:
        return len(self.durations)


def build_exposure_profile(index: EventIndex, pixel: tuple[int, int], f: float, T: float) -> ExposureProfile:
    """Piecewise-constant E(t) over [f - T/2, f + T/2] at one pixel."""
    if not T > 0:
        raise ValueError(f"exposure duration must be positive, got {T}")
    t_start, t_end = f - T / 2, f + T / 2
    ts, sig = index.timeline(*pixel)
    i0 = int(np.searchsorted(ts, t_start, side="right"))
    i1 = int(np.searchsorted(ts, t_end, side="right"))
    level0 = -events_between(index, pixel, t_start, f)
    breaks = np.concatenate([[t_start], ts[i0:i1], [t_end]])
    levels = level0 + np.concatenate([[0], np.cumsum(sig[i0:i1])])
    durations = np.diff(breaks)
    keep = durations > 0
    return ExposureProfile(
        pixel=tuple(pixel),
        T=T,
        durations=tuple(durations[keep].tolist()),
        levels=tuple(int(v) for v in levels[keep]),
    )


def _check_range(c: float, max_level: int) -> None:
    if c < 0:
        raise ValueError(f"contrast threshold must be non-negative, got {c}")
    if c * max_level > MAX_EXPONENT:
        raise IntegralRangeError(f"c * max|E| = {c * max_level:.1f} exceeds {MAX_EXPONENT}")


def double_integral_J(profile: ExposureProfile, c: float) -> float:
    """(1/T) * integral of exp(c E(t)) over the exposure, in closed form.

    Normalised by the summed segment durations rather than ``T`` itself so
    that J(0) and no-event pixels give exactly 1.0.
    """
    if not profile.durations:
        return 1.0
    _check_range(c, max(abs(v) for v in profile.levels))
    num = math.fsum(d * math.exp(c * v) for d, v in zip(profile.durations, profile.levels))
    return num / math.fsum(profile.durations)


def log_latent_at(Lf_log: float, c: float, signed_count: int) -> float:
    return Lf_log + c * signed_count


def event_sum_signal_M(index: EventIndex, pixel: tuple[int, int], f: float, T: float, decay: float | None = None) -> float:
    """Sum of polarities in the exposure window, weighted by exp(-decay |f - t|).

    ``decay`` defaults to 2/T.
    """
    decay = 2.0 / T if decay is None else decay
    if not decay > 0:
        raise ValueError(f"decay must be positive, got {decay}")
    ts, sig = index.timeline(*pixel)
    i0 = int(np.searchsorted(ts, f - T / 2, side="right"))
    i1 = int(np.searchsorted(ts, f + T / 2, side="right"))
    return float(np.sum(sig[i0:i1] * np.exp(-np.abs(f - ts[i0:i1]) * decay)))


class ExposureSegments:
    """Exposure profiles of every pixel of one frame, stored flat.

    ``pixel[k]``, ``duration[k]`` and ``level[k]`` describe segment ``k``;
    segments of one pixel are contiguous and time-ordered.
    """

    def __init__(self, index: EventIndex, f: float, T: float):
        if not T > 0:
            raise ValueError(f"exposure duration must be positive, got {T}")
        self.f, self.T = f, T
        self.shape = index.shape
        n_pix = self.shape[0] * self.shape[1]
        t_start, t_end = f - T / 2, f + T / 2

        level0 = -index.count_image(t_start, f).ravel()
        sl = index.window(t_start, t_end)
        order = np.argsort(index.pixel[sl], kind="stable")
        p = index.pixel[sl][order]
        t = index.t[sl][order]
        s = index.sigma[sl][order].astype(np.int64)

        # position of each event inside its pixel group
        new_group = np.ones(len(p), dtype=bool)
        new_group[1:] = p[1:] != p[:-1]
        group_start = np.maximum.accumulate(np.where(new_group, np.arange(len(p)), 0))
        cs = np.cumsum(s)
        before_group = np.where(group_start > 0, cs[group_start - 1], 0) if len(p) else cs
        ev_level = level0[p] + cs - before_group

        last_in_group = np.ones(len(p), dtype=bool)
        last_in_group[:-1] = p[1:] != p[:-1]
        t_next = np.empty_like(t)
        t_next[:-1] = t[1:]
        t_next = np.where(last_in_group, t_end, t_next)
        ev_dur = t_next - t

        first_t = np.full(n_pix, t_end)
        first_t[p[new_group]] = t[new_group]
        head_dur = first_t - t_start

        pixel = np.concatenate([np.arange(n_pix), p])
        duration = np.concatenate([head_dur, ev_dur])
        level = np.concatenate([level0, ev_level])
        keep = duration > 0
        self.pixel = pixel[keep]
        self.duration = duration[keep]
        self.level = level[keep]
        self.max_level = int(np.abs(self.level).max()) if len(self.level) else 0
        self._total = np.bincount(self.pixel, weights=self.duration, minlength=n_pix)
        self.has_events = np.zeros(n_pix, dtype=bool)
        self.has_events[p] = True

    def J(self, c: float) -> np.ndarray:
        """J(c) for every pixel, as an image."""
        _check_range(c, self.max_level)
        n_pix = self.shape[0] * self.shape[1]
        num = np.bincount(self.pixel, weights=self.duration * np.exp(c * self.level), minlength=n_pix)
        return (num / self._total).reshape(self.shape)

    def log_J(self, c: float) -> np.ndarray:
        return np.log(self.J(c))


def M_image(index: EventIndex, f: float, T: float, decay: float | None = None) -> np.ndarray:
    """Decayed event-sum signal at time f for every pixel."""
    decay = 2.0 / T if decay is None else decay
    if not decay > 0:
        raise ValueError(f"decay must be positive, got {decay}")
    sl = index.window(f - T / 2, f + T / 2)
    weights = index.sigma[sl] * np.exp(-np.abs(f - index.t[sl]) * decay)
    n_pix = index.resolution[0] * index.resolution[1]
    return np.bincount(index.pixel[sl], weights=weights, minlength=n_pix).reshape(index.shape)
