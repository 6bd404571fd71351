"""One-dimensional search for the contrast threshold c."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .edi import edi_deblur
from .events import EventIndex, FrameRecord
from .imaging import binarize, cross_correlation_score, sobel_edges, total_variation
from .integrals import ExposureSegments, M_image

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

DEFAULT_BRACKET = (0.01, 1.0)
DEFAULT_TOLERANCE = 1e-3
DEFAULT_LAMBDA = -1.0

# final Fibonacci probe sits this fraction of a resolution unit past the midpoint
FIB_PROBE_OFFSET = 1e-3


class NonFiniteEnergyError(ArithmeticError):
    def __init__(self, c: float, value: float, trace: EnergyTrace):
        super().__init__(f"energy is {value} at c={c}")
        self.c = c
        self.value = value
        self.trace = trace


@dataclass
class SearchConfig:
    bracket: tuple[float, float] = DEFAULT_BRACKET
    tolerance: float = DEFAULT_TOLERANCE
    max_evals: int = 60
    method: str = "golden"
    prescan: int = 0

    def __post_init__(self):
        lo, hi = self.bracket
        if not 0 < lo < hi:
            raise ValueError(f"bracket must satisfy 0 < lo < hi, got {self.bracket}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_evals < 3:
            raise ValueError("max_evals must be at least 3")
        if self.method not in ("golden", "fibonacci", "grid"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.prescan and self.prescan < 3:
            raise ValueError("prescan needs at least 3 points")


@dataclass
class EnergyTrace:
    evaluations: list[tuple[float, float]] = field(default_factory=list)
    c_star: float = math.nan
    energy_star: float = math.nan
    converged: bool = False
    message: str = ""
    interval: tuple[float, float] = (math.nan, math.nan)
    widths: list[float] = field(default_factory=list)

    @property
    def evals(self) -> int:
        return len(self.evaluations)

    def to_text(self) -> str:
        return "".join(f"{c!r} {e!r}\n" for c, e in self.evaluations)

    def summary(self) -> dict:
        return {
            "argmin": self.c_star,
            "energy": self.energy_star,
            "evals": self.evals,
            "converged": self.converged,
            "message": self.message,
            "interval": list(self.interval),
        }


class _Evaluator:
    """Wraps the energy: records every call and rejects non-finite values."""

    def __init__(self, energy: Callable[[float], float], trace: EnergyTrace, bracket: tuple[float, float]):
        self.energy = energy
        self.trace = trace
        self.lo, self.hi = bracket

    def __call__(self, c: float) -> float:
        c = min(max(c, self.lo), self.hi)
        value = float(self.energy(c))
        self.trace.evaluations.append((c, value))
        if not math.isfinite(value):
            self.trace.message = f"non-finite energy at c={c}"
            raise NonFiniteEnergyError(c, value, self.trace)
        return value


def _finish(trace: EnergyTrace, bracket: tuple[float, float], converged: bool, message: str = "") -> EnergyTrace:
    values = [e for _, e in trace.evaluations]
    if len(values) > 1 and all(v == values[0] for v in values):
        trace.c_star = 0.5 * (bracket[0] + bracket[1])
        trace.energy_star = values[0]
        trace.converged = False
        trace.message = "flat energy"
        return trace
    # ties go to the smaller c
    best = min(trace.evaluations, key=lambda ce: (ce[1], ce[0]))
    trace.c_star, trace.energy_star = best
    trace.converged = converged
    trace.message = message
    return trace


def _prescan(f: _Evaluator, config: SearchConfig) -> tuple[float, float]:
    grid = np.linspace(*config.bracket, config.prescan)
    values = [f(float(c)) for c in grid]
    i = int(np.argmin(values))
    return float(grid[max(i - 1, 0)]), float(grid[min(i + 1, len(grid) - 1)])


def golden_section(energy: Callable[[float], float], config: SearchConfig | None = None) -> EnergyTrace:
    """Golden-section minimisation over ``config.bracket``.

    Each iteration shrinks the interval by 0.618 and costs one evaluation.
    Stops at width <= tolerance or after ``max_evals`` evaluations.
    """
    config = config or SearchConfig()
    trace = EnergyTrace()
    f = _Evaluator(energy, trace, config.bracket)
    a, b = _prescan(f, config) if config.prescan else config.bracket

    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    trace.widths.append(b - a)
    while b - a > config.tolerance and trace.evals < config.max_evals:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
        trace.widths.append(b - a)
    trace.interval = (a, b)
    converged = b - a <= config.tolerance
    return _finish(trace, config.bracket, converged, "" if converged else "max_evals reached")


def fibonacci_depth(span: float, tolerance: float) -> int:
    """Smallest N >= 3 with F_N >= span / tolerance (F_1 = F_2 = 1)."""
    target = span / tolerance
    fa, fb, n = 1, 2, 3
    while fb < target:
        fa, fb, n = fb, fa + fb, n + 1
    return n


def _fib(n: int) -> int:
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


def fibonacci_search(energy: Callable[[float], float], config: SearchConfig | None = None) -> EnergyTrace:
    """Kiefer's Fibonacci search.

    With depth N the probes sit at Fibonacci fractions of the bracket, every
    reduction reuses one probe, and the search ends after N - 1 evaluations
    with an interval of (hi - lo) / F_N, widened by the final probe offset.
    """
    config = config or SearchConfig()
    trace = EnergyTrace()
    f = _Evaluator(energy, trace, config.bracket)
    a, b = _prescan(f, config) if config.prescan else config.bracket

    depth = fibonacci_depth(b - a, config.tolerance)
    budget = config.max_evals - trace.evals
    capped = depth - 1 > budget
    if capped:
        depth = max(3, budget + 1)
    F = [_fib(k) for k in range(depth + 1)]

    m = depth
    x1 = a + F[m - 2] / F[m] * (b - a)
    x2 = a + F[m - 1] / F[m] * (b - a)
    f1 = f(x1)
    f2 = f(x2) if x2 != x1 else f1
    trace.widths.append(b - a)
    while m > 3:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            m -= 1
            x1 = a + F[m - 2] / F[m] * (b - a)
            f1 = f2 if m == 3 else f(x1)
            if m == 3:
                x1 = x2
        else:
            a, x1, f1 = x1, x2, f2
            m -= 1
            x2 = a + F[m - 1] / F[m] * (b - a)
            f2 = f1 if m == 3 else f(x2)
            if m == 3:
                x2 = x1
        trace.widths.append(b - a)

    # interval spans two resolution units with the surviving probe in the middle
    mid, fm = x1, f1
    probe = mid + FIB_PROBE_OFFSET * (b - a) / 2
    fp = f(probe)
    if fm <= fp:
        b = probe
    else:
        a = mid
    trace.widths.append(b - a)
    trace.interval = (a, b)
    return _finish(trace, config.bracket, not capped, "max_evals too small for tolerance" if capped else "")


@dataclass
class SweepResult:
    trace: EnergyTrace
    previews: list = field(default_factory=list)


def sweep_c(
    energy: Callable[[float], float],
    grid,
    preview: Callable[[float], object] | None = None,
    workers: int = 1,
) -> SweepResult:
    """Evaluate ``energy`` (and optionally ``preview``) at every grid point."""
    grid = [float(c) for c in grid]
    if not grid:
        raise ValueError("grid must not be empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly ascending")

    def run(c):
        value = float(energy(c))
        return value, (preview(c) if preview is not None else None)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, grid))
    else:
        results = [run(c) for c in grid]

    trace = EnergyTrace(evaluations=[(c, v) for c, (v, _) in zip(grid, results)])
    bad = [(c, v) for c, v in trace.evaluations if not math.isfinite(v)]
    if bad:
        trace.message = f"non-finite energy at c={bad[0][0]}"
        raise NonFiniteEnergyError(bad[0][0], bad[0][1], trace)
    trace.interval = (grid[0], grid[-1])
    trace.c_star, trace.energy_star = min(trace.evaluations, key=lambda ce: (ce[1], ce[0]))
    trace.converged = True
    return SweepResult(trace, [p for _, p in results])


def search(energy: Callable[[float], float], config: SearchConfig, grid=None) -> EnergyTrace:
    if config.method == "golden":
        return golden_section(energy, config)
    if config.method == "fibonacci":
        return fibonacci_search(energy, config)
    if grid is None:
        grid = np.linspace(*config.bracket, config.max_evals)
    return sweep_c(energy, grid).trace


class EdiEnergy:
    """TV + lambda * edge-agreement energy of one EDI reconstruction, as a function of c.

    Both terms are divided by the pixel count. The edge reference is the
    Otsu-binarised magnitude of the decayed event signal M at the frame centre.
    """

    def __init__(self, frame: FrameRecord, index: EventIndex, lam: float = DEFAULT_LAMBDA, decay: float | None = None):
        if lam > 0:
            raise ValueError(f"lambda must be <= 0 so edge agreement lowers the energy, got {lam}")
        self.frame = frame
        self.index = index
        self.lam = lam
        self.segments = ExposureSegments(index, frame.f, frame.T)
        self.event_edges = binarize(np.abs(M_image(index, frame.f, frame.T, decay)))
        self.n_pixels = frame.image.size

    def reconstruct(self, c: float) -> np.ndarray:
        return edi_deblur(self.frame, self.index, c, self.segments).image

    def terms(self, c: float) -> tuple[float, float]:
        latent = self.reconstruct(c)
        tv = total_variation(latent) / self.n_pixels
        edge = cross_correlation_score(sobel_edges(latent), self.event_edges) / self.n_pixels
        return tv, edge

    def __call__(self, c: float) -> float:
        tv, edge = self.terms(c)
        return tv + self.lam * edge


def edi_energy(frame: FrameRecord, index: EventIndex, c: float, lam: float = DEFAULT_LAMBDA, decay: float | None = None) -> float:
    return EdiEnergy(frame, index, lam, decay)(c)
