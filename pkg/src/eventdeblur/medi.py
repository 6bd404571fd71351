"""Multi-frame mEDI: per-pixel least squares over several blurred frames.

For frames i = 1..n at one pixel the model gives

    x_i = log B_i - a_i            (data equations)
    x_{i+1} - x_i = b_i            (event equations)

with a_i = log J_i(c) and b_i = c * (signed events between f_i and f_{i+1}).
The normal equations have the fixed tridiagonal matrix diag(2, 3, ..., 3, 2)
with -1 off the diagonal, whose LU factors are built from Fibonacci
numbers. :func:`solve_fibonacci_lu` is that factorisation;
:func:`solve_oracle` is plain tridiagonal elimination used to check it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .edi import LatentFrame, latent_from_log
from .events import EventIndex, FrameRecord, events_between
from .imaging import safe_log
from .integrals import ExposureSegments, build_exposure_profile, double_integral_J

log = logging.getLogger(__name__)

# F_0 .. F_92, the largest range that fits a signed 64-bit integer
_fib = [0, 1]
while len(_fib) < 93:
    _fib.append(_fib[-1] + _fib[-2])
FIB = np.array(_fib, dtype=np.int64)
del _fib

# largest n whose F_{2n} we hold in 64-bit accumulation
FIB_MAX_N = 40
# beyond this the float back-substitution amplifies rounding past 1e-11
FLOAT_STABLE_N = 12

DEFAULT_WINDOW = 5


@dataclass
class MediCoefficients:
    a: np.ndarray
    b: np.ndarray
    Blog: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.Blog = np.asarray(self.Blog, dtype=np.float64)
        n = len(self.a)
        if n < 1 or len(self.Blog) != n or len(self.b) != n - 1:
            raise ValueError(f"coefficient lengths must be n, n-1, n; got {len(self.a)}, {len(self.b)}, {len(self.Blog)}")

    @property
    def n(self) -> int:
        return len(self.a)


@dataclass
class TridiagonalSystem:
    """Symmetric tridiagonal system ``A x = rhs``; ``off`` is the sub/super-diagonal."""

    diag: np.ndarray
    off: np.ndarray
    rhs: np.ndarray

    @property
    def n(self) -> int:
        return len(self.diag)

    def matrix(self) -> np.ndarray:
        m = np.diag(np.asarray(self.diag, dtype=np.float64))
        if self.n > 1:
            m += np.diag(self.off, 1) + np.diag(self.off, -1)
        return m

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = self.diag * x
        y[:-1] += self.off * x[1:]
        y[1:] += self.off * x[:-1]
        return y


def normal_diagonal(n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    d = np.full(n, 3.0)
    d[0] = d[-1] = 2.0
    return d


def normal_rhs(a, b, Blog) -> np.ndarray:
    """A^T w for the stacked system; works along axis 0 of pixel stacks too."""
    r = np.asarray(Blog, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    if len(r) > 1:
        r = r.copy()
        r[:-1] -= b
        r[1:] += b
    return r


def build_normal_system(coeffs: MediCoefficients) -> TridiagonalSystem:
    n = coeffs.n
    return TridiagonalSystem(normal_diagonal(n), -np.ones(n - 1), normal_rhs(coeffs.a, coeffs.b, coeffs.Blog))


def continuant(diag, off) -> int:
    """Determinant of a symmetric tridiagonal integer matrix by the three-term recurrence."""
    prev, cur = 1, int(diag[0])
    for k in range(1, len(diag)):
        prev, cur = cur, int(diag[k]) * cur - int(off[k - 1]) ** 2 * prev
    return cur


def _is_normal_matrix(system: TridiagonalSystem) -> bool:
    return np.array_equal(system.diag, normal_diagonal(system.n)) and np.all(np.asarray(system.off) == -1)


def solve_oracle(system: TridiagonalSystem) -> np.ndarray:
    """Thomas elimination; ``rhs`` may carry extra trailing axes (one system per column)."""
    d = np.asarray(system.diag, dtype=np.float64)
    e = np.asarray(system.off, dtype=np.float64)
    r = np.array(system.rhs, dtype=np.float64)
    n = len(d)
    cp = np.empty(max(n - 1, 0))
    denom = np.empty(n)
    denom[0] = d[0]
    for i in range(1, n):
        cp[i - 1] = e[i - 1] / denom[i - 1]
        denom[i] = d[i] - e[i - 1] * cp[i - 1]
    for i in range(1, n):
        r[i] -= (e[i - 1] / denom[i - 1]) * r[i - 1]
    x = np.empty_like(r)
    x[-1] = r[-1] / denom[-1]
    for i in range(n - 2, -1, -1):
        x[i] = (r[i] - e[i] * x[i + 1]) / denom[i]
    return x


def solve_fibonacci_lu(system: TridiagonalSystem, diagnostics: dict | None = None) -> np.ndarray:
    """Solve the mEDI normal equations with the Fibonacci-structured LU factors.

    Forward pass: y_n = sum_i r_i F_{2i-1}. Back-substitution from the bottom:
    x_n = y_n / F_{2n}, x_{n-1} = 2 x_n - r_n, x_k = 3 x_{k+1} - x_{k+2} - r_{k+1}.
    The backward recurrence grows rounding error by ~2.618 per step, so it is
    carried out exactly on the binary expansions of ``rhs`` and rounded once.
    Systems beyond :data:`FIB_MAX_N` go to :func:`solve_oracle`.
    """
    n = system.n
    if diagnostics is not None:
        diagnostics["fallback"] = False
    if not _is_normal_matrix(system):
        raise ValueError("solve_fibonacci_lu only handles the mEDI normal matrix")
    r = [float(v) for v in system.rhs]
    if n == 1:
        return np.array(r)
    if n > FIB_MAX_N:
        log.debug("n=%d exceeds the Fibonacci table bound, using the oracle", n)
        if diagnostics is not None:
            diagnostics["fallback"] = True
        return solve_oracle(system)

    # r_i = m_i / 2**k exactly, with a shared power-of-two denominator
    ratios = [v.as_integer_ratio() for v in r]
    den = max(q for _, q in ratios)
    m = [p * (den // q) for p, q in ratios]
    det = int(FIB[2 * n])

    y = [0] * n
    y[n - 1] = sum(m[i] * int(FIB[2 * i + 1]) for i in range(n))
    y[n - 2] = 2 * y[n - 1] - det * m[n - 1]
    for k in range(n - 3, -1, -1):
        y[k] = 3 * y[k + 1] - y[k + 2] - det * m[k + 1]
    return np.array([float(Fraction(v, det * den)) for v in y])


def solve_fibonacci_lu_batch(rhs: np.ndarray, diagnostics: dict | None = None) -> np.ndarray:
    """Vectorised float version of :func:`solve_fibonacci_lu` over ``rhs[:, ...]``.

    Only used up to :data:`FLOAT_STABLE_N` unknowns; longer systems are handed
    to the oracle and flagged.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    n = rhs.shape[0]
    if diagnostics is not None:
        diagnostics["fallback"] = False
    if n == 1:
        return rhs.copy()
    if n > FLOAT_STABLE_N:
        if diagnostics is not None:
            diagnostics["fallback"] = True
        return solve_oracle(TridiagonalSystem(normal_diagonal(n), -np.ones(n - 1), rhs))
    weights = FIB[1 : 2 * n : 2].astype(np.float64) / float(FIB[2 * n])
    x = np.empty_like(rhs)
    x[n - 1] = np.tensordot(weights, rhs, axes=1)
    x[n - 2] = 2 * x[n - 1] - rhs[n - 1]
    for k in range(n - 3, -1, -1):
        x[k] = 3 * x[k + 1] - x[k + 2] - rhs[k + 1]
    return x


def assemble_coefficients(frames: list[FrameRecord], index: EventIndex, pixel: tuple[int, int], c: float) -> MediCoefficients:
    """Single-pixel coefficients, computed from exposure profiles directly."""
    x, y = pixel
    a = [np.log(double_integral_J(build_exposure_profile(index, pixel, fr.f, fr.T), c)) for fr in frames]
    b = [c * events_between(index, pixel, f0.f, f1.f) for f0, f1 in zip(frames, frames[1:])]
    Blog = [float(safe_log(fr.image[y, x])) for fr in frames]
    return MediCoefficients(a, b, Blog)


def window_starts(n: int, window: int | None) -> list[int]:
    """Start of the sliding window that supplies each frame's latent image."""
    if window is None or n <= window:
        return [0] * n
    half = window // 2
    return [min(max(i - half, 0), n - window) for i in range(n)]


class MediProblem:
    """Per-pixel mEDI systems for a frame set, with the c-independent parts cached.

    ``window`` enables sliding-window solving: each frame's latent image comes
    from the window of ``window`` frames centred on it (clipped at the ends).
    ``None`` solves all frames as one system.
    """

    def __init__(self, frames: list[FrameRecord], index: EventIndex, window: int | None = None):
        if not frames:
            raise ValueError("need at least one frame")
        if any(f1.f <= f0.f for f0, f1 in zip(frames, frames[1:])):
            raise ValueError("frames must be sorted by timestamp")
        self.frames = frames
        self.index = index
        self.n = len(frames)
        self.window = window
        self.B = np.stack([fr.image for fr in frames])
        self.Blog = safe_log(self.B)
        self.segments = [ExposureSegments(index, fr.f, fr.T) for fr in frames]
        self.counts = np.stack([index.count_image(f0.f, f1.f) for f0, f1 in zip(frames, frames[1:])]) if self.n > 1 else np.zeros((0,) + self.B.shape[1:], dtype=np.int64)
        self.diagnostics: dict = {"fallback": False}

    def coefficients(self, c: float) -> tuple[np.ndarray, np.ndarray]:
        a = np.stack([seg.log_J(c) for seg in self.segments])
        b = c * self.counts
        return a, b

    def _solve_block(self, a, b, Blog):
        diag = {}
        x = solve_fibonacci_lu_batch(normal_rhs(a, b, Blog), diag)
        self.diagnostics["fallback"] |= diag["fallback"]
        return x

    def _windows(self):
        if self.window is None or self.n <= self.window:
            return [(0, self.n)]
        return [(s, s + self.window) for s in range(self.n - self.window + 1)]

    def solve(self, c: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Log latent images ``x`` (n, H, W), plus the a and b used."""
        a, b = self.coefficients(c)
        starts = window_starts(self.n, self.window)
        x = np.empty_like(self.Blog)
        solved = {}
        for i, s in enumerate(starts):
            if s not in solved:
                e = min(s + (self.window or self.n), self.n)
                solved[s] = self._solve_block(a[s:e], b[s : e - 1], self.Blog[s:e])
            x[i] = solved[s][i - s]
        return x, a, b

    def energy(self, c: float, domain: str = "log") -> float:
        """Squared data residual, summed over frames, pixels and windows."""
        if domain not in ("log", "linear"):
            raise ValueError(f"domain must be 'log' or 'linear', not {domain!r}")
        a, b = self.coefficients(c)
        total = 0.0
        for s, e in self._windows():
            x = self._solve_block(a[s:e], b[s : e - 1], self.Blog[s:e])
            model = x + a[s:e]
            if domain == "log":
                res = model - self.Blog[s:e]
            else:
                res = np.exp(model) - np.exp(self.Blog[s:e])
            # a block that is already consistent has zero residual by definition
            exact = np.all(a[s:e] == 0, axis=0) & np.all(b[s : e - 1] == 0, axis=0)
            total += float(np.sum(np.where(exact, 0.0, res) ** 2))
        return total

    def reconstruct(self, c: float) -> list[LatentFrame]:
        x, a, b = self.solve(c)
        starts = window_starts(self.n, self.window)
        out = []
        for i, s in enumerate(starts):
            e = min(s + (self.window or self.n), self.n)
            exact = np.all(a[s:e] == 0, axis=0) & np.all(b[s : e - 1] == 0, axis=0)
            log_L = np.where(exact, self.Blog[i] - a[i], x[i])
            image = latent_from_log(log_L, self.B[i], exact)
            out.append(LatentFrame(self.frames[i].f, image, log_L, c, source=i))
        return out


def medi_reconstruct(frames: list[FrameRecord], index: EventIndex, c: float, window: int | None = None) -> list[LatentFrame]:
    return MediProblem(frames, index, window).reconstruct(c)


def medi_energy(frames: list[FrameRecord], index: EventIndex, c: float, window: int | None = None, domain: str = "log") -> float:
    return MediProblem(frames, index, window).energy(c, domain)
