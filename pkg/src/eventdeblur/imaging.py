"""Grayscale buffers, log/linear transforms, edge maps, TV and quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

LOG_EPS = 1.0 / 255.0
LOG_FLOOR = math.log(LOG_EPS)

# psnr() returns this for identical inputs; callers print it as "identical"
IDENTICAL = math.inf

SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ImageBuffer:
    """Row-major image with a domain tag, ``"linear"`` or ``"log"``."""

    data: np.ndarray
    domain: str = "linear"

    def __post_init__(self):
        if self.domain not in ("linear", "log"):
            raise DomainError(f"unknown domain {self.domain!r}")
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.float64))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def _array(img) -> np.ndarray:
    if isinstance(img, ImageBuffer):
        return img.data
    return np.asarray(img, dtype=np.float64)


def safe_log(values) -> np.ndarray:
    return np.log(np.maximum(np.asarray(values, dtype=np.float64), LOG_EPS))


def to_log(img: ImageBuffer) -> ImageBuffer:
    if img.domain != "linear":
        raise DomainError(f"to_log expects a linear image, got {img.domain!r}")
    return ImageBuffer(safe_log(img.data), "log")


def to_linear(img: ImageBuffer) -> ImageBuffer:
    if img.domain != "log":
        raise DomainError(f"to_linear expects a log image, got {img.domain!r}")
    return ImageBuffer(np.clip(np.exp(img.data), 0.0, 1.0), "linear")


def otsu_threshold(values, nbins: int = 256) -> float:
    """Otsu threshold over a ``nbins`` histogram spanning [min, max].

    Returns the upper edge of the last bin in the lower class, so the
    foreground is ``values > threshold``. Constant input returns its value.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return hi
    hist, edges = np.histogram(v, bins=nbins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)[:-1].astype(np.float64)
    w1 = v.size - w0
    s0 = np.cumsum(hist * centers)[:-1]
    m0 = s0 / np.where(w0 > 0, w0, 1)
    m1 = (np.sum(hist * centers) - s0) / np.where(w1 > 0, w1, 1)
    between = w0 * w1 * (m0 - m1) ** 2
    return float(edges[int(np.argmax(between)) + 1])


def binarize(values) -> np.ndarray:
    """Otsu-binarized uint8 mask of a non-negative map; all-zero if constant."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or v.max() <= v.min():
        return np.zeros(v.shape, dtype=np.uint8)
    return (v > otsu_threshold(v)).astype(np.uint8)


def sobel_magnitude(img) -> np.ndarray:
    a = _array(img)
    gx = ndimage.sobel(a, axis=1, mode="nearest")
    gy = ndimage.sobel(a, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def sobel_edges(img) -> np.ndarray:
    """Binary edge map: Sobel magnitude (replicate borders) thresholded by Otsu."""
    a = _array(img)
    if a.ndim != 2 or min(a.shape) < 3:
        raise ValueError(f"sobel_edges needs a 2-D image of at least 3x3, got shape {a.shape}")
    return binarize(sobel_magnitude(a))


def total_variation(img) -> float:
    a = _array(img)
    return float(np.abs(np.diff(a, axis=1)).sum() + np.abs(np.diff(a, axis=0)).sum())


def cross_correlation_score(a, b) -> int:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"edge maps differ in shape: {a.shape} vs {b.shape}")
    return int(np.count_nonzero((a != 0) & (b != 0)))


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(a, ImageBuffer) and a.domain != "linear" or isinstance(b, ImageBuffer) and b.domain != "linear":
        raise DomainError("metrics are defined on linear images")
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB for unit peak; :data:`IDENTICAL` when the images match exactly."""
    err = mse(a, b)
    if err == 0:
        return IDENTICAL
    return -10.0 * math.log10(err)


def ssim(a, b) -> float:
    """Mean SSIM over all valid 8x8 windows (unit dynamic range)."""
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    if np.array_equal(a, b):
        return 1.0
    wa = sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = wa.var(axis=(-2, -1))
    var_b = wb.var(axis=(-2, -1))
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


# PGM I/O


def _pgm_header(data: bytes) -> tuple[str, int, int, int, int]:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ValueError("truncated PGM header")
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    magic = tokens[0]
    width, height, maxval = (int(t) for t in tokens[1:])
    return magic, width, height, maxval, pos


def read_pgm(path) -> np.ndarray:
    """Load a grayscale PGM (P5 or P2) scaled to [0, 1]."""
    data = Path(path).read_bytes()
    magic, width, height, maxval, pos = _pgm_header(data)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    if magic == "P5":
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        count = width * height
        raster = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    elif magic == "P2":
        raster = np.array(data[pos:].split()[: width * height], dtype=np.int64)
        if raster.size != width * height:
            raise ValueError(f"{path}: truncated raster")
    else:
        raise ValueError(f"{path}: unsupported image format {magic!r} (need P5 or P2)")
    return raster.reshape(height, width).astype(np.float64) / maxval


def quantize(img) -> np.ndarray:
    """Linear [0, 1] values to uint8 with round-half-up."""
    a = np.clip(_array(img), 0.0, 1.0)
    return np.floor(a * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, img) -> None:
    q = quantize(img)
    height, width = q.shape
    Path(path).write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + q.tobytes())
