"""Image container, pixel I/O, quality metrics, and gradient-orientation descriptors.

Everything in this module is a pure function on immutable inputs; arrays are
float64 in [0, 1] unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP_DB = 100.0
_PSNR_MSE_FLOOR = 1e-10

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

KL_EPS = 1e-8

# BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

LAPLACIAN_KERNEL = np.array(
    [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]
)


class ShapeError(ValueError):
    """Operands have incompatible dimensions or channel counts."""


class WindowError(ValueError):
    """Image too small for the requested filter window."""


class PpmParseError(ValueError):
    """Malformed or truncated PPM/PGM file."""

    def __init__(self, message, byte_offset=None):
        if byte_offset is not None:
            message = f"{message} (at byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


@dataclass(frozen=True)
class Image:
    """H x W x C grid of real intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ShapeError(f"expected HxWx{{1,3}} array, got shape {arr.shape}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def luma(self) -> np.ndarray:
        """Single-channel BT.601 luminance as a 2-D array."""
        if self.channels == 1:
            return self.data[:, :, 0]
        return self.data @ LUMA_WEIGHTS

    def clipped(self) -> "Image":
        return Image(np.clip(self.data, 0.0, 1.0))


@dataclass(frozen=True)
class HogConfig:
    cell_size: int = 8
    bins: int = 9
    signed: bool = False

    def __post_init__(self):
        if self.cell_size < 2:
            raise ValueError("cell_size must be >= 2")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.signed:
            raise NotImplementedError("only unsigned orientations are supported")


@dataclass(frozen=True)
class HogDescriptor:
    """Global normalized orientation histogram (sums to 1)."""

    bins: int
    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).copy()
        if vals.shape != (self.bins,):
            raise ShapeError(f"expected {self.bins} values, got shape {vals.shape}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


def _check_same_shape(a: Image, b: Image):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB on the [0, 1] range, capped at 100."""
    _check_same_shape(a, b)
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2

    def filt(img):
        windows = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
        return np.tensordot(windows, win, axes=([2, 3], [0, 1]))

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: Image, b: Image) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows, per channel."""
    _check_same_shape(a, b)
    if a.height < SSIM_WINDOW or a.width < SSIM_WINDOW:
        raise WindowError(
            f"image {a.height}x{a.width} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    vals = [
        _ssim_channel(a.data[:, :, c], b.data[:, :, c]) for c in range(a.channels)
    ]
    return float(np.mean(vals))


def _orientation_votes(gray: np.ndarray, bins: int):
    """Magnitude-weighted orientation votes, linearly split between bins.

    Unsigned orientations in [0, 180); bin centers at (i + 0.5) * 180 / bins.
    """
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0

    bin_width = 180.0 / bins
    pos = ang / bin_width - 0.5  # fractional bin index relative to centers
    lo = np.floor(pos).astype(int)
    frac = pos - lo
    hi = (lo + 1) % bins
    lo = lo % bins

    hist = np.zeros(bins)
    np.add.at(hist, lo.ravel(), ((1.0 - frac) * mag).ravel())
    np.add.at(hist, hi.ravel(), (frac * mag).ravel())
    return hist


def hog(img: Image, cfg: HogConfig = HogConfig()) -> HogDescriptor:
    """Global HOG: all cell histograms summed into one normalized histogram."""
    if img.height < cfg.cell_size or img.width < cfg.cell_size:
        raise ShapeError(
            f"image {img.height}x{img.width} smaller than one {cfg.cell_size}px cell"
        )
    gray = img.luma()
    # Crop to whole cells so every vote belongs to a complete cell.
    h = (gray.shape[0] // cfg.cell_size) * cfg.cell_size
    w = (gray.shape[1] // cfg.cell_size) * cfg.cell_size
    hist = _orientation_votes(gray[:h, :w], cfg.bins)

    total = hist.sum()
    if total < 1e-12:
        return HogDescriptor(
            bins=cfg.bins, values=np.full(cfg.bins, 1.0 / cfg.bins), degenerate=True
        )
    return HogDescriptor(bins=cfg.bins, values=hist / total)


def kl_divergence(p: HogDescriptor, q: HogDescriptor) -> float:
    """Smoothed KL divergence sum(p * log(p / q)); nonnegative."""
    if p.bins != q.bins:
        raise ShapeError(f"bin-count mismatch: {p.bins} vs {q.bins}")
    pv = p.values + KL_EPS
    qv = q.values + KL_EPS
    pv = pv / pv.sum()
    qv = qv / qv.sum()
    return float(np.sum(pv * np.log(pv / qv)))


def _replicate_pad(arr: np.ndarray, pad: int = 1) -> np.ndarray:
    return np.pad(arr, ((pad, pad), (pad, pad)), mode="edge")


def laplacian(img: Image) -> np.ndarray:
    """Per-channel 4-neighbor Laplacian with replicate-padded borders.

    Returned unclipped as an H x W x C float array (values may leave [0, 1]).
    """
    out = np.empty_like(img.data)
    k = LAPLACIAN_KERNEL
    for c in range(img.channels):
        p = _replicate_pad(img.data[:, :, c])
        acc = np.zeros(img.data.shape[:2])
        for dy in range(3):
            for dx in range(3):
                if k[dy, dx] != 0.0:
                    acc += k[dy, dx] * p[dy : dy + acc.shape[0], dx : dx + acc.shape[1]]
        out[:, :, c] = acc
    return out


# ---------------------------------------------------------------------------
# PPM / PGM I/O (binary P5 / P6, maxval 255)
# ---------------------------------------------------------------------------


def _read_token(buf: bytes, pos: int):
    """Read one whitespace-delimited header token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise PpmParseError("unexpected end of header", byte_offset=pos)
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_ppm(path) -> Image:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise PpmParseError(f"unsupported magic {magic!r}", byte_offset=0)
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise PpmParseError(f"non-integer header field {tok!r}", byte_offset=pos)
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise PpmParseError(f"invalid dimensions {width}x{height}", byte_offset=pos)
    if maxval != 255:
        raise PpmParseError(f"only maxval 255 supported, got {maxval}", byte_offset=pos)
    pos += 1  # single whitespace byte after maxval
    expected = width * height * channels
    payload = buf[pos : pos + expected]
    if len(payload) != expected:
        raise PpmParseError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}",
            byte_offset=pos,
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image(arr.astype(np.float64) / 255.0)


def write_ppm(img: Image, path):
    magic = b"P6" if img.channels == 3 else b"P5"
    quantized = np.rint(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (img.width, img.height))
        fh.write(quantized.tobytes())
