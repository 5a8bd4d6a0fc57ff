"""Raster I/O, Gaussian/Laplacian pyramids and Canny edges.

A raster is a 2-D ``float64`` numpy array (rows = y, columns = x) holding
intensities normalised to [0, 1] at load time.  Every filter in this module
uses reflect-101 borders (``scipy.ndimage`` mode ``"mirror"``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

BORDER = "mirror"  # reflect-101: mirror without repeating the edge sample

# 5-tap binomial filter shared by pyramid analysis and synthesis
BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class ImageError(ValueError):
    """Raised for unreadable or invalid image data."""


def as_raster(data) -> np.ndarray:
    """Validate and convert ``data`` to a finite 2-D float64 raster."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ImageError(f"raster must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageError("zero-size image")
    if not np.all(np.isfinite(arr)):
        raise ImageError("raster contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise ImageError(f"unreadable file: {path} is not a binary PGM (P5)")
    # header: magic, width, height, maxval separated by whitespace / comments
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageError(f"unreadable file: truncated PGM header in {path}")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageError(f"unreadable file: bad PGM header in {path}") from exc
    if width < 1 or height < 1:
        raise ImageError("zero-size image")
    if not 0 < maxval < 65536:
        raise ImageError(f"unsupported bit depth (maxval={maxval})")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    body = raw[pos:pos + need]
    if len(body) < need:
        raise ImageError(f"unreadable file: truncated PGM data in {path}")
    data = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return data.astype(np.float64) / maxval


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L"):
                data = np.asarray(im, dtype=np.float64) / 65535.0
            elif mode == "I":
                arr = np.asarray(im, dtype=np.float64)
                scale = 65535.0 if arr.max(initial=0) > 255 else 255.0
                data = arr / scale
            elif mode in ("L", "P", "RGB", "RGBA", "LA", "1"):
                data = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            else:
                raise ImageError(f"unsupported bit depth / mode {mode!r}")
    except ImageError:
        raise
    except Exception as exc:  # PIL raises a zoo of exception types
        raise ImageError(f"unreadable file: {path}: {exc}") from exc
    if data.size == 0:
        raise ImageError("zero-size image")
    return data


def load_image(path, format: str | None = None) -> np.ndarray:
    """Load a grayscale PGM or PNG into a raster scaled to [0, 1].

    Colour PNGs are luma-converted.  ``format`` is inferred from the file
    suffix when omitted.
    """
    path = Path(path)
    if not path.exists():
        raise ImageError(f"unreadable file: {path} does not exist")
    fmt = (format or path.suffix.lstrip(".")).upper()
    if fmt == "PGM":
        return _read_pgm(path)
    if fmt == "PNG":
        return _read_png(path)
    raise ImageError(f"unsupported format {fmt!r}")


def quantize(img: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    maxval = (1 << bit_depth) - 1
    return np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(np.uint16 if bit_depth > 8 else np.uint8)


def save_image(img, path, bit_depth: int = 8) -> None:
    """Write a raster (clipped to [0, 1]) as 8- or 16-bit PGM or PNG."""
    if bit_depth not in (8, 16):
        raise ImageError(f"unsupported bit depth {bit_depth}")
    img = as_raster(img)
    path = Path(path)
    q = quantize(img, bit_depth)
    if path.suffix.lower() == ".pgm":
        maxval = (1 << bit_depth) - 1
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
        body = q.astype(">u2").tobytes() if bit_depth == 16 else q.tobytes()
        path.write_bytes(header + body)
    else:
        Image.fromarray(q).save(path, format="PNG")


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled 1-D Gaussian, radius ceil(3*sigma), normalised to sum 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = max(1, math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def separable_filter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, kernel, axis=0, mode=BORDER)
    return ndimage.correlate1d(out, kernel, axis=1, mode=BORDER)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return separable_filter(img, gaussian_kernel(sigma))


def sobel(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel derivatives scaled to intensity-per-pixel units."""
    smooth = np.array([1.0, 2.0, 1.0]) / 4.0
    diff = np.array([-1.0, 0.0, 1.0]) / 2.0
    gx = ndimage.correlate1d(ndimage.correlate1d(img, smooth, axis=0, mode=BORDER), diff, axis=1, mode=BORDER)
    gy = ndimage.correlate1d(ndimage.correlate1d(img, diff, axis=0, mode=BORDER), smooth, axis=1, mode=BORDER)
    return gx, gy


# ---------------------------------------------------------------------------
# Canny
# ---------------------------------------------------------------------------

@dataclass
class EdgeMap:
    mask: np.ndarray
    gradient_mag: np.ndarray
    low: float = 0.0
    high: float = 0.0

    @property
    def shape(self):
        return self.mask.shape


def _non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    # direction bins: 0 -> horizontal gradient, 45, 90 -> vertical, 135
    sector = np.zeros(mag.shape, dtype=np.int8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (dy, dx) in offsets.items():
        sel = sector == s
        fwd = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        bwd = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        # asymmetric comparison keeps exactly one pixel of a symmetric ridge
        keep |= sel & (mag >= bwd) & (mag > fwd)
    return keep & (mag > 0)


def hysteresis(candidates: np.ndarray, mag: np.ndarray, low: float, high: float) -> np.ndarray:
    """Keep weak (>= low) candidates 8-connected to a strong (>= high) one."""
    weak = candidates & (mag >= low)
    strong = candidates & (mag >= high)
    if not strong.any():
        return np.zeros_like(weak)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    good = np.zeros(n + 1, dtype=bool)
    good[np.unique(labels[strong])] = True
    good[0] = False
    return good[labels]


def canny(img, sigma: float = 1.4, low: float = 0.04, high: float = 0.1) -> EdgeMap:
    """Canny edges: Gaussian blur, Sobel, non-maximum suppression, hysteresis."""
    img = as_raster(img)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not 0 < low < high:
        raise ValueError("thresholds must satisfy 0 < low < high")
    support = 2 * max(1, math.ceil(3.0 * sigma)) + 1
    if min(img.shape) < support:
        raise ImageError(f"image {img.shape} smaller than Gaussian support {support}")
    blurred = gaussian_blur(img, sigma)
    gx, gy = sobel(blurred)
    mag = np.hypot(gx, gy)
    thin = _non_max_suppression(mag, gx, gy)
    mask = hysteresis(thin, mag, low, high)
    return EdgeMap(mask=mask, gradient_mag=mag, low=low, high=high)


# ---------------------------------------------------------------------------
# Pyramids
# ---------------------------------------------------------------------------

def reduce(img: np.ndarray) -> np.ndarray:
    """Binomial blur then keep every second sample; output is ceil(n/2)."""
    return separable_filter(img, BINOMIAL5)[::2, ::2]


def expand(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Zero-insert upsample to ``shape`` and interpolate with the binomial filter."""
    h, w = shape
    up = np.zeros((h, w), dtype=np.float64)
    up[::2, ::2] = img[: (h + 1) // 2, : (w + 1) // 2]
    k = 2.0 * BINOMIAL5
    return separable_filter(up, k)


def _check_levels(shape, levels):
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if min(shape) / 2 ** (levels - 1) < 1:
        raise ValueError(f"too many levels ({levels}) for image of shape {shape}")


def gaussian_pyramid(img, levels: int) -> list[np.ndarray]:
    img = as_raster(img)
    _check_levels(img.shape, levels)
    pyr = [img]
    for _ in range(levels - 1):
        pyr.append(reduce(pyr[-1]))
    return pyr


@dataclass
class LaplacianPyramid:
    """Band-pass levels (finest first) plus the coarsest low-pass base."""

    levels: list[np.ndarray]
    base: np.ndarray
    shapes: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.shapes:
            self.shapes = [b.shape for b in self.levels] + [self.base.shape]

    @property
    def depth(self) -> int:
        return len(self.levels) + 1

    def bands(self) -> list[np.ndarray]:
        return list(self.levels) + [self.base]


def pyramid_shapes(shape: tuple[int, int], levels: int) -> list[tuple[int, int]]:
    shapes = [tuple(shape)]
    for _ in range(levels - 1):
        h, w = shapes[-1]
        shapes.append(((h + 1) // 2, (w + 1) // 2))
    return shapes


def laplacian_build(img, levels: int) -> LaplacianPyramid:
    gauss = gaussian_pyramid(img, levels)
    bands = [g - expand(gauss[k + 1], g.shape) for k, g in enumerate(gauss[:-1])]
    return LaplacianPyramid(levels=bands, base=gauss[-1].copy())


def laplacian_invert(pyr: LaplacianPyramid) -> np.ndarray:
    expected = pyramid_shapes(pyr.levels[0].shape if pyr.levels else pyr.base.shape, pyr.depth)
    actual = [b.shape for b in pyr.bands()]
    if [tuple(s) for s in actual] != expected:
        raise ValueError(f"inconsistent level dimensions: {actual}")
    out = pyr.base
    for band in reversed(pyr.levels):
        out = band + expand(out, band.shape)
    return out


def dump_pyramid(pyr, stem, bit_depth: int = 8) -> list[Path]:
    """Write each level as ``<stem>_L<k>.png``; band-pass levels are offset to mid-grey."""
    stem = Path(stem)
    paths = []
    if isinstance(pyr, LaplacianPyramid):
        images = [b + 0.5 for b in pyr.levels] + [pyr.base]
    else:
        images = list(pyr)
    for k, im in enumerate(images):
        p = stem.with_name(f"{stem.name}_L{k}.png")
        save_image(np.clip(im, 0, 1), p, bit_depth)
        paths.append(p)
    return paths

