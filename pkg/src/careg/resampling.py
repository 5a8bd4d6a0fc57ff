"""Interpolation kernels (NN, BL, CC, KD16) and the adaptive pyramid resampler.

Transforms follow the pull convention: ``t.apply(points)`` maps output
(master) pixel coordinates ``(x, y)`` to source (slave) coordinates, and
every output pixel is ``sample(source, *t(p))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imaging import as_raster, laplacian_build, laplacian_invert, pyramid_shapes, LaplacianPyramid

SUPPORT = {"NN": 1, "BL": 2, "CC": 4, "KD16": 16}
DEFAULT_TABLE = {1: "BL", 2: "CC", 3: "KD16"}


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "CC"
    beta: float = 6.0  # Kaiser window shape for KD16
    a: float = -0.5  # cubic convolution parameter

    def __post_init__(self):
        if self.kind not in SUPPORT:
            raise ValueError(f"unknown kernel {self.kind!r}; expected one of {sorted(SUPPORT)}")
        if self.kind == "KD16" and self.beta <= 0:
            raise ValueError("KD16 needs beta > 0")

    @property
    def support(self) -> int:
        return SUPPORT[self.kind]


NN, BL, CC, KD16 = (KernelSpec(k) for k in ("NN", "BL", "CC", "KD16"))


def reflect101(idx: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def _cubic(d: np.ndarray, a: float) -> np.ndarray:
    d = np.abs(d)
    d2, d3 = d * d, d * d * d
    near = (a + 2) * d3 - (a + 3) * d2 + 1
    far = a * d3 - 5 * a * d2 + 8 * a * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


def _kaiser_sinc(d: np.ndarray, beta: float, half: int = 8) -> np.ndarray:
    r = np.clip(1.0 - (d / half) ** 2, 0.0, None)
    window = np.where(np.abs(d) < half, np.i0(beta * np.sqrt(r)) / np.i0(beta), 0.0)
    return np.sinc(d) * window


def _taps(coord: np.ndarray, k: KernelSpec):
    """Integer tap positions (N, S) and normalised weights (N, S) along one axis."""
    s = k.support
    base = np.floor(coord).astype(np.int64) - (s // 2 - 1)
    idx = base[:, None] + np.arange(s)[None, :]
    d = coord[:, None] - idx
    if k.kind == "BL":
        w = 1.0 - np.abs(d)
    elif k.kind == "CC":
        w = _cubic(d, k.a)
    else:
        w = _kaiser_sinc(d, k.beta)
        w = w / w.sum(axis=1, keepdims=True)
    return idx, w


def sample_points(img: np.ndarray, xs, ys, k: KernelSpec = CC) -> np.ndarray:
    """Interpolate ``img`` at arrays of (x, y); borders are reflect-101."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    shape = np.broadcast(xs, ys).shape
    xs, ys = np.broadcast_to(xs, shape).ravel(), np.broadcast_to(ys, shape).ravel()
    h, w = img.shape
    if k.kind == "NN":
        ix = reflect101(np.floor(xs + 0.5).astype(np.int64), w)
        iy = reflect101(np.floor(ys + 0.5).astype(np.int64), h)
        return img[iy, ix].reshape(shape)
    ix, wx = _taps(xs, k)
    iy, wy = _taps(ys, k)
    ix = reflect101(ix, w)
    iy = reflect101(iy, h)
    out = np.zeros(len(xs))
    for a in range(k.support):
        rows = img[iy[:, a:a + 1], ix]  # (N, S)
        out += wy[:, a] * np.einsum("ij,ij->i", rows, wx)
    return out.reshape(shape)


def sample(img: np.ndarray, x: float, y: float, k: KernelSpec = CC) -> float:
    return float(sample_points(img, np.array([x]), np.array([y]), k)[0])


def map_points(t, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if hasattr(t, "apply"):
        return np.asarray(t.apply(pts), dtype=np.float64).reshape(-1, 2)
    return np.asarray(t(pts), dtype=np.float64).reshape(-1, 2)


def pixel_grid(shape) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    return np.column_stack([xx.ravel(), yy.ravel()]).astype(np.float64)


def source_coordinates(t, out_shape) -> np.ndarray:
    """Pulled source coordinates for every output pixel, shape (h, w, 2)."""
    return map_points(t, pixel_grid(out_shape)).reshape(out_shape[0], out_shape[1], 2)


def warp(img, t, out_shape=None, k: KernelSpec = CC, coords: np.ndarray | None = None) -> np.ndarray:
    """``out[p] = sample(img, t(p))`` over an ``out_shape`` = (rows, cols) frame."""
    img = as_raster(img)
    out_shape = tuple(out_shape or img.shape)
    if coords is None:
        coords = source_coordinates(t, out_shape)
    return sample_points(img, coords[..., 0], coords[..., 1], k)


def valid_mask(coords: np.ndarray, src_shape) -> np.ndarray:
    """Output pixels whose pulled coordinate lands inside the source frame."""
    h, w = src_shape
    x, y = coords[..., 0], coords[..., 1]
    return (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)


# ---------------------------------------------------------------------------
# Adaptive resampling
# ---------------------------------------------------------------------------

@dataclass
class ResamplingRules:
    """Per-level kernel table plus the finest-level small-feature mask."""

    flags: np.ndarray
    table: dict = field(default_factory=lambda: dict(DEFAULT_TABLE))
    fine_kernel: str = "CC"

    def __post_init__(self):
        self.table = {int(k): v for k, v in self.table.items()}
        for name in self.table.values():
            KernelSpec(name)

    def kernel_for_level(self, level: int) -> KernelSpec:
        if level == 0:
            return KernelSpec(self.fine_kernel)
        keys = sorted(k for k in self.table if k <= level)
        return KernelSpec(self.table[keys[-1]] if keys else self.fine_kernel)


def local_contrast(img: np.ndarray) -> np.ndarray:
    return (ndimage.maximum_filter(img, size=3, mode="mirror")
            - ndimage.minimum_filter(img, size=3, mode="mirror"))


def classify_features_for_resampling(img, labels, edges=None, max_area: int = 4,
                                     min_contrast: float = 0.3, table=None) -> ResamplingRules:
    """Flag pixels of small (< ``max_area``), high-contrast label components.

    Components are 8-connected runs of equal label.  ``edges`` is only
    checked for frame agreement.
    """
    img = as_raster(img)
    labels = np.asarray(labels)
    if labels.shape != img.shape:
        raise ValueError("labels and image differ in shape")
    if edges is not None and edges.mask.shape != img.shape:
        raise ValueError("edge map and image differ in shape")
    small = np.zeros(img.shape, dtype=bool)
    eight = np.ones((3, 3), dtype=bool)
    for value in np.unique(labels):
        comp, n = ndimage.label(labels == value, structure=eight)
        if n == 0:
            continue
        areas = np.bincount(comp.ravel(), minlength=n + 1)
        tiny = areas < max_area
        tiny[0] = False
        small |= tiny[comp]
    flags = small & (local_contrast(img) > min_contrast)
    return ResamplingRules(flags=flags, table=dict(table or DEFAULT_TABLE))


def adaptive_resample(img, t, rules: ResamplingRules, levels: int = 4, out_shape=None,
                      coords: np.ndarray | None = None) -> np.ndarray:
    """Warp each Laplacian band with its level's kernel, then invert the pyramid.

    At the finest band, output pixels whose source lands on a flagged pixel
    use nearest-neighbour sampling.
    """
    img = as_raster(img)
    if levels < 2:
        raise ValueError("adaptive resampling needs levels >= 2")
    if rules.flags.shape != img.shape:
        raise ValueError("rule flags and image differ in shape")
    out_shape = tuple(out_shape or img.shape)
    if min(min(img.shape), min(out_shape)) / 2 ** (levels - 1) < 1:
        raise ValueError(f"levels={levels} exceeds image size")
    src = laplacian_build(img, levels)
    if coords is None:
        coords = source_coordinates(t, out_shape)
    shapes = pyramid_shapes(out_shape, levels)
    bands = []
    for level, (band, shp) in enumerate(zip(src.bands(), shapes)):
        step = 2 ** level
        c = coords[::step, ::step] / step
        assert c.shape[:2] == shp
        k = rules.kernel_for_level(level)
        out = sample_points(band, c[..., 0], c[..., 1], k)
        if level == 0 and rules.flags.any():
            fx = reflect101(np.floor(c[..., 0] + 0.5).astype(np.int64), img.shape[1])
            fy = reflect101(np.floor(c[..., 1] + 0.5).astype(np.int64), img.shape[0])
            hit = rules.flags[fy, fx]
            if hit.any():
                out[hit] = sample_points(band, c[..., 0][hit], c[..., 1][hit], NN)
        bands.append(out)
    return laplacian_invert(LaplacianPyramid(levels=bands[:-1], base=bands[-1]))
