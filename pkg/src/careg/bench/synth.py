"""Synthetic master/slave pairs with analytically known warps."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from ..correspondences import CorrespondenceSet
from ..imaging import as_raster
from ..resampling import CC, pixel_grid, warp


def synthetic_scene(size: int = 256, seed: int = 0, width: int | None = None) -> np.ndarray:
    """Smooth texture with Gaussian blobs, rectangles and a few bright dots."""
    rng = np.random.default_rng(seed)
    h, w = size, width or size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    tex = ndimage.gaussian_filter(rng.standard_normal((h, w)), 3.0, mode="mirror")
    img = 0.45 + 0.15 * tex / tex.std()
    for _ in range(h * w // 600):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        s = rng.uniform(1.5, 5.0)
        amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.3, 0.7)
        r = int(4 * s) + 1
        x0, x1 = max(0, int(cx) - r), min(w, int(cx) + r + 1)
        y0, y1 = max(0, int(cy) - r), min(h, int(cy) + r + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        d2 = (xx[y0:y1, x0:x1] - cx) ** 2 + (yy[y0:y1, x0:x1] - cy) ** 2
        img[y0:y1, x0:x1] += amp * np.exp(-d2 / (2 * s * s))
    for _ in range(max(1, min(h, w) // 32)):
        rh, rw = rng.integers(12, 40, size=2)
        y0 = rng.integers(0, max(1, h - rh))
        x0 = rng.integers(0, max(1, w - rw))
        img[y0:y0 + rh, x0:x0 + rw] += rng.uniform(-0.35, 0.35)
    for _ in range(max(1, min(h, w) // 64)):
        img[rng.integers(2, h - 2), rng.integers(2, w - 2)] = 1.0
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class ParametricWarp:
    """Forward map master -> slave: similarity about the centre plus a Gaussian bump.

    ``rotation`` is in degrees; the bump displaces points along
    ``bump_angle`` (degrees) by ``bump_amplitude`` pixels at its centre.
    """

    tx: float = 0.0
    ty: float = 0.0
    rotation: float = 0.0
    scale: float = 1.0
    bump_amplitude: float = 0.0
    bump_sigma: float = 64.0
    bump_angle: float = 0.0
    cx: float = 0.0
    cy: float = 0.0

    def centered(self, shape) -> "ParametricWarp":
        h, w = shape
        d = asdict(self)
        d.update(cx=(w - 1) / 2.0, cy=(h - 1) / 2.0)
        return ParametricWarp(**d)

    def _linear(self) -> np.ndarray:
        th = math.radians(self.rotation)
        c, s = math.cos(th), math.sin(th)
        return self.scale * np.array([[c, -s], [s, c]])

    def _bump(self, pts: np.ndarray) -> np.ndarray:
        if self.bump_amplitude == 0:
            return np.zeros_like(pts)
        d2 = (pts[:, 0] - self.cx) ** 2 + (pts[:, 1] - self.cy) ** 2
        mag = self.bump_amplitude * np.exp(-d2 / (2 * self.bump_sigma ** 2))
        a = math.radians(self.bump_angle)
        return mag[:, None] * np.array([math.cos(a), math.sin(a)])[None, :]

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        c = np.array([self.cx, self.cy])
        return (pts - c) @ self._linear().T + c + [self.tx, self.ty] + self._bump(pts)

    def inverse(self, pts, iterations: int = 50) -> np.ndarray:
        q = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        c = np.array([self.cx, self.cy])
        inv = np.linalg.inv(self._linear())
        base = q - c - [self.tx, self.ty]
        p = base @ inv.T + c
        if self.bump_amplitude:
            for _ in range(iterations):
                p = (base - self._bump(p)) @ inv.T + c
        return p


class _Pull:
    def __init__(self, fn):
        self.apply = fn


@dataclass
class SyntheticPair:
    master: np.ndarray
    slave: np.ndarray
    truth: CorrespondenceSet  # slave = warp(master) exactly
    warp: ParametricWarp
    overlap: float


def overlap_fraction(warp_: ParametricWarp, shape) -> float:
    h, w = shape
    src = warp_.inverse(pixel_grid(shape))
    inside = (src[:, 0] >= 0) & (src[:, 0] <= w - 1) & (src[:, 1] >= 0) & (src[:, 1] <= h - 1)
    return float(inside.mean())


def generate_synthetic_pair(img, warp_: ParametricWarp, noise_sigma: float = 0.0,
                            rng_seed: int = 0, grid_step: int = 16,
                            min_overlap: float = 0.7) -> SyntheticPair:
    """Warp ``img`` into a slave frame, add Gaussian noise, and emit exact truth points.

    A warp built with ``cx = cy = 0`` is re-centred on the image first.
    """
    master = as_raster(img)
    h, w = master.shape
    if warp_.cx == 0 and warp_.cy == 0:
        warp_ = warp_.centered(master.shape)
    overlap = overlap_fraction(warp_, master.shape)
    if overlap < min_overlap:
        raise ValueError(f"overlap {overlap:.2f} below {min_overlap}")
    slave = warp(master, _Pull(warp_.inverse), master.shape, CC)
    if noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        slave = slave + rng.normal(0.0, noise_sigma, size=slave.shape)

    off = grid_step // 2
    gy, gx = np.mgrid[off:h:grid_step, off:w:grid_step]
    mpts = np.column_stack([gx.ravel(), gy.ravel()]).astype(np.float64)
    spts = warp_.apply(mpts)
    inside = (spts[:, 0] >= 0) & (spts[:, 0] <= w - 1) & (spts[:, 1] >= 0) & (spts[:, 1] <= h - 1)
    truth = CorrespondenceSet(spts[inside], mpts[inside], source="truth")
    return SyntheticPair(master, slave, truth, warp_, overlap)
