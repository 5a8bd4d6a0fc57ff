"""SIFT keypoints and descriptors (Lowe 2004) plus ratio-test matching.

Coordinates follow the raster convention: x is the column, y is the row
(pointing down), and orientations are ``atan2(dy, dx)`` in that frame.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .correspondences import CorrespondenceSet
from .imaging import as_raster, gaussian_blur

log = logging.getLogger(__name__)

DESCRIPTOR_WIDTH = 4
DESCRIPTOR_BINS = 8
DESCRIPTOR_LEN = DESCRIPTOR_WIDTH * DESCRIPTOR_WIDTH * DESCRIPTOR_BINS
ORI_BINS = 36
ORI_PEAK_RATIO = 0.8
ORI_SIGMA_FACTOR = 1.5
DESC_HIST_FACTOR = 3.0
DESC_CLAMP = 0.2
MIN_OCTAVE_SIZE = 8
MAX_INTERP_STEPS = 5


@dataclass
class ScaleSpace:
    gaussians: list[np.ndarray]  # per octave: (s+3, h, w)
    dogs: list[np.ndarray]  # per octave: (s+2, h, w)
    sigmas: np.ndarray  # nominal blur of each stack image within an octave
    scales_per_octave: int
    sigma0: float
    image_shape: tuple[int, int]
    upsampled: bool = False

    @property
    def n_octaves(self) -> int:
        return len(self.gaussians)

    def octave_factor(self, octave: int) -> float:
        """Image pixels per octave pixel."""
        return 2.0 ** octave / (2.0 if self.upsampled else 1.0)


@dataclass
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float = 0.0
    response: float = 0.0
    octave: int = 0
    layer: int = 1
    octave_scale: float = 0.0  # sigma measured in octave pixels

    def sort_key(self):
        return (self.y, self.x, self.scale, self.orientation)


@dataclass
class Descriptor:
    vector: np.ndarray
    keypoint: Keypoint = field(repr=False)


def default_octaves(shape, upsample: bool = False) -> int:
    size = min(shape) * (2 if upsample else 1)
    return max(1, int(math.floor(math.log2(size / MIN_OCTAVE_SIZE))) - 1)


def _double(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    yy = np.arange(2 * h) / 2.0
    xx = np.arange(2 * w) / 2.0
    coords = np.meshgrid(yy, xx, indexing="ij")
    return ndimage.map_coordinates(img, coords, order=1, mode="mirror")


def build_scale_space(img, octaves: int | None = None, scales_per_octave: int = 3,
                      sigma0: float = 1.6, assumed_blur: float = 0.5,
                      upsample: bool = False) -> ScaleSpace:
    """Gaussian and difference-of-Gaussian stacks, ``s + 3`` images per octave."""
    img = as_raster(img)
    s = int(scales_per_octave)
    if s < 1:
        raise ValueError("scales_per_octave must be >= 1")
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    if octaves is None:
        octaves = default_octaves(img.shape, upsample)
    if octaves < 1:
        raise ValueError("octaves must be >= 1")
    size = min(img.shape) * (2 if upsample else 1)
    if size / 2 ** (octaves - 1) < MIN_OCTAVE_SIZE:
        raise ValueError(f"image {img.shape} too small for {octaves} octaves")

    base = img
    blur_in = assumed_blur
    if upsample:
        base = _double(img)
        blur_in = 2.0 * assumed_blur
    extra = sigma0 ** 2 - blur_in ** 2
    if extra > 1e-6:
        base = gaussian_blur(base, math.sqrt(extra))
    else:
        base = base.copy()

    k = 2.0 ** (1.0 / s)
    sigmas = sigma0 * k ** np.arange(s + 3)
    increments = [math.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2) for i in range(1, s + 3)]

    gaussians, dogs = [], []
    current = base
    for o in range(octaves):
        stack = [current]
        for inc in increments:
            stack.append(gaussian_blur(stack[-1], inc))
        g = np.stack(stack)
        gaussians.append(g)
        dogs.append(g[1:] - g[:-1])
        current = g[s][::2, ::2]
    return ScaleSpace(gaussians, dogs, sigmas, s, sigma0, img.shape, upsample)


# ---------------------------------------------------------------------------
# Detection and localisation
# ---------------------------------------------------------------------------

def _gradient_hessian(D, l, y, x):
    c = D[l, y, x]
    g = np.array([
        (D[l, y, x + 1] - D[l, y, x - 1]) * 0.5,
        (D[l, y + 1, x] - D[l, y - 1, x]) * 0.5,
        (D[l + 1, y, x] - D[l - 1, y, x]) * 0.5,
    ])
    dxx = D[l, y, x + 1] + D[l, y, x - 1] - 2 * c
    dyy = D[l, y + 1, x] + D[l, y - 1, x] - 2 * c
    dss = D[l + 1, y, x] + D[l - 1, y, x] - 2 * c
    dxy = (D[l, y + 1, x + 1] - D[l, y + 1, x - 1] - D[l, y - 1, x + 1] + D[l, y - 1, x - 1]) * 0.25
    dxs = (D[l + 1, y, x + 1] - D[l + 1, y, x - 1] - D[l - 1, y, x + 1] + D[l - 1, y, x - 1]) * 0.25
    dys = (D[l + 1, y + 1, x] - D[l + 1, y - 1, x] - D[l - 1, y + 1, x] + D[l - 1, y - 1, x]) * 0.25
    H = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return g, H


def _localize(ss: ScaleSpace, o: int, l: int, y: int, x: int,
              contrast_thresh: float, edge_ratio: float):
    D = ss.dogs[o]
    s = ss.scales_per_octave
    _, h, w = D.shape
    for _ in range(MAX_INTERP_STEPS):
        g, H = _gradient_hessian(D, l, y, x)
        try:
            offset = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            break
        x += int(round(offset[0]))
        y += int(round(offset[1]))
        l += int(round(offset[2]))
        if l < 1 or l > s or y < 1 or y > h - 2 or x < 1 or x > w - 2:
            return None
    else:
        return None

    contrast = D[l, y, x] + 0.5 * float(g @ offset)
    if abs(contrast) < contrast_thresh:
        return None
    dxx, dyy, dxy = H[0, 0], H[1, 1], H[0, 1]
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    if det <= 0 or tr * tr * edge_ratio >= (edge_ratio + 1) ** 2 * det:
        return None

    f = ss.octave_factor(o)
    oct_scale = ss.sigma0 * 2.0 ** ((l + offset[2]) / s)
    kx = (x + offset[0]) * f
    ky = (y + offset[1]) * f
    H0, W0 = ss.image_shape
    if not (0 <= kx < W0 and 0 <= ky < H0):
        return None
    return Keypoint(x=float(kx), y=float(ky), scale=float(oct_scale * f),
                    response=float(abs(contrast)), octave=o, layer=l,
                    octave_scale=float(oct_scale))


def detect_and_localize(ss: ScaleSpace, contrast_thresh: float = 0.03,
                        edge_ratio_thresh: float = 10.0) -> list[Keypoint]:
    """Sub-pixel refined DoG extrema passing contrast and edge tests."""
    if contrast_thresh <= 0 or edge_ratio_thresh <= 0:
        raise ValueError("thresholds must be positive")
    prefilter = 0.5 * contrast_thresh
    footprint = np.ones((3, 3, 3), dtype=bool)
    footprint[1, 1, 1] = False
    out: list[Keypoint] = []
    seen = set()
    for o, D in enumerate(ss.dogs):
        nmax = ndimage.maximum_filter(D, footprint=footprint, mode="nearest")
        nmin = ndimage.minimum_filter(D, footprint=footprint, mode="nearest")
        ext = ((D >= nmax) | (D <= nmin)) & (np.abs(D) > prefilter)
        ext[0] = ext[-1] = False
        ext[:, :1] = ext[:, -1:] = False
        ext[:, :, :1] = ext[:, :, -1:] = False
        for l, y, x in np.argwhere(ext):
            kp = _localize(ss, o, int(l), int(y), int(x), contrast_thresh, edge_ratio_thresh)
            if kp is None:
                continue
            key = (o, round(kp.x, 6), round(kp.y, 6), round(kp.scale, 6))
            if key in seen:
                continue
            seen.add(key)
            out.append(kp)
    out.sort(key=Keypoint.sort_key)
    return out


# ---------------------------------------------------------------------------
# Orientation
# ---------------------------------------------------------------------------

def _patch_gradients(L: np.ndarray, cx: int, cy: int, radius: int):
    """Central-difference gradients over the square window, clipped to the image."""
    h, w = L.shape
    y0, y1 = max(1, cy - radius), min(h - 2, cy + radius)
    x0, x1 = max(1, cx - radius), min(w - 2, cx + radius)
    if y0 > y1 or x0 > x1:
        return None
    dx = L[y0:y1 + 1, x0 + 1:x1 + 2] - L[y0:y1 + 1, x0 - 1:x1]
    dy = L[y0 + 1:y1 + 2, x0:x1 + 1] - L[y0 - 1:y1, x0:x1 + 1]
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    return xx - cx, yy - cy, dx, dy


def orientation_histogram(L: np.ndarray, cx: int, cy: int, sigma: float) -> np.ndarray:
    radius = int(round(3.0 * sigma))
    grads = _patch_gradients(L, cx, cy, radius)
    hist = np.zeros(ORI_BINS)
    if grads is None:
        return hist
    ox, oy, dx, dy = grads
    inside = ox ** 2 + oy ** 2 <= radius ** 2
    mag = np.hypot(dx, dy)[inside]
    ang = np.arctan2(dy, dx)[inside] % (2 * np.pi)
    weight = np.exp(-(ox ** 2 + oy ** 2)[inside] / (2.0 * sigma ** 2))
    bins = np.rint(ang * ORI_BINS / (2 * np.pi)).astype(int) % ORI_BINS
    np.add.at(hist, bins, mag * weight)
    # circular [1 4 6 4 1]/16 smoothing
    smooth = (np.roll(hist, 2) + np.roll(hist, -2)
              + 4 * (np.roll(hist, 1) + np.roll(hist, -1)) + 6 * hist) / 16.0
    return smooth


def histogram_peaks(hist: np.ndarray, ratio: float = ORI_PEAK_RATIO) -> list[float]:
    """Interpolated peak angles (radians) of all local maxima >= ratio * max."""
    top = hist.max()
    if top <= 0:
        return []
    left = np.roll(hist, 1)
    right = np.roll(hist, -1)
    angles = []
    for b in np.nonzero((hist > left) & (hist > right) & (hist >= ratio * top))[0]:
        denom = left[b] - 2 * hist[b] + right[b]
        delta = 0.5 * (left[b] - right[b]) / denom if denom != 0 else 0.0
        angles.append(((b + delta) * 2 * np.pi / ORI_BINS) % (2 * np.pi))
    return angles


def assign_orientations(ss: ScaleSpace, kps: list[Keypoint]) -> list[Keypoint]:
    """One oriented copy per dominant gradient-histogram peak."""
    out = []
    for kp in kps:
        L = ss.gaussians[kp.octave][kp.layer]
        f = ss.octave_factor(kp.octave)
        cx, cy = int(round(kp.x / f)), int(round(kp.y / f))
        hist = orientation_histogram(L, cx, cy, ORI_SIGMA_FACTOR * kp.octave_scale)
        angles = histogram_peaks(hist)
        if not angles:
            angles = [0.0]
        for a in angles:
            out.append(Keypoint(kp.x, kp.y, kp.scale, float(a), kp.response,
                                kp.octave, kp.layer, kp.octave_scale))
    out.sort(key=Keypoint.sort_key)
    return out


# ---------------------------------------------------------------------------
# Descriptors
# ---------------------------------------------------------------------------

def descriptor_radius(octave_scale: float) -> int:
    hist_width = DESC_HIST_FACTOR * octave_scale
    return int(round(hist_width * math.sqrt(2) * (DESCRIPTOR_WIDTH + 1) * 0.5))


def _descriptor_vector(L: np.ndarray, x: float, y: float, octave_scale: float,
                       angle: float):
    d, n = DESCRIPTOR_WIDTH, DESCRIPTOR_BINS
    hist_width = DESC_HIST_FACTOR * octave_scale
    radius = descriptor_radius(octave_scale)
    h, w = L.shape
    cx, cy = int(round(x)), int(round(y))
    if cx - radius < 1 or cy - radius < 1 or cx + radius > w - 2 or cy + radius > h - 2:
        return None
    ox, oy, dx, dy = _patch_gradients(L, cx, cy, radius)
    cos_t, sin_t = math.cos(angle), math.sin(angle)
    # sample offsets relative to the sub-pixel keypoint, rotated into the keypoint frame
    px = ox + (cx - x)
    py = oy + (cy - y)
    c_rot = (px * cos_t + py * sin_t) / hist_width
    r_rot = (-px * sin_t + py * cos_t) / hist_width
    rbin = r_rot + d / 2 - 0.5
    cbin = c_rot + d / 2 - 0.5
    sel = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    if not sel.any():
        return None
    rbin, cbin = rbin[sel], cbin[sel]
    weight = np.exp(-(c_rot[sel] ** 2 + r_rot[sel] ** 2) / (2.0 * (0.5 * d) ** 2))
    mag = np.hypot(dx, dy)[sel] * weight
    obin = ((np.arctan2(dy, dx)[sel] - angle) % (2 * np.pi)) * n / (2 * np.pi)

    r0 = np.floor(rbin).astype(int)
    c0 = np.floor(cbin).astype(int)
    o0 = np.floor(obin).astype(int)
    dr, dc, do = rbin - r0, cbin - c0, obin - o0
    hist = np.zeros((d + 2, d + 2, n))
    for ir, wr in ((0, 1 - dr), (1, dr)):
        for ic, wc in ((0, 1 - dc), (1, dc)):
            for io, wo in ((0, 1 - do), (1, do)):
                np.add.at(hist, (r0 + 1 + ir, c0 + 1 + ic, (o0 + io) % n), mag * wr * wc * wo)
    return normalize_descriptor(hist[1:d + 1, 1:d + 1, :].reshape(-1))


def normalize_descriptor(raw: np.ndarray, clamp: float = DESC_CLAMP):
    """Unit-normalise, clamp components at ``clamp``, renormalise; None if flat."""
    norm = np.linalg.norm(raw)
    if norm <= 1e-12:
        return None
    vec = np.minimum(raw / norm, clamp)
    return vec / np.linalg.norm(vec)


def compute_descriptors(ss: ScaleSpace, kps: list[Keypoint]) -> list[Descriptor]:
    """128-d descriptors; keypoints too close to the border or flat are dropped."""
    out = []
    dropped = 0
    for kp in kps:
        L = ss.gaussians[kp.octave][kp.layer]
        f = ss.octave_factor(kp.octave)
        vec = _descriptor_vector(L, kp.x / f, kp.y / f, kp.octave_scale, kp.orientation)
        if vec is None:
            dropped += 1
            continue
        out.append(Descriptor(vec, kp))
    if dropped:
        log.debug("dropped %d of %d keypoints during description", dropped, len(kps))
    out.sort(key=lambda d: d.keypoint.sort_key())
    return out


@dataclass
class SiftParams:
    octaves: int | None = None
    scales_per_octave: int = 3
    sigma0: float = 1.6
    contrast_thresh: float = 0.03
    edge_ratio: float = 10.0
    upsample: bool = False


def sift(img, params: SiftParams | None = None) -> list[Descriptor]:
    """Full SIFT: scale space, detection, orientation, description."""
    p = params or SiftParams()
    ss = build_scale_space(img, p.octaves, p.scales_per_octave, p.sigma0, upsample=p.upsample)
    kps = detect_and_localize(ss, p.contrast_thresh, p.edge_ratio)
    kps = assign_orientations(ss, kps)
    return compute_descriptors(ss, kps)


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def _as_matrix(descs) -> np.ndarray:
    if len(descs) == 0:
        return np.zeros((0, DESCRIPTOR_LEN))
    if isinstance(descs, np.ndarray):
        return np.asarray(descs, dtype=np.float64)
    return np.stack([d.vector for d in descs])


def _points(descs) -> np.ndarray:
    if isinstance(descs, np.ndarray) or len(descs) == 0:
        return np.zeros((len(descs), 2))
    return np.array([[d.keypoint.x, d.keypoint.y] for d in descs])


def match_descriptors(a, b, ratio: float = 0.8) -> CorrespondenceSet:
    """Nearest-neighbour matching from ``a`` (slave) into ``b`` (master).

    A match is kept when nearest / second-nearest distance < ``ratio``;
    if several ``a`` entries pick the same ``b`` entry only the closest
    survives.  Scores are ``1 - d1/d2``.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    A, B = _as_matrix(a), _as_matrix(b)
    empty = CorrespondenceSet(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0),
                              slave_index=np.zeros(0, int), master_index=np.zeros(0, int))
    if len(B) < 2:
        log.warning("ratio test needs >= 2 target descriptors, got %d", len(B))
        return empty
    if len(A) == 0:
        return empty
    d2 = (A ** 2).sum(1)[:, None] + (B ** 2).sum(1)[None, :] - 2.0 * A @ B.T
    dist = np.sqrt(np.maximum(d2, 0.0))
    order = np.argsort(dist, axis=1, kind="stable")[:, :2]
    # recompute the two candidates directly; the expanded form loses precision near 0
    d1 = np.linalg.norm(A - B[order[:, 0]], axis=1)
    dn = np.linalg.norm(A - B[order[:, 1]], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(dn > 0, d1 / np.where(dn > 0, dn, 1.0), 1.0)
    ok = r < ratio
    best: dict[int, int] = {}
    for i in np.nonzero(ok)[0]:
        j = int(order[i, 0])
        if j not in best or d1[i] < d1[best[j]]:
            best[j] = int(i)
    ia = np.array(sorted(best.values()), dtype=int)
    ib = order[ia, 0].astype(int)
    pa, pb = _points(a), _points(b)
    return CorrespondenceSet(pa[ia], pb[ib], 1.0 - r[ia], source="sift",
                             slave_index=ia, master_index=ib)


# ---------------------------------------------------------------------------
# Text dump
# ---------------------------------------------------------------------------

def save_features(descs: list[Descriptor], path) -> None:
    """One line per feature: ``x y scale orientation d0..d127``."""
    lines = []
    for d in descs:
        k = d.keypoint
        head = [k.x, k.y, k.scale, k.orientation]
        lines.append(" ".join(repr(float(v)) for v in head + list(d.vector)))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_features(path) -> list[Descriptor]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        vals = line.split()
        if len(vals) != 4 + DESCRIPTOR_LEN:
            raise ValueError(f"{path}:{lineno}: expected {4 + DESCRIPTOR_LEN} fields, got {len(vals)}")
        v = [float(t) for t in vals]
        kp = Keypoint(x=v[0], y=v[1], scale=v[2], orientation=v[3])
        out.append(Descriptor(np.array(v[4:]), kp))
    return out
