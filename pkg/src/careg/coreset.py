"""(k, eps) line coresets of planar point sets.

Boundary points are split into at most ``k`` chains by farthest-point
(Douglas-Peucker) splitting.  Each chain keeps its extreme points along
``2*ceil(1/eps)`` directions in [0, pi).  A certify-and-repair loop then
adds extremes of ``P`` until ``(1 - eps) * mu(P) <= mu(Q)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from .ca.ga import GAParams
from .ca.maca import MACAConfig, pef_bits, run_to_attractor, to_int


@dataclass
class PointSet:
    points: np.ndarray
    provenance: int | str | None = None
    ordered: bool = False  # True when points follow a traced contour

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.points) < 1:
            raise ValueError("point set must contain at least one point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self):
        return len(self.points)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for x, y in self.points:
                w.writerow([repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path, provenance=None, ordered=False) -> "PointSet":
        rows = []
        with open(path, newline="") as fh:
            for no, row in enumerate(csv.reader(fh), 1):
                if not row or (no == 1 and row[0].strip() == "x"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    raise ValueError(f"{path}: line {no}: expected 'x,y'") from None
        return cls(np.array(rows), provenance, ordered)


# ---------------------------------------------------------------------------
# Hull, width, diameter
# ---------------------------------------------------------------------------

def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise, collinear points dropped."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts
    P = [tuple(p) for p in pts]
    lower, upper = [], []
    for p in P:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(P):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def min_width(points) -> tuple[float, np.ndarray]:
    """Width and the unit normal attaining it, by rotating calipers."""
    h = convex_hull(points)
    if len(h) == 1:
        return 0.0, np.array([1.0, 0.0])
    if len(h) == 2:
        d = h[1] - h[0]
        n = np.array([-d[1], d[0]]) / np.hypot(*d)
        return 0.0, n
    m = len(h)
    best, best_n = math.inf, None
    j = 1
    for i in range(m):
        a, b = h[i], h[(i + 1) % m]
        # advance antipodal pointer while the area (distance from edge) grows
        while abs(_cross(a, b, h[(j + 1) % m])) > abs(_cross(a, b, h[j])):
            j = (j + 1) % m
        e = b - a
        L = math.hypot(*e)
        dist = abs(_cross(a, b, h[j])) / L
        if dist < best:
            best, best_n = dist, np.array([-e[1], e[0]]) / L
    return float(best), best_n


def width(ps) -> float:
    pts = ps.points if isinstance(ps, PointSet) else ps
    return min_width(pts)[0]


def diameter(ps) -> float:
    pts = ps.points if isinstance(ps, PointSet) else ps
    h = convex_hull(pts)
    if len(h) < 2:
        return 0.0
    d = h[:, None, :] - h[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max())


@dataclass(frozen=True)
class Measure:
    """A monotone shape measure plus a repair rule that raises mu(Q)."""

    name: str
    value: Callable[[np.ndarray], float]
    repair: Callable[[np.ndarray, np.ndarray], np.ndarray]


def _width_repair(P, q_idx):
    _, n = min_width(P[q_idx])
    return np.array(_extremes(P, np.arange(len(P)), n[None, :]))


def _diameter_repair(P, q_idx):
    h = convex_hull(P)
    d = ((h[:, None, :] - h[None, :, :]) ** 2).sum(-1)
    i, j = np.unravel_index(np.argmax(d), d.shape)
    out = []
    for v in (h[i], h[j]):
        out.append(int(np.flatnonzero(np.all(P == v, axis=1))[0]))
    return np.array(out)


WIDTH = Measure("width", width, _width_repair)
DIAMETER = Measure("diameter", diameter, _diameter_repair)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

@dataclass
class LineCoreset:
    source: PointSet
    k: int
    epsilon: float
    retained: np.ndarray  # sorted indices into source.points
    segments: list[np.ndarray] = field(default_factory=list)  # per chain, in boundary order
    measure: str = "width"

    def __post_init__(self):
        self.retained = np.unique(np.asarray(self.retained, dtype=int))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if len(self.retained) and (self.retained.min() < 0 or self.retained.max() >= len(self.source)):
            raise ValueError("retained indices out of range")

    @property
    def points(self) -> np.ndarray:
        return self.source.points[self.retained]

    def __len__(self):
        return len(self.retained)

    def outline(self) -> np.ndarray:
        """Retained points in boundary order."""
        order = boundary_order(self.source)
        return self.source.points[order[np.isin(order, self.retained)]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "epsilon", "|P|", "|Q|"])
            w.writerow([self.k, repr(self.epsilon), len(self.source), len(self)])
            w.writerow(["x", "y"])
            for x, y in self.points:
                w.writerow([repr(float(x)), repr(float(y))])


def boundary_order(ps: PointSet) -> np.ndarray:
    if ps.ordered:
        return np.arange(len(ps))
    c = ps.points.mean(axis=0)
    d = ps.points - c
    ang = np.arctan2(d[:, 1], d[:, 0])
    r2 = (d ** 2).sum(1)
    return np.lexsort((r2, ang))


def _chord_dist(pts, a, b):
    e = b - a
    L = math.hypot(*e)
    if L == 0:
        return np.hypot(*(pts - a).T)
    return np.abs(e[0] * (pts[:, 1] - a[1]) - e[1] * (pts[:, 0] - a[0])) / L


def split_chains(pts: np.ndarray, order: np.ndarray, k: int) -> list[np.ndarray]:
    """Farthest-point splitting of a closed boundary into at most ``k`` chains."""
    n = len(order)
    if k == 1 or n < 3:
        return [order]
    seq = pts[order]
    far = int(np.argmax(((seq - seq[0]) ** 2).sum(1)))
    cuts = [0, far] if far > 0 else [0]
    while len(cuts) < k:
        best = (0.0, None)
        bounds = cuts + [n]
        for s, e in zip(bounds[:-1], bounds[1:]):
            if e - s < 3:
                continue
            end = seq[e % n]
            d = _chord_dist(seq[s + 1:e], seq[s], end)
            i = int(np.argmax(d))
            if d[i] > best[0]:
                best = (float(d[i]), s + 1 + i)
        if best[1] is None:
            break
        cuts = sorted(cuts + [best[1]])
    bounds = cuts + [n]
    return [order[s:e] for s, e in zip(bounds[:-1], bounds[1:]) if e > s]


def directions(epsilon: float) -> np.ndarray:
    nd = 2 * math.ceil(1.0 / epsilon)
    t = np.pi * np.arange(nd) / nd
    return np.stack([np.cos(t), np.sin(t)], axis=1)


def _extremes(P, idx, dirs) -> list[int]:
    """Max and min along each direction; near-ties go to the lexicographically
    largest (max) or smallest (min) point."""
    pts = P[idx]
    scale = max(1.0, float(np.abs(pts).max()))
    tol = 1e-9 * scale
    lex = np.lexsort((pts[:, 1], pts[:, 0]))  # ascending (x, y)
    rank = np.empty(len(idx), int)
    rank[lex] = np.arange(len(idx))
    out = []
    for d in dirs:
        proj = pts @ d
        hi = np.flatnonzero(proj >= proj.max() - tol)
        lo = np.flatnonzero(proj <= proj.min() + tol)
        out.append(int(idx[hi[np.argmax(rank[hi])]]))
        out.append(int(idx[lo[np.argmin(rank[lo])]]))
    return out


def build_line_coreset(ps: PointSet, k: int, epsilon: float, measure: Measure = WIDTH) -> LineCoreset:
    if k < 1:
        raise ValueError("infeasible: k must be >= 1")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if len(ps) < 2:
        raise ValueError("need at least 2 points")
    P = ps.points
    order = boundary_order(ps)
    chains = split_chains(P, order, k)
    dirs = directions(epsilon)
    keep = set()
    for ch in chains:
        keep.update(_extremes(P, ch, dirs))
    q = np.array(sorted(keep))
    target = (1.0 - epsilon) * measure.value(P)
    while measure.value(P[q]) < target:
        add = measure.repair(P, q)
        new = np.union1d(q, add)
        if len(new) == len(q):  # repair can no longer help; keep everything
            new = np.arange(len(P))
        q = new
        if len(q) == len(P):
            break
    segs = [ch[np.isin(ch, q)] for ch in chains]
    return LineCoreset(ps, k, epsilon, q, segs, measure.name)


# ---------------------------------------------------------------------------
# Shape encoding and GA-assisted selection
# ---------------------------------------------------------------------------

def rasterize_outline(pts: np.ndarray, shape) -> np.ndarray:
    """Closed polyline through ``pts`` (x, y) drawn into a boolean mask."""
    h, w = shape
    mask = np.zeros(shape, bool)
    if len(pts) == 0:
        return mask
    loop = np.vstack([pts, pts[:1]])
    for a, b in zip(loop[:-1], loop[1:]):
        steps = int(max(abs(b - a).max(), 1) * 2) + 1
        t = np.linspace(0.0, 1.0, steps)
        xy = np.rint(a + t[:, None] * (b - a)).astype(int)
        ok = (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h)
        mask[xy[ok, 1], xy[ok, 0]] = True
    return mask


def mask_outline(mask) -> np.ndarray:
    mask = np.asarray(mask, bool)
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def shape_bits(outline, n: int, center=None) -> tuple[int, ...]:
    """n-bit angular signature: bit s is 1 when sector s's mean radius exceeds
    the outline's median radius; empty sectors give 0."""
    ys, xs = np.nonzero(outline)
    if len(xs) == 0:
        return (0,) * n
    if center is None:
        center = (xs.mean(), ys.mean())
    dx, dy = xs - center[0], ys - center[1]
    r = np.hypot(dx, dy)
    sector = ((np.arctan2(dy, dx) + np.pi) / (2 * np.pi) * n).astype(int) % n
    med = np.median(r)
    bits = []
    for s in range(n):
        rs = r[sector == s]
        bits.append(int(len(rs) > 0 and rs.mean() > med))
    return tuple(bits)


def pef_signature(outline, cfg: MACAConfig, center=None) -> tuple[int, ...]:
    bits = shape_bits(outline, cfg.n, center)
    return pef_bits(run_to_attractor(to_int(bits), cfg).state, cfg.pef_positions)


def hamming(a, b) -> int:
    return sum(int(x != y) for x, y in zip(a, b))


def candidate_distance(c: LineCoreset, target_sig, shape, cfg: MACAConfig, center=None) -> int:
    return hamming(pef_signature(rasterize_outline(c.outline(), shape), cfg, center), target_sig)


def ga_select_approximation(candidates: list[LineCoreset], target_shape, cfg: MACAConfig,
                            ga: GAParams | None = None, rng_seed: int = 0) -> LineCoreset:
    """Pick the candidate whose outline PEF bits are closest to the target's.

    Ties go to the smaller coreset, then the lower index.  The winner is then
    locally mutated (one retained point dropped or one source point added);
    a variant replaces it only if its distance is strictly lower and it still
    meets the eps guarantee.
    """
    if not candidates:
        raise ValueError("empty candidate list")
    if len(candidates) == 1:
        return candidates[0]
    ga = ga or GAParams()
    target_shape = np.asarray(target_shape, bool)
    shape = target_shape.shape
    tsig = pef_signature(mask_outline(target_shape), cfg)
    scores = [(candidate_distance(c, tsig, shape, cfg), len(c), i) for i, c in enumerate(candidates)]
    best_d, _, bi = min(scores)
    best = candidates[bi]
    if best_d == 0:
        return best
    rng = np.random.default_rng(rng_seed)
    P = best.source.points
    floor = (1.0 - best.epsilon) * width(P)
    for _ in range(ga.population):
        q = best.retained
        if rng.random() < 0.5 and len(q) > 2:
            q = np.delete(q, rng.integers(len(q)))
        else:
            q = np.union1d(q, [rng.integers(len(P))])
        if width(P[q]) < floor:
            continue
        segs = [s[np.isin(s, q)] for s in best.segments]
        var = LineCoreset(best.source, best.k, best.epsilon, q, segs, best.measure)
        d = candidate_distance(var, tsig, shape, cfg)
        if d < best_d:
            best, best_d = var, d
            if d == 0:
                break
    return best


def load_points(path) -> PointSet:
    return PointSet.from_csv(Path(path))
