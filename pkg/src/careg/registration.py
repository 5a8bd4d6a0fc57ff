"""Correspondence refinement and the weighted-mean (local affine) transform.

All transforms map master pixel coordinates to slave coordinates, which is
what the pull-based resampler needs.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .ca.maca import MACAConfig, maca_classify
from .ca.ruledb import ShapeRuleDB
from .correspondences import CorrespondenceSet

SNAP = 1e-9
CHUNK = 16384


def _design(pts):
    return np.hstack([pts, np.ones((len(pts), 1))])


def _rank_ok(pts) -> bool:
    return len(pts) >= 3 and np.linalg.matrix_rank(_design(pts - pts.mean(0)), tol=1e-9) == 3


@dataclass
class AffineMap:
    """y = A x + b, with coefficient rows ``[[a11, a12, b1], [a21, a22, b2]]``."""

    coeffs: np.ndarray
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def A(self):
        return self.coeffs[:, :2]

    @property
    def b(self):
        return self.coeffs[:, 2]

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return pts @ self.A.T + self.b

    __call__ = apply

    @classmethod
    def identity(cls):
        return cls(np.array([[1.0, 0, 0], [0, 1.0, 0]]))


def _lstsq_affine(src, dst) -> np.ndarray:
    sol, *_ = np.linalg.lstsq(_design(src), dst, rcond=None)
    return sol.T


def fit_affine_baseline(cs: CorrespondenceSet) -> AffineMap:
    """Global least-squares affine from master to slave points."""
    if not _rank_ok(cs.master):
        raise ValueError("rank deficiency: need >= 3 non-collinear control points")
    C = _lstsq_affine(cs.master, cs.slave)
    res = np.hypot(*(cs.master @ C[:, :2].T + C[:, 2] - cs.slave).T)
    return AffineMap(C, res)


def _fallback_global(src, dst) -> np.ndarray:
    """Affine if the points allow it, else a pure translation."""
    if _rank_ok(src):
        return _lstsq_affine(src, dst)
    C = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    if len(src):
        C[:, 2] = (dst - src).mean(0)
    return C


@dataclass
class WMTransform:
    controls: np.ndarray  # (n, 2) master points
    targets: np.ndarray  # (n, 2) slave points
    coeffs: np.ndarray  # (n, 2, 3) local affine per control
    neighbors: int = 6
    power: float = 2.0
    fallbacks: list = field(default_factory=list)

    def weights(self, q) -> np.ndarray:
        """Normalised inverse-distance weights of the controls at query ``q``."""
        return self._weights(np.asarray(q, dtype=np.float64).reshape(1, 2))[0]

    def _weights(self, Q):
        C = self.controls
        o = C.mean(axis=0)
        Qc, Cc = Q - o, C - o
        # expanded squared distances (BLAS); the nearest one is recomputed exactly
        d2 = (Qc * Qc).sum(1)[:, None] + (Cc * Cc).sum(1)[None, :] - 2.0 * Qc @ Cc.T
        np.maximum(d2, SNAP * SNAP, out=d2)
        j = d2.argmin(axis=1)
        near = np.hypot(*(Q - C[j]).T)
        snap = near < SNAP
        # scale by the nearest distance so large p cannot underflow
        ratio = np.where(snap, 1.0, near * near)[:, None] / d2
        w = ratio if self.power == 2.0 else ratio ** (0.5 * self.power)
        if snap.any():
            d = np.sqrt(((Q[snap, None, :] - C[None]) ** 2).sum(-1))
            w[snap] = (d == d.min(axis=1, keepdims=True)).astype(float)
        return w / w.sum(axis=1, keepdims=True)

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        out = np.empty_like(pts)
        flat = self.coeffs.reshape(len(self.coeffs), 6)
        for s in range(0, len(pts), CHUNK):
            Q = pts[s:s + CHUNK]
            C = (self._weights(Q) @ flat).reshape(-1, 2, 3)
            out[s:s + CHUNK] = np.einsum("nij,nj->ni", C[:, :, :2], Q) + C[:, :, 2]
        return out

    __call__ = apply

    def to_dict(self) -> dict:
        return {
            "type": "weighted_mean",
            "direction": "master_to_slave",
            "neighbors": self.neighbors,
            "power": self.power,
            "controls": self.controls.tolist(),
            "targets": self.targets.tolist(),
            "coeffs": self.coeffs.tolist(),
            "fallbacks": list(self.fallbacks),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "WMTransform":
        d = json.loads(Path(path).read_text())
        if d.get("type") != "weighted_mean":
            raise ValueError("not a weighted-mean transform file")
        return cls(np.array(d["controls"], float).reshape(-1, 2), np.array(d["targets"], float).reshape(-1, 2),
                   np.array(d["coeffs"], float).reshape(-1, 2, 3), int(d["neighbors"]), float(d["power"]),
                   list(d["fallbacks"]))


def fit_weighted_mean(cs: CorrespondenceSet, neighbors: int = 6, power: float = 2.0) -> WMTransform:
    """Local affine per control (least squares on its r nearest controls),
    blended by normalised inverse-distance weights.

    Rank-deficient neighbourhoods fall back to the global fit; their indices
    are listed in ``fallbacks``.
    """
    if neighbors < 3:
        raise ValueError("neighbors must be >= 3")
    if power <= 0:
        raise ValueError("power must be positive")
    src, dst = cs.master, cs.slave
    n = len(src)
    if n == 0:
        raise ValueError("no control points")
    glob = _fallback_global(src, dst)
    if not _rank_ok(src):
        warnings.warn("control points are degenerate; using a global map", stacklevel=2)
        return WMTransform(src.copy(), dst.copy(), np.repeat(glob[None], n, 0), neighbors, power,
                           list(range(n)))
    r = min(neighbors, n)
    _, nn = cKDTree(src).query(src, k=r)
    nn = np.asarray(nn).reshape(n, r)
    coeffs = np.empty((n, 2, 3))
    fallbacks = []
    for i in range(n):
        idx = nn[i]
        if _rank_ok(src[idx]):
            coeffs[i] = _lstsq_affine(src[idx], dst[idx])
        else:
            coeffs[i] = glob
            fallbacks.append(i)
    return WMTransform(src.copy(), dst.copy(), coeffs, neighbors, power, fallbacks)


def apply_transform(t, pt) -> np.ndarray:
    out = t.apply(np.asarray(pt, dtype=np.float64).reshape(-1, 2))
    return out[0] if np.ndim(pt) == 1 else out


def prune_outliers(cs: CorrespondenceSet, factor: float = 3.0, rounds: int = 2,
                   floor: float = 1e-6) -> CorrespondenceSet:
    """Drop pairs whose affine-baseline residual exceeds factor * median."""
    cur = cs
    for _ in range(rounds):
        if not _rank_ok(cur.master):
            break
        res = fit_affine_baseline(cur).residuals
        keep = res <= factor * max(float(np.median(res)), floor)
        if keep.all():
            break
        cur = cur.subset(keep, cur.source)
    return cur


# ---------------------------------------------------------------------------
# Object-aware refinement
# ---------------------------------------------------------------------------

BACKGROUND = "background"
UNKNOWN = "unknown"


@dataclass
class InterpretedObjects:
    """Object id raster plus the class assigned to each id (0 = background)."""

    labels: np.ndarray
    classes: dict

    def class_at(self, pts) -> list[str]:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        h, w = self.labels.shape
        c = np.clip(np.floor(pts[:, 0] + 0.5).astype(int), 0, w - 1)
        r = np.clip(np.floor(pts[:, 1] + 0.5).astype(int), 0, h - 1)
        ids = self.labels[r, c]
        return [BACKGROUND if i == 0 else self.classes.get(int(i), UNKNOWN) for i in ids]


def interpret_objects(labels, patterns: dict, cfg: MACAConfig, db: ShapeRuleDB) -> InterpretedObjects:
    """Classify each object id's bit pattern through the MACA and the DB."""
    classes = {int(k): maca_classify(p, cfg, db)[0] for k, p in patterns.items() if int(k) != 0}
    return InterpretedObjects(np.asarray(labels), classes)


def refine_correspondences(matches: CorrespondenceSet, slave_objs: InterpretedObjects,
                           master_objs: InterpretedObjects, db: ShapeRuleDB,
                           threshold: float = 0.9) -> CorrespondenceSet:
    """Keep pairs whose endpoints share a class; pairs touching an unknown
    object survive only with score > threshold."""
    if len(db) == 0:
        warnings.warn("empty rule DB; refinement disabled", stacklevel=2)
        return matches
    cs = slave_objs.class_at(matches.slave)
    cm = master_objs.class_at(matches.master)
    keep = np.zeros(len(matches), bool)
    for i, (a, b) in enumerate(zip(cs, cm)):
        if a == UNKNOWN or b == UNKNOWN:
            keep[i] = matches.scores[i] > threshold
        else:
            keep[i] = a == b
    return matches.subset(keep, "refined")
