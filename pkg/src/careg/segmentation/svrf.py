"""Support-vector random field labelling: SVM unaries, contrast-sensitive
Potts smoothing, seed-grown initialisation and ICM inference."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.special import log_softmax

from ..imaging import as_raster, canny
from .kernels import mdk_features, mdk_modified_features
from .mixture import MixtureEnsemble, fit_mixture_ensemble


class UnaryModel(Protocol):
    n_classes: int

    def unary(self, img: np.ndarray) -> np.ndarray:
        """Per-pixel log scores, shape (H, W, n_classes)."""
        ...


@dataclass
class TableUnary:
    """Fixed unary table, mostly for testing."""

    scores: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.scores.shape[-1]

    def unary(self, img) -> np.ndarray:
        return np.asarray(self.scores, dtype=np.float64)


@dataclass
class ClusterSeeds:
    positions: np.ndarray  # (s, 2) integer (row, col)
    labels: np.ndarray  # (s,) label per seed
    count: int

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=int).reshape(-1, 2)
        self.labels = np.asarray(self.labels, dtype=int).ravel()
        if len(self.positions) != len(self.labels) or len(self.labels) == 0:
            raise ValueError("need one label per seed and at least one seed")
        if self.count < 1 or self.labels.min() < 0 or self.labels.max() >= self.count:
            raise ValueError("seed labels must lie in [0, count)")

    def check_inside(self, shape) -> None:
        r, c = self.positions.T
        if (r < 0).any() or (c < 0).any() or (r >= shape[0]).any() or (c >= shape[1]).any():
            raise ValueError("seed outside image")


@dataclass
class LabelField:
    labels: np.ndarray  # (H, W) ints in [0, L)
    n_labels: int
    energies: list
    names: list | None = None

    def save(self, path) -> None:
        """8-bit palette PNG plus ``<path>.legend.txt``."""
        path = Path(path)
        im = Image.fromarray(self.labels.astype(np.uint8), mode="P")
        rng = np.random.default_rng(0)
        pal = rng.integers(0, 256, (256, 3)).astype(np.uint8)
        pal[0] = 0
        im.putpalette(pal.ravel().tolist())
        im.save(path)
        names = self.names or [f"class{k}" for k in range(self.n_labels)]
        legend = "".join(f"{k}\t{n}\n" for k, n in enumerate(names))
        path.with_suffix(path.suffix + ".legend.txt").write_text(legend)


# ---------------------------------------------------------------------------
# Seeds and features
# ---------------------------------------------------------------------------

EIGHT = np.ones((3, 3), bool)


def derive_seeds(object_mask) -> ClusterSeeds:
    """Background seed (label 0) at the pixel farthest from any object, then
    one seed per 8-connected component at its centroid snapped into it."""
    mask = np.asarray(object_mask, bool)
    comp, n = ndimage.label(mask, structure=EIGHT)
    pos, lab = [], []
    if (~mask).any():
        dist = ndimage.distance_transform_edt(~mask) if mask.any() else np.ones(mask.shape)
        pos.append(np.unravel_index(int(np.argmax(dist)), mask.shape))
        lab.append(0)
    for k in range(1, n + 1):
        rr, cc = np.nonzero(comp == k)
        cy, cx = rr.mean(), cc.mean()
        i = int(np.argmin((rr - cy) ** 2 + (cc - cx) ** 2))
        pos.append((rr[i], cc[i]))
        lab.append(k)
    return ClusterSeeds(np.array(pos), np.array(lab), n + 1)


def largest_components(mask, n: int) -> np.ndarray:
    """Keep the ``n`` largest 8-connected components (ties: first in raster order)."""
    comp, k = ndimage.label(np.asarray(mask, bool), structure=EIGHT)
    if k <= n:
        return comp > 0
    area = np.bincount(comp.ravel())[1:]
    keep = 1 + np.argsort(-area, kind="stable")[:n]
    return np.isin(comp, keep)


def pixel_features(img, edges=None) -> np.ndarray:
    """(H, W, 5): intensity, 3x3 mean, 3x3 std, edge gradient magnitude,
    distance to the nearest edge pixel."""
    img = as_raster(img)
    if edges is None:
        edges = canny(img)
    mean = ndimage.uniform_filter(img, 3, mode="mirror")
    sq = ndimage.uniform_filter(img * img, 3, mode="mirror")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    if edges.mask.any():
        dist = ndimage.distance_transform_edt(~edges.mask)
    else:
        dist = np.full(img.shape, float(max(img.shape)))
    return np.stack([img, mean, std, edges.gradient_mag, dist], axis=-1)


SPECTRAL = (0, 1, 2)
SPATIAL = (3, 4)


# ---------------------------------------------------------------------------
# SVM unary scorer on the combined mixture-kernel feature map
# ---------------------------------------------------------------------------

def train_linear_svm(F, y, n_classes, lam=1e-3, iters=300) -> np.ndarray:
    """One-vs-rest hinge-loss SVM by full-batch subgradient descent.

    Returns W of shape (D + 1, n_classes); the last row is the bias.
    """
    X = np.hstack([F, np.ones((len(F), 1))])
    Y = np.where(np.asarray(y)[:, None] == np.arange(n_classes)[None, :], 1.0, -1.0)
    W = np.zeros((X.shape[1], n_classes))
    for t in range(1, iters + 1):
        margin = Y * (X @ W)
        active = (margin < 1.0).astype(float)
        grad = lam * W - (X.T @ (active * Y)) / len(X)
        grad[-1] += lam * W[-1]  # do not regularise the bias
        W -= grad / (lam * t + 1.0)
    return W


@dataclass
class SVMUnary:
    ens_x: MixtureEnsemble
    ens_y: MixtureEnsemble
    mu: float
    W: np.ndarray
    scale: np.ndarray  # per-feature (mean, std) for standardisation
    modified: bool = False

    @property
    def n_classes(self) -> int:
        return self.W.shape[1]

    def _embed(self, feats: np.ndarray) -> np.ndarray:
        Z = (feats - self.scale[0]) / self.scale[1]
        fx = self._map(self.ens_x.evaluate(Z[:, SPECTRAL]))
        fy = self._map(self.ens_y.evaluate(Z[:, SPATIAL]))
        return np.hstack([np.sqrt(self.mu) * fx, np.sqrt(1 - self.mu) * fy])

    def _map(self, ens):
        if self.modified:
            mm = mdk_modified_features(ens)
            out = np.zeros((ens.n, mm.features.shape[1]))
            out[mm.domain] = mm.features
            return out
        return mdk_features(ens)

    def scores(self, feats: np.ndarray) -> np.ndarray:
        F = self._embed(feats)
        return np.hstack([F, np.ones((len(F), 1))]) @ self.W

    def unary_from_features(self, feats: np.ndarray) -> np.ndarray:
        h, w, d = feats.shape
        return log_softmax(self.scores(feats.reshape(-1, d)), axis=1).reshape(h, w, -1)

    def unary(self, img) -> np.ndarray:
        return self.unary_from_features(pixel_features(img))


def train_unary(feats: np.ndarray, train_idx: np.ndarray, y: np.ndarray, n_classes: int,
                mu: float = 0.5, M: int | None = None, E: int = 5, rng_seed: int = 0,
                modified: bool = False) -> SVMUnary:
    """Fit mixture ensembles and the SVM on pixels ``train_idx`` (flat indices)."""
    X = feats.reshape(-1, feats.shape[-1])
    mean, std = X.mean(0), X.std(0)
    std = np.where(std > 1e-12, std, 1.0)
    Z = (X[train_idx] - mean) / std
    M = M or max(2, n_classes)
    ex = fit_mixture_ensemble(_dedupe_safe(Z[:, SPECTRAL]), M, E, rng_seed)
    ey = fit_mixture_ensemble(_dedupe_safe(Z[:, SPATIAL]), M, E, rng_seed + 1)
    model = SVMUnary(ex, ey, mu, np.zeros((1, n_classes)), np.stack([mean, std]), modified)
    F = model._embed(X[train_idx])
    model.W = train_linear_svm(F, y, n_classes)
    return model


def _dedupe_safe(Z):
    # tiny deterministic jitter so EM always sees enough distinct vectors
    rng = np.random.default_rng(12345)
    return Z + 1e-9 * rng.standard_normal(Z.shape)


# ---------------------------------------------------------------------------
# Energy, region growing, ICM
# ---------------------------------------------------------------------------

def pair_weights(img) -> tuple[np.ndarray, np.ndarray]:
    """(1 - contrast) for horizontal (H, W-1) and vertical (H-1, W) neighbours."""
    img = np.asarray(img, dtype=np.float64)
    wh = 1.0 - np.clip(np.abs(np.diff(img, axis=1)), 0.0, 1.0)
    wv = 1.0 - np.clip(np.abs(np.diff(img, axis=0)), 0.0, 1.0)
    return wh, wv


def energy(labels, U, beta, wh, wv) -> float:
    """-sum_i U_i(y_i) - sum_i sum_{j in N4(i)} beta (1 - c_ij) [y_i == y_j]."""
    h, w = labels.shape
    un = np.take_along_axis(U, labels[..., None], axis=2)[..., 0].sum()
    same_h = (labels[:, 1:] == labels[:, :-1]) * wh
    same_v = (labels[1:, :] == labels[:-1, :]) * wv
    return float(-un - 2.0 * beta * (same_h.sum() + same_v.sum()))


def region_grow(U, seeds: ClusterSeeds) -> np.ndarray:
    """Synchronous CA growth: each unlabelled pixel with labelled 4-neighbours
    takes the neighbour label it scores highest on (ties: lowest label)."""
    h, w, L = U.shape
    lab = np.full((h, w), -1)
    lab[seeds.positions[:, 0], seeds.positions[:, 1]] = seeds.labels
    while (lab < 0).any():
        best = np.full((h, w), -np.inf)
        choice = np.full((h, w), -1)
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nb = np.full((h, w), -1)
            ys = slice(max(dy, 0), h + min(dy, 0))
            yd = slice(max(-dy, 0), h + min(-dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            xd = slice(max(-dx, 0), w + min(-dx, 0))
            nb[yd, xd] = lab[ys, xs]
            ok = nb >= 0
            sc = np.where(ok, np.take_along_axis(U, np.maximum(nb, 0)[..., None], 2)[..., 0], -np.inf)
            better = ok & ((sc > best) | ((sc == best) & (nb < choice)))
            best = np.where(better, sc, best)
            choice = np.where(better, nb, choice)
        grow = (lab < 0) & (choice >= 0)
        if not grow.any():
            break
        lab[grow] = choice[grow]
    lab[lab < 0] = 0
    return lab


def icm(U, init, beta, wh, wv, max_sweeps: int = 10):
    """Iterated conditional modes; raster order, direction alternating per sweep.

    Returns (labels, energies) with energies[0] the initial energy.
    """
    U = np.asarray(U, dtype=np.float64)
    h, w, L = U.shape
    lab = np.array(init, dtype=int)
    energies = [energy(lab, U, beta, wh, wv)]
    if beta == 0:
        # decoupled: one pass of the per-site argmax, keeping current labels on ties
        best = U.max(axis=2, keepdims=True)
        cur = np.take_along_axis(U, lab[..., None], 2)
        lab = np.where(cur[..., 0] >= best[..., 0], lab, np.argmax(U, axis=2))
        energies.append(energy(lab, U, beta, wh, wv))
        return lab, energies
    Ul = U.tolist()
    labl = lab.tolist()
    whl, wvl = wh.tolist(), wv.tolist()
    b2 = 2.0 * beta
    order = [(r, c) for r in range(h) for c in range(w)]
    for sweep in range(max_sweeps):
        changed = 0
        seq = order if sweep % 2 == 0 else order[::-1]
        for r, c in seq:
            cost = [-u for u in Ul[r][c]]
            if c > 0:
                cost[labl[r][c - 1]] -= b2 * whl[r][c - 1]
            if c < w - 1:
                cost[labl[r][c + 1]] -= b2 * whl[r][c]
            if r > 0:
                cost[labl[r - 1][c]] -= b2 * wvl[r - 1][c]
            if r < h - 1:
                cost[labl[r + 1][c]] -= b2 * wvl[r][c]
            cur = labl[r][c]
            m = min(cost)
            if cost[cur] > m:
                labl[r][c] = cost.index(m)
                changed += 1
        lab = np.array(labl)
        energies.append(energy(lab, U, beta, wh, wv))
        if not changed:
            break
    return lab, energies


def svrf_segment(img, unary_model: UnaryModel, beta: float, seeds: ClusterSeeds,
                 max_sweeps: int = 10, unary=None) -> LabelField:
    """ICM from the seed-grown initialisation.  ``unary`` may pass precomputed scores."""
    img = as_raster(img)
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if unary_model.n_classes != seeds.count:
        raise ValueError(f"unary model has {unary_model.n_classes} classes, "
                         f"{seeds.count} labels requested")
    if seeds.count < 2:
        raise ValueError("SVRF inference needs at least 2 labels")
    seeds.check_inside(img.shape)
    U = unary if unary is not None else unary_model.unary(img)
    if U.shape != img.shape + (seeds.count,):
        raise ValueError("unary scores do not match the image")
    wh, wv = pair_weights(img)
    init = region_grow(U, seeds)
    lab, en = icm(U, init, beta, wh, wv, max_sweeps)
    return LabelField(lab, seeds.count, en)


def segment_objects(img, object_mask, beta: float = 1.0, E: int = 3, mu: float | None = None,
                    max_train: int = 1500, rng_seed: int = 0, max_sweeps: int = 5,
                    edges=None, max_objects: int = 6) -> LabelField:
    """Label ``img`` into background plus one class per object component.

    Training pixels are the object components and the background away from
    them.  ``mu=None`` tunes the kernel weight on a small labelled subsample.
    """
    from ..ca.ga import GAParams
    from .kernels import mdk_matrix, tune_mu_ga

    img = as_raster(img)
    full = np.asarray(object_mask, bool)
    mask = largest_components(full, max_objects)
    seeds = derive_seeds(mask)
    if seeds.count < 2 or not (~mask).any():
        return LabelField(np.zeros(img.shape, int), max(seeds.count, 1), [])
    comp, _ = ndimage.label(mask, structure=EIGHT)
    far = ndimage.distance_transform_edt(~full) >= 2
    target = np.where(mask, comp, np.where(far, 0, -1))
    rng = np.random.default_rng(rng_seed)
    per = max(8, max_train // seeds.count)
    idx, y = [], []
    flat = target.ravel()
    for k in range(seeds.count):
        cand = np.flatnonzero(flat == k)
        if len(cand) > per:
            cand = np.sort(rng.choice(cand, per, replace=False))
        idx.append(cand)
        y.append(np.full(len(cand), k))
    idx, y = np.concatenate(idx), np.concatenate(y)
    feats = pixel_features(img, edges)
    if mu is None:
        probe = train_unary(feats, idx, y, seeds.count, 0.5, E=E, rng_seed=rng_seed)
        sub = np.sort(rng.choice(len(idx), min(160, len(idx)), replace=False))
        Z = (feats.reshape(-1, 5)[idx[sub]] - probe.scale[0]) / probe.scale[1]
        Kx = mdk_matrix(probe.ens_x.evaluate(Z[:, SPECTRAL]))
        Ky = mdk_matrix(probe.ens_y.evaluate(Z[:, SPATIAL]))
        mu = tune_mu_ga(Kx, Ky, y[sub], GAParams(population=8, generations=4), rng_seed)
    model = train_unary(feats, idx, y, seeds.count, mu, E=E, rng_seed=rng_seed)
    U = model.unary_from_features(feats)
    return svrf_segment(img, model, beta, seeds, max_sweeps, unary=U)
