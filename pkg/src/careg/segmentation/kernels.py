"""Mixture density kernels, kernel combination and GA tuning of the weight mu."""

from __future__ import annotations

import csv
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..ca.ga import GAParams
from .mixture import MixtureEnsemble


def _normalize_rows(F: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(F, axis=1, keepdims=True)
    return F / np.where(nrm > 0, nrm, 1.0)


def mdk_features(ens: MixtureEnsemble) -> np.ndarray:
    """Explicit feature map whose Gram matrix is the normalised MDK."""
    F = np.concatenate(list(ens.resp), axis=1) / np.sqrt(ens.E)
    return _normalize_rows(F)


def mdk_matrix(ens: MixtureEnsemble) -> np.ndarray:
    F = mdk_features(ens)
    return _finish(F @ F.T)


def mdk(ens: MixtureEnsemble, i: int, j: int) -> float:
    """Ensemble-averaged sum_m P(C_m|X_i) P(C_m|X_j), normalised to unit diagonal."""
    R = ens.resp
    kij = float(np.mean((R[:, i] * R[:, j]).sum(-1)))
    kii = float(np.mean((R[:, i] ** 2).sum(-1)))
    kjj = float(np.mean((R[:, j] ** 2).sum(-1)))
    if i == j:
        return 1.0
    return min(1.0, kij / np.sqrt(kii * kjj))


class ModifiedMDK(NamedTuple):
    features: np.ndarray  # rows for points in the kernel domain
    domain: np.ndarray  # indices of included points
    excluded: np.ndarray  # indices dropped for zero likelihood


def mdk_modified_features(ens: MixtureEnsemble) -> ModifiedMDK:
    """Explicit map for the likelihood-weighted kernel.

    Member e contributes sum_m p(X_i|C_m)^2 p(X_j|C_m)^2 P(C_m)^2 divided by
    sqrt(p(X_i) p(X_j)), the geometric-mean symmetrisation of the one-sided
    form.  Computed in log space, then each row is scaled to unit norm.
    """
    logp = np.log(ens.priors())[:, None, :]  # (E, 1, M)
    with np.errstate(invalid="ignore"):
        logphi = 2.0 * ens.log_comp + logp - 0.5 * ens.log_px[:, :, None]
    logphi = logphi - 0.5 * np.log(ens.E)
    bad = ~np.isfinite(ens.log_px).all(0) | ~np.isfinite(logphi).all(axis=(0, 2))
    L = np.concatenate(list(logphi), axis=1)  # (n, E*M)
    keep = np.flatnonzero(~bad)
    L = L[keep]
    L = L - L.max(axis=1, keepdims=True)
    F = _normalize_rows(np.exp(L))
    return ModifiedMDK(F, keep, np.flatnonzero(bad))


def mdk_modified_matrix(ens: MixtureEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Kernel over the domain points and the indices excluded for zero likelihood."""
    mm = mdk_modified_features(ens)
    return _finish(mm.features @ mm.features.T), mm.excluded


def mdk_modified(ens: MixtureEnsemble, i: int, j: int) -> float:
    if i == j:
        return 1.0
    mm = mdk_modified_features(ens)
    pos = {int(p): k for k, p in enumerate(mm.domain)}
    if i not in pos or j not in pos:
        raise ValueError("point outside kernel domain (zero likelihood)")
    return float(np.clip(mm.features[pos[i]] @ mm.features[pos[j]], 0.0, 1.0))


def _finish(K: np.ndarray) -> np.ndarray:
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return np.clip(K, 0.0, 1.0)


def combine_kernels(Kx, Ky, mu: float) -> np.ndarray:
    Kx = np.asarray(Kx, dtype=np.float64)
    Ky = np.asarray(Ky, dtype=np.float64)
    if Kx.shape != Ky.shape:
        raise ValueError(f"kernel shapes differ: {Kx.shape} vs {Ky.shape}")
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    return mu * Kx + (1.0 - mu) * Ky


def check_kernel(K, tol: float = 1e-9) -> None:
    K = np.asarray(K)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("kernel must be square")
    if np.abs(K - K.T).max() > tol:
        raise ValueError("kernel not symmetric")
    if np.abs(np.diag(K) - 1.0).max() > tol:
        raise ValueError("kernel diagonal is not 1")
    if K.min() < -tol or K.max() > 1 + tol:
        raise ValueError("kernel entries outside [0, 1]")


def dump_kernel_csv(K, path, max_n: int = 500) -> None:
    K = np.asarray(K)
    if len(K) > max_n:
        raise ValueError(f"kernel too large to dump ({len(K)} > {max_n}); raise max_n to force")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in K:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# Kernel clustering and mu tuning
# ---------------------------------------------------------------------------

def kernel_kmeans(K: np.ndarray, k: int, max_iter: int = 100) -> np.ndarray:
    """Lloyd iterations in the kernel-induced space, farthest-point initialised."""
    n = len(K)
    k = min(k, n)
    diag = np.diag(K)
    first = int(np.argmax(K.sum(1)))
    centers = [first]
    d = diag + diag[first] - 2 * K[:, first]
    for _ in range(1, k):
        nxt = int(np.argmax(d))
        centers.append(nxt)
        d = np.minimum(d, diag + diag[nxt] - 2 * K[:, nxt])
    lab = np.argmin(np.stack([diag + diag[c] - 2 * K[:, c] for c in centers], 1), axis=1)
    for _ in range(max_iter):
        dist = np.full((n, k), np.inf)
        for c in range(k):
            idx = lab == c
            if not idx.any():
                continue
            dist[:, c] = diag - 2 * K[:, idx].mean(1) + K[np.ix_(idx, idx)].mean()
        new = np.argmin(dist, axis=1)
        if np.array_equal(new, lab):
            break
        lab = new
    return lab


def clustering_agreement(pred, ref) -> float:
    """Fraction of points correctly labelled under the best label matching."""
    pu, pi = np.unique(pred, return_inverse=True)
    ru, ri = np.unique(ref, return_inverse=True)
    C = np.zeros((len(pu), len(ru)))
    np.add.at(C, (pi, ri), 1)
    r, c = linear_sum_assignment(-C)
    return float(C[r, c].sum() / len(pred))


def target_alignment(K, ref) -> float:
    Y = (np.asarray(ref)[:, None] == np.asarray(ref)[None, :]).astype(float)
    den = np.linalg.norm(K) * np.linalg.norm(Y)
    return float((K * Y).sum() / den) if den > 0 else 0.0


def mu_fitness(Kx, Ky, ref, mu: float) -> tuple[float, float, float]:
    """Lexicographic score: agreement, then alignment, then closeness to 0.5."""
    K = combine_kernels(Kx, Ky, mu)
    lab = kernel_kmeans(K, len(np.unique(ref)))
    return (round(clustering_agreement(lab, ref), 12), round(target_alignment(K, ref), 12),
            -abs(mu - 0.5))


def tune_mu_ga(Kx, Ky, reference_labels, ga: GAParams | None = None, rng_seed: int = 0) -> float:
    """GA over mu in [0, 1]; negative reference labels mark unlabelled points."""
    ga = ga or GAParams(generations=15, population=16)
    ref = np.asarray(reference_labels).ravel()
    Kx = np.asarray(Kx, dtype=np.float64)
    Ky = np.asarray(Ky, dtype=np.float64)
    if Kx.shape != Ky.shape or len(ref) != len(Kx):
        raise ValueError("kernels and reference labels must agree in size")
    keep = np.flatnonzero(ref >= 0)
    if len(keep) == 0:
        raise ValueError("unlabeled reference")
    Kx, Ky, ref = Kx[np.ix_(keep, keep)], Ky[np.ix_(keep, keep)], ref[keep]
    rng = np.random.default_rng(rng_seed)
    cache: dict[float, tuple] = {}

    def fit(mu):
        mu = float(round(mu, 6))
        if mu not in cache:
            cache[mu] = mu_fitness(Kx, Ky, ref, mu)
        return cache[mu]

    pop = [0.5] + list(rng.uniform(0, 1, ga.population - 1))
    for _ in range(ga.generations + 1):
        scores = [fit(m) for m in pop]
        order = sorted(range(len(pop)), key=lambda i: tuple(-s for s in scores[i]) + (i,))
        new = [pop[i] for i in order[: ga.elitism]]
        while len(new) < ga.population:
            a, b = (min(rng.integers(0, len(pop), ga.tournament),
                        key=lambda i: tuple(-s for s in scores[i]) + (i,)) for _ in range(2))
            child = pop[a]
            if rng.random() < ga.crossover:
                w = rng.random()
                child = w * pop[a] + (1 - w) * pop[b]
            if rng.random() < 0.5:
                child += rng.normal(0, 0.1)
            new.append(float(np.clip(child, 0.0, 1.0)))
        pop = new
    best = max(cache.items(), key=lambda kv: (kv[1], -kv[0]))
    return best[0]
