"""Ensembles of full-covariance Gaussian mixtures fitted by EM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RIDGE = 1e-6
TOL = 1e-6
MAX_ITER = 200


@dataclass
class GaussianMixture:
    means: np.ndarray  # (M, d)
    covs: np.ndarray  # (M, d, d)
    priors: np.ndarray  # (M,)
    n_iter: int = 0

    @property
    def M(self) -> int:
        return len(self.priors)

    def log_component(self, X: np.ndarray) -> np.ndarray:
        """log p(x | m), shape (n, M)."""
        n, d = X.shape
        L = np.linalg.cholesky(self.covs)
        Linv = np.linalg.inv(L)  # (M, d, d), lower triangular
        logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(1)
        D = X[None, :, :] - self.means[:, None, :]  # (M, n, d)
        z = np.einsum("mij,mnj->mni", Linv, D)
        maha = (z * z).sum(-1).T
        return -0.5 * (maha + logdet + d * np.log(2 * np.pi))

    def e_step(self, X):
        lc = self.log_component(X)
        lj = lc + np.log(self.priors)
        mx = lj.max(axis=1, keepdims=True)
        lp = (mx + np.log(np.exp(lj - mx).sum(axis=1, keepdims=True)))[:, 0]
        return np.exp(lj - lp[:, None]), lc, lp


def _kmeanspp(X, M, rng):
    centers = [X[rng.integers(len(X))]]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, M):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(len(X))
        else:
            idx = rng.choice(len(X), p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return np.array(centers)


def _m_step(X, R):
    n, d = X.shape
    Nk = R.sum(0) + 1e-12
    means = (R.T @ X) / Nk[:, None]
    covs = np.empty((R.shape[1], d, d))
    for m in range(R.shape[1]):
        D = X - means[m]
        covs[m] = (R[:, m, None] * D).T @ D / Nk[m] + RIDGE * np.eye(d)
    return means, covs, Nk / n


def fit_gmm(X: np.ndarray, M: int, rng: np.random.Generator) -> tuple[GaussianMixture, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    if M == 1:
        R = np.ones((len(X), 1))
    else:
        c = _kmeanspp(X, M, rng)
        lab = np.argmin(((X[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
        R = np.eye(M)[lab]
    gm = None
    for it in range(1, MAX_ITER + 1):
        means, covs, priors = _m_step(X, R)
        gm = GaussianMixture(means, covs, priors, it)
        R_new = gm.e_step(X)[0]
        delta = np.abs(R_new - R).max()
        R = R_new
        if delta < TOL:
            break
    return gm, R


@dataclass
class MixtureEnsemble:
    members: list[GaussianMixture]
    resp: np.ndarray  # (E, n, M) responsibilities P(C_m | X_i)
    log_comp: np.ndarray  # (E, n, M) log p(X_i | C_m)
    log_px: np.ndarray  # (E, n) log p(X_i)

    @property
    def E(self) -> int:
        return len(self.members)

    @property
    def M(self) -> int:
        return self.resp.shape[2]

    @property
    def n(self) -> int:
        return self.resp.shape[1]

    def priors(self) -> np.ndarray:
        return np.stack([g.priors for g in self.members])

    def evaluate(self, X) -> "MixtureEnsemble":
        """Same fitted members evaluated on new points."""
        X = np.asarray(X, dtype=np.float64)
        R, LC, LP = zip(*(g.e_step(X) for g in self.members))
        return MixtureEnsemble(self.members, np.stack(R), np.stack(LC), np.stack(LP))


def fit_mixture_ensemble(features, M: int, E: int = 5, rng_seed: int = 0) -> MixtureEnsemble:
    """E independently initialised EM fits; member e uses RNG stream (seed, e)."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if M < 1 or E < 1:
        raise ValueError("need M >= 1 and E >= 1")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if len(np.unique(X, axis=0)) < M:
        raise ValueError(f"need at least M={M} distinct feature vectors")
    members = []
    for e in range(E):
        gm, _ = fit_gmm(X, M, np.random.default_rng([rng_seed, e]))
        members.append(gm)
    return MixtureEnsemble(members, np.empty((0, 0, 0)), np.empty((0, 0, 0)), np.empty((0, 0))).evaluate(X)
