"""Analytic epsilon-predictors that need no training.

Every model here is a callable ``model(x, t) -> eps`` where ``x`` has shape
``(d,)`` or ``(n, d)`` and ``t`` is a scalar or an ``(n,)`` array.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels


class EpsModel:
    """Base class for epsilon predictors. Subclasses implement ``__call__``."""

    def __call__(self, x, t):  # pragma: no cover - interface
        raise NotImplementedError


class ConstantEps(EpsModel):
    """Returns the same epsilon everywhere.

    ``eps0`` of shape ``(d,)`` is shared by every row of a batch; shape
    ``(n, d)`` gives each row its own constant.
    """

    def __init__(self, eps0):
        self.eps0 = np.asarray(eps0, dtype=np.float64)
        if not np.all(np.isfinite(self.eps0)):
            raise ValueError("eps0 must be finite")

    def __call__(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        return np.broadcast_to(self.eps0, x.shape).copy()


@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covs = np.asarray(self.covs, dtype=np.float64)
        K, d = self.means.shape
        if self.weights.shape != (K,) or self.covs.shape != (K, d, d):
            raise ValueError("weights (K,), means (K, d), covs (K, d, d) shapes disagree")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if not np.allclose(self.covs, np.swapaxes(self.covs, 1, 2), atol=1e-14):
            raise ValueError("covariances must be symmetric")
        evals, evecs = np.linalg.eigh(self.covs)
        if np.any(evals <= 0):
            raise ValueError("covariances must be positive definite")
        self._evals = np.ascontiguousarray(evals)
        self._evecs = np.ascontiguousarray(evecs)

    @property
    def dim(self):
        return self.means.shape[1]

    def mean(self):
        return self.weights @ self.means

    def covariance(self):
        m = self.mean()
        c = np.einsum("k,kij->ij", self.weights, self.covs)
        c += np.einsum("k,ki,kj->ij", self.weights, self.means - m, self.means - m)
        return c

    def sample(self, n, rng):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        chol = np.linalg.cholesky(self.covs)
        return self.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)


def _ring(n_modes, radius, std):
    ang = 2 * np.pi * np.arange(n_modes) / n_modes
    means = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    covs = np.tile(std**2 * np.eye(2), (n_modes, 1, 1))
    return GaussianMixture(np.full(n_modes, 1.0 / n_modes), means, covs)


def _two_moons():
    # Three anisotropic blobs along each arc of the usual two-moons shape.
    th = np.array([np.pi / 6, np.pi / 2, 5 * np.pi / 6])
    upper = np.stack([np.cos(th), np.sin(th)], 1)
    lower = np.stack([1 - np.cos(th), 0.5 - np.sin(th)], 1)
    means = 2.0 * np.concatenate([upper, lower]) - np.array([1.0, 0.5])
    tang = np.concatenate(
        [np.stack([-np.sin(th), np.cos(th)], 1), np.stack([np.sin(th), -np.cos(th)], 1)]
    )
    covs = []
    for u in tang:
        n = np.array([-u[1], u[0]])
        covs.append(0.35**2 * np.outer(u, u) + 0.12**2 * np.outer(n, n))
    return GaussianMixture(np.full(6, 1.0 / 6), means, np.array(covs))


def mixture_preset(name):
    """Named toy mixtures: ``ring8``, ``two-moons-gmm`` and ``single``."""
    key = name.strip().lower()
    if key == "ring8":
        return _ring(8, 4.0, 0.1)
    if key in ("two-moons-gmm", "two-moons", "moons"):
        return _two_moons()
    if key == "single":
        return GaussianMixture(np.ones(1), np.zeros((1, 2)), np.eye(2)[None])
    raise ValueError(f"unknown mixture preset {name!r}; expected ring8, two-moons-gmm or single")


def _as_batch(x, t, schedule):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.ascontiguousarray(x[None] if single else x)
    a, s = schedule.alpha_sigma(t)
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), xb.shape[:1]).copy()
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), xb.shape[:1]).copy()
    return xb, a, s, single


class GMMOracle(EpsModel):
    """Exact MMSE epsilon for a Gaussian mixture pushed through the forward process.

    The noisy marginal at time t has components ``N(a mu_i, a^2 S_i + s^2 I)``
    and the optimal predictor is ``eps* = -s * grad log p_t(x)``.
    """

    def __init__(self, mixture, schedule, kernel=None):
        self.mixture = mixture
        self.schedule = schedule
        self._score_fn = (kernel or _kernels).gmm_score
        self._log_w = np.log(np.maximum(mixture.weights, 1e-300))

    def _score(self, x, t):
        xb, a, s, single = _as_batch(x, t, self.schedule)
        mix = self.mixture
        score, logp = self._score_fn(xb, a, s, self._log_w, mix.means, mix._evecs, mix._evals)
        return score, logp, s, single

    def __call__(self, x, t):
        score, _, s, single = self._score(x, t)
        eps = -s[:, None] * score
        return eps[0] if single else eps

    def score(self, x, t):
        score, _, _, single = self._score(x, t)
        return score[0] if single else score

    def logpdf(self, x, t):
        _, logp, _, single = self._score(x, t)
        return logp[0] if single else logp


def constant_eps(eps0):
    return ConstantEps(eps0)


def gmm_eps(mixture, schedule):
    return GMMOracle(mixture, schedule)
