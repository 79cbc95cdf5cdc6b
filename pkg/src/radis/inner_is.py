"""Inner sampling-importance-resampling layer.

Draws ``L`` auxiliary points, weights them against an emulator, estimates
the emulator's mass and resamples ``N`` points that are approximately
distributed as the normalized emulator.  The true target is never touched
here.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .core import Box, DegenerateWeightsError, SupportError, normalize_log_weights

log = logging.getLogger(__name__)

#: L/N below this triggers a warning (pool too small for near-independent draws)
MIN_POOL_RATIO = 10
DEFAULT_POOL_RATIO = 20


# --------------------------------------------------------------------------
# Auxiliary / parametric proposals.  Each exposes ``sample(rng, n)`` and
# ``log_pdf(x)``.
# --------------------------------------------------------------------------

class UniformProposal:
    def __init__(self, box: Box):
        self.box = box
        self._log_vol = np.log(box.volume)

    @property
    def dim(self) -> int:
        return self.box.dim

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.box.sample(rng, n)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.full(x.shape[0], -self._log_vol)
        out[~self.box.contains(x)] = -np.inf
        return out


class GaussianProposal:
    def __init__(self, mean: np.ndarray, cov: np.ndarray | float):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        d = self.mean.size
        cov = np.asarray(cov, dtype=float)
        self.cov = cov * np.eye(d) if cov.ndim == 0 else cov
        self._chol = np.linalg.cholesky(self.cov)
        self._logdet = 2 * np.sum(np.log(np.diag(self._chol)))

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.dim)) @ self._chol.T

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        z = np.linalg.solve(self._chol, (x - self.mean).T)
        return -0.5 * (np.sum(z * z, axis=0) + self._logdet + self.dim * np.log(2 * np.pi))


class StudentTProposal:
    def __init__(self, loc: np.ndarray, scale: np.ndarray | float, dof: float = 5.0):
        self.loc = np.atleast_1d(np.asarray(loc, dtype=float))
        d = self.loc.size
        scale = np.asarray(scale, dtype=float)
        self.scale = scale * np.eye(d) if scale.ndim == 0 else scale
        self.dof = float(dof)
        self._dist = stats.multivariate_t(self.loc, self.scale, df=self.dof)

    @property
    def dim(self) -> int:
        return self.loc.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.atleast_2d(self._dist.rvs(size=n, random_state=rng)).reshape(n, self.dim)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_1d(self._dist.logpdf(np.atleast_2d(x)))


class MixtureProposal:
    """Finite mixture of proposals with fixed weights."""

    def __init__(self, components: Sequence, weights: Optional[Sequence[float]] = None):
        if not components:
            raise ValueError("mixture needs at least one component")
        self.components = list(components)
        w = np.ones(len(components)) if weights is None else np.asarray(weights, dtype=float)
        if w.size != len(components) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("invalid mixture weights")
        self.weights = w / w.sum()
        self._log_w = np.log(self.weights)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        counts = rng.multinomial(n, self.weights)
        out = np.empty((n, self.dim))
        labels = np.repeat(np.arange(len(self.components)), counts)
        for c in np.flatnonzero(counts):
            out[labels == c] = self.components[c].sample(rng, counts[c])
        return out[rng.permutation(n)]

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        parts = np.stack([lw + comp.log_pdf(x) for lw, comp in zip(self._log_w, self.components)])
        return logsumexp(parts, axis=0)


class IsotropicGaussianMixture:
    """Equally weighted Gaussians ``N(mu_c, scale^2 I)``; vectorized for many components."""

    def __init__(self, means: np.ndarray, scale: float):
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        if self.means.shape[0] == 0:
            raise ValueError("mixture needs at least one component")
        self.scale = float(scale)
        d = self.means.shape[1]
        self._norm = -0.5 * d * np.log(2 * np.pi * self.scale ** 2) - np.log(self.means.shape[0])

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        c = rng.integers(0, self.means.shape[0], size=n)
        return self.means[c] + self.scale * rng.standard_normal((n, self.dim))

    def component_log_pdf(self, x: np.ndarray) -> np.ndarray:
        """``(n, C)`` matrix of per-component log densities."""
        d2 = cdist(np.atleast_2d(x), self.means, "sqeuclidean")
        return -0.5 * d2 / self.scale ** 2 - 0.5 * self.dim * np.log(2 * np.pi * self.scale ** 2)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.empty(x.shape[0])
        for s in range(0, x.shape[0], 2048):
            d2 = cdist(x[s:s + 2048], self.means, "sqeuclidean")
            out[s:s + 2048] = logsumexp(-0.5 * d2 / self.scale ** 2, axis=1)
        return out + self._norm


def moment_matched_student_t(nodes: np.ndarray, dof: float = 5.0, ridge: float = 1e-6) -> StudentTProposal:
    """Student-t with the mean and covariance of the node cloud."""
    nodes = np.atleast_2d(nodes)
    d = nodes.shape[1]
    mean = nodes.mean(axis=0)
    if nodes.shape[0] > d:
        cov = np.atleast_2d(np.cov(nodes, rowvar=False))
    else:
        cov = np.diag(np.var(nodes, axis=0))
    scale = np.trace(cov) / d if np.trace(cov) > 0 else 1.0
    cov = cov + ridge * scale * np.eye(d)
    # a t with `dof` degrees of freedom has covariance scale * dof / (dof - 2)
    return StudentTProposal(mean, cov * (dof - 2) / dof, dof)


# --------------------------------------------------------------------------
# Weights and normalizer
# --------------------------------------------------------------------------

@dataclass
class InnerBatch:
    aux_samples: np.ndarray
    log_gamma: np.ndarray
    log_c_hat: float
    resampled: np.ndarray
    selected: np.ndarray

    @property
    def gamma(self) -> np.ndarray:
        return np.exp(self.log_gamma)

    @property
    def c_hat(self) -> float:
        return float(np.exp(self.log_c_hat))


def inner_log_weights(emulator_log_eval: Callable, aux, samples: np.ndarray) -> np.ndarray:
    """``log gamma = log pi_hat(z) - log q_aux(z)`` for every auxiliary sample."""
    samples = np.atleast_2d(samples)
    if samples.shape[0] == 0:
        raise ValueError("need at least one auxiliary sample")
    log_q = aux.log_pdf(samples)
    if not np.all(np.isfinite(log_q)):
        bad = int(np.flatnonzero(~np.isfinite(log_q))[0])
        raise SupportError(f"auxiliary density is zero at sample {bad}")
    return emulator_log_eval(samples) - log_q


def inner_weights(emulator_eval: Callable, aux, samples: np.ndarray) -> np.ndarray:
    """Linear inner weights ``pi_hat(z) / q_aux(z)``.

    ``emulator_eval`` must return log values; pass ``em.log_eval``.
    """
    return np.exp(inner_log_weights(emulator_eval, aux, samples))


def estimate_normalizer(gamma: Sequence[float]) -> float:
    gamma = np.asarray(gamma, dtype=float)
    if gamma.size == 0:
        raise ValueError("need at least one weight")
    return float(np.mean(gamma))


def log_estimate_normalizer(log_gamma: np.ndarray) -> float:
    log_gamma = np.asarray(log_gamma, dtype=float)
    if log_gamma.size == 0:
        raise ValueError("need at least one weight")
    return float(logsumexp(log_gamma) - np.log(log_gamma.size))


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

class AliasTable:
    """Walker/Vose alias table: O(L) build, O(1) per categorical draw."""

    def __init__(self, probs: np.ndarray):
        p = np.asarray(probs, dtype=float)
        n = p.size
        # plain Python floats: the pairing loop is sequential and numpy
        # scalar indexing would dominate its cost
        scaled = (p * n / p.sum()).tolist()
        prob = [1.0] * n
        alias = list(range(n))
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = scaled[g] + scaled[s] - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        # leftovers are 1 up to rounding; prob already holds 1.0 there
        self.prob = np.array(prob)
        self.alias = np.array(alias, dtype=np.intp)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        i = rng.integers(0, self.prob.size, size=size)
        u = rng.random(size)
        return np.where(u < self.prob[i], i, self.alias[i])


def _check_pool(L: int, N: int) -> None:
    if L < MIN_POOL_RATIO * N:
        warnings.warn(f"resampling pool L={L} is less than {MIN_POOL_RATIO}x N={N}; "
                      "resampled points will be strongly correlated", RuntimeWarning, stacklevel=3)


def multinomial_select(log_gamma: np.ndarray, N: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``N`` i.i.d. categorical draws with probabilities proportional to the weights."""
    wbar = normalize_log_weights(log_gamma)
    return AliasTable(wbar).draw(rng, N)


def multinomial_resample(points: np.ndarray, gamma: np.ndarray, N: int,
                         rng: np.random.Generator, log: bool = False) -> np.ndarray:
    points = np.atleast_2d(points)
    gamma = np.asarray(gamma, dtype=float)
    if log:
        log_gamma = gamma
    else:
        if np.all(gamma <= 0):
            raise DegenerateWeightsError("all inner weights are zero")
        with np.errstate(divide="ignore"):
            log_gamma = np.log(gamma)
    _check_pool(points.shape[0], N)
    return points[multinomial_select(log_gamma, N, rng)]


def silverman_bandwidth(points: np.ndarray, wbar: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-dimension ``sigma_d * (4 / ((d + 2) L))**(1 / (d + 4))``."""
    points = np.atleast_2d(points)
    L, d = points.shape
    if wbar is None:
        wbar = np.full(L, 1.0 / L)
    mu = wbar @ points
    sigma = np.sqrt(wbar @ (points - mu) ** 2)
    return sigma * (4.0 / ((d + 2) * L)) ** (1.0 / (d + 4))


def regularized_resample(points: np.ndarray, gamma: np.ndarray, N: int, bandwidth,
                         rng: np.random.Generator, domain: Optional[Box] = None,
                         log: bool = False, max_retries: int = 100) -> np.ndarray:
    """Multinomial resampling followed by a Gaussian kernel jitter.

    Jittered points leaving ``domain`` are re-jittered up to ``max_retries``
    times and then clipped to the boundary.
    """
    base = multinomial_resample(points, gamma, N, rng, log=log)
    h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (base.shape[1],))
    if np.any(h <= 0):
        raise ValueError("bandwidth must be positive")
    return _perturb(base, h, rng, domain, max_retries)


def _perturb(base: np.ndarray, h: np.ndarray, rng: np.random.Generator,
             domain: Optional[Box], max_retries: int = 100) -> np.ndarray:
    out = base + h * rng.standard_normal(base.shape)
    if domain is not None:
        for _ in range(max_retries):
            bad = ~domain.contains(out)
            if not bad.any():
                break
            out[bad] = base[bad] + h * rng.standard_normal((bad.sum(), base.shape[1]))
        out = domain.clip(out)
    return out


def run_inner(emulator_log_eval: Callable, aux, L: int, N: int, rng: np.random.Generator,
              mode: str = "plain", domain: Optional[Box] = None) -> InnerBatch:
    """One inner IS pass: draw, weight, estimate the mass, resample."""
    z = aux.sample(rng, L)
    log_gamma = inner_log_weights(emulator_log_eval, aux, z)
    if not np.any(np.isfinite(log_gamma)):
        raise DegenerateWeightsError("emulator is zero at every auxiliary sample")
    log_c = log_estimate_normalizer(log_gamma)
    if N == 0:
        return InnerBatch(z, log_gamma, log_c, np.empty((0, z.shape[1])), np.empty(0, int))
    _check_pool(L, N)
    sel = multinomial_select(log_gamma, N, rng)
    x = z[sel]
    if mode == "regularized":
        h = silverman_bandwidth(z, normalize_log_weights(log_gamma))
        x = _perturb(x, np.where(h > 0, h, 1e-12), rng, domain)
    elif mode != "plain":
        raise ValueError(f"unknown resampling mode {mode!r}")
    return InnerBatch(z, log_gamma, log_c, x, sel)


# --------------------------------------------------------------------------
# Diagnostic: SIR bias in one dimension
# --------------------------------------------------------------------------

def sir_bias_probe(target_logpdf: Callable, target_cdf: Callable, aux, L_schedule: Sequence[int],
                   N: int, rng: np.random.Generator) -> list[tuple[int, float]]:
    """Kolmogorov-Smirnov distance between SIR output and the target, per pool size."""
    out = []
    for L in L_schedule:
        z = aux.sample(rng, int(L))
        log_gamma = np.asarray(target_logpdf(z[:, 0]), dtype=float) - aux.log_pdf(z)
        sel = multinomial_select(log_gamma, N, rng)
        ks = stats.kstest(z[sel, 0], target_cdf).statistic
        out.append((int(L), float(ks)))
    return out
