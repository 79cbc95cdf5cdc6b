"""Shared numerical types and the importance-weight algebra.

Everything that touches densities works in the log domain.  Linear-domain
weights are only produced after subtracting the running maximum.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class DegenerateWeightsError(ValueError):
    """All importance weights are zero (proposal and target do not overlap)."""


class ConfigError(ValueError):
    """Invalid sampler or experiment configuration."""


class SupportError(ValueError):
    """A proposal density vanishes where it is required to be positive."""


def make_rng(seed: int | np.random.SeedSequence | np.random.Generator | None) -> np.random.Generator:
    """Return a numpy Generator; generators pass through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent child streams derived from one integer seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class Box:
    """Axis-aligned hyperrectangle ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, low: float, high: float, dim: int) -> "Box":
        return cls(np.full(dim, float(low)), np.full(dim, float(high)))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.widths))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def vertices(self) -> np.ndarray:
        corners = np.array(np.meshgrid(*[[0, 1]] * self.dim, indexing="ij")).reshape(self.dim, -1).T
        return self.lower + corners * self.widths

    def union(self, other: "Box") -> "Box":
        return Box(np.minimum(self.lower, other.lower), np.maximum(self.upper, other.upper))


class TargetDensity:
    """Unnormalized log-posterior with a central evaluation ledger.

    Parameters
    ----------
    log_pi : callable
        Maps an ``(n, dim)`` array to ``n`` log-density values.
    dim : int
        Dimension of the parameter space.
    domain : Box, optional
        Bounded support.  ``None`` means unbounded.  Outside a bounded
        domain the density is ``-inf`` and ``log_pi`` is never called.
    name : str
        Label used in run records.

    Every point passed to :meth:`__call__` increments ``eval_counter`` by
    one, whether or not it lies inside the domain.
    """

    def __init__(self, log_pi: Callable[[np.ndarray], np.ndarray], dim: int,
                 domain: Optional[Box] = None, name: str = "target"):
        if dim < 1:
            raise ValueError("dim must be positive")
        if domain is not None and domain.dim != dim:
            raise ValueError("domain dimension does not match dim")
        self._log_pi = log_pi
        self.dim = int(dim)
        self.domain = domain
        self.name = name
        self._count = 0
        self._lock = threading.Lock()

    @property
    def eval_counter(self) -> int:
        return self._count

    @property
    def bounded(self) -> bool:
        return self.domain is not None

    def reset_counter(self) -> None:
        with self._lock:
            self._count = 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {x.shape[1]}")
        with self._lock:
            self._count += x.shape[0]
        out = np.full(x.shape[0], -np.inf)
        inside = np.ones(x.shape[0], bool) if self.domain is None else self.domain.contains(x)
        if inside.any():
            out[inside] = np.asarray(self._log_pi(x[inside]), dtype=float).reshape(-1)
        return out[0] if single else out

    log_pi = __call__

    def uncounted(self, x: np.ndarray) -> np.ndarray:
        """Evaluate without touching the ledger (ground-truth diagnostics only)."""
        before = self._count
        out = self(x)
        with self._lock:
            self._count = before
        return out


def log_sum_exp(values: Sequence[float]) -> float:
    """``log(sum(exp(values)))`` computed after subtracting the maximum."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    m = np.max(v)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))


def normalize_log_weights(log_w: np.ndarray) -> np.ndarray:
    """Normalized linear weights from log weights."""
    log_w = np.asarray(log_w, dtype=float)
    if log_w.size == 0:
        raise ValueError("empty weight vector")
    m = np.max(log_w)
    if not np.isfinite(m):
        if m == np.inf:
            raise DegenerateWeightsError("infinite log weight")
        raise DegenerateWeightsError("all weights are zero")
    w = np.exp(log_w - m)
    return w / w.sum()


def normalize_weights(w: Sequence[float]) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise ValueError("empty weight vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    s = w.sum()
    if s <= 0:
        raise DegenerateWeightsError("all weights are zero")
    return w / s


def evidence_estimate(w: Sequence[float]) -> float:
    """Arithmetic mean of unnormalized weights."""
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise ValueError("empty weight vector")
    return float(np.mean(w))


def log_evidence_estimate(log_w: Sequence[float]) -> float:
    log_w = np.asarray(log_w, dtype=float)
    return log_sum_exp(log_w) - np.log(log_w.size)


def effective_sample_size(wbar: Sequence[float]) -> float:
    """``1 / sum(wbar**2)`` for normalized weights."""
    wbar = np.asarray(wbar, dtype=float)
    return float(1.0 / np.sum(wbar ** 2))


def _apply(f: Callable, points: np.ndarray) -> np.ndarray:
    vals = np.asarray(f(points), dtype=float)
    if vals.ndim == 0 or vals.shape[0] != points.shape[0]:
        # scalar-valued f applied point by point
        vals = np.array([np.asarray(f(p), dtype=float) for p in points])
    return vals


def self_normalized_estimate(particles: "WeightedParticleSet", f: Callable) -> np.ndarray:
    """Self-normalized IS estimate of ``E[f(X)]``.

    ``f`` is called on the ``(n, dim)`` array of particle locations and must
    return either ``n`` scalars or an ``(n, k)`` array.
    """
    wbar = particles.normalized_weights()
    vals = _apply(f, particles.points)
    return np.tensordot(wbar, vals, axes=(0, 0))


@dataclass
class WeightedParticleSet:
    """Samples with unnormalized importance weights stored as logs.

    ``iteration`` and ``index`` tag each particle with the adaptation step
    that produced it and its position within that step.
    """

    points: np.ndarray
    log_weights: np.ndarray
    iteration: Optional[np.ndarray] = None
    index: Optional[np.ndarray] = None
    log_target: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.log_weights = np.asarray(self.log_weights, dtype=float).reshape(-1)
        n = self.points.shape[0]
        if n == 0:
            raise ValueError("empty particle set")
        if self.log_weights.size != n:
            raise ValueError("one weight per particle required")
        if np.any(np.isnan(self.log_weights)) or np.any(self.log_weights == np.inf):
            raise ValueError("weights must be finite and non-negative")
        if self.iteration is None:
            self.iteration = np.zeros(n, dtype=int)
        if self.index is None:
            self.index = np.arange(n)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def normalized_weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_weights)

    def evidence(self) -> float:
        return float(np.exp(self.log_evidence()))

    def log_evidence(self) -> float:
        return log_evidence_estimate(self.log_weights)

    def ess(self) -> float:
        return effective_sample_size(self.normalized_weights())

    def mean(self) -> np.ndarray:
        return self_normalized_estimate(self, lambda x: x)

    def covariance(self) -> np.ndarray:
        wbar = self.normalized_weights()
        d = self.points - wbar @ self.points
        return (wbar[:, None] * d).T @ d

    def credible_interval(self, level: float = 0.95) -> np.ndarray:
        """Per-dimension equal-tailed interval, shape ``(dim, 2)``."""
        wbar = self.normalized_weights()
        lo, hi = (1 - level) / 2, (1 + level) / 2
        out = np.empty((self.dim, 2))
        for d in range(self.dim):
            order = np.argsort(self.points[:, d])
            cdf = np.cumsum(wbar[order])
            idx = np.searchsorted(cdf, [lo, hi]).clip(0, len(cdf) - 1)
            out[d] = self.points[order[idx], d]
        return out

    def estimate(self, f: Callable) -> np.ndarray:
        return self_normalized_estimate(self, f)
