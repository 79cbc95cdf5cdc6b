"""Gaussian-process emulator fitted in the log domain.

The posterior mean of a zero-mean GP on ``phi = log pi`` is
``phi_hat(x) = sum_i beta_i k(x, x_i)`` with ``(K + zeta I) beta = phi``;
the emulator is ``exp(phi_hat)``, strictly positive everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .emulator_nn import NodeSet


class IllConditionedKernelError(np.linalg.LinAlgError):
    """Kernel matrix stayed indefinite after the largest jitter."""


JITTER_SCHEDULE = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
_EVAL_CHUNK = 8192


@dataclass(frozen=True)
class GpKernel:
    """Squared-exponential kernel ``exp(-|x - x'|^2 / (2 lengthscale^2))``."""

    lengthscale: float = 1.0
    noise: float = 1e-6

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d2 = cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean")
        return np.exp(-0.5 * d2 / self.lengthscale ** 2)


def _finite_targets(log_values: np.ndarray, floor_gap: float = 10.0) -> np.ndarray:
    # -inf values (zero density) cannot be regressed; pin them below the
    # smallest finite value.
    phi = np.asarray(log_values, dtype=float).copy()
    bad = ~np.isfinite(phi)
    if bad.any():
        finite = phi[~bad]
        phi[bad] = (finite.min() - floor_gap) if finite.size else -floor_gap
    return phi


def _factor(K: np.ndarray, noise: float):
    J = K.shape[0]
    A = K + noise * np.eye(J)
    try:
        return cho_factor(A, lower=True), 0.0
    except LinAlgError:
        pass
    scale = np.trace(A) / J
    for j in JITTER_SCHEDULE:
        try:
            return cho_factor(A + j * scale * np.eye(J), lower=True), j * scale
        except LinAlgError:
            continue
    raise IllConditionedKernelError(
        f"kernel matrix not positive definite (J={J}, lengthscale jitter exhausted)")


@dataclass(frozen=True)
class GpEmulator:
    nodes: np.ndarray
    phi: np.ndarray
    beta: np.ndarray
    kernel: GpKernel
    chol: tuple
    jitter: float = 0.0
    mean: float = 0.0
    support: Optional[object] = None

    def log_eval(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(x.shape[0])
        for s in range(0, x.shape[0], _EVAL_CHUNK):
            out[s:s + _EVAL_CHUNK] = self.kernel(x[s:s + _EVAL_CHUNK], self.nodes) @ self.beta
        out += self.mean
        if self.support is not None:
            out[~self.support.contains(x)] = -np.inf
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_eval(x))

    def log_marginal_likelihood(self) -> float:
        c, _ = self.chol
        y = self.phi - self.mean
        return float(-0.5 * y @ self.beta - np.sum(np.log(np.diag(c)))
                     - 0.5 * y.size * np.log(2 * np.pi))


def fit_gp(node_set: NodeSet, kernel: GpKernel, mean: float | str = 0.0,
           support=None) -> GpEmulator:
    """Solve ``(K + noise I) beta = phi`` by Cholesky, escalating jitter on failure.

    ``mean`` is a constant prior mean for ``log pi``; ``"min"`` uses the
    smallest stored value so the emulator decays away from the nodes.
    """
    if len(node_set) == 0:
        raise ValueError("cannot fit a GP to an empty node set")
    phi = _finite_targets(node_set.log_values)
    m = float(phi.min()) if mean == "min" else float(mean)
    K = kernel(node_set.nodes, node_set.nodes)
    chol, jitter = _factor(K, kernel.noise)
    beta = cho_solve(chol, phi - m)
    return GpEmulator(np.array(node_set.nodes), phi, beta, kernel, chol, jitter, m, support)


def eval_gp(em: GpEmulator, x: np.ndarray) -> np.ndarray:
    return em(x)


def log_marginal_likelihood(node_set: NodeSet, kernel: GpKernel, mean: float | str = 0.0) -> float:
    return fit_gp(node_set, kernel, mean).log_marginal_likelihood()


def tune_lengthscale(node_set: NodeSet, noise: float, grid: Sequence[float],
                     mean: float | str = 0.0) -> float:
    """Grid search for the lengthscale maximizing the log marginal likelihood.

    Ties go to the smaller lengthscale.
    """
    if len(node_set) < 2:
        raise ValueError("lengthscale tuning needs at least two nodes")
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("empty lengthscale grid")
    best, best_lml = None, -np.inf
    for eps in grid:
        try:
            lml = log_marginal_likelihood(node_set, GpKernel(eps, noise), mean)
        except IllConditionedKernelError:
            continue
        if lml > best_lml:
            best, best_lml = eps, lml
    if best is None:
        raise IllConditionedKernelError("every lengthscale candidate was ill-conditioned")
    return best


def farthest_point_indices(nodes: np.ndarray, log_values: np.ndarray, j_max: int) -> np.ndarray:
    """Greedy farthest-point subset of size ``j_max``, seeded at the best node.

    Returned indices are sorted so the relative node order is preserved.
    """
    J = nodes.shape[0]
    if J <= j_max:
        return np.arange(J)
    chosen = [int(np.argmax(log_values))]
    dmin = np.linalg.norm(nodes - nodes[chosen[0]], axis=1)
    for _ in range(j_max - 1):
        i = int(np.argmax(dmin))
        chosen.append(i)
        dmin = np.minimum(dmin, np.linalg.norm(nodes - nodes[i], axis=1))
    return np.sort(np.array(chosen))


def with_lengthscale(kernel: GpKernel, eps: float) -> GpKernel:
    return replace(kernel, lengthscale=float(eps))
