"""Benchmark targets, the grid ground-truth oracle and sequential inversion."""
from __future__ import annotations

import csv
import dataclasses
import threading
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import Box, ConfigError, TargetDensity, make_rng
from .records import RunRecord, record_from_particles

# ---------------------------------------------------------------------------
# banana
# ---------------------------------------------------------------------------

BANANA_BOX = Box.cube(-10.0, 10.0, 2)
BANANA_Z = 7.9976
BANANA_MEAN = np.array([-0.4841, 0.0])


def banana_logpdf(x: np.ndarray, B: float = 10.0, eta0: float = 4.0, eta1: float = 4.0,
                  eta: float | Sequence[float] = 3.5) -> np.ndarray:
    """Log of the banana kernel.

    ``-(eta1 - B x_1 - x_2^2)^2 / (2 eta0^2) - sum_i x_i^2 / (2 eta_i^2)``.
    With the defaults the integral over ``[-10, 10]^2`` is 7.9976 and the
    mean is ``(-0.4841, 0)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] < 2:
        raise ValueError("banana target needs dimension >= 2")
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (x.shape[1],))
    ridge = eta1 - B * x[:, 0] - x[:, 1] ** 2
    return -ridge ** 2 / (2 * eta0 ** 2) - np.sum(x ** 2 / (2 * eta ** 2), axis=1)


def banana_target(dim: int = 2, **params) -> TargetDensity:
    box = Box.cube(-10.0, 10.0, dim)
    return TargetDensity(lambda x: banana_logpdf(x, **params), dim, box, name="banana")


# ---------------------------------------------------------------------------
# multimodal Gaussian mixture
# ---------------------------------------------------------------------------

def mixture_means(dim: int = 10) -> np.ndarray:
    mu = np.zeros((3, dim))
    mu[0, 0] = 5.0
    mu[1, 0] = -7.0
    mu[2, :] = 1.0
    return mu


def gaussian_mixture_logpdf(x: np.ndarray, means: Optional[np.ndarray] = None,
                            sigma: float = 4.0) -> np.ndarray:
    """Equal-weight mixture of ``N(mu_c, sigma^2 I)``; normalized (Z = 1)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    means = mixture_means(x.shape[1]) if means is None else np.atleast_2d(means)
    d = x.shape[1]
    d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    comp = -0.5 * d2 / sigma ** 2 - 0.5 * d * np.log(2 * np.pi * sigma ** 2)
    return logsumexp(comp, axis=1) - np.log(means.shape[0])


def gaussian_mixture_target(dim: int = 10, sigma: float = 4.0) -> TargetDensity:
    means = mixture_means(dim)
    return TargetDensity(lambda x: gaussian_mixture_logpdf(x, means, sigma), dim, None,
                         name="gaussian_mixture")


# ---------------------------------------------------------------------------
# grid oracle
# ---------------------------------------------------------------------------

@dataclass
class Grid:
    """Midpoint grid over a box; ``points`` has shape ``(prod(shape), dim)``."""

    box: Box
    shape: tuple
    points: np.ndarray
    cell_volume: float

    @classmethod
    def regular(cls, box: Box, n: int | Sequence[int]) -> "Grid":
        n = np.broadcast_to(np.asarray(n, dtype=int), (box.dim,))
        if np.any(n < 1):
            raise ValueError("grid needs at least one cell per dimension")
        axes = [lo + (np.arange(k) + 0.5) * (hi - lo) / k for lo, hi, k in zip(box.lower, box.upper, n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return cls(box, tuple(int(k) for k in n), pts, box.volume / float(np.prod(n)))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class QuadratureResult:
    Z: float
    mean: np.ndarray
    grid: Grid
    log_values: np.ndarray

    @property
    def density(self) -> np.ndarray:
        """Normalized target on the grid."""
        return np.exp(self.log_values - np.log(self.Z))

    def covariance(self) -> np.ndarray:
        p = self.density * self.grid.cell_volume
        dx = self.grid.points - self.mean
        return (p[:, None] * dx).T @ dx


def grid_quadrature(target: TargetDensity, n: int | Sequence[int] = 2000,
                    chunk: int = 1_000_000) -> QuadratureResult:
    """Midpoint-rule evidence and mean of a bounded target."""
    if not target.bounded:
        raise ValueError("grid quadrature needs a bounded domain")
    grid = Grid.regular(target.domain, n)
    lv = np.concatenate([target.uncounted(grid.points[s:s + chunk])
                         for s in range(0, len(grid), chunk)])
    m = lv.max()
    w = np.exp(lv - m)
    Z = float(np.exp(m) * w.sum() * grid.cell_volume)
    mean = (w @ grid.points) / w.sum()
    return QuadratureResult(Z, mean, grid, lv)


# ---------------------------------------------------------------------------
# forward models and inversion
# ---------------------------------------------------------------------------

#: prior box of the six-parameter synthetic model (leaf-parameter ranges)
SYNTHETIC_BOX = Box(np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
                    np.array([3.0, 100.0, 25.0, 1.0, 0.05, 0.02]))


def _load_constants() -> dict[str, np.ndarray]:
    text = resources.files("radis").joinpath("data/synthetic_forward.csv").read_text(encoding="utf-8")
    rows = list(csv.reader(text.splitlines()))
    out: dict[str, list] = {}
    for row in rows[1:]:
        out.setdefault(row[0], []).append([float(v) for v in row[2:]])
    return {k: np.array(v) for k, v in out.items()}


_CONSTANTS: Optional[dict] = None


def synthetic_constants() -> dict[str, np.ndarray]:
    global _CONSTANTS
    if _CONSTANTS is None:
        _CONSTANTS = _load_constants()
    return _CONSTANTS


def synthetic_forward_model(x: np.ndarray) -> np.ndarray:
    """Smooth nonlinear map from the 6-D box to 64 outputs.

    ``y_j = sum_i a_ji sin(b_ji u_i + c_ji) + d_ji u_i^2`` with ``u`` the
    input rescaled to ``[0, 1]^6``.  Inputs 1 and 3 enter with small
    coefficients and are therefore weakly identifiable.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != 6:
        raise ValueError("synthetic model takes 6 parameters")
    if not np.all(SYNTHETIC_BOX.contains(x)):
        raise ValueError("input outside the prior box")
    k = synthetic_constants()
    u = (x - SYNTHETIC_BOX.lower) / SYNTHETIC_BOX.widths
    y = (k["a"][None] * np.sin(k["b"][None] * u[:, None, :] + k["c"][None])).sum(axis=2)
    y += (k["d"][None] * u[:, None, :] ** 2).sum(axis=2)
    return y[0] if single else y


class ForwardModel:
    """Counted (and optionally cached) wrapper around a forward map."""

    def __init__(self, h: Callable[[np.ndarray], np.ndarray], dim_in: int, dim_out: int,
                 cache: bool = False):
        self.h = h
        self.dim_in = dim_in
        self.dim_out = dim_out
        self.cache_enabled = cache
        self._cache: dict[bytes, np.ndarray] = {}
        self.evaluations = 0
        self.cache_hits = 0
        self._lock = threading.Lock()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], self.dim_out))
        todo = []
        for i, xi in enumerate(x):
            key = xi.tobytes()
            if self.cache_enabled and key in self._cache:
                out[i] = self._cache[key]
                self.cache_hits += 1
            else:
                todo.append(i)
        if todo:
            vals = np.atleast_2d(self.h(x[todo]))
            out[todo] = vals
            with self._lock:
                self.evaluations += len(todo)
            if self.cache_enabled:
                for i, v in zip(todo, vals):
                    self._cache[x[i].tobytes()] = v
        return out


def synthetic_model(cache: bool = False) -> ForwardModel:
    return ForwardModel(synthetic_forward_model, 6, 64, cache)


@dataclass
class InversionProblem:
    forward: ForwardModel
    y: np.ndarray
    sigma: float
    prior: Box

    def log_likelihood(self, x: np.ndarray) -> np.ndarray:
        r = self.forward(x) - self.y
        return -0.5 * np.sum(r * r, axis=1) / self.sigma ** 2

    def target(self, name: str = "inversion") -> TargetDensity:
        return TargetDensity(self.log_likelihood, self.forward.dim_in, self.prior, name=name)


def make_problem_sequence(R: int, rng, sigma: float = 0.5, forward: Optional[ForwardModel] = None,
                          amplitude: float = 0.25) -> tuple[list[InversionProblem], np.ndarray]:
    """``R`` problems whose true parameters vary smoothly along the sequence.

    Returns the problems and the ``(R, 6)`` array of true parameters.
    """
    rng = make_rng(rng)
    forward = forward or synthetic_model(cache=True)
    box = SYNTHETIC_BOX
    phase = rng.uniform(0, 2 * np.pi, box.dim)
    base = rng.uniform(0.3, 0.7, box.dim)
    s = np.linspace(0.0, 1.0, R)[:, None]
    u = base + amplitude * np.sin(np.pi * s + phase)
    x_true = box.lower + np.clip(u, 0.02, 0.98) * box.widths
    clean = synthetic_forward_model(x_true)
    ys = clean + sigma * rng.standard_normal(clean.shape)
    return [InversionProblem(forward, y, sigma, box) for y in ys], x_true


def sequential_inversion(problems: Sequence[InversionProblem], cfg, share_nodes: bool = True,
                         rng=None) -> list[tuple[np.ndarray, RunRecord]]:
    """Solve related inversions in order, optionally seeding each with earlier MAPs.

    ``cfg`` is a :class:`~radis.driver.RadisConfig` template; its
    ``initial_points`` are replaced per problem by ``n_initial`` points.
    Without sharing these are uniform prior draws.  With sharing the most
    recent MAP estimates (at most ``n_initial``) take the place of some of
    those draws, so the per-problem target budget is the same in both modes.
    The forward model is cached, so a shared point costs no forward
    evaluation.
    """
    from .driver import run_radis

    if not problems:
        raise ConfigError("empty problem list")
    forward = problems[0].forward
    if any(p.forward is not forward for p in problems):
        raise ConfigError("all problems must share the same forward model")
    rng = make_rng(rng)
    maps: list[np.ndarray] = []
    results = []
    for r, prob in enumerate(problems):
        target = prob.target(name=f"problem_{r}")
        pts = prob.prior.sample(rng, cfg.n_initial)
        if cfg.vertex_seeding:
            v = prob.prior.vertices()[: cfg.n_initial]
            pts[: v.shape[0]] = v
        if share_nodes and maps:
            shared = np.array(maps[-cfg.n_initial:])
            pts[: shared.shape[0]] = shared
        fwd_before = forward.evaluations
        run_cfg = dataclasses.replace(cfg, initial_points=pts, initial_log_values=None)
        out = run_radis(target, run_cfg, rng)
        x_map, lp_map = out.map_estimate()
        maps.append(np.array(x_map))
        rec = record_from_particles(
            "sequential_nn_ais" if share_nodes else "nn_ais", 0, run_cfg.to_dict(), out.particles,
            out.ledger_total, out.wall_time, out.c_hat,
            problem=r, map=x_map, map_log_pi=lp_map, shared_nodes=min(r, cfg.n_initial) if share_nodes else 0,
            forward_evaluations=forward.evaluations - fwd_before)
        results.append((np.array(x_map), rec))
    return results
