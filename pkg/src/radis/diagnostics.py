"""Error metrics and grid-based distances between densities."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .targets import Grid


def _arr(estimates) -> np.ndarray:
    e = np.asarray(estimates, dtype=float)
    if e.size == 0:
        raise ValueError("no estimates")
    return e


def rmse(estimates, truth) -> float:
    """Root mean squared error; vector estimates use the Euclidean norm."""
    e = _arr(estimates)
    t = np.asarray(truth, dtype=float)
    err = e - t
    if err.ndim > 1:
        return float(np.sqrt(np.mean(np.sum(err ** 2, axis=-1))))
    return float(np.sqrt(np.mean(err ** 2)))


def relative_rmse(estimates, truth) -> float:
    """RMSE divided by ``|truth|`` (Euclidean norm for vectors)."""
    t = np.asarray(truth, dtype=float)
    scale = float(np.linalg.norm(t))
    if scale == 0:
        raise ValueError("relative error undefined for zero truth")
    return rmse(estimates, truth) / scale


def mae(estimates, truth) -> float:
    e = _arr(estimates)
    err = np.abs(e - np.asarray(truth, dtype=float))
    if err.ndim > 1:
        err = err.sum(axis=-1)
    return float(np.mean(err))


def relative_mae(estimates, truth) -> float:
    t = np.asarray(truth, dtype=float)
    scale = float(np.linalg.norm(t))
    if scale == 0:
        raise ValueError("relative error undefined for zero truth")
    return mae(estimates, truth) / scale


def _on_grid(f, grid: Grid) -> np.ndarray:
    if callable(f):
        return np.asarray(f(grid.points), dtype=float)
    return np.broadcast_to(np.asarray(f, dtype=float), (len(grid),))


def l2_distance_grid(f, g, grid: Grid) -> float:
    """``sqrt(sum (f - g)^2 * cell_volume)``; ``f``, ``g`` are callables or grid arrays."""
    d = _on_grid(f, grid) - _on_grid(g, grid)
    return float(np.sqrt(np.sum(d * d) * grid.cell_volume))


def linf_distance_grid(f, g, grid: Grid) -> float:
    return float(np.max(np.abs(_on_grid(f, grid) - _on_grid(g, grid))))


def chi2_divergence_grid(pbar, q, grid: Grid) -> float:
    """Pearson divergence ``sum (pbar - q)^2 / q * cell_volume``.

    Returns ``inf`` when ``q`` vanishes at a grid point where ``pbar`` does not.
    """
    p = _on_grid(pbar, grid)
    qq = _on_grid(q, grid)
    zero = qq <= 0
    if np.any(zero & (p > 0)):
        return float("inf")
    ok = ~zero
    return float(np.sum((p[ok] - qq[ok]) ** 2 / qq[ok]) * grid.cell_volume)


@dataclass
class HolderBounds:
    """The chain ``chi2 <= ||p-q||_2 ||(p-q)/q||_2 <= |X| ||(p-q)/q||_inf ||p-q||_inf``."""

    chi2: float
    holder: float
    sup: float

    def holds(self, rtol: float = 1e-12) -> bool:
        return self.chi2 <= self.holder * (1 + rtol) and self.holder <= self.sup * (1 + rtol)


def holder_bounds(pbar, q, grid: Grid) -> HolderBounds:
    p = _on_grid(pbar, grid)
    qq = _on_grid(q, grid)
    diff = p - qq
    ratio = diff / qq
    chi2 = float(np.sum(diff * ratio) * grid.cell_volume)
    l2_diff = np.sqrt(np.sum(diff ** 2) * grid.cell_volume)
    l2_ratio = np.sqrt(np.sum(ratio ** 2) * grid.cell_volume)
    sup = grid.box.volume * np.max(np.abs(ratio)) * np.max(np.abs(diff))
    return HolderBounds(chi2, float(l2_diff * l2_ratio), float(sup))


def fill_distance(nodes, grid: Grid) -> float:
    """Largest distance from a grid point to its nearest node."""
    from .emulator_nn import NodeSet

    if not isinstance(nodes, NodeSet):
        arr = np.atleast_2d(np.asarray(nodes, dtype=float))
        nodes = NodeSet(arr, np.zeros(arr.shape[0]))
    if len(nodes) == 0:
        raise ValueError("empty node set")
    return float(np.max(nodes.nearest_distance(grid.points)))


# ---------------------------------------------------------------------------
# metric tables
# ---------------------------------------------------------------------------

METRIC_COLUMNS = ("metric", "algorithm", "config_hash", "seed_count", "value", "std_error", "status")


@dataclass
class MetricRow:
    metric: str
    algorithm: str
    config_hash: str
    seed_count: int
    value: float
    std_error: float
    status: str = "ok"


def summarize(metric: str, algorithm: str, config_hash: str, per_seed: Sequence[float]) -> MetricRow:
    """Mean of per-seed values with its standard error."""
    v = np.asarray(per_seed, dtype=float)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return MetricRow(metric, algorithm, config_hash, int(v.size), float(v.mean()), se)


def rmse_std_error(estimates, truth) -> float:
    """Delta-method standard error of an RMSE computed across runs.

    With ``s = e^2`` per run, ``se(sqrt(mean s)) ~= sd(s) / (2 sqrt(mean s) sqrt(n))``.
    """
    e = _arr(estimates) - np.asarray(truth, dtype=float)
    s = np.sum(e ** 2, axis=-1) if e.ndim > 1 else e ** 2
    if s.size < 2:
        return float("nan")
    r = np.sqrt(s.mean())
    if r == 0:
        return 0.0
    return float(s.std(ddof=1) / (2 * r * np.sqrt(s.size)))


def write_metrics_csv(path: str | Path, rows: Iterable[MetricRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r.metric, r.algorithm, r.config_hash, r.seed_count, repr(r.value),
                        repr(r.std_error), r.status])
