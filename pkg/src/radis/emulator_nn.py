"""Nearest-neighbour (Voronoi) emulator of an unnormalized density.

The emulator is piecewise constant: a query point takes the target value of
its nearest node (``k=1``) or the mean over its ``k`` nearest nodes.  Outside
the current support box it is zero.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .core import Box

SupportBox = Box

#: above this dimension the k-d tree is replaced by a brute-force scan
KDTREE_MAX_DIM = 20
_SCAN_CHUNK = 4096


class NodeSet:
    """Support points with their stored log-target values.

    Instances are treated as immutable; :func:`add_nodes` returns a new one.
    """

    def __init__(self, nodes: np.ndarray, log_values: np.ndarray):
        nodes = np.array(nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        log_values = np.array(log_values, dtype=float).reshape(-1)
        if nodes.shape[0] != log_values.size:
            raise ValueError("one log value per node required")
        self.nodes = nodes
        self.log_values = log_values
        self.nodes.setflags(write=False)
        self.log_values.setflags(write=False)

    @classmethod
    def empty(cls, dim: int) -> "NodeSet":
        return cls(np.empty((0, dim)), np.empty(0))

    def __len__(self) -> int:
        return self.nodes.shape[0]

    @property
    def size(self) -> int:
        return len(self)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    @cached_property
    def tree(self) -> Optional[cKDTree]:
        if len(self) == 0 or self.dim > KDTREE_MAX_DIM:
            return None
        return cKDTree(self.nodes)

    def subset(self, indices: np.ndarray) -> "NodeSet":
        indices = np.asarray(indices, dtype=int)
        return NodeSet(self.nodes[indices], self.log_values[indices])

    def bounding_box(self) -> Box:
        if len(self) == 0:
            raise ValueError("empty node set has no bounding box")
        return Box(self.nodes.min(axis=0), self.nodes.max(axis=0))

    def query(self, x: np.ndarray, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of the ``k`` nearest nodes, ties to lowest index.

        Both outputs have shape ``(n, k)``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        J = len(self)
        if J == 0:
            raise ValueError("query on an empty node set")
        kk = min(J, k + 1)
        if self.tree is not None:
            dist, idx = self.tree.query(x, k=kk)
            if kk == 1:
                dist, idx = dist[:, None], idx[:, None]
        else:
            dist, idx = _scan(self.nodes, x, kk)
        order = _lexsort_rows(dist, idx)
        dist = np.take_along_axis(dist, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        if kk > k:
            # a tie straddling the k-th place may hide a lower-index node
            for r in np.flatnonzero(dist[:, k - 1] >= dist[:, k]):
                d = np.linalg.norm(self.nodes - x[r], axis=1)
                best = np.lexsort((np.arange(J), d))[:k]
                dist[r, :k], idx[r, :k] = d[best], best
        return dist[:, :k], idx[:, :k]

    def nearest_distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.tree is not None:
            return self.tree.query(x, k=1)[0]
        return _scan(self.nodes, x, 1)[0][:, 0]

    # CSV persistence: columns x_1..x_d, log_pi
    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(self.dim)] + ["log_pi"])
            for x, lv in zip(self.nodes, self.log_values):
                w.writerow([repr(float(v)) for v in x] + [repr(float(lv))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "NodeSet":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError("row 0: missing header")
        header = rows[0]
        if len(header) < 2 or header[-1] != "log_pi":
            raise ValueError("row 0: header must be x_1..x_d,log_pi")
        dim = len(header) - 1
        data = []
        for i, row in enumerate(rows[1:], start=1):
            if not row:
                continue
            if len(row) != dim + 1:
                raise ValueError(f"row {i}: expected {dim + 1} fields, got {len(row)}")
            try:
                data.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"row {i}: {exc}") from None
        arr = np.array(data, dtype=float).reshape(-1, dim + 1)
        return cls(arr[:, :dim], arr[:, dim])


def _lexsort_rows(dist: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # row-wise order by (distance, index)
    rank = np.argsort(idx, axis=1, kind="stable")
    d_r = np.take_along_axis(dist, rank, axis=1)
    order = np.argsort(d_r, axis=1, kind="stable")
    return np.take_along_axis(rank, order, axis=1)


def _scan(nodes: np.ndarray, x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    out_d = np.empty((x.shape[0], k))
    out_i = np.empty((x.shape[0], k), dtype=int)
    n2 = np.einsum("ij,ij->i", nodes, nodes)
    for s in range(0, x.shape[0], _SCAN_CHUNK):
        xc = x[s:s + _SCAN_CHUNK]
        d2 = np.einsum("ij,ij->i", xc, xc)[:, None] - 2 * xc @ nodes.T + n2[None, :]
        np.maximum(d2, 0, out=d2)
        if k < nodes.shape[0]:
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        else:
            part = np.broadcast_to(np.arange(nodes.shape[0]), d2.shape).copy()
        dd = np.take_along_axis(d2, part, axis=1)
        out_d[s:s + _SCAN_CHUNK] = np.sqrt(dd)
        out_i[s:s + _SCAN_CHUNK] = part
    return out_d, out_i


def add_nodes(node_set: NodeSet, points: np.ndarray, log_values: np.ndarray,
              dedup_tol: float = 0.0) -> NodeSet:
    """Append new evaluated points, skipping near-duplicates.

    A point is dropped when it lies within ``dedup_tol`` (Euclidean) of an
    existing node or of an earlier point in the same batch.  Accepted points
    keep their batch order and are appended after the existing nodes, so
    node indices never move.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    log_values = np.asarray(log_values, dtype=float).reshape(-1)
    if points.shape[0] != log_values.size:
        raise ValueError("one log value per point required")
    if points.shape[0] == 0:
        return node_set
    if len(node_set):
        fresh = node_set.nearest_distance(points) > dedup_tol
    else:
        fresh = np.ones(points.shape[0], bool)
    keep: list[int] = []
    for i in np.flatnonzero(fresh):
        if keep:
            d = np.linalg.norm(points[keep] - points[i], axis=1)
            if np.any(d <= dedup_tol):
                continue
        keep.append(i)
    if not keep:
        return node_set
    return NodeSet(np.vstack([node_set.nodes, points[keep]]),
                   np.concatenate([node_set.log_values, log_values[keep]]))


def expand_support(support: Optional[Box], node_set: NodeSet) -> Box:
    """Grow ``support`` to the smallest box that also contains every node."""
    bbox = node_set.bounding_box()
    return bbox if support is None else support.union(bbox)


@dataclass(frozen=True)
class NnEmulator:
    node_set: NodeSet
    k: int = 1
    support: Optional[Box] = None

    def log_eval(self, x: np.ndarray) -> np.ndarray:
        """Log of the emulator; ``-inf`` outside the support box."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full(x.shape[0], -np.inf)
        inside = np.ones(x.shape[0], bool) if self.support is None else self.support.contains(x)
        if inside.any():
            _, idx = self.node_set.query(x[inside], self.k)
            lv = self.node_set.log_values[idx]
            if self.k == 1:
                out[inside] = lv[:, 0]
            else:
                out[inside] = logsumexp(lv, axis=1) - np.log(self.k)
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_eval(x))

    def nearest(self, x: np.ndarray) -> np.ndarray:
        return self.node_set.query(x, 1)[1][:, 0]


def build_nn(node_set: NodeSet, k: int = 1, support: Optional[Box] = None) -> NnEmulator:
    if len(node_set) == 0:
        raise ValueError("cannot build an emulator from an empty node set")
    if not 1 <= k <= len(node_set):
        raise ValueError(f"k must lie in [1, {len(node_set)}], got {k}")
    return NnEmulator(node_set, int(k), support)


def eval_nn(em: NnEmulator, x: np.ndarray) -> np.ndarray:
    return em(x)


def nn_mixture_decomposition_1d(em: NnEmulator) -> list[tuple[tuple[float, float], float]]:
    """Exact Voronoi intervals and normalized masses of a 1-D ``k=1`` emulator.

    The emulator equals ``sum_i pi(x_i) 1[R_i]``, a mixture of uniforms on
    the cells ``R_i`` with weights proportional to ``pi(x_i) |R_i|``.
    Returned in node order.
    """
    ns = em.node_set
    if ns.dim != 1:
        raise ValueError("decomposition is only defined in one dimension")
    if em.k != 1:
        raise ValueError("decomposition requires the k=1 interpolator")
    if em.support is None:
        raise ValueError("decomposition requires a bounded support")
    lo, hi = float(em.support.lower[0]), float(em.support.upper[0])
    x = ns.nodes[:, 0]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    mids = 0.5 * (xs[1:] + xs[:-1])
    edges = np.clip(np.concatenate([[lo], mids, [hi]]), lo, hi)
    intervals = np.empty((len(xs), 2))
    intervals[order, 0] = edges[:-1]
    intervals[order, 1] = edges[1:]
    lengths = intervals[:, 1] - intervals[:, 0]
    log_nu = ns.log_values + np.log(np.where(lengths > 0, lengths, 1.0))
    log_nu[lengths <= 0] = -np.inf
    nu = np.exp(log_nu - np.max(log_nu))
    nu /= nu.sum()
    return [((float(a), float(b)), float(m)) for (a, b), m in zip(intervals, nu)]
