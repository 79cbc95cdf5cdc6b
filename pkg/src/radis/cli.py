"""Command-line experiment runner.

Three subcommands:

``radis run CONFIG``
    Execute every (algorithm, parameter cell, seed) combination described in
    a YAML experiment file; write one RunRecord JSON per run and an
    aggregated ``metrics.csv``.
``radis emulate CONFIG``
    Rebuild an NN or GP emulator from a node CSV and dump its values on a grid.
``radis oracle TARGET``
    Print the ground-truth evidence and mean of a benchmark target.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import itertools
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from .baselines import BaselineConfig, run_baseline, standard_is
from .core import Box, ConfigError
from .diagnostics import (MetricRow, mae, relative_rmse, rmse, rmse_std_error, summarize,
                          write_metrics_csv)
from .driver import LayerSpec, RadisConfig, alpha_decay, alpha_fixed, run_radis, run_radis_lais
from .emulator_gp import GpKernel, fit_gp
from .emulator_nn import NodeSet, build_nn
from .inner_is import GaussianProposal, MixtureProposal, UniformProposal
from .records import RunRecord, record_from_particles
from .targets import (SYNTHETIC_BOX, Grid, banana_target, gaussian_mixture_target, grid_quadrature,
                      make_problem_sequence, mixture_means, sequential_inversion)

EXIT_OK, EXIT_FAILED_CELLS, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------------------
# YAML with line numbers
# ---------------------------------------------------------------------------

class ConfigValidationError(ConfigError):
    """A config problem tied to a key path; rendered as ``file:line: path: message``."""

    def __init__(self, message: str, path: Sequence = ()):
        super().__init__(message)
        self.message = message
        self.path = tuple(path)

    def render(self, source: str, lines: dict) -> str:
        p = self.path
        while p and p not in lines:
            p = p[:-1]
        line = lines.get(p, 1)
        where = ".".join(str(k) for k in self.path) or "<root>"
        return f"{source}:{line}: {where}: {self.message}"


def _line_map(node, path=(), out=None) -> dict:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            _line_map(v, path + (k.value,), out)
            out[path + (k.value,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


def load_yaml(text: str, source: str = "<config>") -> tuple[Any, dict]:
    """Parse YAML, returning the data and a map from key path to line number."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{source}:{line}: YAML syntax: {problem}") from None
    return data, ({} if node is None else _line_map(node))


# ---------------------------------------------------------------------------
# experiment config
# ---------------------------------------------------------------------------

KINDS = ("standard_is", "radis", "radis_lais", "pmc", "dm_pmc", "oc_lais", "amis", "sequential")
TARGETS = ("banana", "gaussian_mixture", "synthetic_inversion")
METRICS = ("rel_rmse_Z", "rel_rmse_mean", "rmse_Z", "mae_Z", "mean_ess", "param_mae")

_RADIS_KEYS = {"T", "E", "N", "L", "k", "emulator", "gp_noise", "gp_lengthscale", "gp_mean",
               "tune_every", "j_max", "q_aux", "q_par", "alpha", "alpha_inf", "alpha_0",
               "n_initial", "vertex_seeding", "resampling", "layers", "save_nodes"}
_PARAM_KEYS = {
    "standard_is": {"E", "proposal", "mean", "cov", "weight"},
    "radis": _RADIS_KEYS,
    "radis_lais": {"E", "N", "L", "n_lais", "xi", "alpha", "init_box", "q_aux"},
    "pmc": {"E", "xi", "n_proposals", "init_box"},
    "dm_pmc": {"E", "xi", "n_proposals", "init_box"},
    "oc_lais": {"E", "xi", "n_proposals", "init_box"},
    "amis": {"E", "xi", "M", "init_box", "adapt_covariance"},
    "sequential": _RADIS_KEYS - {"E", "q_par", "alpha", "alpha_inf", "alpha_0", "save_nodes"}
    | {"share_nodes"},
}
_TARGET_KEYS = {"banana": {"name", "dim", "grid"},
                "gaussian_mixture": {"name", "dim", "sigma"},
                "synthetic_inversion": {"name", "problems", "sigma"}}


@dataclass
class AlgorithmSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    metrics: Optional[list] = None

    def cells(self) -> list[dict]:
        """Fixed params merged with every combination of the swept ones."""
        keys = list(self.grid)
        out = []
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            p = dict(self.params)
            p.update(zip(keys, combo))
            out.append(p)
        return out

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "params": dict(self.params)}
        if self.grid:
            d["grid"] = {k: list(v) for k, v in self.grid.items()}
        if self.metrics is not None:
            d["metrics"] = list(self.metrics)
        return d


@dataclass
class ExperimentConfig:
    """Parsed experiment file.

    ``seeds`` is stored as an explicit list; ``budget``, when set, is the
    number of target evaluations every cell must spend.
    """

    experiment: str
    target: dict
    algorithms: list
    seeds: list
    metrics: list
    output: str = "results"
    budget: Optional[int] = None

    def to_dict(self) -> dict:
        d = {"experiment": self.experiment, "target": dict(self.target),
             "seeds": list(self.seeds), "metrics": list(self.metrics), "output": self.output,
             "algorithms": [a.to_dict() for a in self.algorithms]}
        if self.budget is not None:
            d["budget"] = self.budget
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: Any) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigValidationError("config must be a mapping")
        _no_extra(d, {"experiment", "target", "algorithms", "seeds", "metrics", "output", "budget"}, ())
        name = _req(d, "experiment", (), str)
        target = _req(d, "target", (), dict)
        tname = _req(target, "name", ("target",), str)
        if tname not in TARGETS:
            raise ConfigValidationError(f"unknown target {tname!r}; choose from {', '.join(TARGETS)}",
                                        ("target", "name"))
        _no_extra(target, _TARGET_KEYS[tname], ("target",))
        seeds = parse_seeds(_req(d, "seeds", ()), ("seeds",))
        metrics = _req(d, "metrics", (), list)
        budget = d.get("budget")
        if budget is not None and (not isinstance(budget, int) or isinstance(budget, bool) or budget < 1):
            raise ConfigValidationError("budget must be a positive integer", ("budget",))
        algos_raw = _req(d, "algorithms", (), list)
        if not algos_raw:
            raise ConfigValidationError("at least one algorithm is required", ("algorithms",))
        algos = []
        for i, a in enumerate(algos_raw):
            path = ("algorithms", i)
            if not isinstance(a, dict):
                raise ConfigValidationError("algorithm entry must be a mapping", path)
            _no_extra(a, {"name", "kind", "params", "grid", "metrics"}, path)
            kind = _req(a, "kind", path, str)
            if kind not in KINDS:
                raise ConfigValidationError(f"unknown kind {kind!r}; choose from {', '.join(KINDS)}",
                                            path + ("kind",))
            params = a.get("params") or {}
            grid = a.get("grid") or {}
            if not isinstance(params, dict):
                raise ConfigValidationError("params must be a mapping", path + ("params",))
            if not isinstance(grid, dict):
                raise ConfigValidationError("grid must be a mapping", path + ("grid",))
            for k, v in grid.items():
                if not isinstance(v, list) or not v:
                    raise ConfigValidationError("grid values must be non-empty lists", path + ("grid", k))
                if k in params:
                    raise ConfigValidationError("key appears in both params and grid", path + ("grid", k))
            algos.append(AlgorithmSpec(str(a.get("name", kind)), kind, dict(params), dict(grid),
                                       a.get("metrics")))
        cfg = cls(name, dict(target), algos, seeds, list(metrics), str(d.get("output", "results")),
                  budget)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        names = [a.name for a in self.algorithms]
        for i, n in enumerate(names):
            if names.index(n) != i:
                raise ConfigValidationError(f"duplicate algorithm name {n!r}", ("algorithms", i, "name"))
        tname = self.target["name"]
        for i, m in enumerate(self.metrics):
            if m not in METRICS:
                raise ConfigValidationError(f"unknown metric {m!r}", ("metrics", i))
        for i, a in enumerate(self.algorithms):
            path = ("algorithms", i)
            if (a.kind == "sequential") != (tname == "synthetic_inversion"):
                raise ConfigValidationError(
                    "kind 'sequential' goes with target 'synthetic_inversion' and only with it",
                    path + ("kind",))
            for j, m in enumerate(a.metrics or []):
                if m not in METRICS:
                    raise ConfigValidationError(f"unknown metric {m!r}", path + ("metrics", j))
            for m in self.metrics_for(a):
                if (m == "param_mae") != (a.kind == "sequential"):
                    raise ConfigValidationError(f"metric {m!r} does not apply to kind {a.kind!r}",
                                                path + ("kind",))
            allowed = _PARAM_KEYS[a.kind]
            for sect in ("params", "grid"):
                for k in getattr(a, sect):
                    if k not in allowed:
                        raise ConfigValidationError(
                            f"unknown parameter for {a.kind}; allowed: {', '.join(sorted(allowed))}",
                            path + (sect, k))
            for cell in a.cells():
                try:
                    planned = planned_budget(a.kind, cell, self.target)
                except ConfigValidationError as exc:
                    key = exc.path[0] if exc.path else None
                    sect = "grid" if key in a.grid else "params"
                    raise ConfigValidationError(exc.message, path + ((sect, key) if key else ())) from None
                if self.budget is not None and planned != self.budget:
                    key = next((k for k in ("E", "T", "N") if k in cell), None)
                    sect = "grid" if key in a.grid else "params"
                    raise ConfigValidationError(
                        f"cell {cell} spends {planned} evaluations, budget is {self.budget}",
                        path + ((sect, key) if key else ()))

    def metrics_for(self, algo: AlgorithmSpec) -> list:
        return list(algo.metrics) if algo.metrics is not None else list(self.metrics)


def _req(d: dict, key: str, path: tuple, typ=None):
    if key not in d or d[key] is None:
        raise ConfigValidationError(f"missing required key {key!r}", path)
    v = d[key]
    if typ is not None and not isinstance(v, typ):
        raise ConfigValidationError(f"expected {typ.__name__}", path + (key,))
    return v


def _no_extra(d: dict, allowed: set, path: tuple) -> None:
    for k in d:
        if k not in allowed:
            raise ConfigValidationError(f"unknown key; allowed: {', '.join(sorted(allowed))}", path + (k,))


def parse_seeds(spec, path=("seeds",)) -> list:
    """Seeds from a list, ``{start, count}``, an int ``n`` (0..n-1) or ``"a:b"`` / ``"a,b,c"``."""
    if isinstance(spec, bool):
        raise ConfigValidationError("invalid seed specification", path)
    if isinstance(spec, int):
        seeds = list(range(spec))
    elif isinstance(spec, list):
        seeds = spec
    elif isinstance(spec, dict):
        try:
            seeds = list(range(int(spec.get("start", 0)), int(spec.get("start", 0)) + int(spec["count"])))
        except (KeyError, TypeError, ValueError):
            raise ConfigValidationError("seed range needs integer 'start' and 'count'", path) from None
    elif isinstance(spec, str):
        try:
            if ":" in spec:
                a, b = spec.split(":")
                seeds = list(range(int(a), int(b)))
            elif "," in spec:
                seeds = [int(s) for s in spec.split(",") if s.strip()]
            else:
                seeds = list(range(int(spec)))
        except ValueError:
            raise ConfigValidationError(f"cannot parse seeds {spec!r}", path) from None
    else:
        raise ConfigValidationError("invalid seed specification", path)
    if not seeds:
        raise ConfigValidationError("seed range is empty", path)
    if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in seeds):
        raise ConfigValidationError("seeds must be non-negative integers", path)
    if len(set(seeds)) != len(seeds):
        raise ConfigValidationError("seeds must be distinct", path)
    return list(seeds)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate an experiment file; errors carry ``file:line``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    data, lines = load_yaml(text, str(path))
    try:
        return ExperimentConfig.from_dict(data)
    except ConfigValidationError as exc:
        raise ConfigError(exc.render(str(path), lines)) from None


def config_hash(kind: str, params: dict, target: dict) -> str:
    blob = json.dumps({"kind": kind, "params": params, "target": target}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# targets, truth and budgets
# ---------------------------------------------------------------------------

def build_target(spec: dict):
    name = spec["name"]
    if name == "banana":
        return banana_target(int(spec.get("dim", 2)))
    if name == "gaussian_mixture":
        return gaussian_mixture_target(int(spec.get("dim", 10)), float(spec.get("sigma", 4.0)))
    raise ConfigError(f"target {name!r} is built per problem")


@lru_cache(maxsize=8)
def _truth_cached(spec_json: str):
    spec = json.loads(spec_json)
    if spec["name"] == "banana":
        q = grid_quadrature(build_target(spec), int(spec.get("grid", 2000)))
        return q.Z, q.mean, q.covariance()
    if spec["name"] == "gaussian_mixture":
        mu = mixture_means(int(spec.get("dim", 10)))
        s = float(spec.get("sigma", 4.0))
        m = mu.mean(axis=0)
        cov = s ** 2 * np.eye(mu.shape[1]) + (mu - m).T @ (mu - m) / mu.shape[0]
        return 1.0, m, cov
    return None


def target_truth(spec: dict):
    """``(Z, mean, covariance)`` of a benchmark target, or ``None``."""
    return _truth_cached(json.dumps(spec, sort_keys=True))


def _int(params, key, default=None, minimum=1):
    v = params.get(key, default)
    if v is None:
        raise ConfigValidationError(f"parameter {key!r} is required", (key,))
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigValidationError(f"parameter {key!r} must be an integer >= {minimum}", (key,))
    return v


def _radis_T(params) -> int:
    N = _int(params, "N")
    n0 = _int(params, "n_initial", 10)
    if "T" in params and "E" in params:
        raise ConfigValidationError("give T or E, not both", ("E",))
    if "E" in params:
        E = _int(params, "E")
        if E <= n0 or (E - n0) % N:
            raise ConfigValidationError(f"E - n_initial = {E - n0} must be a positive multiple of N={N}", ("E",))
        return (E - n0) // N
    return _int(params, "T")


def planned_budget(kind: str, params: dict, target: dict) -> int:
    """Target evaluations a cell will spend (per problem for ``sequential``)."""
    if kind in ("radis", "sequential"):
        T = _radis_T(params)
        if "L" in params:
            _int(params, "L")
        if params.get("q_par") not in (None, "none", "uniform", "gaussian_star"):
            raise ConfigValidationError("q_par must be none, uniform or gaussian_star", ("q_par",))
        if params.get("q_par") in ("uniform", "gaussian_star") and target["name"] != "banana":
            raise ConfigValidationError("q_par needs a bounded benchmark target", ("q_par",))
        alpha = params.get("alpha", 0.5)
        if not (alpha == "decay" or (isinstance(alpha, (int, float)) and 0 <= alpha <= 1)):
            raise ConfigValidationError("alpha must be a number in [0, 1] or 'decay'", ("alpha",))
        return _int(params, "n_initial", 10) + _int(params, "N") * T
    E = _int(params, "E")
    if kind == "standard_is":
        prop = params.get("proposal", "uniform")
        if prop not in ("uniform", "gaussian", "gaussian_star", "gaussian_star_uniform"):
            raise ConfigValidationError(f"unknown proposal {prop!r}", ("proposal",))
        if prop in ("uniform", "gaussian_star", "gaussian_star_uniform") and target["name"] != "banana":
            raise ConfigValidationError(f"proposal {prop!r} needs a bounded benchmark target", ("proposal",))
        if prop == "gaussian" and ("mean" not in params or "cov" not in params):
            raise ConfigValidationError("gaussian proposal needs 'mean' and 'cov'", ("proposal",))
        return E
    if kind == "radis_lais":
        N, n_lais = _int(params, "N"), _int(params, "n_lais")
        if E <= n_lais or (E - n_lais) % N:
            raise ConfigValidationError(f"E - n_lais = {E - n_lais} must be a positive multiple of N={N}", ("E",))
        return E
    if kind in ("pmc", "dm_pmc"):
        P = _int(params, "n_proposals", 100)
        if E % P:
            raise ConfigValidationError(f"n_proposals={P} must divide E={E}", ("n_proposals",))
    if kind == "oc_lais" and _int(params, "n_proposals", 100) >= E:
        raise ConfigValidationError("n_proposals must be below E", ("n_proposals",))
    if kind == "amis" and E % _int(params, "M", 100):
        raise ConfigValidationError("M must divide E", ("M",))
    return E


# ---------------------------------------------------------------------------
# cell execution
# ---------------------------------------------------------------------------

def _box(spec, dim) -> Optional[Box]:
    if spec is None:
        return None
    lo, hi = spec
    return Box.cube(float(lo), float(hi), dim)


def _radis_config(params: dict, target, truth) -> RadisConfig:
    p = dict(params)
    T = _radis_T(p)
    kw = {k: p[k] for k in ("L", "k", "emulator", "gp_noise", "gp_lengthscale", "gp_mean",
                            "tune_every", "j_max", "q_aux", "n_initial", "vertex_seeding",
                            "resampling") if k in p}
    if "layers" in p:
        kw["layers"] = [LayerSpec(**ls) for ls in p["layers"]]
    q_par = p.get("q_par")
    if q_par in ("uniform", "gaussian_star"):
        kw["q_par"] = (UniformProposal(target.domain) if q_par == "uniform"
                       else GaussianProposal(truth[1], truth[2]))
        alpha = p.get("alpha", 0.5)
        kw["alpha"] = (alpha_decay(p.get("alpha_inf", 0.05), p.get("alpha_0", 0.5))
                       if alpha == "decay" else alpha_fixed(float(alpha)))
    return RadisConfig(T=T, N=p["N"], **kw)


def _proposal(params: dict, target, truth):
    kind = params.get("proposal", "uniform")
    if kind == "uniform":
        return UniformProposal(target.domain)
    if kind == "gaussian":
        return GaussianProposal(np.asarray(params["mean"], float), np.asarray(params["cov"], float))
    g = GaussianProposal(truth[1], truth[2])
    if kind == "gaussian_star":
        return g
    w = float(params.get("weight", 0.5))
    return MixtureProposal([g, UniformProposal(target.domain)], [w, 1 - w])


@dataclass
class CellResult:
    record: RunRecord
    nodes_csv: Optional[str] = None


def execute(kind: str, params: dict, target_spec: dict, seed: int, name: str) -> CellResult:
    """Run one (algorithm, params, seed); exceptions become a failed record."""
    t0 = time.perf_counter()
    try:
        return _execute(kind, params, target_spec, seed, name)
    except Exception as exc:  # noqa: BLE001 - a failing cell must not stop the sweep
        rec = RunRecord(name, seed, {"kind": kind, **params}, float("nan"), float("nan"), [],
                        float("nan"), 0, wall_time=time.perf_counter() - t0, status="failed",
                        error=f"{type(exc).__name__}: {exc}")
        return CellResult(rec)


def _execute(kind, params, target_spec, seed, name) -> CellResult:
    rng = np.random.default_rng(seed)
    config = {"kind": kind, **params}
    if kind == "sequential":
        return _execute_sequential(params, target_spec, seed, name, rng)
    target = build_target(target_spec)
    truth = target_truth(target_spec)
    planned = planned_budget(kind, params, target_spec)
    t0 = time.perf_counter()
    nodes_csv = None
    c_hat = ()
    if kind == "standard_is":
        ps = standard_is(target, _proposal(params, target, truth), params["E"], rng)
        evals = target.eval_counter
    elif kind in ("radis", "radis_lais"):
        if kind == "radis":
            out = run_radis(target, _radis_config(params, target, truth), rng)
        else:
            out = run_radis_lais(target, params["n_lais"], float(params.get("xi", 1.0)), params["N"],
                                 params["E"], float(params.get("alpha", 0.5)), params.get("L"),
                                 _box(params.get("init_box"), target.dim), rng,
                                 q_aux=params.get("q_aux", "auto"))
        ps, evals, c_hat = out.particles, out.ledger_total, out.c_hat
        if params.get("save_nodes"):
            nodes_csv = _nodes_to_csv(out.node_set)
    else:
        bc = BaselineConfig(kind, params["E"], float(params.get("xi", 1.0)),
                            int(params.get("n_proposals", 100)), int(params.get("M", 100)),
                            _box(params.get("init_box"), target.dim),
                            bool(params.get("adapt_covariance", False)), seed)
        ps = run_baseline(target, bc, rng)
        evals = target.eval_counter
    wall = time.perf_counter() - t0
    if evals != planned or target.eval_counter != planned:
        raise RuntimeError(f"budget ledger {target.eval_counter} differs from planned {planned}")
    rec = record_from_particles(name, seed, config, ps, evals, wall, c_hat)
    return CellResult(rec, nodes_csv)


def _execute_sequential(params, target_spec, seed, name, rng) -> CellResult:
    R = int(target_spec.get("problems", 16))
    sigma = float(target_spec.get("sigma", 0.5))
    problems, x_true = make_problem_sequence(R, np.random.default_rng([seed, 1]), sigma=sigma)
    p = {k: v for k, v in params.items() if k != "share_nodes"}
    cfg = _radis_config(p, None, None)
    t0 = time.perf_counter()
    res = sequential_inversion(problems, cfg, bool(params.get("share_nodes", True)), rng)
    wall = time.perf_counter() - t0
    maps = np.array([r[0] for r in res])
    err = np.abs(maps - x_true) / SYNTHETIC_BOX.widths
    evidences = [r[1].evidence for r in res]
    planned = planned_budget("sequential", params, target_spec)
    if any(r[1].evaluations != planned for r in res):
        raise RuntimeError("per-problem budget ledger differs from plan")
    rec = RunRecord(name, seed, {"kind": "sequential", **params}, float(np.mean(evidences)),
                    float(np.log(np.mean(evidences))), maps.tolist(), float("nan"),
                    sum(r[1].evaluations for r in res), wall_time=wall,
                    extra={"param_mae": float(err.mean()), "x_true": x_true.tolist(),
                           "forward_evaluations": problems[0].forward.evaluations,
                           "evidence_per_problem": evidences})
    return CellResult(rec)


def _nodes_to_csv(ns: NodeSet) -> str:
    rows = [",".join([f"x_{i + 1}" for i in range(ns.dim)] + ["log_pi"])]
    rows += [",".join(repr(float(v)) for v in list(x) + [lv]) for x, lv in zip(ns.nodes, ns.log_values)]
    return "\n".join(rows) + "\n"


def _execute_packed(args):
    return execute(*args)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def cell_metrics(metric: str, records: list, truth) -> tuple[float, float]:
    """Aggregate one metric over the successful seeds of a cell."""
    if not records:
        return float("nan"), float("nan")
    if metric == "param_mae":
        r = summarize(metric, "", "", [rec.extra["param_mae"] for rec in records])
        return r.value, r.std_error
    if metric == "mean_ess":
        r = summarize(metric, "", "", [rec.ess for rec in records])
        return r.value, r.std_error
    Z, mean = truth[0], truth[1]
    z = np.array([rec.evidence for rec in records])
    if metric == "rel_rmse_Z":
        return relative_rmse(z, Z), rmse_std_error(z, Z) / abs(Z)
    if metric == "rmse_Z":
        return rmse(z, Z), rmse_std_error(z, Z)
    if metric == "mae_Z":
        r = summarize(metric, "", "", np.abs(z - Z))
        return mae(z, Z), r.std_error
    if metric == "rel_rmse_mean":
        m = np.array([rec.mean for rec in records])
        return relative_rmse(m, mean), rmse_std_error(m, mean) / float(np.linalg.norm(mean))
    raise ConfigError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# run command
# ---------------------------------------------------------------------------

@dataclass
class Cell:
    algo: AlgorithmSpec
    params: dict
    hash: str

    @property
    def label(self) -> str:
        return f"{_slug(self.algo.name)}-{self.hash}"


def _slug(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in s)


def plan_cells(cfg: ExperimentConfig) -> list[Cell]:
    return [Cell(a, p, config_hash(a.kind, p, cfg.target)) for a in cfg.algorithms for p in a.cells()]


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str | Path] = None, jobs: int = 1,
                   timing: bool = False, stream=None) -> tuple[int, list[MetricRow]]:
    """Execute all cells over all seeds and write records plus ``metrics.csv``."""
    out = Path(out_dir or cfg.output)
    rec_dir = out / "records"
    rec_dir.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
    cells = plan_cells(cfg)
    tasks = [(c.algo.kind, c.params, cfg.target, s, c.algo.name) for c in cells for s in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute_packed, tasks))
    else:
        results = [_execute_packed(t) for t in tasks]
    truth = target_truth(cfg.target) if cfg.target["name"] != "synthetic_inversion" else None
    rows: list[MetricRow] = []
    any_failed = False
    n = len(cfg.seeds)
    for ci, cell in enumerate(cells):
        cdir = rec_dir / cell.label
        cdir.mkdir(exist_ok=True)
        chunk = results[ci * n:(ci + 1) * n]
        for res in chunk:
            res.record.write(cdir / f"seed_{res.record.seed}.json", include_timing=timing)
            if res.nodes_csv is not None:
                (cdir / f"seed_{res.record.seed}_nodes.csv").write_text(res.nodes_csv, encoding="utf-8")
        ok = [r.record for r in chunk if r.record.status == "ok"]
        failed = n - len(ok)
        any_failed |= failed > 0
        status = "ok" if not failed else f"failed {failed}/{n}: {_first_error(chunk)}"
        for m in cfg.metrics_for(cell.algo):
            v, se = cell_metrics(m, ok, truth)
            rows.append(MetricRow(m, cell.algo.name, cell.hash, len(ok), v, se, status))
    write_metrics_csv(out / "metrics.csv", rows)
    _print_summary(rows, cells, stream or sys.stdout)
    return (EXIT_FAILED_CELLS if any_failed else EXIT_OK), rows


def _first_error(chunk) -> str:
    for r in chunk:
        if r.record.error:
            return r.record.error.splitlines()[0][:200]
    return ""


def _print_summary(rows, cells, stream) -> None:
    params = {c.hash: c.params for c in cells}
    w = max([9] + [len(r.algorithm) for r in rows])
    print(f"{'algorithm':<{w}}  {'metric':<13} {'value':>12} {'std_err':>10} {'seeds':>5}  params",
          file=stream)
    for r in rows:
        swept = ",".join(f"{k}={v}" for k, v in params[r.config_hash].items())
        flag = "" if r.status == "ok" else "  [" + r.status + "]"
        print(f"{r.algorithm:<{w}}  {r.metric:<13} {r.value:>12.6g} {r.std_error:>10.3g} "
              f"{r.seed_count:>5}  {swept}{flag}", file=stream)


# ---------------------------------------------------------------------------
# emulate command
# ---------------------------------------------------------------------------

_EMULATE_KEYS = {"nodes", "emulator", "k", "lengthscale", "noise", "mean", "grid", "output", "support"}


def emulate(config_path: str | Path, out: Optional[str | Path] = None) -> Path:
    """Build an emulator from a node CSV and write its values on a grid."""
    config_path = Path(config_path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{config_path}: cannot read config: {exc.strerror}") from None
    data, lines = load_yaml(text, str(config_path))
    try:
        return _emulate(data, config_path.parent, out)
    except ConfigValidationError as exc:
        raise ConfigError(exc.render(str(config_path), lines)) from None


def _emulate(d, base: Path, out) -> Path:
    if not isinstance(d, dict):
        raise ConfigValidationError("config must be a mapping")
    _no_extra(d, _EMULATE_KEYS, ())
    kind = _req(d, "emulator", (), str)
    if kind not in ("nn", "gp"):
        raise ConfigValidationError("emulator must be 'nn' or 'gp'", ("emulator",))
    node_path = base / _req(d, "nodes", (), str)
    try:
        nodes = NodeSet.from_csv(node_path)
    except OSError as exc:
        raise ConfigValidationError(f"cannot read node file: {exc.strerror}", ("nodes",)) from None
    except ValueError as exc:
        raise ConfigError(f"{node_path}: {exc}") from None
    if len(nodes) == 0:
        raise ConfigError(f"{node_path}: no nodes")
    g = d.get("grid")
    if not g or not isinstance(g, dict):
        raise ConfigValidationError("grid spec is empty", ("grid",))
    lower = np.asarray(_req(g, "lower", ("grid",)), float).reshape(-1)
    upper = np.asarray(_req(g, "upper", ("grid",)), float).reshape(-1)
    n = _req(g, "n", ("grid",))
    if lower.size != nodes.dim or upper.size != nodes.dim:
        raise ConfigValidationError(f"grid bounds must have {nodes.dim} entries", ("grid",))
    if np.any(upper <= lower):
        raise ConfigValidationError("grid upper bounds must exceed lower bounds", ("grid",))
    try:
        grid = Grid.regular(Box(lower, upper), n)
    except ValueError as exc:
        raise ConfigValidationError(str(exc), ("grid", "n")) from None
    support = Box(np.asarray(d["support"][0], float), np.asarray(d["support"][1], float)) \
        if d.get("support") else None
    if kind == "nn":
        em = build_nn(nodes, int(d.get("k", 1)), support)
    else:
        kern = GpKernel(float(d.get("lengthscale", 1.0)), float(d.get("noise", 1e-6)))
        em = fit_gp(nodes, kern, d.get("mean", 0.0), support)
    lv = em.log_eval(grid.points)
    path = Path(out) if out else base / str(d.get("output", "emulator_values.csv"))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{i + 1}" for i in range(nodes.dim)] + ["log_value", "value"])
        for x, v in zip(grid.points, lv):
            w.writerow([repr(float(c)) for c in x] + [repr(float(v)), repr(float(np.exp(v)))])
    return path


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def oracle(name: str, grid: int = 2000, dim: Optional[int] = None) -> dict:
    spec = {"name": name}
    if dim is not None:
        spec["dim"] = dim
    if name == "banana":
        spec["grid"] = grid
    elif name != "gaussian_mixture":
        raise ConfigError(f"no oracle for target {name!r}; choose banana or gaussian_mixture")
    Z, mean, cov = target_truth(spec)
    return {"target": name, "Z": float(Z), "mean": [float(v) for v in mean],
            "covariance": [[float(v) for v in row] for row in cov],
            "method": "midpoint grid" if name == "banana" else "analytic"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radis", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment file")
    r.add_argument("config")
    r.add_argument("--seeds", help="override seeds: N, a:b or a,b,c")
    r.add_argument("--out", help="override the output directory")
    r.add_argument("--jobs", type=int, default=1, help="worker processes")
    r.add_argument("--timing", action="store_true", help="store wall times in run records")
    e = sub.add_parser("emulate", help="evaluate a saved-node emulator on a grid")
    e.add_argument("config")
    e.add_argument("--out", help="output CSV path")
    o = sub.add_parser("oracle", help="ground-truth evidence and mean")
    o.add_argument("target")
    o.add_argument("--grid", type=int, default=2000, help="cells per dimension")
    o.add_argument("--dim", type=int)
    o.add_argument("--out", help="write JSON here as well")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seeds:
                try:
                    cfg = dataclasses.replace(cfg, seeds=parse_seeds(args.seeds, ("--seeds",)))
                except ConfigValidationError as exc:
                    raise ConfigError(f"--seeds: {exc.message}") from None
            if args.jobs < 1:
                raise ConfigError("--jobs must be at least 1")
            code, _ = run_experiment(cfg, args.out, args.jobs, args.timing)
            return code
        if args.command == "emulate":
            path = emulate(args.config, args.out)
            print(f"wrote {path}")
            return EXIT_OK
        res = oracle(args.target, args.grid, args.dim)
        text = json.dumps(res, indent=2)
        print(text)
        if args.out:
            Path(args.out).write_text(text + "\n", encoding="utf-8")
        return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
