"""The adaptive loop: emulator refresh, inner SIR, node update, outer weighting.

Each iteration builds an emulator of the target from every node evaluated so
far, samples it through the inner SIR layer (optionally mixed with a
parametric proposal), evaluates the true target at the new points and adds
them as nodes.  After the last iteration every particle is weighted against
the temporal mixture of all the proposals that were used.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .core import (Box, ConfigError, DegenerateWeightsError, SupportError, TargetDensity,
                   WeightedParticleSet, make_rng)
from .emulator_gp import GpKernel, farthest_point_indices, fit_gp, tune_lengthscale
from .emulator_nn import NodeSet, add_nodes, build_nn, expand_support
from .inner_is import (DEFAULT_POOL_RATIO, GaussianProposal, IsotropicGaussianMixture,
                       MixtureProposal, UniformProposal, moment_matched_student_t, run_inner)
from .inner_is import inner_log_weights, log_estimate_normalizer, multinomial_select

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# alpha schedules
# --------------------------------------------------------------------------

def alpha_fixed(value: float = 0.5) -> Callable[[int, int], float]:
    def schedule(t: int, T: int) -> float:
        return value
    schedule.spec = {"kind": "fixed", "value": value}
    return schedule


def alpha_decay(alpha_inf: float = 0.05, alpha_0: float = 0.5) -> Callable[[int, int], float]:
    """``max(alpha_inf, alpha_0 (1 - t/T))``."""
    def schedule(t: int, T: int) -> float:
        return max(alpha_inf, alpha_0 * (1.0 - t / T))
    schedule.spec = {"kind": "decay", "alpha_inf": alpha_inf, "alpha_0": alpha_0}
    return schedule


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One emulator stage of the inner chain."""

    emulator: str = "nn"           # "nn" or "gp"
    L: int = 0                     # pool size drawn/resampled at this stage
    k: int = 1
    gp_noise: float = 1e-6
    gp_lengthscale: Optional[float] = None
    gp_mean: Union[float, str] = 0.0


@dataclass
class RadisConfig:
    T: int
    N: int
    L: Optional[int] = None
    emulator: str = "nn"
    k: int = 1
    gp_noise: float = 1e-6
    gp_lengthscale: Optional[float] = None
    gp_grid: Optional[Sequence[float]] = None
    gp_mean: Union[float, str] = 0.0
    tune_every: int = 5
    j_max: int = 2000
    q_aux: str = "auto"            # "auto", "uniform", "student_t"
    q_par: Optional[object] = None
    alpha: Optional[Callable[[int, int], float]] = None
    n_initial: int = 10
    initial_box: Optional[Box] = None
    initial_points: Optional[np.ndarray] = None
    initial_log_values: Optional[np.ndarray] = None
    vertex_seeding: bool = False
    resampling: str = "plain"
    dedup_tol: Optional[float] = None
    layers: Optional[Sequence[LayerSpec]] = None
    support: Optional[Box] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.L is None:
            self.L = DEFAULT_POOL_RATIO * self.N

    @property
    def depth(self) -> int:
        return len(self.layer_specs())

    def layer_specs(self) -> list[LayerSpec]:
        if self.layers:
            return list(self.layers)
        return [LayerSpec(self.emulator, self.L, self.k, self.gp_noise, self.gp_lengthscale, self.gp_mean)]

    def alpha_at(self, t: int) -> float:
        if self.q_par is None:
            return 0.0
        sched = self.alpha if self.alpha is not None else alpha_decay()
        return float(sched(t, self.T))

    def validate(self, target: TargetDensity) -> None:
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.N < 1:
            raise ConfigError("N must be at least 1")
        layers = self.layer_specs()
        sizes = [ls.L for ls in layers]
        if any(a <= b for a, b in zip(sizes, sizes[1:])) or sizes[-1] < self.N or (
                len(sizes) > 1 and sizes[-1] == self.N):
            raise ConfigError(f"pool sizes must strictly decrease down to N={self.N}: {sizes}")
        for ls in layers:
            if ls.emulator not in ("nn", "gp"):
                raise ConfigError(f"unknown emulator {ls.emulator!r}")
            if ls.k < 1:
                raise ConfigError("k must be positive")
        alphas = [self.alpha_at(t) for t in range(1, self.T + 1)]
        if any(not 0.0 <= a <= 1.0 for a in alphas):
            raise ConfigError("alpha must lie in [0, 1]")
        if any(b > a + 1e-15 for a, b in zip(alphas, alphas[1:])):
            raise ConfigError("alpha schedule must be non-increasing")
        if not target.bounded:
            if any(ls.emulator == "nn" for ls in layers) and self.q_par is None:
                raise ConfigError("an NN emulator on an unbounded domain needs a parametric q_par")
            if self.initial_points is None and self.initial_box is None:
                raise ConfigError("unbounded target: give initial_points or initial_box")
        if self.resampling not in ("plain", "regularized"):
            raise ConfigError(f"unknown resampling mode {self.resampling!r}")
        if self.initial_points is None and self.n_initial < 1:
            raise ConfigError("need at least one initial node")

    def to_dict(self) -> dict:
        out = {}
        for key in ("T", "N", "L", "emulator", "k", "gp_noise", "gp_lengthscale", "gp_mean",
                    "tune_every", "j_max", "q_aux", "n_initial", "vertex_seeding", "resampling",
                    "dedup_tol", "seed"):
            out[key] = getattr(self, key)
        out["alpha"] = getattr(self.alpha, "spec", None) if self.alpha else None
        out["q_par"] = type(self.q_par).__name__ if self.q_par is not None else None
        out["layers"] = [ls.__dict__ for ls in self.layers] if self.layers else None
        return out


# --------------------------------------------------------------------------
# mixture proposal and emulator snapshots
# --------------------------------------------------------------------------

class EmulatorMixture:
    """``alpha q_par + (1 - alpha) pi_hat / c_hat``.

    Sampling takes the parametric branch with probability ``alpha`` and
    otherwise runs SIR on the emulator with pool size ``L`` from ``aux``.
    """

    def __init__(self, emulator_log_eval: Callable, log_c_hat: float, q_par=None,
                 alpha: float = 0.0, aux=None, L: Optional[int] = None):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if alpha > 0 and q_par is None:
            raise ValueError("alpha > 0 needs a parametric component")
        if not np.isfinite(log_c_hat):
            raise ValueError("c_hat must be positive and finite")
        self.emulator_log_eval = emulator_log_eval
        self.log_c_hat = float(log_c_hat)
        self.q_par = q_par
        self.alpha = float(alpha)
        self.aux = aux
        self.L = L

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        parts = []
        if self.alpha > 0:
            parts.append(np.log(self.alpha) + self.q_par.log_pdf(x))
        if self.alpha < 1:
            parts.append(np.log1p(-self.alpha) + self.emulator_log_eval(x) - self.log_c_hat)
        return parts[0] if len(parts) == 1 else np.logaddexp(*parts)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        n_par = rng.binomial(n, self.alpha) if 0 < self.alpha < 1 else (n if self.alpha == 1 else 0)
        parts = []
        if n_par:
            parts.append(self.q_par.sample(rng, n_par))
        if n - n_par:
            if self.aux is None or self.L is None:
                raise ValueError("emulator branch needs an auxiliary proposal and pool size")
            batch = run_inner(self.emulator_log_eval, self.aux, self.L, n - n_par, rng)
            parts.append(batch.resampled)
        return np.vstack(parts)


def mixture_proposal(emulator, c_hat: float, q_par, alpha: float, aux=None, L=None) -> EmulatorMixture:
    log_eval = emulator.log_eval if hasattr(emulator, "log_eval") else emulator
    if not c_hat > 0:
        raise ValueError("c_hat must be positive")
    return EmulatorMixture(log_eval, np.log(c_hat), q_par, alpha, aux, L)


def adaptive_parametric_mixture(means: np.ndarray, covariances) -> object:
    """Equally weighted Gaussian mixture over externally adapted locations.

    ``covariances`` is a scalar standard deviation (isotropic, shared), a
    single covariance matrix shared by all components, or one per component.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    if means.shape[0] == 0:
        raise ValueError("need at least one component")
    cov = np.asarray(covariances, dtype=float)
    if cov.ndim == 0:
        return IsotropicGaussianMixture(means, float(cov))
    if cov.ndim == 2:
        cov = np.broadcast_to(cov, (means.shape[0],) + cov.shape)
    return MixtureProposal([GaussianProposal(m, c) for m, c in zip(means, cov)])


@dataclass
class Snapshot:
    """Enough state to re-create the emulator used at one iteration."""

    kind: str
    node_indices: np.ndarray
    log_c_hat: float
    alpha: float
    support: Optional[Box] = None
    k: int = 1
    beta: Optional[np.ndarray] = None
    kernel: Optional[GpKernel] = None
    gp_mean: float = 0.0


@dataclass
class EmulatorTrace:
    """Per-iteration proposals, rebuilt lazily from the final node set."""

    node_set: NodeSet
    snapshots: list[Snapshot]
    q_par: Optional[object] = None

    def __len__(self) -> int:
        return len(self.snapshots)

    def emulator_log_eval(self, tau: int) -> Callable:
        s = self.snapshots[tau]
        if s.kind == "nn":
            return build_nn(self.node_set.subset(s.node_indices), s.k, s.support).log_eval
        nodes = self.node_set.nodes[s.node_indices]
        kernel, beta, mean, support = s.kernel, s.beta, s.gp_mean, s.support

        def gp_log_eval(x, nodes=nodes):
            x = np.atleast_2d(x)
            out = kernel(x, nodes) @ beta + mean
            if support is not None:
                out[~support.contains(x)] = -np.inf
            return out
        return gp_log_eval

    def proposal(self, tau: int) -> EmulatorMixture:
        s = self.snapshots[tau]
        return EmulatorMixture(self.emulator_log_eval(tau), s.log_c_hat, self.q_par, s.alpha)

    @property
    def log_c_hat(self) -> np.ndarray:
        return np.array([s.log_c_hat for s in self.snapshots])


def outer_log_weights(points: np.ndarray, log_pi: np.ndarray, trace: EmulatorTrace) -> np.ndarray:
    """Temporal deterministic-mixture weights, in logs.

    ``w = pi(x) / ((1/T) sum_tau phi_tau(x))`` where ``phi_tau`` is the
    (normalized) proposal used at iteration ``tau``.  No target evaluations.
    """
    points = np.atleast_2d(points)
    log_pi = np.asarray(log_pi, dtype=float)
    T = len(trace)
    if T == 0:
        raise ValueError("empty emulator trace")
    dens = np.stack([trace.proposal(tau).log_pdf(points) for tau in range(T)])
    log_den = logsumexp(dens, axis=0) - np.log(T)
    zero_den = ~np.isfinite(log_den)
    if np.any(zero_den & np.isfinite(log_pi)):
        bad = int(np.flatnonzero(zero_den & np.isfinite(log_pi))[0])
        raise SupportError(f"mixture denominator is zero at particle {bad}")
    out = np.full(points.shape[0], -np.inf)
    ok = ~zero_den
    out[ok] = log_pi[ok] - log_den[ok]
    return out


def outer_weights(points: np.ndarray, pi_values: np.ndarray, trace: EmulatorTrace) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.exp(outer_log_weights(points, np.log(pi_values), trace))


# --------------------------------------------------------------------------
# main loop
# --------------------------------------------------------------------------

@dataclass
class RadisOutput:
    particles: WeightedParticleSet
    emulator: object
    log_c_hat: np.ndarray
    trace: EmulatorTrace
    node_set: NodeSet
    ledger_total: int
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def c_hat(self) -> np.ndarray:
        return np.exp(self.log_c_hat)

    @property
    def evidence(self) -> float:
        return self.particles.evidence()

    @property
    def log_evidence(self) -> float:
        return self.particles.log_evidence()

    def map_estimate(self) -> tuple[np.ndarray, float]:
        """Highest-density evaluated point (nodes and particles alike)."""
        i = int(np.argmax(self.node_set.log_values))
        j = int(np.argmax(self.particles.log_target))
        if self.particles.log_target[j] > self.node_set.log_values[i]:
            return self.particles.points[j], float(self.particles.log_target[j])
        return self.node_set.nodes[i], float(self.node_set.log_values[i])


def _initial_nodes(target: TargetDensity, cfg: RadisConfig, rng: np.random.Generator):
    if cfg.initial_points is not None:
        pts = np.atleast_2d(np.asarray(cfg.initial_points, dtype=float))
        if cfg.initial_log_values is not None:
            lv = np.asarray(cfg.initial_log_values, dtype=float)
            return pts, lv, pts.shape[0]
        return pts, target(pts), pts.shape[0]
    box = cfg.initial_box or target.domain
    pts = box.sample(rng, cfg.n_initial)
    if cfg.vertex_seeding:
        v = box.vertices()[: cfg.n_initial]
        pts[: v.shape[0]] = v
    return pts, target(pts), pts.shape[0]


class _Builder:
    """Emulator construction for one layer, with lengthscale tuning state."""

    def __init__(self, spec: LayerSpec, cfg: RadisConfig, target: TargetDensity):
        self.spec = spec
        self.cfg = cfg
        self.target = target
        self.lengthscale = spec.gp_lengthscale
        self.support = cfg.support

    def _grid(self, nodes: NodeSet) -> np.ndarray:
        if self.cfg.gp_grid is not None:
            return np.asarray(self.cfg.gp_grid, dtype=float)
        box = self.target.domain or nodes.bounding_box()
        diag = max(box.diagonal, 1e-12)
        return np.geomspace(1e-2 * diag, 0.5 * diag, 16)

    def build(self, t: int, nodes: NodeSet):
        """Return ``(log_eval, snapshot_without_c)``."""
        if self.spec.emulator == "nn":
            if self.target.bounded:
                support = self.support or self.target.domain
            else:
                self.support = expand_support(self.support, nodes)
                support = self.support
            em = build_nn(nodes, min(self.spec.k, len(nodes)), support)
            snap = Snapshot("nn", np.arange(len(nodes)), np.nan, 0.0, support, em.k)
            return em, snap
        idx = farthest_point_indices(nodes.nodes, nodes.log_values, self.cfg.j_max)
        sub = nodes.subset(idx)
        if self.spec.gp_lengthscale is None and len(sub) >= 2 and (
                self.lengthscale is None or (t - 1) % max(self.cfg.tune_every, 1) == 0):
            self.lengthscale = tune_lengthscale(sub, self.spec.gp_noise, self._grid(sub), self.spec.gp_mean)
        eps = self.lengthscale if self.lengthscale is not None else 1.0
        em = fit_gp(sub, GpKernel(eps, self.spec.gp_noise), self.spec.gp_mean, self.target.domain)
        snap = Snapshot("gp", idx, np.nan, 0.0, self.target.domain, beta=em.beta,
                        kernel=em.kernel, gp_mean=em.mean)
        return em, snap


def _aux_for(cfg: RadisConfig, target: TargetDensity, kind: str, em, nodes: NodeSet):
    choice = cfg.q_aux
    if choice == "auto":
        choice = "uniform" if (target.bounded or kind == "nn") else "student_t"
    if choice == "uniform":
        box = getattr(em, "support", None) or target.domain
        if box is None:
            raise ConfigError("uniform auxiliary proposal needs a bounded support")
        return UniformProposal(box)
    if choice == "student_t":
        return moment_matched_student_t(nodes.nodes)
    raise ConfigError(f"unknown auxiliary proposal {cfg.q_aux!r}")


def _run(target: TargetDensity, cfg: RadisConfig, rng: np.random.Generator) -> RadisOutput:
    cfg.validate(target)
    t0 = time.perf_counter()
    start = target.eval_counter
    layers = cfg.layer_specs()
    builders = [_Builder(spec, cfg, target) for spec in layers]

    pts0, lv0, n0 = _initial_nodes(target, cfg, rng)
    supplied = n0 if cfg.initial_log_values is not None else 0
    tol = cfg.dedup_tol
    if tol is None:
        ref = target.domain or Box(pts0.min(axis=0), pts0.max(axis=0))
        tol = 1e-9 * ref.diagonal
    nodes = add_nodes(NodeSet.empty(target.dim), *_in_domain(target, pts0, lv0), dedup_tol=tol)
    if len(nodes) == 0:
        raise ConfigError("no initial node lies inside the target domain")

    T, N = cfg.T, cfg.N
    xs = np.empty((T, N, target.dim))
    lps = np.empty((T, N))
    snaps: list[Snapshot] = []

    for t in range(1, T + 1):
        alpha = cfg.alpha_at(t)
        n_par = int(rng.binomial(N, alpha)) if 0 < alpha < 1 else (N if alpha == 1 else 0)
        try:
            x_emu, snap = _inner_chain(target, cfg, builders, layers, nodes, N - n_par, t, rng)
        except DegenerateWeightsError as exc:
            raise DegenerateWeightsError(f"iteration {t}: {exc}") from exc
        snap.alpha = alpha
        snaps.append(snap)
        x_t = np.vstack([cfg.q_par.sample(rng, n_par), x_emu]) if n_par else x_emu
        lp_t = target(x_t)
        xs[t - 1], lps[t - 1] = x_t, lp_t
        nodes = add_nodes(nodes, *_in_domain(target, x_t, lp_t), dedup_tol=tol)
        log.debug("iteration %d: J=%d log c_hat=%.4f", t, len(nodes), snap.log_c_hat)

    trace = EmulatorTrace(nodes, snaps, cfg.q_par)
    points = xs.reshape(T * N, target.dim)
    log_pi = lps.reshape(-1)
    log_w = outer_log_weights(points, log_pi, trace)
    particles = WeightedParticleSet(points, log_w, np.repeat(np.arange(1, T + 1), N),
                                    np.tile(np.arange(N), T), log_target=log_pi)
    final, _ = builders[-1].build(T + 1, nodes)
    return RadisOutput(particles, final, trace.log_c_hat, trace, nodes,
                       target.eval_counter - start + supplied, time.perf_counter() - t0, cfg.to_dict())


def _in_domain(target: TargetDensity, x: np.ndarray, lp: np.ndarray):
    if target.domain is None:
        return x, lp
    keep = target.domain.contains(x)
    return x[keep], lp[keep]


def _inner_chain(target, cfg, builders, layers, nodes, n_out, t, rng):
    """Run the ``D`` inner stages; return the ``n_out`` resampled points and the last snapshot.

    Stage 1 draws ``L_1`` points from the auxiliary proposal and weights them
    by emulator 1.  Stage ``d > 1`` resamples ``L_d`` points from the
    previous stage and re-weights them by ``emulator_d / (emulator_{d-1} /
    c_{d-1})``.  Only the output of the last stage reaches the target.
    """
    ems = [b.build(t, nodes) for b in builders]
    em1, snap1 = ems[0]
    aux = _aux_for(cfg, target, layers[0].emulator, em1, nodes)
    sizes = [ls.L for ls in layers[1:]] + [n_out]

    batch = run_inner(em1.log_eval, aux, layers[0].L, sizes[0] if len(layers) > 1 else n_out,
                      rng, cfg.resampling, target.domain)
    snap1.log_c_hat = batch.log_c_hat
    z, prev_log_eval, prev_log_c, snap = batch.resampled, em1.log_eval, batch.log_c_hat, snap1
    for d in range(1, len(layers)):
        em, snap = ems[d]
        log_g = em.log_eval(z) - (prev_log_eval(z) - prev_log_c)
        if not np.any(np.isfinite(log_g)):
            raise DegenerateWeightsError(f"layer {d + 1} weights are all zero")
        snap.log_c_hat = log_estimate_normalizer(log_g)
        sel = multinomial_select(log_g, sizes[d], rng) if sizes[d] else np.empty(0, int)
        z, prev_log_eval, prev_log_c = z[sel], em.log_eval, snap.log_c_hat
    return z, snap


def run_radis(target: TargetDensity, cfg: RadisConfig, rng=None) -> RadisOutput:
    """Run the adaptive sampler with a single inner stage (or the stages in ``cfg.layers``)."""
    rng = make_rng(cfg.seed if rng is None else rng)
    return _run(target, cfg, rng)


def run_deep_radis(target: TargetDensity, cfg: RadisConfig, rng=None) -> RadisOutput:
    """Chained-emulator variant; ``cfg.layers`` lists the stages outermost first."""
    if not cfg.layers:
        raise ConfigError("deep mode needs cfg.layers")
    rng = make_rng(cfg.seed if rng is None else rng)
    return _run(target, cfg, rng)


def run_radis_lais(target: TargetDensity, n_lais: int, xi: float, N: int, E: int,
                   alpha: float = 0.5, L: Optional[int] = None, init_box: Optional[Box] = None,
                   rng=None, **cfg_kwargs) -> RadisOutput:
    """NN emulator mixed with a layered-AIS proposal (the combination used on the mixture target).

    A random-walk Metropolis chain of ``n_lais`` states (step ``xi``) is run
    first.  Its states become the initial nodes, with their already-computed
    log densities, and the means of ``q_par = (1/C) sum_c N(mu_c, xi^2 I)``.
    The remaining ``E - n_lais`` evaluations go to ``T = (E - n_lais) / N``
    iterations.
    """
    from .baselines import metropolis_chain

    if n_lais < 1 or E <= n_lais or (E - n_lais) % N:
        raise ConfigError(f"need N={N} to divide E - N_LAIS = {E - n_lais} > 0")
    rng = make_rng(rng)
    box = init_box or Box.cube(-15.0, 15.0, target.dim)
    x0 = box.sample(rng, 1)[0]
    means, lps, _ = metropolis_chain(target, n_lais, xi, x0, rng)
    cfg = RadisConfig(T=(E - n_lais) // N, N=N, L=L, q_par=IsotropicGaussianMixture(means, xi),
                      alpha=alpha_fixed(alpha), initial_points=means, initial_log_values=lps,
                      **cfg_kwargs)
    out = _run(target, cfg, rng)
    out.config.update({"n_lais": n_lais, "xi": xi, "alpha": alpha})
    return out
