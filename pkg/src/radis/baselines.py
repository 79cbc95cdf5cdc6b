"""Reference importance samplers: plain IS, PMC, DM-PMC, one-chain LAIS and AMIS.

Every sampler spends exactly ``E`` target evaluations and returns a
:class:`~radis.core.WeightedParticleSet`.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .core import (Box, ConfigError, DegenerateWeightsError, SupportError, TargetDensity,
                   WeightedParticleSet, make_rng, normalize_log_weights)
from .inner_is import GaussianProposal, IsotropicGaussianMixture

log = logging.getLogger(__name__)


@dataclass
class BaselineConfig:
    algorithm: str
    E: int
    xi: float = 1.0
    n_proposals: int = 100     # N_PMC or N_LAIS
    M: int = 100               # AMIS samples per iteration
    init_box: Optional[Box] = None
    adapt_covariance: bool = False
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "E": self.E, "xi": self.xi,
                "n_proposals": self.n_proposals, "M": self.M,
                "adapt_covariance": self.adapt_covariance, "seed": self.seed}


def standard_is(target: TargetDensity, proposal, E: int, rng=None) -> WeightedParticleSet:
    """``E`` draws from ``proposal`` weighted by ``pi / q``."""
    if E < 1:
        raise ConfigError("E must be positive")
    rng = make_rng(rng)
    x = proposal.sample(rng, E)
    log_q = proposal.log_pdf(x)
    if not np.all(np.isfinite(log_q)):
        raise SupportError("proposal density is zero at one of its own draws")
    log_pi = target(x)
    return WeightedParticleSet(x, log_pi - log_q, log_target=log_pi)


def _init_means(cfg: BaselineConfig, n: int, dim: int, rng) -> np.ndarray:
    box = cfg.init_box or Box.cube(-15.0, 15.0, dim)
    return box.sample(rng, n)


def pmc(target: TargetDensity, cfg: BaselineConfig, rng=None,
        deterministic_mixture: bool = False) -> WeightedParticleSet:
    """Population Monte Carlo with one draw per proposal per iteration.

    Locations are refreshed each iteration by global multinomial resampling
    of the weighted draws.  With ``deterministic_mixture`` every draw is
    weighted against the whole current mixture instead of its own proposal.
    """
    P = cfg.n_proposals
    if P < 1 or cfg.E % P:
        raise ConfigError(f"N_PMC={P} must divide E={cfg.E}")
    rng = make_rng(rng)
    T = cfg.E // P
    mu = _init_means(cfg, P, target.dim, rng)
    xi = cfg.xi
    xs, lws, lps, its = [], [], [], []
    for t in range(T):
        x = mu + xi * rng.standard_normal(mu.shape)
        lp = target(x)
        if deterministic_mixture:
            log_q = IsotropicGaussianMixture(mu, xi).log_pdf(x)
        else:
            d2 = np.sum((x - mu) ** 2, axis=1)
            log_q = -0.5 * d2 / xi ** 2 - 0.5 * target.dim * np.log(2 * np.pi * xi ** 2)
        lw = lp - log_q
        xs.append(x), lws.append(lw), lps.append(lp), its.append(np.full(P, t + 1))
        try:
            wbar = normalize_log_weights(lw)
        except DegenerateWeightsError as exc:
            raise DegenerateWeightsError(f"iteration {t + 1}: {exc}") from exc
        mu = x[rng.choice(P, size=P, p=wbar)]
    return WeightedParticleSet(np.vstack(xs), np.concatenate(lws), np.concatenate(its),
                               np.tile(np.arange(P), T), log_target=np.concatenate(lps))


def dm_pmc(target: TargetDensity, cfg: BaselineConfig, rng=None) -> WeightedParticleSet:
    return pmc(target, cfg, rng, deterministic_mixture=True)


def metropolis_chain(target: TargetDensity, n: int, xi: float, x0: np.ndarray,
                     rng) -> tuple[np.ndarray, np.ndarray, float]:
    """Gaussian random-walk Metropolis; ``n`` states costing ``n`` evaluations.

    The first state is ``x0``.  Returns states, their log densities and the
    acceptance rate.
    """
    d = target.dim
    states = np.empty((n, d))
    lps = np.empty(n)
    x, lp = np.asarray(x0, dtype=float), float(target(x0))
    states[0], lps[0] = x, lp
    accepted = 0
    for i in range(1, n):
        prop = x + xi * rng.standard_normal(d)
        lp_prop = float(target(prop))
        if np.log(rng.random()) < lp_prop - lp:
            x, lp = prop, lp_prop
            accepted += 1
        states[i], lps[i] = x, lp
    rate = accepted / max(n - 1, 1)
    if n > 1 and accepted == 0:
        warnings.warn("Metropolis chain never moved", RuntimeWarning, stacklevel=2)
    return states, lps, rate


def oc_lais(target: TargetDensity, cfg: BaselineConfig, rng=None,
            return_chain: bool = False):
    """One-chain layered adaptive IS.

    ``N_LAIS`` Metropolis states become the means of an equally weighted
    Gaussian mixture ``N(mu_c, xi^2 I)``; the remaining ``E - N_LAIS``
    evaluations go to draws from that mixture, weighted against the full
    mixture density.
    """
    n_chain = cfg.n_proposals
    if not 1 <= n_chain < cfg.E:
        raise ConfigError(f"N_LAIS={n_chain} must lie in [1, E)")
    rng = make_rng(rng)
    x0 = _init_means(cfg, 1, target.dim, rng)[0]
    means, lps_chain, rate = metropolis_chain(target, n_chain, cfg.xi, x0, rng)
    q = IsotropicGaussianMixture(means, cfg.xi)
    x = q.sample(rng, cfg.E - n_chain)
    lp = target(x)
    ps = WeightedParticleSet(x, lp - q.log_pdf(x), log_target=lp)
    if return_chain:
        return ps, means, lps_chain, rate
    return ps


def weighted_covariance(x: np.ndarray, wbar: np.ndarray, mean: np.ndarray,
                        fallback: np.ndarray) -> np.ndarray:
    """Weighted sample covariance, or ``fallback`` when it is singular.

    Singular means rank-deficient to working precision (``matrix_rank`` with
    its default SVD tolerance), which also catches matrices that a Cholesky
    factorization would accept only because of rounding.
    """
    dx = x - mean
    c = (wbar[:, None] * dx).T @ dx
    if np.linalg.matrix_rank(c) < c.shape[0]:
        return fallback
    return c


def amis(target: TargetDensity, cfg: BaselineConfig, rng=None) -> WeightedParticleSet:
    """Adaptive multiple IS with a single Gaussian proposal.

    Each iteration draws ``M`` points, re-weights every past draw against the
    temporal mixture of all proposals used so far, and moves the proposal
    mean to the weighted mean of all draws.  With ``adapt_covariance`` the
    covariance follows the weighted sample covariance, falling back to
    ``xi^2 I`` when that is singular.
    """
    M = cfg.M
    if M < 1 or cfg.E % M:
        raise ConfigError(f"M={M} must divide E={cfg.E}")
    rng = make_rng(rng)
    T = cfg.E // M
    d = target.dim
    base_cov = cfg.xi ** 2 * np.eye(d)
    props = [GaussianProposal(_init_means(cfg, 1, d, rng)[0], base_cov)]
    xs = np.empty((0, d))
    lps = np.empty(0)
    # per-sample running log-sum of past proposal densities
    log_den_sum = np.empty(0)
    its = []
    log_w = np.empty(0)
    for t in range(T):
        q = props[-1]
        x = q.sample(rng, M)
        lp = target(x)
        new_den = logsumexp(np.stack([p.log_pdf(x) for p in props]), axis=0)
        log_den_sum = np.logaddexp(log_den_sum, q.log_pdf(xs)) if t else log_den_sum
        xs = np.vstack([xs, x])
        lps = np.concatenate([lps, lp])
        log_den_sum = np.concatenate([log_den_sum, new_den])
        its.append(np.full(M, t + 1))
        log_w = lps - (log_den_sum - np.log(len(props)))
        if t == T - 1:
            break
        if np.all(~np.isfinite(log_w)):
            props.append(props[-1])
            continue
        wbar = normalize_log_weights(log_w)
        mean = wbar @ xs
        cov = weighted_covariance(xs, wbar, mean, base_cov) if cfg.adapt_covariance else base_cov
        props.append(GaussianProposal(mean, cov))
    return WeightedParticleSet(xs, log_w, np.concatenate(its), np.tile(np.arange(M), T),
                               log_target=lps)


def run_baseline(target: TargetDensity, cfg: BaselineConfig, rng=None) -> WeightedParticleSet:
    rng = make_rng(cfg.seed if rng is None else rng)
    algo = cfg.algorithm.lower()
    if algo == "pmc":
        return pmc(target, cfg, rng)
    if algo in ("dm_pmc", "dm-pmc"):
        return dm_pmc(target, cfg, rng)
    if algo in ("oc_lais", "oc-lais", "lais"):
        return oc_lais(target, cfg, rng)
    if algo == "amis":
        return amis(target, cfg, rng)
    raise ConfigError(f"unknown baseline {cfg.algorithm!r}")
