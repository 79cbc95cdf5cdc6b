"""Acceptance gate.

Each test runs one criterion at its stated tolerance and prints a single
``[PASS]`` or ``[FAIL]`` line (collected again in the session summary).
Long-running pieces are shared through module-scoped fixtures; runtime
limits are checked against the time each criterion itself spends.
"""
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from radis.baselines import BaselineConfig, amis, oc_lais, run_baseline, standard_is
from radis.core import Box
from radis.diagnostics import (holder_bounds, l2_distance_grid, mae, relative_rmse)
from radis.driver import (EmulatorTrace, LayerSpec, RadisConfig, Snapshot, alpha_fixed,
                          outer_log_weights, run_deep_radis, run_radis, run_radis_lais)
from radis.emulator_gp import GpKernel, eval_gp, fit_gp
from radis.emulator_nn import NodeSet, build_nn, eval_nn, nn_mixture_decomposition_1d
from radis.inner_is import (GaussianProposal, MixtureProposal, UniformProposal, inner_log_weights,
                            multinomial_select, sir_bias_probe)
from radis.targets import (BANANA_MEAN, BANANA_Z, Grid, banana_target, gaussian_mixture_target,
                           grid_quadrature, make_problem_sequence, sequential_inversion,
                           SYNTHETIC_BOX)

pytestmark = [pytest.mark.slow, pytest.mark.filterwarnings("ignore::RuntimeWarning")]

BANANA_SEEDS = range(100)
# L = 2000 inner pool for the banana runs; see the decisions ledger.
BANANA_L = 2000
MM_SEEDS = range(200)
XIS = (1, 2, 3, 4, 5, 6)
AMIS_M = (10, 100, 200, 500)


def _verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


# ---------------------------------------------------------------------------
# shared banana runs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def banana_truth():
    t0 = time.perf_counter()
    q = grid_quadrature(banana_target(), 2000)
    return q, time.perf_counter() - t0


def _nn_cfg(with_uniform: bool, domain: Box) -> RadisConfig:
    kw = dict(q_par=UniformProposal(domain), alpha=alpha_fixed(0.5)) if with_uniform else {}
    return RadisConfig(T=100, N=10, L=BANANA_L, n_initial=10, **kw)


@pytest.fixture(scope="module")
def banana_runs(banana_truth):
    """Per-seed (Z, mean) for the five samplers at E = 1010, plus NN-AIS+U node sets."""
    q, _ = banana_truth
    cov = q.covariance()
    t0 = time.perf_counter()
    res = {k: ([], []) for k in ("NN-AIS", "NN-AIS+U", "IS-U", "IS-G*", "IS-G*+U")}
    nodes_u = []
    for s in BANANA_SEEDS:
        for name, with_u in (("NN-AIS", False), ("NN-AIS+U", True)):
            t = banana_target()
            out = run_radis(t, _nn_cfg(with_u, t.domain), np.random.default_rng(s))
            assert out.ledger_total == t.eval_counter == 1010
            res[name][0].append(out.evidence)
            res[name][1].append(out.particles.mean())
            if with_u:
                nodes_u.append(out.node_set)
        t = banana_target()
        g = GaussianProposal(q.mean, cov)
        u = UniformProposal(t.domain)
        for name, prop in (("IS-U", u), ("IS-G*", g), ("IS-G*+U", MixtureProposal([g, u], [0.5, 0.5]))):
            ps = standard_is(t, prop, 1010, np.random.default_rng(s))
            res[name][0].append(ps.evidence())
            res[name][1].append(ps.mean())
    return res, nodes_u, time.perf_counter() - t0


def _rel_errors(res, q):
    return {k: (relative_rmse(z, q.Z), relative_rmse(np.array(m), q.mean)) for k, (z, m) in res.items()}


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_c1_grid_oracle(banana_truth, report):
    q, secs = banana_truth
    dz = abs(q.Z - BANANA_Z) / BANANA_Z
    dm = float(np.max(np.abs(q.mean - BANANA_MEAN)))
    ok = dz < 1e-3 and dm < 1e-3 and secs < 60
    report(f"[{_verdict(ok)}] C1 grid oracle: Z={q.Z:.6f} (rel err {dz:.1e}), "
           f"mean=({q.mean[0]:.5f}, {q.mean[1]:.1e}) (abs err {dm:.1e}), {secs:.1f}s")
    assert ok


def test_c2_banana_ordering(banana_truth, banana_runs, report):
    q, _ = banana_truth
    res, _, secs = banana_runs
    err = _rel_errors(res, q)
    ours = ("NN-AIS", "NN-AIS+U")
    refs = ("IS-U", "IS-G*", "IS-G*+U")
    ok = all(err[a][i] < err[b][i] for a in ours for b in refs for i in (0, 1)) and secs < 600
    table = ", ".join(f"{k} {z:.4f}/{m:.3f}" for k, (z, m) in err.items())
    report(f"[{_verdict(ok)}] C2 banana ordering at E=1010 over {len(BANANA_SEEDS)} seeds "
           f"(rel RMSE Z/mean): {table}; {secs:.0f}s")
    assert ok


def test_c3_budget_gap(banana_truth, banana_runs, report):
    q, _ = banana_truth
    res, _, _ = banana_runs
    nn_rmse = relative_rmse(res["NN-AIS"][0], q.Z)
    t0 = time.perf_counter()
    E = 10 * 1010
    z = []
    for s in range(200):
        t = banana_target()
        z.append(standard_is(t, UniformProposal(t.domain), E, np.random.default_rng(10_000 + s)).evidence())
    is_rmse = relative_rmse(z, q.Z)
    secs = time.perf_counter() - t0
    ok = is_rmse > nn_rmse and secs < 600
    report(f"[{_verdict(ok)}] C3 budget gap: IS-U at E={E} rel RMSE(Z)={is_rmse:.4f} still above "
           f"NN-AIS at E=1010 ({nn_rmse:.4f}); {secs:.0f}s")
    assert ok


def test_c4_emulator_l2(banana_truth, banana_runs, report):
    q, _ = banana_truth
    _, nodes_u, _ = banana_runs
    t = banana_target()
    grid = Grid.regular(t.domain, 200)
    pi = np.exp(t.uncounted(grid.points))
    seeds = range(50)
    l2_ais, l2_unif = [], []
    for s in seeds:
        ns = nodes_u[s]
        l2_ais.append(l2_distance_grid(build_nn(ns, 1, t.domain), pi, grid))
        pts = t.domain.sample(np.random.default_rng(20_000 + s), len(ns))
        rnd = NodeSet(pts, t.uncounted(pts))
        l2_unif.append(l2_distance_grid(build_nn(rnd, 1, t.domain), pi, grid))
    a, b = float(np.median(l2_ais)), float(np.median(l2_unif))
    ok = a < b
    report(f"[{_verdict(ok)}] C4 emulator L2 at t=100, median over {len(seeds)} seeds: "
           f"NN-AIS+U nodes {a:.4f} vs uniform nodes {b:.4f}")
    assert ok


@pytest.fixture(scope="module")
def multimodal_lais():
    t0 = time.perf_counter()
    out = {}
    for xi in XIS:
        za, zb = [], []
        for s in MM_SEEDS:
            t = gaussian_mixture_target(10)
            r = run_radis_lais(t, 500, float(xi), 100, 1000, alpha=0.5, L=2000, rng=np.random.default_rng(s))
            assert r.ledger_total == t.eval_counter == 1000
            za.append(r.evidence)
            t = gaussian_mixture_target(10)
            ps = oc_lais(t, BaselineConfig("oc_lais", 1000, xi=float(xi), n_proposals=500),
                         np.random.default_rng(10 ** 6 + s))
            assert t.eval_counter == 1000
            zb.append(ps.evidence())
        out[xi] = (mae(za, 1.0), mae(zb, 1.0))
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def multimodal_amis():
    t0 = time.perf_counter()
    out = {}
    for M in AMIS_M:
        for xi in XIS:
            z = []
            for s in MM_SEEDS:
                t = gaussian_mixture_target(10)
                cfg = BaselineConfig("amis", 1000, xi=float(xi), M=M, adapt_covariance=True)
                z.append(amis(t, cfg, np.random.default_rng(s)).evidence())
                assert t.eval_counter == 1000
            out[(M, xi)] = mae(z, 1.0)
    return out, time.perf_counter() - t0


def test_c5a_amis_fails_at_small_budget(multimodal_amis, report):
    cells, secs = multimodal_amis
    worst = min(cells, key=cells.get)
    ok = all(v >= 0.99 for v in cells.values())
    rows = "; ".join(f"M={M}: " + " ".join(f"{cells[(M, xi)]:.4f}" for xi in XIS) for M in AMIS_M)
    report(f"[{_verdict(ok)}] C5a AMIS MAE(Z) >= 0.99 in every cell, {len(MM_SEEDS)} seeds, xi=1..6: "
           f"{rows}; lowest {cells[worst]:.4f} at M={worst[0]}, xi={worst[1]}; {secs:.0f}s")
    assert ok


def test_c5b_nn_lais_vs_oc_lais(multimodal_lais, multimodal_amis, report):
    cells, secs = multimodal_lais
    _, secs_amis = multimodal_amis
    ratios = {xi: a / b for xi, (a, b) in cells.items()}
    ok = all(cells[xi][0] < cells[xi][1] for xi in (1, 2)) and all(ratios[xi] <= 1.5 for xi in (3, 4, 5, 6))
    ok = ok and secs + secs_amis < 1800
    detail = ", ".join(f"xi={xi}: {a:.4f} vs {b:.4f} ({a / b:.2f}x)" for xi, (a, b) in cells.items())
    report(f"[{_verdict(ok)}] C5b NN-AIS+LAIS vs OC-LAIS MAE(Z), N_LAIS=500, {len(MM_SEEDS)} seeds: "
           f"{detail}; C5 total {secs + secs_amis:.0f}s")
    assert ok


# --- criterion 6: property suite -------------------------------------------

def _prop_interpolation():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, (30, 2))
    lv = -0.5 * np.sum(x ** 2, 1)
    ns = NodeSet(x, lv)
    nn_ok = np.array_equal(eval_nn(build_nn(ns, 1), x), np.exp(lv))
    gp = fit_gp(ns, GpKernel(1.0, 0.0))
    gp_err = float(np.max(np.abs(eval_gp(gp, x) - np.exp(lv)) / np.exp(lv)))
    return nn_ok and gp_err < 1e-6, f"NN exact={nn_ok}, GP max rel err {gp_err:.1e}"


def _prop_appendix_b():
    rng = np.random.default_rng(1)
    box = Box.cube(0.0, 1.0, 1)
    em = build_nn(NodeSet(rng.uniform(0, 1, (6, 1)), rng.normal(size=6)), support=box)
    nu = np.array([m for _, m in nn_mixture_decomposition_1d(em)])
    aux = UniformProposal(box)
    L = 1_000_000
    z = aux.sample(rng, L)
    sel = multinomial_select(inner_log_weights(em.log_eval, aux, z), L, rng)
    freq = np.bincount(em.nearest(z[sel]), minlength=6) / L
    tv = 0.5 * float(np.abs(freq - nu).sum())
    return tv < 0.01, f"TV {tv:.4f}"


def _prop_sir_ks():
    aux = UniformProposal(Box.cube(-50, 50, 1))
    logp = lambda x: stats.norm.logpdf(x, 1, 1)
    cdf = lambda x: stats.norm.cdf(x, 1, 1)
    runs = [sir_bias_probe(logp, cdf, aux, [10 ** 2, 10 ** 3, 10 ** 4, 10 ** 5], 1000,
                           np.random.default_rng(s)) for s in range(50)]
    med = np.median([[k for _, k in r] for r in runs], axis=0)
    return bool(np.all(np.diff(med) < 0)), "median KS " + " ".join(f"{v:.3f}" for v in med)


def _prop_weight_variance():
    rng = np.random.default_rng(11)
    worst = 0.0
    for Z, m1, s1, m2, s2 in ((2.5, 0.3, 1.0, 0.0, 1.5), (1.0, 0.0, 1.0, 0.5, 2.0), (4.0, -1.0, 0.8, 0.0, 1.2)):
        a = 2 * s2 ** 2 - s1 ** 2
        chi2 = s2 ** 2 / (s1 * np.sqrt(a)) * np.exp((m1 - m2) ** 2 / a) - 1
        x = rng.normal(m2, s2, 400_000)
        w = Z * stats.norm.pdf(x, m1, s1) / stats.norm.pdf(x, m2, s2)
        worst = max(worst, abs(np.var(w) / (Z ** 2 * chi2) - 1))
    return worst < 0.05, f"worst rel dev {worst:.3f}"


def _prop_t1_reduction():
    rng = np.random.default_rng(0)
    box = Box.cube(0.0, 1.0, 1)
    ns = NodeSet(rng.uniform(0, 1, (5, 1)), rng.normal(size=5))
    tr = EmulatorTrace(ns, [Snapshot("nn", np.arange(5), 0.3, 0.0, box)])
    x = rng.uniform(0, 1, (50, 1))
    lp = rng.normal(size=50)
    em = build_nn(ns, 1, box)
    ok = np.array_equal(outer_log_weights(x, lp, tr), lp - (em.log_eval(x) - 0.3))
    return ok, "exact"


def _prop_budget_ledgers():
    bad = []
    mm = lambda: gaussian_mixture_target(10)
    for algo, kw in (("pmc", dict(n_proposals=100)), ("dm_pmc", dict(n_proposals=100)),
                     ("oc_lais", dict(n_proposals=500)), ("amis", dict(M=100)),
                     ("amis", dict(M=100, adapt_covariance=True))):
        t = mm()
        run_baseline(t, BaselineConfig(algo, 1000, xi=3.0, **kw), np.random.default_rng(2))
        if t.eval_counter != 1000:
            bad.append(algo)
    t = banana_target()
    standard_is(t, UniformProposal(t.domain), 1010, 3)
    bad += [] if t.eval_counter == 1010 else ["standard_is"]
    for name, cfg in (("nn", RadisConfig(T=20, N=10, L=200, seed=4)),
                      ("gp", RadisConfig(T=5, N=10, L=200, emulator="gp", gp_mean="min", seed=4)),
                      ("nn+U", RadisConfig(T=20, N=10, L=200, q_par=UniformProposal(BANANA_BOX),
                                           alpha=alpha_fixed(0.5), seed=4))):
        t = banana_target()
        out = run_radis(t, cfg)
        if not out.ledger_total == t.eval_counter == 10 + cfg.N * cfg.T:
            bad.append(name)
    t = banana_target()
    out = run_deep_radis(t, RadisConfig(T=5, N=10, seed=5, layers=[LayerSpec("nn", 1000),
                                                                  LayerSpec("nn", 100)]))
    bad += [] if out.ledger_total == t.eval_counter == 60 else ["deep"]
    t = mm()
    out = run_radis_lais(t, 500, 3.0, 100, 1000, L=500, rng=6)
    bad += [] if out.ledger_total == t.eval_counter == 1000 else ["radis_lais"]
    probs, _ = make_problem_sequence(3, 0)
    res = sequential_inversion(probs, RadisConfig(T=3, N=5, L=100, n_initial=10), True, 0)
    bad += [] if all(r.evaluations == 25 for _, r in res) else ["sequential"]
    return not bad, "all exact" if not bad else "mismatch: " + ",".join(bad)


BANANA_BOX = Box.cube(-10.0, 10.0, 2)


def _prop_deep_d1():
    t = banana_target()
    a = run_radis(t, RadisConfig(T=10, N=10, L=300, seed=21))
    b = run_deep_radis(t, RadisConfig(T=10, N=10, seed=21, layers=[LayerSpec("nn", 300)]))
    ok = (np.array_equal(a.particles.points, b.particles.points)
          and np.array_equal(a.particles.log_weights, b.particles.log_weights))
    return ok, "bitwise" if ok else "differs"


def _prop_holder():
    g1 = Grid.regular(Box.cube(-10.0, 10.0, 1), 4000)
    pairs = [((m1, s1), (m2, s2)) for m1 in (-1.0, 0.0, 1.5) for s1 in (0.7, 1.0, 2.0)
             for m2 in (0.0, 0.5) for s2 in (1.0, 2.5)]
    n_ok = 0
    for (m1, s1), (m2, s2) in pairs:
        hb = holder_bounds(lambda x: stats.norm.pdf(x[:, 0], m1, s1),
                           lambda x: stats.norm.pdf(x[:, 0], m2, s2), g1)
        n_ok += hb.holds()
    g2 = Grid.regular(BANANA_BOX, 200)
    t = banana_target()
    pbar = np.exp(t.uncounted(g2.points)) / BANANA_Z
    hb = holder_bounds(pbar, np.full(len(g2), 1 / 400.0), g2)
    n_ok += hb.holds()
    return n_ok == len(pairs) + 1, f"{n_ok}/{len(pairs) + 1} pairs"


def test_c6_property_suite(report):
    checks = {
        "interpolation": _prop_interpolation,
        "resample-probability TV": _prop_appendix_b,
        "SIR KS decrease": _prop_sir_ks,
        "weight variance = Z^2 chi2": _prop_weight_variance,
        "T=1 outer weights": _prop_t1_reduction,
        "budget ledgers": _prop_budget_ledgers,
        "deep D=1": _prop_deep_d1,
        "Holder chain": _prop_holder,
    }
    results = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name, fn in checks.items():
            results[name] = fn()
    ok = all(r[0] for r in results.values())
    detail = "; ".join(f"{k}: {'ok' if v[0] else 'FAILED'} ({v[1]})" for k, v in results.items())
    report(f"[{_verdict(ok)}] C6 property suite: {detail}")
    assert ok


def test_c7_sequential_sharing(report):
    t0 = time.perf_counter()
    cfg = RadisConfig(T=50, N=10, L=500, n_initial=10)
    seeds = range(24)
    err = {True: [], False: []}
    for s in seeds:
        for share in (True, False):
            probs, x_true = make_problem_sequence(16, np.random.default_rng([s, 1]), sigma=0.5)
            out = sequential_inversion(probs, cfg, share_nodes=share, rng=np.random.default_rng(s))
            maps = np.array([r[0] for r in out])
            err[share].append(float(np.mean(np.abs(maps - x_true) / SYNTHETIC_BOX.widths)))
    secs = time.perf_counter() - t0
    a, b = float(np.median(err[True])), float(np.median(err[False]))
    wins = float(np.mean(np.array(err[True]) < np.array(err[False])))
    ok = a < b and secs < 1200
    report(f"[{_verdict(ok)}] C7 sequential inversion, 16 problems, {len(seeds)} seeds, 510 evals/problem: "
           f"median box-normalized MAE shared {a:.4f} vs plain {b:.4f} (shared better in {wins:.0%}); {secs:.0f}s")
    assert ok
