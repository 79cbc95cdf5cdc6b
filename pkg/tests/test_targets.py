import csv
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal, norm

from radis.core import Box, ConfigError, TargetDensity
from radis.driver import RadisConfig, run_radis
from radis.targets import (BANANA_MEAN, BANANA_Z, SYNTHETIC_BOX, ForwardModel, InversionProblem,
                           banana_logpdf, banana_target, gaussian_mixture_logpdf,
                           gaussian_mixture_target, grid_quadrature, make_problem_sequence,
                           mixture_means, sequential_inversion, synthetic_forward_model,
                           synthetic_model)

DATA = Path(__file__).parent / "data"


# --- banana -----------------------------------------------------------------

def test_banana_origin_value():
    # ridge term only: -(4)^2 / (2 * 4^2)
    assert banana_logpdf(np.zeros(2))[0] == pytest.approx(-0.5, abs=1e-15)


def test_banana_hand_value():
    x = np.array([[0.3, -1.2]])
    ridge = 4.0 - 10.0 * 0.3 - 1.44
    expect = -ridge ** 2 / 32.0 - (0.09 + 1.44) / (2 * 3.5 ** 2)
    assert banana_logpdf(x)[0] == pytest.approx(expect, rel=1e-14)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_banana_reflection_in_second_coordinate(a, b):
    v = banana_logpdf(np.array([[a, b], [a, -b]]))
    assert v[0] == v[1]


def test_banana_target_outside_box_is_minus_inf():
    t = banana_target()
    assert t(np.array([10.5, 0.0])) == -np.inf
    assert t.eval_counter == 1


def test_banana_needs_two_dims():
    with pytest.raises(ValueError):
        banana_logpdf(np.zeros((3, 1)))


def test_banana_grid_oracle_matches_reference():
    q = grid_quadrature(banana_target(), 2000)
    assert abs(q.Z - BANANA_Z) / BANANA_Z < 1e-3
    assert np.max(np.abs(q.mean - BANANA_MEAN)) < 1e-3
    # symmetry in x_2 makes the second mean coordinate vanish up to rounding
    assert abs(q.mean[1]) < 1e-12


def test_banana_grid_converged():
    a = grid_quadrature(banana_target(), 1000)
    b = grid_quadrature(banana_target(), 2000)
    assert abs(a.Z - b.Z) / b.Z < 1e-6


# --- mixture ----------------------------------------------------------------

def test_mixture_means_layout():
    mu = mixture_means(10)
    assert mu.shape == (3, 10)
    np.testing.assert_array_equal(mu[0], np.r_[5.0, np.zeros(9)])
    np.testing.assert_array_equal(mu[1], np.r_[-7.0, np.zeros(9)])
    np.testing.assert_array_equal(mu[2], np.ones(10))


def test_mixture_matches_scipy_at_third_mean():
    mu = mixture_means(10)
    x = mu[2]
    expect = np.mean([multivariate_normal(m, 16.0 * np.eye(10)).pdf(x) for m in mu])
    assert np.exp(gaussian_mixture_logpdf(x[None])[0]) == pytest.approx(expect, rel=1e-12)


def test_mixture_one_dimensional_integrates_to_one():
    # In 1-D the means collapse to {5, -7, 1}.
    xs = np.linspace(-60, 60, 200001)
    p = np.exp(gaussian_mixture_logpdf(xs[:, None]))
    assert np.trapezoid(p, xs) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=30)
@given(st.lists(st.floats(-20, 20), min_size=9, max_size=9))
def test_mixture_reflection_in_trailing_coordinates(tail):
    # components 0 and 1 are symmetric under x_j -> -x_j for j >= 2;
    # component 2 is not, so compare against scipy instead of a symmetry.
    x = np.r_[0.5, tail]
    mu = mixture_means(10)
    expect = np.log(np.mean([multivariate_normal(m, 16.0 * np.eye(10)).pdf(x) for m in mu]))
    assert gaussian_mixture_logpdf(x[None])[0] == pytest.approx(expect, rel=1e-10, abs=1e-10)


def test_mixture_target_is_unbounded():
    t = gaussian_mixture_target(10)
    assert not t.bounded
    with pytest.raises(ValueError):
        grid_quadrature(t, 10)


# --- grid oracle ------------------------------------------------------------

def test_grid_truncated_gaussian():
    t = TargetDensity(lambda x: norm.logpdf(x[:, 0]), 1, Box.cube(-8, 8, 1))
    q = grid_quadrature(t, 200_000)
    assert q.Z == pytest.approx(1.0, abs=1e-6)
    assert abs(q.mean[0]) < 1e-6
    assert t.eval_counter == 0


def test_grid_uniform_density():
    box = Box(np.array([0.0, -1.0]), np.array([2.0, 3.0]))
    t = TargetDensity(lambda x: np.zeros(x.shape[0]), 2, box)
    q = grid_quadrature(t, 11)
    assert q.Z == pytest.approx(8.0, rel=1e-12)
    np.testing.assert_allclose(q.mean, [1.0, 1.0], atol=1e-12)
    # midpoint rule: variance of n equispaced cell centres is w^2 (1 - 1/n^2) / 12
    np.testing.assert_allclose(q.covariance(), np.diag([4, 16]) * (1 - 1 / 121) / 12, atol=1e-12)


def test_grid_chunking_does_not_change_result():
    t = banana_target()
    a = grid_quadrature(t, 300)
    b = grid_quadrature(t, 300, chunk=7001)
    assert a.Z == pytest.approx(b.Z, rel=1e-13)


# --- synthetic forward model ------------------------------------------------

def test_synthetic_golden_center():
    with open(DATA / "synthetic_center.csv", newline="") as fh:
        golden = np.array([float(r["y"]) for r in csv.DictReader(fh)])
    y = synthetic_forward_model(SYNTHETIC_BOX.center)
    assert y.shape == (64,)
    np.testing.assert_allclose(y, golden, rtol=1e-12, atol=1e-12)


def test_synthetic_deterministic_and_batched():
    rng = np.random.default_rng(3)
    x = SYNTHETIC_BOX.sample(rng, 5)
    a = synthetic_forward_model(x)
    b = np.array([synthetic_forward_model(xi) for xi in x])
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, synthetic_forward_model(x))


def test_synthetic_continuity():
    x = SYNTHETIC_BOX.center
    step = 1e-7 * SYNTHETIC_BOX.widths
    d = np.abs(synthetic_forward_model(x + step) - synthetic_forward_model(x))
    assert d.max() < 1e-5


def test_synthetic_rejects_out_of_box_and_wrong_dim():
    x = SYNTHETIC_BOX.center.copy()
    x[1] = 101.0
    with pytest.raises(ValueError, match="outside"):
        synthetic_forward_model(x)
    with pytest.raises(ValueError):
        synthetic_forward_model(np.zeros(5))


def test_forward_model_cache_counts():
    f = synthetic_model(cache=True)
    x = SYNTHETIC_BOX.center[None]
    f(x)
    f(x)
    assert f.evaluations == 1 and f.cache_hits == 1
    g = synthetic_model(cache=False)
    g(x)
    g(x)
    assert g.evaluations == 2


# --- inversion --------------------------------------------------------------

def test_zero_residual_log_likelihood():
    x = SYNTHETIC_BOX.center
    y = synthetic_forward_model(x)
    prob = InversionProblem(synthetic_model(), y, 0.5, SYNTHETIC_BOX)
    assert prob.log_likelihood(x[None])[0] == 0.0


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=6, max_size=6))
def test_zero_residual_anywhere(u):
    x = SYNTHETIC_BOX.lower + np.array(u) * SYNTHETIC_BOX.widths
    prob = InversionProblem(synthetic_model(), synthetic_forward_model(x), 0.1, SYNTHETIC_BOX)
    assert prob.target()(x) == 0.0


def test_problem_sequence_shapes():
    probs, x_true = make_problem_sequence(4, 0)
    assert len(probs) == 4 and x_true.shape == (4, 6)
    assert np.all(SYNTHETIC_BOX.contains(x_true))
    assert all(p.forward is probs[0].forward for p in probs)


SMALL = RadisConfig(T=3, N=5, L=100, n_initial=10)


def test_sequential_empty_list():
    with pytest.raises(ConfigError):
        sequential_inversion([], SMALL)


def test_sequential_requires_shared_forward():
    a, _ = make_problem_sequence(1, 0)
    b, _ = make_problem_sequence(1, 1)
    with pytest.raises(ConfigError):
        sequential_inversion(a + b, SMALL)


def test_sequential_single_problem_equals_plain_run():
    probs, _ = make_problem_sequence(1, 5)
    res = sequential_inversion(probs, SMALL, share_nodes=True, rng=11)
    rng = np.random.default_rng(11)
    pts = probs[0].prior.sample(rng, SMALL.n_initial)
    import dataclasses
    out = run_radis(probs[0].target(), dataclasses.replace(SMALL, initial_points=pts), rng)
    np.testing.assert_array_equal(res[0][0], out.map_estimate()[0])


def test_sequential_map_is_argmax():
    probs, _ = make_problem_sequence(2, 2)
    res = sequential_inversion(probs, SMALL, rng=0)
    for x_map, rec in res:
        assert rec.extra["map_log_pi"] == pytest.approx(probs[rec.extra["problem"]].log_likelihood(x_map[None])[0])


def test_sharing_reduces_forward_ledger():
    R = 4
    probs_on, _ = make_problem_sequence(R, 7)
    probs_off, _ = make_problem_sequence(R, 7)
    on = sequential_inversion(probs_on, SMALL, share_nodes=True, rng=1)
    off = sequential_inversion(probs_off, SMALL, share_nodes=False, rng=1)
    fwd_on = probs_on[0].forward.evaluations
    fwd_off = probs_off[0].forward.evaluations
    assert fwd_on < fwd_off
    # shared nodes are free, so the forward ledger per problem never exceeds the plain budget
    plain = SMALL.n_initial + SMALL.N * SMALL.T
    assert all(r.evaluations == plain for _, r in on + off)
    assert all(r.extra["forward_evaluations"] <= plain for _, r in on)
    assert [r.extra["shared_nodes"] for _, r in on] == list(range(R))
    assert all(r.extra["shared_nodes"] == 0 for _, r in off)
