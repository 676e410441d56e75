# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

import dataclasses
import math

import numpy as np
import pytest

from catgrad import estimators
from catgrad.ars import sample_dirichlet_uniform, swap_configs
from catgrad.dist import CategoricalParams, GradEstimate
from catgrad.models import random_lookup
from catgrad.oracle import (
    OracleReport,
    all_configurations,
    bootstrap_mean_le,
    bootstrap_variance_le,
    compare_exact,
    exact_estimator_expectation,
    exact_objective_grad,
    expected_objective,
    finite_diff_check,
    mc_estimator_mean,
    paired_swap_draws,
    rejection_conditional_mean,
)
from catgrad.registry import make_estimator


def _instance(seed, K, C):
    rng = np.random.default_rng(seed)
    return CategoricalParams(rng.standard_normal((K, C))), random_lookup(
        rng, K, C
    )


def test_all_configurations():
    """Configurations are listed lexicographically."""
    configurations = all_configurations(2, 3)
    assert configurations.shape == (9, 2)
    assert configurations[0].tolist() == [0, 0]
    assert configurations[1].tolist() == [0, 1]
    assert configurations[-1].tolist() == [2, 2]
    with pytest.raises(ValueError):
        all_configurations(20, 10)


def test_exact_gradient_constant_objective():
    """A constant objective has a zero gradient."""
    params = CategoricalParams(np.array([[0.3, -0.1, 1.0]] * 2))
    grad = exact_objective_grad(params, lambda z: 4.0).cat_grad
    np.testing.assert_allclose(grad, np.zeros((2, 3)), atol=1e-12)
    assert expected_objective(params, lambda z: 4.0) == pytest.approx(4.0)


def test_exact_gradient_finite_difference():
    """The exact gradient matches central differences of the expectation."""
    rng = np.random.default_rng(0)
    params, f = _instance(1, 2, 3)
    error = finite_diff_check(
        "objective",
        params.logits,
        rng.standard_normal((2, 3)),
        objective=f,
    )
    assert error < 1e-7


def test_reinforce_identity():
    """The enumerated REINFORCE expectation is the exact gradient."""
    for seed in range(5):
        params, f = _instance(seed, 2, 3)
        report = compare_exact("reinforce", params, f, seed, threshold=1e-12)
        assert report.passed, report.to_dict()


def test_worked_iw_instance():
    """The weighted estimator is unbiased on (0.2, 0.3, 0.5)."""
    params = CategoricalParams(np.log(np.array([[0.2, 0.3, 0.5]])))
    f = random_lookup(np.random.default_rng(2), 1, 3)
    assert compare_exact("disarm-iw", params, f, threshold=1e-10).passed


@pytest.mark.parametrize("ordering", ["ascending", "descending", "default"])
def test_stick_unbiased_any_ordering(ordering):
    """Stick-breaking pairs are unbiased whatever the category ordering."""
    for seed in range(3):
        params, f = _instance(seed, 2, 5)
        report = compare_exact(
            "disarm-sb", params, f, seed, threshold=1e-10, ordering=ordering
        )
        assert report.passed, report.to_dict()


@pytest.mark.parametrize("C", [2, 4, 8])
def test_tree_unbiased(C):
    """Tree pairs are unbiased."""
    params, f = _instance(3, 2, C)
    assert compare_exact("disarm-tree", params, f, threshold=1e-10).passed


@pytest.mark.parametrize(
    "name, options",
    [
        ("rloo", dict(rloo_samples=2)),
        ("rloo", dict(rloo_samples=3)),
        ("rloo-ars", {}),
        ("disarm-iw", {}),
        ("disarm-iw", dict(coupling="independent")),
    ],
)
def test_other_estimators_unbiased(name, options):
    """Leave-one-out and weighted estimators are unbiased."""
    params, f = _instance(4, 3, 3)
    report = compare_exact(name, params, f, threshold=1e-9, **options)
    assert report.passed, report.to_dict()


def test_binary_unbiased():
    """Binary DisARM is unbiased on two-category variables."""
    params, f = _instance(5, 3, 2)
    assert compare_exact("disarm", params, f, threshold=1e-9).passed
    with pytest.raises(ValueError):
        exact_estimator_expectation("disarm", *_instance(5, 1, 3))


def test_factorized_matches_full():
    """Per-variable enumeration agrees with the full product."""
    params, f = _instance(6, 2, 3)
    for name in ("disarm-sb", "rloo", "disarm-iw"):
        a = exact_estimator_expectation(name, params, f).cat_grad
        b = exact_estimator_expectation(name, params, f, method="full").cat_grad
        np.testing.assert_allclose(a, b, atol=1e-12)
    with pytest.raises(ValueError):
        exact_estimator_expectation("rloo", params, f, method="sampled")


def test_swap_estimators_cannot_be_enumerated():
    """Continuous randomness is rejected by the exact oracle."""
    params, f = _instance(7, 1, 3)
    with pytest.raises(ValueError):
        exact_estimator_expectation("arsm", params, f)
    with pytest.raises(ValueError):
        exact_estimator_expectation("nvil", params, f)


def test_oracle_detects_broken_learning_signal(monkeypatch):
    """Dropping the single-sided terms of the pair estimator is caught."""
    params, f = _instance(8, 2, 4)
    assert compare_exact("disarm-sb", params, f).passed

    original = estimators._coupled_learning_signal

    def shared_only(delta, shared, only_z, only_tilde, **kwargs):
        nothing = np.zeros_like(only_z)
        return original(delta, shared, nothing, nothing, **kwargs)

    monkeypatch.setattr(estimators, "_coupled_learning_signal", shared_only)
    assert not compare_exact("disarm-sb", params, f).passed
    assert not compare_exact("disarm-tree", params, f).passed


def test_report_pass_rule():
    """Reports pass when every error is within the threshold."""
    report = OracleReport("x", 1, 2, 0, (1e-10, -2e-10), 1e-9)
    assert report.passed
    assert report.max_error == pytest.approx(2e-10)
    assert not OracleReport("x", 1, 2, 0, (1e-8,), 1e-9).passed
    assert not OracleReport("x", 1, 2, 0, (math.nan, 0.0), 1e-9).passed
    assert OracleReport("x", 1, 2, None, (), 0.0).passed
    summary = report.to_dict()
    assert summary["passed"] is True
    assert summary["seed"] == 0


@pytest.mark.parametrize("name", ["ars", "ars+", "arsm", "arsm+"])
def test_mc_mean_of_swap_estimator(name):
    """Monte Carlo means of the swap estimators stay near the truth."""
    params, f = _instance(9, 1, 3)
    rng = np.random.default_rng(0)
    report = mc_estimator_mean(name, params, f, 2000, rng)
    assert report.draws == 2000
    assert np.all(np.abs(report.z_scores) < 5)
    with pytest.raises(ValueError):
        mc_estimator_mean("arsm", params, f, 10, rng)


def test_mc_mean_detects_bias():
    """A rescaled score-function estimator is far from the exact gradient."""
    params = CategoricalParams(np.zeros((1, 3)))

    def f(z):
        return 3.0 if z[0] == 0 else 0.0

    plain = make_estimator("reinforce")

    def doubled(params, f, rng):
        output = plain(params, f, rng)
        return dataclasses.replace(
            output, grad=GradEstimate(cat_grad=2.0 * output.grad.cat_grad)
        )

    rng = np.random.default_rng(3)
    np.testing.assert_allclose(
        exact_objective_grad(params, f).cat_grad,
        [[2 / 3, -1 / 3, -1 / 3]],
    )
    unbiased = mc_estimator_mean(plain, params, f, 4000, rng)
    assert np.all(np.abs(unbiased.z_scores) < 5)
    biased = mc_estimator_mean(doubled, params, f, 4000, rng)
    assert np.max(np.abs(biased.z_scores)) > 10


def test_paired_swap_draws():
    """The four swap estimators are drawn on shared randomness."""
    params, f = _instance(10, 2, 3)
    draws = paired_swap_draws(params, f, 50, np.random.default_rng(1))
    assert sorted(draws) == ["ars", "ars+", "arsm", "arsm+"]
    assert all(d.shape == (50, 2, 3) for d in draws.values())


def test_bootstrap_comparisons():
    """Paired bootstraps order variances and means."""
    rng = np.random.default_rng(11)
    b = rng.standard_normal((500, 2))
    assert np.all(bootstrap_variance_le(0.5 * b, b, rng))
    assert not np.any(bootstrap_variance_le(3.0 * b, b, rng))
    assert np.all(bootstrap_mean_le(b - 1.0, b, rng))
    assert not np.any(bootstrap_mean_le(b + 1.0, b, rng))
    with pytest.raises(ValueError):
        bootstrap_variance_le(b, b[:10], rng)


def test_bootstrap_holm():
    """Corrected comparisons hold jointly over many coordinates."""
    rng = np.random.default_rng(16)
    b = rng.standard_normal((1000, 60))
    a = rng.standard_normal((1000, 60))
    holm = dict(correction="holm")
    assert np.all(bootstrap_variance_le(a, b, rng, level=0.99, **holm))
    assert np.all(bootstrap_variance_le(b, b, rng, **holm))
    assert np.all(bootstrap_variance_le(0.5 * b, b, rng, **holm))
    assert not np.any(bootstrap_variance_le(3.0 * b, b, rng, **holm))
    assert not np.any(bootstrap_mean_le(b + 1.0, b, rng, **holm))
    with pytest.raises(ValueError):
        bootstrap_variance_le(a, b, rng, correction="bonferroni")


def test_rejection_matches_interval_midpoint():
    """Accepted draws of pi_j average to the interval midpoint."""
    from catgrad.ars import pi_conditional_interval

    rng = np.random.default_rng(12)
    params = CategoricalParams(np.array([[0.4, -0.3]]))
    pi = sample_dirichlet_uniform(rng, 1, 2)
    configs = swap_configs(pi, params, 0).configs[:, 0]
    lo, hi = pi_conditional_interval(pi[0], params.logits[0], configs, 0, 1)
    report = rejection_conditional_mean(
        params.logits[0], configs, pi[0], 0, 1, 5000, rng, batch=20000
    )
    assert report.accepted >= 5000
    assert abs(report.mean - 0.5 * (lo + hi)) <= 2 * report.halfwidth


def test_rejection_corrects_band():
    """With a held coordinate, the estimate centres on the band's middle."""
    from catgrad.ars import pi_conditional_interval

    rng = np.random.default_rng(17)
    logits = np.zeros(3)
    pi = np.array([0.3, 0.2, 0.5])
    configs = swap_configs(pi[None, :], CategoricalParams(logits[None, :]), 0)
    configs = configs.configs[:, 0]
    lo, hi = pi_conditional_interval(pi, logits, configs, 0, 2)
    report = rejection_conditional_mean(
        logits, configs, pi, 0, 2, 4000, rng, band=0.01, level=0.999
    )
    assert report.accepted >= 4000
    assert report.covers(0.5 * (lo + hi))


def test_rejection_gives_up():
    """Impossible configurations stop the sampler with a diagnostic."""
    rng = np.random.default_rng(13)
    with pytest.raises(RuntimeError):
        rejection_conditional_mean(
            [0.0, 0.0, 0.0],
            [2, 2, 2],
            [0.2, 0.3, 0.5],
            0,
            2,
            100,
            rng,
            batch=1000,
        )
    with pytest.raises(ValueError):
        rejection_conditional_mean(
            [0.0, 0.0], [0, 0], [0.5, 0.5], 1, 1, 100, rng
        )


def test_finite_difference_maps():
    """Every differentiable map agrees with central differences."""
    rng = np.random.default_rng(14)
    point = rng.standard_normal((2, 8))
    direction = rng.standard_normal((2, 8))
    assert finite_diff_check("linear", point, direction) < 1e-10
    assert finite_diff_check("stick", point, direction) < 1e-5
    assert finite_diff_check("tree", point, direction) < 1e-5
    with pytest.raises(ValueError):
        finite_diff_check("stick", point, direction, eps=1e-2)
    with pytest.raises(ValueError):
        finite_diff_check("softmax", point, direction)
    with pytest.raises(ValueError):
        finite_diff_check("objective", point, direction)
