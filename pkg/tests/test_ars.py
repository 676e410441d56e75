# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

import numpy as np
import pytest

from catgrad.ars import (
    ars,
    ars_plus,
    arsm,
    arsm_plus,
    pi_conditional_interval,
    sample_dirichlet_uniform,
    swap_columns,
    swap_configs,
)
from catgrad.dist import CategoricalParams


def _first(z):
    return float(z[0])


def test_dirichlet_uniform_rows():
    """Draws are non-negative rows summing to one."""
    pi = sample_dirichlet_uniform(np.random.default_rng(0), 5, 4)
    assert pi.shape == (5, 4)
    assert np.all(pi >= 0)
    np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        sample_dirichlet_uniform(np.random.default_rng(0), 0, 4)


def test_swap_columns():
    """Two entries of the last axis are exchanged on a copy."""
    pi = np.array([[0.2, 0.3, 0.5]])
    np.testing.assert_array_equal(swap_columns(pi, 0, 2), [[0.5, 0.3, 0.2]])
    np.testing.assert_array_equal(pi, [[0.2, 0.3, 0.5]])


def test_swap_configs():
    """Every swap moves the argmin along with the swapped entry."""
    params = CategoricalParams(np.zeros((1, 3)))
    state = swap_configs(np.array([[0.2, 0.3, 0.5]]), params, 0)
    np.testing.assert_array_equal(state.configs[:, 0], [0, 1, 2])
    assert state.z.tolist() == [0]
    assert not state.delta[0]
    assert state.log_scores.shape == (3, 1, 3)


def test_swap_configs_agreement():
    """A dominant logit makes every swapped configuration agree."""
    params = CategoricalParams(np.array([[10.0, 0.0, 0.0]]))
    state = swap_configs(np.array([[0.2, 0.3, 0.5]]), params, 1)
    np.testing.assert_array_equal(state.configs[:, 0], [0, 0, 0])
    assert state.delta[0]


def test_swap_configs_validation():
    """Simplex draws must match the parameters and sum to one."""
    params = CategoricalParams(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        swap_configs(np.array([[0.5, 0.5]]), params, 0)
    with pytest.raises(ValueError):
        swap_configs(np.array([[0.5, 0.5, 0.5]]), params, 0)
    with pytest.raises(ValueError):
        swap_configs(np.array([[0.2, 0.3, 0.5]]), params, 3)


def test_ars_value():
    """Centered swapped values are scaled by 1 - C pi_j."""
    params = CategoricalParams(np.zeros((1, 3)))
    pi = np.array([[0.2, 0.3, 0.5]])
    output = ars(swap_configs(pi, params, 0), _first, params)
    factor = 1.0 - 3 * 0.2
    np.testing.assert_allclose(
        output.grad.cat_grad, [[-factor, 0.0, factor]], atol=1e-12
    )
    assert output.f_evals == 3
    with pytest.raises(ValueError):
        ars(swap_configs(pi, params, 0), _first, params, j=1)


def test_arsm_evaluation_count():
    """Averaging over references reuses the symmetric swaps."""
    rng = np.random.default_rng(1)
    params = CategoricalParams(rng.standard_normal((2, 4)))
    pi = sample_dirichlet_uniform(rng, 2, 4)
    output = arsm(pi, lambda z: float(z @ [1.0, 3.0]), params)
    assert output.f_evals <= 4 * 3 // 2 + 1
    assert output.grad.cat_grad.shape == (2, 4)


def test_arsm_plus_masks_agreeing_variables():
    """Variables whose swaps all agree get a zero gradient."""
    rng = np.random.default_rng(2)
    params = CategoricalParams(np.array([[20.0, 0.0, 0.0], [0.1, 0.0, -0.1]]))
    pi = sample_dirichlet_uniform(rng, 2, 3)
    output = arsm_plus(pi, lambda z: float(z[0] + 2 * z[1]), params)
    np.testing.assert_array_equal(output.grad.cat_grad[0], np.zeros(3))


def test_conditional_interval():
    """The interval holds every pi_j reproducing the swapped categories."""
    lo, hi = pi_conditional_interval(
        [0.2, 0.3, 0.5], [0.0, 0.0, 0.0], [0, 1, 2], j=0, l=2
    )
    assert lo == pytest.approx(0.0, abs=1e-12)
    assert hi == pytest.approx(0.3, abs=1e-12)


def test_conditional_interval_contains_pi():
    """The observed pi_j always lies within its interval."""
    rng = np.random.default_rng(3)
    for _ in range(200):
        C = int(rng.integers(2, 6))
        params = CategoricalParams(rng.standard_normal((1, C)))
        pi = sample_dirichlet_uniform(rng, 1, C)
        j = int(rng.integers(C))
        l = (j + 1 + int(rng.integers(C - 1))) % C  # noqa: E741
        configs = swap_configs(pi, params, j).configs[:, 0]
        lo, hi = pi_conditional_interval(
            pi[0], params.logits[0], configs, j, l
        )
        assert lo - 1e-12 <= pi[0, j] <= hi + 1e-12


def test_conditional_interval_errors():
    """Identical columns and impossible configurations are rejected."""
    with pytest.raises(ValueError):
        pi_conditional_interval([0.2, 0.3, 0.5], [0.0] * 3, [0, 1, 2], 1, 1)
    with pytest.raises(ValueError):
        pi_conditional_interval([0.2, 0.3, 0.5], [0.0] * 3, [2, 2, 2], 0, 2)


def test_ars_plus_masks_agreeing_variables():
    """The integrated factor vanishes where all swaps agree."""
    rng = np.random.default_rng(4)
    params = CategoricalParams(np.array([[20.0, 0.0, 0.0], [0.1, 0.0, -0.1]]))
    pi = sample_dirichlet_uniform(rng, 2, 3)
    output = ars_plus(pi, lambda z: float(z[0] + 2 * z[1]), params, 1, rng)
    np.testing.assert_array_equal(output.grad.cat_grad[0], np.zeros(3))
    assert output.samples[0].tolist() == swap_configs(pi, params, 1).z.tolist()
