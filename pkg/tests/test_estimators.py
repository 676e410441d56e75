# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

import numpy as np
import pytest

from catgrad.couplings import AntitheticPair, CoupledCatPair
from catgrad.dist import (
    CategoricalParams,
    build_stick,
    score_grad,
    softmax_probs,
    tree_logits,
)
from catgrad.estimators import (
    CountingObjective,
    disarm_binary,
    disarm_iw,
    disarm_sb,
    disarm_tree,
    reinforce,
    rloo,
)


def _first(z):
    return float(z[0])


def test_counting_objective():
    """Repeated configurations are evaluated once."""
    calls = []

    def f(z):
        calls.append(z.tolist())
        return float(z.sum())

    counted = CountingObjective(f)
    assert counted([1, 2]) == 3.0
    assert counted(np.array([1, 2])) == 3.0
    assert counted([2, 1]) == 3.0
    assert counted.evaluations == 2
    assert calls == [[1, 2], [2, 1]]


def test_reinforce():
    """The estimate is the objective times the score."""
    params = CategoricalParams(np.array([[0.1, -0.3, 0.7], [0.0, 0.2, 0.1]]))
    output = reinforce(params, [2, 0], lambda z: 3.0)
    np.testing.assert_allclose(
        output.grad.cat_grad, 3.0 * score_grad(params, [2, 0]).cat_grad
    )
    assert output.f_evals == 1
    assert output.values == [3.0]


def test_rloo_value():
    """Each sample is centered by the mean of the others."""
    params = CategoricalParams(np.zeros((1, 3)))
    output = rloo(params, [[0], [1]], _first)
    np.testing.assert_allclose(
        output.grad.cat_grad, [[-0.5, 0.5, 0.0]], atol=1e-12
    )
    assert output.f_evals == 2


def test_rloo_identical_samples():
    """Identical samples cancel and are evaluated once."""
    params = CategoricalParams(np.array([[0.3, -1.0]]))
    output = rloo(params, [[1], [1], [1]], _first)
    np.testing.assert_array_equal(output.grad.cat_grad, np.zeros((1, 2)))
    assert output.f_evals == 1
    with pytest.raises(ValueError):
        rloo(params, [[1]], _first)


def test_disarm_binary_value():
    """Disagreeing bits give half the difference times sigma(|logit|)."""
    pair = AntitheticPair(b=np.array([1]), b_tilde=np.array([0]), u=np.zeros(1))
    output = disarm_binary(np.array([0.0]), pair, lambda b: float(b[0]))
    np.testing.assert_allclose(output.grad.bin_grad, [[0.25]])
    np.testing.assert_allclose(output.grad.cat_grad, [[0.25, -0.25]])
    agree = AntitheticPair(
        b=np.array([1]), b_tilde=np.array([1]), u=np.zeros(1)
    )
    zero = disarm_binary(np.array([0.0]), agree, lambda b: float(b[0]))
    np.testing.assert_array_equal(zero.grad.cat_grad, np.zeros((1, 2)))
    with pytest.raises(ValueError):
        disarm_binary(np.array([0.0, 1.0]), pair, lambda b: 0.0)


def test_disarm_iw():
    """Only disagreeing variables receive a weighted difference."""
    params = CategoricalParams(np.zeros((2, 3)))
    pair = CoupledCatPair(
        z=np.array([0, 1]),
        z_tilde=np.array([2, 1]),
        weights=np.array([0.5, 0.0]),
    )
    output = disarm_iw(params, pair, _first)
    np.testing.assert_allclose(
        output.grad.cat_grad, [[-0.5, 0.0, 0.5], [0.0, 0.0, 0.0]], atol=1e-12
    )
    assert output.f_evals == 2


def test_disarm_iw_needs_weights():
    """A missing weight on a disagreeing variable is an error."""
    params = CategoricalParams(np.zeros((1, 3)))
    pair = CoupledCatPair(
        z=np.array([0]), z_tilde=np.array([2]), weights=np.array([np.nan])
    )
    with pytest.raises(ValueError):
        disarm_iw(params, pair, _first)


def test_disarm_sb_zero_past_both_stops():
    """Sticks after both members stopped receive no gradient."""
    params = CategoricalParams(np.array([[0.1, 0.4, -0.2, 0.3]]))
    stick = build_stick(softmax_probs(params), "ascending")
    output = disarm_sb(params, stick, [[1, 0, 0]], [[0, 1, 0]], _first)
    assert output.grad.bin_grad[0, 2] == 0.0
    np.testing.assert_allclose(output.grad.cat_grad.sum(), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        disarm_sb(params, stick, [[1, 0]], [[0, 1]], _first)


def test_disarm_sb_equal_pair():
    """Agreeing members produce a zero gradient."""
    params = CategoricalParams(np.array([[0.1, 0.4, -0.2]]))
    stick = build_stick(softmax_probs(params), "default")
    output = disarm_sb(params, stick, [[0, 1]], [[0, 1]], _first)
    np.testing.assert_array_equal(output.grad.cat_grad, np.zeros((1, 3)))
    assert output.f_evals == 1


def test_disarm_tree_unvisited_nodes():
    """Nodes consulted by neither routing receive no gradient."""
    params = CategoricalParams(np.array([[0.1, 0.4, -0.2, 0.3]]))
    tree = tree_logits(softmax_probs(params))
    output = disarm_tree(params, tree, [[0, 1, 0]], [[0, 0, 0]], _first)
    assert output.samples[0].tolist() == [1]
    assert output.samples[1].tolist() == [0]
    assert output.grad.bin_grad[0, 2] == 0.0
    assert output.grad.bin_grad[0, 1] != 0.0
    with pytest.raises(ValueError):
        disarm_tree(
            CategoricalParams(np.zeros((1, 3))),
            tree,
            [[0, 1]],
            [[0, 0]],
            _first,
        )
