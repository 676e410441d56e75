# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Score-function gradient estimators for factorial categorical variables.

Every estimator receives its randomness explicitly (samples, coupled pairs or
bit tables) and returns an :py:class:`EstimatorOutput` whose gradient is in
categorical-logit space.  Objectives are wrapped in a
:py:class:`CountingObjective` so that repeated configurations are evaluated
once and reported once.
"""

from __future__ import annotations

import dataclasses
import logging
import typing

import numpy as np
import numpy.typing as npt
import scipy.special

from .couplings import AntitheticPair, CoupledCatPair
from .dist import (
    BoolArray,
    CategoricalParams,
    FloatArray,
    GradEstimate,
    IntArray,
    StickParams,
    TreeParams,
    as_bits,
    as_sample,
    one_hot,
    sb_decode,
    sb_vjp,
    softmax_probs,
    tree_route,
    tree_vjp,
)

logger = logging.getLogger(__name__)

Objective = typing.Callable[[IntArray], float]
"""Maps a configuration (length-``K`` integer array) to a real value."""


class CountingObjective:
    """Memoizing wrapper around an objective.

    Arguments:

        f: The objective to wrap.  It must be deterministic.
    """

    def __init__(self, f: Objective):
        self._f = f
        self._cache: dict[bytes, float] = {}

    def __call__(self, z: npt.ArrayLike) -> float:
        z = np.asarray(z, dtype=np.int64)
        key = z.tobytes()
        if key not in self._cache:
            self._cache[key] = float(self._f(z))
        return self._cache[key]

    @property
    def evaluations(self) -> int:
        """Number of distinct configurations evaluated so far."""
        return len(self._cache)


@dataclasses.dataclass(frozen=True)
class EstimatorOutput:
    """Result of one gradient estimate.

    Arguments:

        grad: The gradient estimate

        f_evals: Number of distinct objective evaluations

        values: Objective values at ``samples``

        samples: The primary configurations the estimate was drawn at (the
            ones a pathwise term should be averaged over)
    """

    grad: GradEstimate
    f_evals: int
    values: list[float]
    samples: list[IntArray]


def reinforce(
    params: CategoricalParams, z: npt.ArrayLike, f: Objective
) -> EstimatorOutput:
    """Single-sample score-function estimate ``f(z) * d log q(z)``."""
    z = as_sample(z, params.shape)
    counted = CountingObjective(f)
    value = counted(z)
    score = one_hot(z, params.shape[1]) - softmax_probs(params).probs
    return EstimatorOutput(
        grad=GradEstimate(cat_grad=value * score),
        f_evals=counted.evaluations,
        values=[value],
        samples=[z],
    )


def rloo(
    params: CategoricalParams,
    samples: typing.Sequence[npt.ArrayLike],
    f: Objective,
) -> EstimatorOutput:
    """Leave-one-out baseline estimate over ``n >= 2`` independent samples.

    Each sample's baseline is the mean objective of the other ``n - 1``
    samples, and the ``n`` terms are averaged.
    """
    n = len(samples)
    if n < 2:
        raise ValueError(f"leave-one-out needs at least 2 samples, got {n}")
    configurations = [as_sample(z, params.shape) for z in samples]
    counted = CountingObjective(f)
    values = np.array([counted(z) for z in configurations])
    baselines = (values.sum() - values) / (n - 1)
    probs = softmax_probs(params).probs
    C = params.shape[1]
    cat_grad = np.zeros(params.shape)
    for z, value, baseline in zip(configurations, values, baselines):
        cat_grad += (value - baseline) * (one_hot(z, C) - probs)
    return EstimatorOutput(
        grad=GradEstimate(cat_grad=cat_grad / n),
        f_evals=counted.evaluations,
        values=[float(v) for v in values],
        samples=configurations,
    )


def _disarm_factor(
    bits: IntArray, bits_tilde: IntArray, logits: FloatArray
) -> FloatArray:
    return np.where(
        bits != bits_tilde,
        np.where(bits_tilde == 1, -1.0, 1.0)
        * scipy.special.expit(np.abs(logits)),
        0.0,
    )


def disarm_binary(
    logits: npt.ArrayLike, pair: AntitheticPair, f: Objective
) -> EstimatorOutput:
    """Antithetic estimate for ``K`` independent Bernoulli variables.

    Component ``k`` is ``(f(b) - f(b~)) / 2 * (-1)^{b~_k} 1{b_k != b~_k}
    sigma(|logit_k|)``.  The categorical gradient identifies bit ``1`` with
    category 0 of a two-category variable whose Bernoulli logit is
    ``logits[0] - logits[1]``.


    Arguments:

        logits: Length-``K`` Bernoulli logits

        pair: Antithetic draws from ``sigmoid(logits)``

        f: Objective over bit vectors


    Returns:

        The estimate, in both Bernoulli (``bin_grad``, ``K x 1``) and
        two-category (``cat_grad``) form.
    """
    logits = np.asarray(logits, dtype=float)
    b = np.asarray(pair.b, dtype=np.int64)
    b_tilde = np.asarray(pair.b_tilde, dtype=np.int64)
    if logits.ndim != 1 or b.shape != logits.shape or b_tilde.shape != b.shape:
        raise ValueError(
            f"need one Bernoulli pair per logit, got logits {logits.shape} "
            f"and pairs {b.shape}, {b_tilde.shape}"
        )
    counted = CountingObjective(f)
    value = counted(b)
    value_tilde = counted(b_tilde)
    g = 0.5 * (value - value_tilde) * _disarm_factor(b, b_tilde, logits)
    return EstimatorOutput(
        grad=GradEstimate(
            cat_grad=np.stack([g, -g], axis=1), bin_grad=g[:, None]
        ),
        f_evals=counted.evaluations,
        values=[value, value_tilde],
        samples=[b, b_tilde],
    )


def disarm_iw(
    params: CategoricalParams, pair: CoupledCatPair, f: Objective
) -> EstimatorOutput:
    """Importance-weighted coupled-pair estimate.

    Component ``k`` is ``w_k (f(z) - f(z~)) / 2 (onehot(z_k) -
    onehot(z~_k))``, which vanishes whenever ``z_k = z~_k``.
    """
    z = as_sample(pair.z, params.shape)
    z_tilde = as_sample(pair.z_tilde, params.shape)
    weights = np.asarray(pair.weights, dtype=float)
    differ = z != z_tilde
    if not np.all(np.isfinite(weights[differ])):
        missing = np.flatnonzero(differ & ~np.isfinite(weights))
        raise ValueError(
            f"missing importance weight for variables {missing.tolist()} "
            f"(was the coupling built with ascending sticks?)"
        )
    counted = CountingObjective(f)
    value = counted(z)
    value_tilde = counted(z_tilde)
    C = params.shape[1]
    w = np.where(differ, weights, 0.0)
    cat_grad = (
        0.5
        * (value - value_tilde)
        * w[:, None]
        * (one_hot(z, C) - one_hot(z_tilde, C))
    )
    return EstimatorOutput(
        grad=GradEstimate(cat_grad=cat_grad),
        f_evals=counted.evaluations,
        values=[value, value_tilde],
        samples=[z, z_tilde],
    )


def _coupled_learning_signal(
    delta: float,
    shared: BoolArray,
    only_z: BoolArray,
    only_tilde: BoolArray,
    bits: IntArray,
    bits_tilde: IntArray,
    logits: FloatArray,
) -> FloatArray:
    """Binary-logit gradient of a coupled pair of bit sequences.

    Arguments:

        delta: ``f(z) - f(z~)``

        shared: Binary variables read by both decodings

        only_z: Binary variables read by the decoding of ``bits`` only

        only_tilde: Binary variables read by the decoding of ``bits_tilde``
            only

        bits: First bit table

        bits_tilde: Second bit table

        logits: Logits of the binary variables


    Returns:

        ``K x (C-1)`` gradient, exactly zero on variables read by neither
        decoding.
    """
    p = scipy.special.expit(logits)
    grad = np.where(
        shared, 0.5 * delta * _disarm_factor(bits, bits_tilde, logits), 0.0
    )
    grad = np.where(only_z, 0.5 * delta * (bits - p), grad)
    return np.where(only_tilde, -0.5 * delta * (bits_tilde - p), grad)


def _check_bit_pair(
    bits: npt.ArrayLike, bits_tilde: npt.ArrayLike, K: int, C: int
) -> tuple[IntArray, IntArray]:
    bits = as_bits(bits)
    bits_tilde = as_bits(bits_tilde)
    if bits.shape != (K, C - 1) or bits_tilde.shape != (K, C - 1):
        raise ValueError(
            f"bits must have shape {(K, C - 1)}, got {bits.shape} and "
            f"{bits_tilde.shape}"
        )
    return bits, bits_tilde


def disarm_sb(
    params: CategoricalParams,
    stick: StickParams,
    bits: npt.ArrayLike,
    bits_tilde: npt.ArrayLike,
    f: Objective,
) -> EstimatorOutput:
    """Stick-breaking coupled-pair estimate.

    With ``z`` and ``z~`` the stick positions decoded from the two bit
    tables, stick ``c`` of variable ``k`` receives:

    * the antithetic form when ``c <= min(z_k, z~_k)``;
    * ``(f(z) - f(z~)) / 2 (b_c - sigma(a_c))`` when ``z~_k < c <= z_k``;
    * ``(f(z~) - f(z)) / 2 (b~_c - sigma(a_c))`` when ``z_k < c <= z~_k``;
    * zero past ``max(z_k, z~_k)``.


    Arguments:

        params: The categorical logits ``stick`` was built from

        stick: The stick parameterization (any ordering)

        bits: First stick bit table, in stick order

        bits_tilde: Antithetic partner of ``bits``

        f: Objective over configurations in original labels


    Returns:

        The estimate; ``bin_grad`` holds the stick-logit gradient.
    """
    K, C = params.shape
    if stick.shape != (K, C):
        raise ValueError(
            f"stick shape {stick.shape} does not match parameters {(K, C)}"
        )
    bits, bits_tilde = _check_bit_pair(bits, bits_tilde, K, C)
    position = sb_decode(bits)
    position_tilde = sb_decode(bits_tilde)
    rows = np.arange(K)
    z = stick.perm[rows, position]
    z_tilde = stick.perm[rows, position_tilde]

    counted = CountingObjective(f)
    value = counted(z)
    value_tilde = counted(z_tilde)

    sticks = np.arange(C - 1)[None, :]
    here = position[:, None]
    there = position_tilde[:, None]
    bin_grad = _coupled_learning_signal(
        value - value_tilde,
        shared=sticks <= np.minimum(here, there),
        only_z=(there < sticks) & (sticks <= here),
        only_tilde=(here < sticks) & (sticks <= there),
        bits=bits,
        bits_tilde=bits_tilde,
        logits=stick.logits,
    )
    return EstimatorOutput(
        grad=sb_vjp(params, bin_grad, stick.perm),
        f_evals=counted.evaluations,
        values=[value, value_tilde],
        samples=[z, z_tilde],
    )


def disarm_tree(
    params: CategoricalParams,
    tree: TreeParams,
    bits: npt.ArrayLike,
    bits_tilde: npt.ArrayLike,
    f: Objective,
) -> EstimatorOutput:
    """Tree coupled-pair estimate.

    Nodes consulted by both routings receive the antithetic form, nodes
    consulted by one routing only a single-sided score term, all other
    nodes zero.
    """
    K, C = params.shape
    if tree.shape != (K, C):
        raise ValueError(
            f"tree shape {tree.shape} does not match parameters {(K, C)}"
        )
    bits, bits_tilde = _check_bit_pair(bits, bits_tilde, K, C)
    leaf, routing = tree_route(bits)
    leaf_tilde, routing_tilde = tree_route(bits_tilde)
    rows = np.arange(K)
    z = tree.perm[rows, leaf]
    z_tilde = tree.perm[rows, leaf_tilde]

    counted = CountingObjective(f)
    value = counted(z)
    value_tilde = counted(z_tilde)

    bin_grad = _coupled_learning_signal(
        value - value_tilde,
        shared=routing & routing_tilde,
        only_z=routing & ~routing_tilde,
        only_tilde=routing_tilde & ~routing,
        bits=bits,
        bits_tilde=bits_tilde,
        logits=tree.logits,
    )
    return EstimatorOutput(
        grad=tree_vjp(params, bin_grad, tree.perm),
        f_evals=counted.evaluations,
        values=[value, value_tilde],
        samples=[z, z_tilde],
    )
