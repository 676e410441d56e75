# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Named estimators that draw their own randomness.

:py:func:`make_estimator` returns callables with the uniform signature
``(params, f, rng) -> EstimatorOutput`` used by the training loop, the
variance replay and the Monte Carlo oracle.
"""

from __future__ import annotations

import dataclasses
import logging
import typing

import numpy as np
import scipy.special

from .ars import (
    ars,
    ars_plus,
    arsm,
    arsm_plus,
    sample_dirichlet_uniform,
    swap_configs,
)
from .couplings import (
    antithetic_bernoulli,
    independent_coupling_sample,
    sb_coupling_sample,
    tree_coupling_sample,
)
from .dist import (
    ORDERINGS,
    CategoricalParams,
    build_stick,
    sample_categorical,
    softmax_probs,
    tree_logits,
)
from .estimators import (
    EstimatorOutput,
    Objective,
    disarm_binary,
    disarm_iw,
    disarm_sb,
    disarm_tree,
    reinforce,
    rloo,
)

logger = logging.getLogger(__name__)

EstimatorFn = typing.Callable[
    [CategoricalParams, Objective, np.random.Generator], EstimatorOutput
]

FINITE_ESTIMATORS = (
    "reinforce",
    "rloo",
    "rloo-ars",
    "rloo-arsm",
    "disarm",
    "disarm-iw",
    "disarm-sb",
    "disarm-tree",
)
"""Estimators whose randomness takes finitely many values."""

SWAP_ESTIMATORS = ("ars", "ars+", "arsm", "arsm+")
"""Dirichlet-augmented estimators (continuous randomness)."""

ESTIMATORS = FINITE_ESTIMATORS + SWAP_ESTIMATORS
"""Every registered estimator name."""

COUPLINGS = ("stick", "independent")
"""Couplings accepted by ``disarm-iw``."""


def rloo_sample_count(name: str, C: int, default: int = 2) -> int:
    """Number of samples of a leave-one-out estimator.

    ``rloo-ars`` matches the ``C`` evaluations of the single-reference swap
    estimator, ``rloo-arsm`` the ``C(C-1)/2 + 1`` of the averaged one.
    """
    if name == "rloo-ars":
        return C
    if name == "rloo-arsm":
        return C * (C - 1) // 2 + 1
    return default


def _check_name(name: str) -> None:
    if name not in ESTIMATORS:
        raise ValueError(
            f"unknown estimator `{name}' - choose from {', '.join(ESTIMATORS)}"
        )


def make_estimator(
    name: str,
    ordering: str = "ascending",
    rloo_samples: int = 2,
    coupling: str = "stick",
    reference: int | None = None,
) -> EstimatorFn:
    """Builds a self-sampling estimator.

    Arguments:

        name: One of :py:data:`ESTIMATORS`

        ordering: Category ordering of the ``disarm-sb`` sticks

        rloo_samples: Sample count of ``rloo``

        coupling: Coupling of ``disarm-iw`` (``stick`` uses ascending sticks)

        reference: Fixed reference column of ``ars`` and ``ars+`` (drawn
            uniformly at every call if ``None``)


    Returns:

        A callable ``(params, f, rng) -> EstimatorOutput``.
    """
    _check_name(name)
    if ordering not in ORDERINGS:
        raise ValueError(
            f"unknown ordering `{ordering}' - choose from "
            f"{', '.join(ORDERINGS)}"
        )
    if coupling not in COUPLINGS:
        raise ValueError(
            f"unknown coupling `{coupling}' - choose from "
            f"{', '.join(COUPLINGS)}"
        )
    if rloo_samples < 2:
        raise ValueError(f"rloo needs at least 2 samples, got {rloo_samples}")

    def _reinforce(params, f, rng):
        z = sample_categorical(softmax_probs(params), rng)
        return reinforce(params, z, f)

    def _rloo(params, f, rng):
        probs = softmax_probs(params)
        n = rloo_sample_count(name, params.shape[1], rloo_samples)
        samples = [sample_categorical(probs, rng) for _ in range(n)]
        return rloo(params, samples, f)

    def _disarm(params, f, rng):
        K, C = params.shape
        if C != 2:
            raise ValueError(
                f"binary disarm needs two categories per variable, got {C}"
            )
        logits = params.logits[:, 0] - params.logits[:, 1]
        pair = antithetic_bernoulli(scipy.special.expit(logits), rng.random(K))
        # bit 1 selects category 0
        output = disarm_binary(logits, pair, lambda b: f(1 - b))
        return dataclasses.replace(
            output, samples=[1 - b for b in output.samples]
        )

    def _disarm_iw(params, f, rng):
        probs = softmax_probs(params)
        if coupling == "independent":
            pair = independent_coupling_sample(probs, rng)
        else:
            pair = sb_coupling_sample(build_stick(probs, "ascending"), rng)
        return disarm_iw(params, pair, f)

    def _disarm_sb(params, f, rng):
        stick = build_stick(softmax_probs(params), ordering)
        pair = sb_coupling_sample(stick, rng)
        return disarm_sb(params, stick, pair.bits, pair.bits_tilde, f)

    def _disarm_tree(params, f, rng):
        tree = tree_logits(softmax_probs(params))
        pair = tree_coupling_sample(tree, rng)
        return disarm_tree(params, tree, pair.bits, pair.bits_tilde, f)

    def _reference(C, rng):
        return int(rng.integers(C)) if reference is None else reference

    def _ars(params, f, rng):
        K, C = params.shape
        pi = sample_dirichlet_uniform(rng, K, C)
        return ars(swap_configs(pi, params, _reference(C, rng)), f, params)

    def _ars_plus(params, f, rng):
        K, C = params.shape
        pi = sample_dirichlet_uniform(rng, K, C)
        return ars_plus(pi, f, params, _reference(C, rng), rng)

    def _arsm(params, f, rng):
        K, C = params.shape
        return arsm(sample_dirichlet_uniform(rng, K, C), f, params)

    def _arsm_plus(params, f, rng):
        K, C = params.shape
        return arsm_plus(sample_dirichlet_uniform(rng, K, C), f, params)

    table: dict[str, EstimatorFn] = {
        "reinforce": _reinforce,
        "rloo": _rloo,
        "rloo-ars": _rloo,
        "rloo-arsm": _rloo,
        "disarm": _disarm,
        "disarm-iw": _disarm_iw,
        "disarm-sb": _disarm_sb,
        "disarm-tree": _disarm_tree,
        "ars": _ars,
        "ars+": _ars_plus,
        "arsm": _arsm,
        "arsm+": _arsm_plus,
    }
    return table[name]
