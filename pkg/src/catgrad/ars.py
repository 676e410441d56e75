# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Dirichlet-augmented estimators (swap-based) and their conditioned variants.

A categorical draw is written as ``z_k = argmin_i pi_{k,i} exp(-a_{k,i})``
with ``pi_k`` uniform on the simplex.  Exchanging columns ``m`` and ``j`` of
``pi`` (in every variable at once) gives the swapped configurations
``z^{m<->j}`` the estimators are built from.
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np
import numpy.typing as npt

from .dist import (
    BoolArray,
    CategoricalParams,
    FloatArray,
    GradEstimate,
    IntArray,
)
from .estimators import CountingObjective, EstimatorOutput, Objective

logger = logging.getLogger(__name__)

INTERVAL_TOLERANCE = 1e-12
"""Slack allowed when bound computations cross due to rounding."""


@dataclasses.dataclass(frozen=True)
class SwapState:
    """Swapped configurations for one reference column.

    Arguments:

        j: The reference column

        pi: The ``K x C`` simplex draw

        log_scores: ``C x K x C`` swapped log-scores, indexed ``[m, k, i]``
            (``log pi^{m<->j}_{k,i} - a_{k,i}``)

        configs: ``C x K`` swapped configurations, ``configs[m]`` being
            ``z^{m<->j}``

        delta: Per-variable flag set when all swapped configurations agree
    """

    j: int
    pi: FloatArray
    log_scores: FloatArray
    configs: IntArray
    delta: BoolArray

    @property
    def z(self) -> IntArray:
        """The unswapped configuration."""
        return self.configs[self.j]


def sample_dirichlet_uniform(
    rng: np.random.Generator, K: int, C: int
) -> FloatArray:
    """Draws ``K`` rows uniformly on the ``C``-simplex.

    Rows are normalized standard exponential variables.
    """
    if K < 1 or C < 1:
        raise ValueError(f"need K >= 1 and C >= 1, got K={K}, C={C}")
    e = rng.standard_exponential((K, C))
    return e / e.sum(axis=1, keepdims=True)


def swap_columns(pi: npt.ArrayLike, m: int, j: int) -> FloatArray:
    """Copy of ``pi`` with its (last-axis) entries ``m`` and ``j`` exchanged."""
    swapped = np.array(pi, dtype=float)
    swapped[..., [m, j]] = swapped[..., [j, m]]
    return swapped


def _check_pi(pi: npt.ArrayLike, shape: tuple[int, int]) -> FloatArray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != shape:
        raise ValueError(
            f"simplex draw must have shape {shape}, got {pi.shape}"
        )
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError(
            "simplex draw rows must be non-negative and sum to one"
        )
    return pi


def _check_column(index: int, C: int, name: str) -> int:
    if not 0 <= index < C:
        raise ValueError(f"{name} must lie in [0, {C - 1}], got {index}")
    return int(index)


def swap_configs(
    pi: npt.ArrayLike, params: CategoricalParams, j: int
) -> SwapState:
    """Computes every swapped configuration for reference column ``j``.

    Argmin ties go to the smallest index.
    """
    K, C = params.shape
    pi = _check_pi(pi, (K, C))
    j = _check_column(j, C, "reference column")
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    log_scores = np.stack(
        [swap_columns(log_pi, m, j) - params.logits for m in range(C)]
    )
    configs = np.argmin(log_scores, axis=2).astype(np.int64)
    delta = np.all(configs == configs[j][None, :], axis=0)
    return SwapState(
        j=j, pi=pi, log_scores=log_scores, configs=configs, delta=delta
    )


def _swap_values(state: SwapState, counted: CountingObjective) -> FloatArray:
    return np.array([counted(config) for config in state.configs])


def ars(
    state: SwapState,
    f: Objective,
    params: CategoricalParams,
    j: int | None = None,
) -> EstimatorOutput:
    """Single-reference swap estimate.

    ``g_{k,c} = (f(z^{c<->j}) - mean_m f(z^{m<->j})) (1 - C pi_{k,j})``.
    """
    if j is not None and j != state.j:
        raise ValueError(f"state was built for column {state.j}, not {j}")
    C = params.shape[1]
    counted = CountingObjective(f)
    values = _swap_values(state, counted)
    factor = 1.0 - C * state.pi[:, state.j]
    cat_grad = factor[:, None] * (values - values.mean())[None, :]
    return EstimatorOutput(
        grad=GradEstimate(cat_grad=cat_grad),
        f_evals=counted.evaluations,
        values=[float(values[state.j])],
        samples=[state.z],
    )


def _all_references(
    pi: npt.ArrayLike, f: Objective, params: CategoricalParams
) -> tuple[list[SwapState], FloatArray, CountingObjective]:
    C = params.shape[1]
    states = [swap_configs(pi, params, j) for j in range(C)]
    counted = CountingObjective(f)
    values = np.stack([_swap_values(state, counted) for state in states])
    return states, values - values.mean(axis=1, keepdims=True), counted


def _arsm_output(
    states: list[SwapState],
    weights: FloatArray,
    centered: FloatArray,
    counted: CountingObjective,
) -> EstimatorOutput:
    z = states[0].z
    return EstimatorOutput(
        grad=GradEstimate(cat_grad=weights @ centered),
        f_evals=counted.evaluations,
        values=[counted(z)],
        samples=[z],
    )


def arsm(
    pi: npt.ArrayLike, f: Objective, params: CategoricalParams
) -> EstimatorOutput:
    """Swap estimate averaged over every reference column.

    ``g_{k,c} = sum_j (1/C - pi_{k,j}) (f(z^{c<->j}) - mean_m
    f(z^{m<->j}))``.  Since ``z^{c<->j} = z^{j<->c}`` at most ``C(C-1)/2 + 1``
    distinct configurations are evaluated.
    """
    states, centered, counted = _all_references(pi, f, params)
    C = params.shape[1]
    return _arsm_output(states, 1.0 / C - states[0].pi, centered, counted)


def arsm_plus(
    pi: npt.ArrayLike, f: Objective, params: CategoricalParams
) -> EstimatorOutput:
    """Averaged swap estimate with agreement masking.

    The term of reference column ``j`` is dropped for variable ``k`` when
    all configurations swapped around ``j`` agree in ``k``.
    """
    states, centered, counted = _all_references(pi, f, params)
    C = params.shape[1]
    keep = ~np.stack([state.delta for state in states], axis=1)
    weights = np.where(keep, 1.0 / C - states[0].pi, 0.0)
    return _arsm_output(states, weights, centered, counted)


def pi_conditional_interval(
    pi_row: npt.ArrayLike,
    logits_row: npt.ArrayLike,
    configs: npt.ArrayLike,
    j: int,
    l: int,  # noqa: E741
) -> tuple[float, float]:
    """Range of ``pi_j`` compatible with the swapped configurations.

    All coordinates but ``j`` and ``l`` are held fixed, so ``pi_l = R -
    pi_j`` with ``R = 1 - sum_{i != j, l} pi_i``.  Every swapped score is then
    affine in ``pi_j`` and each argmin constraint ``s_z <= s_i`` becomes a
    bound on ``pi_j``; these are intersected with ``[0, R]``.


    Arguments:

        pi_row: One simplex row (entries ``j`` and ``l`` are ignored)

        logits_row: The categorical logits of that variable

        configs: The ``C`` swapped categories ``z^{m<->j}`` of that variable

        j: Reference column

        l: Column absorbing the remaining mass (``!= j``)


    Returns:

        The bounds ``(lo, hi)``.
    """
    pi_row = np.asarray(pi_row, dtype=float)
    logits_row = np.asarray(logits_row, dtype=float)
    configs = np.asarray(configs, dtype=np.int64)
    C = len(pi_row)
    j = _check_column(j, C, "reference column")
    l = _check_column(l, C, "redundant column")  # noqa: E741
    if l == j:
        raise ValueError("the redundant column must differ from the reference")
    if logits_row.shape != (C,) or configs.shape != (C,):
        raise ValueError("logits and configurations need one entry per column")

    held = [i for i in range(C) if i not in (j, l)]
    remaining = 1.0 - math.fsum(pi_row[held])
    offset = pi_row.copy()
    slope = np.zeros(C)
    offset[j], slope[j] = 0.0, 1.0
    offset[l], slope[l] = remaining, -1.0
    # common positive rescaling keeps the argmin and avoids overflow
    scale = np.exp(-(logits_row - logits_row.min()))

    lo, hi = 0.0, remaining
    for m in range(C):
        a = swap_columns(offset, m, j) * scale
        b = swap_columns(slope, m, j) * scale
        z = configs[m]
        for i in range(C):
            if i == z:
                continue
            # a_z + b_z t <= a_i + b_i t
            rate = b[z] - b[i]
            room = a[i] - a[z]
            if rate > 0:
                hi = min(hi, room / rate)
            elif rate < 0:
                lo = max(lo, room / rate)
            elif room < -INTERVAL_TOLERANCE:
                raise ValueError(
                    f"configuration {z} of swap {m} cannot be the argmin for "
                    f"any value of column {j}"
                )

    if hi < lo:
        if lo - hi > INTERVAL_TOLERANCE:
            raise ValueError(
                f"empty interval [{lo}, {hi}] for column {j}: the swapped "
                f"configurations are inconsistent with the held coordinates"
            )
        hi = lo
    return lo, hi


def ars_plus(
    pi: npt.ArrayLike,
    f: Objective,
    params: CategoricalParams,
    j: int,
    rng: np.random.Generator,
    l: int | None = None,  # noqa: E741
) -> EstimatorOutput:
    """Single-reference swap estimate with ``pi_j`` integrated out.

    The factor ``1 - C pi_{k,j}`` is evaluated at the midpoint of
    :py:func:`pi_conditional_interval` (``pi_j`` is uniform there), and
    variables whose swapped configurations all agree get zero.  ``l`` is
    drawn uniformly among the other columns unless given, and shared by all
    variables.
    """
    K, C = params.shape
    state = swap_configs(pi, params, j)
    if l is None:
        others = [i for i in range(C) if i != state.j]
        l = others[int(rng.integers(len(others)))]  # noqa: E741

    factor = np.zeros(K)
    for k in np.flatnonzero(~state.delta):
        lo, hi = pi_conditional_interval(
            state.pi[k], params.logits[k], state.configs[:, k], state.j, l
        )
        factor[k] = 1.0 - C * 0.5 * (lo + hi)

    counted = CountingObjective(f)
    values = _swap_values(state, counted)
    cat_grad = factor[:, None] * (values - values.mean())[None, :]
    return EstimatorOutput(
        grad=GradEstimate(cat_grad=cat_grad),
        f_evals=counted.evaluations,
        values=[float(values[state.j])],
        samples=[state.z],
    )
