# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Per-dimension couplings of categorical samples.

A coupling draws a pair ``(z, z~)`` whose marginals are both the
categorical distribution being differentiated.  The stick-breaking and tree
couplings share one uniform per binary variable between the two members of
the pair (``u`` and ``1 - u``), the independent coupling draws two
independent samples.  Joint tables are exact enumerations used by tests and
the verification suite.
"""

from __future__ import annotations

import collections
import dataclasses
import itertools
import logging

import numpy as np
import numpy.typing as npt
import scipy.special

from .dist import (
    ROW_SUM_TOLERANCE,
    BoolArray,
    FloatArray,
    IntArray,
    ProbTable,
    StickParams,
    TreeParams,
    as_bits,
    sample_categorical,
    sb_decode,
    tree_route,
)

logger = logging.getLogger(__name__)

MAX_JOINT_CATEGORIES = 16
"""Largest category count :py:func:`sb_coupling_joint` accepts."""


@dataclasses.dataclass(frozen=True)
class AntitheticPair:
    """Antithetic Bernoulli draws ``b = 1{u < p}`` and ``b~ = 1{1 - u < p}``."""

    b: IntArray
    b_tilde: IntArray
    u: FloatArray


@dataclasses.dataclass(frozen=True)
class CoupledCatPair:
    """A coupled pair of categorical configurations.

    Arguments:

        z: First configuration (original category labels)

        z_tilde: Second configuration (original category labels)

        weights: Per-dimension importance weights ``q(z_k) q(z~_k) /
            p(z_k, z~_k)`` where ``z_k != z~_k``, zero where the pair agrees
            and ``nan`` where the coupling cannot provide one

        bits: Underlying binary draws of ``z`` (``K x (C-1)``), if any

        bits_tilde: Underlying binary draws of ``z_tilde``, if any

        routing: Nodes consulted while decoding ``bits`` (tree couplings)

        routing_tilde: Nodes consulted while decoding ``bits_tilde``
    """

    z: IntArray
    z_tilde: IntArray
    weights: FloatArray
    bits: IntArray | None = None
    bits_tilde: IntArray | None = None
    routing: BoolArray | None = None
    routing_tilde: BoolArray | None = None

    def __post_init__(self) -> None:
        if not (self.z.shape == self.z_tilde.shape == self.weights.shape):
            raise ValueError(
                f"inconsistent pair shapes: {self.z.shape}, "
                f"{self.z_tilde.shape}, {self.weights.shape}"
            )


@dataclasses.dataclass(frozen=True)
class CouplingJoint:
    """Exact ``K x C x C`` joint table over ``(z_k, z~_k)``."""

    table: FloatArray

    def __post_init__(self) -> None:
        table = np.asarray(self.table, dtype=float)
        if table.ndim != 3 or table.shape[1] != table.shape[2]:
            raise ValueError(f"joint must be K x C x C, got {table.shape}")
        if np.any(table < 0):
            raise ValueError("joint has negative entries")
        deviation = np.max(np.abs(table.sum(axis=(1, 2)) - 1.0))
        if deviation > ROW_SUM_TOLERANCE:
            raise ValueError(
                f"joint tables must sum to one (max deviation {deviation:.3g})"
            )
        object.__setattr__(self, "table", table)

    def marginals(self) -> tuple[FloatArray, FloatArray]:
        """Marginal tables of ``z`` and ``z~``."""
        return self.table.sum(axis=2), self.table.sum(axis=1)


def antithetic_bernoulli(p: npt.ArrayLike, u: npt.ArrayLike) -> AntitheticPair:
    """Antithetic pair driven by the uniform ``u``.

    Arguments:

        p: Success probability (scalar or array), within ``[0, 1]``

        u: Uniform draw (same shape as ``p``), within ``[0, 1)``


    Returns:

        The pair of draws.
    """
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie within [0, 1]")
    if np.any(u < 0) or np.any(u >= 1):
        raise ValueError("uniform draws must lie within [0, 1)")
    return AntitheticPair(
        b=(u < p).astype(np.int64),
        b_tilde=((1.0 - u) < p).astype(np.int64),
        u=u,
    )


def _antithetic_cells(p: float) -> dict[tuple[int, int], float]:
    off = min(p, 1.0 - p)
    return {
        (0, 0): max(1.0 - 2.0 * p, 0.0),
        (0, 1): off,
        (1, 0): off,
        (1, 1): max(2.0 * p - 1.0, 0.0),
    }


def antithetic_joint_pmf(p: float) -> FloatArray:
    """Joint ``2 x 2`` table of an antithetic pair, indexed ``[b, b~]``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie within [0, 1], got {p}")
    table = np.zeros((2, 2))
    for (b, b_tilde), mass in _antithetic_cells(float(p)).items():
        table[b, b_tilde] = mass
    return table


def enumerate_antithetic_bits(
    probs: npt.ArrayLike,
) -> list[tuple[float, IntArray, IntArray]]:
    """Lists the antithetic bit-sequence pairs of one variable.

    Every binary variable ``i`` is paired independently, with firing
    probability ``probs[i]``.  Only outcomes of positive probability are
    returned, in lexicographic order.


    Arguments:

        probs: Firing probabilities of the ``C-1`` binary variables


    Returns:

        Tuples ``(probability, bits, bits_tilde)``.
    """
    per_position = []
    for p in np.asarray(probs, dtype=float):
        per_position.append(
            [
                (mass, cell)
                for cell, mass in sorted(_antithetic_cells(float(p)).items())
                if mass > 0
            ]
        )

    outcomes = []
    for combination in itertools.product(*per_position):
        mass = 1.0
        for factor, _ in combination:
            mass *= factor
        bits = np.array([cell[0] for _, cell in combination], dtype=np.int64)
        bits_tilde = np.array(
            [cell[1] for _, cell in combination], dtype=np.int64
        )
        outcomes.append((mass, bits, bits_tilde))
    return outcomes


def _check_ascending_row(stick: StickParams, k: int) -> bool:
    return bool(np.all(stick.probs[k] <= 0.5 + ROW_SUM_TOLERANCE))


def sb_importance_weight(
    stick: StickParams, k: int, z: int, z_tilde: int
) -> float:
    """Importance weight ``q(z) q(z~) / p(z, z~)`` of the stick coupling.

    With ascending sticks the weight is the product over the sticks before
    ``m = min(z, z~)`` of ``sigma(-a_i)^2 / (1 - 2 sigma(a_i))`` times
    ``sigma(-a_m)``.  Each denominator is at least one third.


    Arguments:

        stick: Ascending stick parameterization

        k: The variable

        z: Stick position of the first member of the pair

        z_tilde: Stick position of the second member (``!= z``)


    Returns:

        The (positive) weight.
    """
    if z == z_tilde:
        raise ValueError(
            "importance weights are only defined for z != z~ (the estimator "
            "term vanishes when both samples agree)"
        )
    if not _check_ascending_row(stick, k):
        raise ValueError(
            f"importance weights need ascending sticks, but variable {k} has "
            f"a stick firing with probability above one half"
        )
    m = min(z, z_tilde)
    fire = stick.probs[k, :m]
    miss = scipy.special.expit(-stick.logits[k])
    return float(np.prod(miss[:m] ** 2 / (1.0 - 2.0 * fire)) * miss[m])


def sb_coupling_from_bits(
    stick: StickParams, bits: npt.ArrayLike, bits_tilde: npt.ArrayLike
) -> CoupledCatPair:
    """Decodes a pair of stick-breaking bit tables into a coupled pair.

    Importance weights are attached for every variable whose sticks are
    ascending; other variables get ``nan`` wherever the pair disagrees.
    """
    K, C = stick.shape
    bits = as_bits(bits)
    bits_tilde = as_bits(bits_tilde)
    if bits.shape != (K, C - 1) or bits_tilde.shape != (K, C - 1):
        raise ValueError(
            f"bits must have shape {(K, C - 1)}, got {bits.shape} and "
            f"{bits_tilde.shape}"
        )
    position = sb_decode(bits)
    position_tilde = sb_decode(bits_tilde)
    weights = np.zeros(K)
    for k in np.flatnonzero(position != position_tilde):
        if _check_ascending_row(stick, k):
            weights[k] = sb_importance_weight(
                stick, k, int(position[k]), int(position_tilde[k])
            )
        else:
            logger.debug(f"No importance weight for non-ascending variable {k}")
            weights[k] = np.nan
    rows = np.arange(K)
    return CoupledCatPair(
        z=stick.perm[rows, position],
        z_tilde=stick.perm[rows, position_tilde],
        weights=weights,
        bits=bits,
        bits_tilde=bits_tilde,
    )


def sb_coupling_from_uniforms(
    stick: StickParams, u: npt.ArrayLike
) -> CoupledCatPair:
    """Stick coupling driven by one uniform per ``(variable, stick)``."""
    pair = antithetic_bernoulli(stick.probs, u)
    return sb_coupling_from_bits(stick, pair.b, pair.b_tilde)


def sb_coupling_sample(
    stick: StickParams, rng: np.random.Generator
) -> CoupledCatPair:
    """Draws a pair from the antithetic stick-breaking coupling."""
    K, C = stick.shape
    return sb_coupling_from_uniforms(stick, rng.random((K, C - 1)))


def sb_coupling_joint(stick: StickParams) -> CouplingJoint:
    """Exact joint of the stick-breaking coupling.

    Sticks are visited in order while tracking which member of the pair has
    already stopped, which sums the antithetic bit-pair outcomes without
    listing them one by one.
    """
    K, C = stick.shape
    if C > MAX_JOINT_CATEGORIES:
        raise ValueError(
            f"joint enumeration is limited to C <= {MAX_JOINT_CATEGORIES}, "
            f"got C = {C}"
        )
    table = np.zeros((K, C, C))
    for k in range(K):
        states: dict[tuple[int, int], float] = {(-1, -1): 1.0}
        for i, p in enumerate(stick.probs[k]):
            cells = _antithetic_cells(float(p))
            updated: dict[tuple[int, int], float] = collections.defaultdict(
                float
            )
            for (z, z_tilde), mass in states.items():
                for (b, b_tilde), cell in cells.items():
                    if cell == 0:
                        continue
                    next_z = i if (z < 0 and b == 1) else z
                    next_tilde = (
                        i if (z_tilde < 0 and b_tilde == 1) else z_tilde
                    )
                    updated[(next_z, next_tilde)] += mass * cell
            states = updated
        for (z, z_tilde), mass in states.items():
            z = C - 1 if z < 0 else z
            z_tilde = C - 1 if z_tilde < 0 else z_tilde
            table[k, stick.perm[k, z], stick.perm[k, z_tilde]] += mass
    return CouplingJoint(table)


def tree_coupling_from_bits(
    tree: TreeParams, bits: npt.ArrayLike, bits_tilde: npt.ArrayLike
) -> CoupledCatPair:
    """Routes a pair of tree bit tables into a coupled pair.

    The weights are zero: the tree estimator does not importance-weight.
    """
    K, C = tree.shape
    bits = as_bits(bits)
    bits_tilde = as_bits(bits_tilde)
    if bits.shape != (K, C - 1) or bits_tilde.shape != (K, C - 1):
        raise ValueError(
            f"bits must have shape {(K, C - 1)}, got {bits.shape} and "
            f"{bits_tilde.shape}"
        )
    leaf, routing = tree_route(bits)
    leaf_tilde, routing_tilde = tree_route(bits_tilde)
    rows = np.arange(K)
    return CoupledCatPair(
        z=tree.perm[rows, leaf],
        z_tilde=tree.perm[rows, leaf_tilde],
        weights=np.zeros(K),
        bits=bits,
        bits_tilde=bits_tilde,
        routing=routing,
        routing_tilde=routing_tilde,
    )


def tree_coupling_sample(
    tree: TreeParams, rng: np.random.Generator
) -> CoupledCatPair:
    """Draws a pair from the antithetic tree coupling."""
    K, C = tree.shape
    pair = antithetic_bernoulli(tree.probs, rng.random((K, C - 1)))
    return tree_coupling_from_bits(tree, pair.b, pair.b_tilde)


def tree_coupling_joint(tree: TreeParams) -> CouplingJoint:
    """Exact joint of the tree coupling.

    Within a sub-tree both members either take the same branch (and stay
    coupled) or split, after which they read disjoint nodes and become
    independent draws from the two halves.
    """
    K, C = tree.shape
    table = np.zeros((K, C, C))

    for k in range(K):
        probs = tree.probs[k]

        def subtree(node: int, size: int) -> tuple[FloatArray, FloatArray]:
            if size == 1:
                return np.ones((1, 1)), np.ones(1)
            half = size // 2
            joint_left, left = subtree(node + 1, half)
            joint_right, right = subtree(node + half, half)
            cells = _antithetic_cells(float(probs[node]))
            joint = np.zeros((size, size))
            joint[:half, :half] = cells[(0, 0)] * joint_left
            joint[half:, half:] = cells[(1, 1)] * joint_right
            joint[:half, half:] = cells[(0, 1)] * np.outer(left, right)
            joint[half:, :half] = cells[(1, 0)] * np.outer(right, left)
            marginal = np.concatenate(
                [(1.0 - probs[node]) * left, probs[node] * right]
            )
            return joint, marginal

        joint, _ = subtree(0, C)
        perm = tree.perm[k]
        table[k][np.ix_(perm, perm)] = joint
    return CouplingJoint(table)


def independent_coupling_sample(
    probs: ProbTable, rng: np.random.Generator
) -> CoupledCatPair:
    """Two independent draws; their importance weights are one."""
    z = sample_categorical(probs, rng)
    z_tilde = sample_categorical(probs, rng)
    return CoupledCatPair(
        z=z, z_tilde=z_tilde, weights=(z != z_tilde).astype(float)
    )


def independent_coupling_joint(probs: ProbTable) -> CouplingJoint:
    """Product coupling ``q x q`` of every variable."""
    return CouplingJoint(np.einsum("ki,kj->kij", probs.probs, probs.probs))


def support_check(joint: CouplingJoint) -> bool:
    """Whether every pair ``z_k != z~_k`` has positive probability."""
    C = joint.table.shape[1]
    off_diagonal = ~np.eye(C, dtype=bool)
    return bool(np.all(joint.table[:, off_diagonal] > 0))
