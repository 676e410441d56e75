# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Factorial categorical distributions and their binary parameterizations.

Every table in this module is a ``K x C`` array, one row per latent
variable.  Categories are numbered ``0..C-1``.  Two binary-sequence views of
a categorical row are supported:

* stick-breaking: ``C-1`` Bernoulli "sticks", the category being the first
  stick that fires (or ``C-1`` if none does);
* balanced tree: ``C-1`` internal nodes of a complete binary tree stored in
  pre-order (root, left sub-tree, right sub-tree), each node deciding
  between its left (bit 0) and right (bit 1) halves.

Both views come with vector-Jacobian products mapping gradients on their
logits back to categorical logits.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import typing

import numpy as np
import numpy.typing as npt
import scipy.special

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]

PROBABILITY_FLOOR = 1e-12
"""Entries below this value are clamped (and rows renormalized) before
stick-breaking or tree logits are built."""

ROW_SUM_TOLERANCE = 1e-12
"""Maximum deviation of a probability row sum from one."""

ORDERINGS = ("ascending", "descending", "default")
"""Category orderings supported by :py:func:`relabel`."""


@dataclasses.dataclass(frozen=True)
class CategoricalParams:
    """Logits of ``K`` independent categorical variables.

    Arguments:

        logits: A ``K x C`` table of finite log-odds, with ``K >= 1`` and
            ``C >= 2``.  The table is copied and frozen.
    """

    logits: FloatArray

    def __post_init__(self) -> None:
        logits = np.array(self.logits, dtype=float)
        if logits.ndim != 2:
            raise ValueError(
                f"logits must be a K x C table, got shape {logits.shape}"
            )
        if logits.shape[0] < 1 or logits.shape[1] < 2:
            raise ValueError(
                f"logits need K >= 1 and C >= 2, got shape {logits.shape}"
            )
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits contain non-finite entries")
        logits.flags.writeable = False
        object.__setattr__(self, "logits", logits)

    @property
    def shape(self) -> tuple[int, int]:
        """``(K, C)``"""
        return typing.cast(tuple[int, int], self.logits.shape)


@dataclasses.dataclass(frozen=True)
class ProbTable:
    """Row-stochastic ``K x C`` table of category probabilities."""

    probs: FloatArray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[1] < 2:
            raise ValueError(
                f"probabilities must be a K x C table (C >= 2), got shape "
                f"{probs.shape}"
            )
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValueError("probabilities must be finite and non-negative")
        deviation = np.max(np.abs(probs.sum(axis=1) - 1.0))
        if deviation > ROW_SUM_TOLERANCE:
            raise ValueError(
                f"probability rows must sum to one (max deviation "
                f"{deviation:.3g})"
            )
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def shape(self) -> tuple[int, int]:
        """``(K, C)``"""
        return typing.cast(tuple[int, int], self.probs.shape)


@dataclasses.dataclass(frozen=True)
class GradEstimate:
    """A gradient in categorical-logit space.

    Arguments:

        cat_grad: ``K x C`` gradient with respect to the categorical logits

        bin_grad: Optional ``K x (C-1)`` gradient with respect to the logits
            of the binary parameterization the estimate was produced in
            (stick-breaking or tree), before the chain rule was applied
    """

    cat_grad: FloatArray
    bin_grad: FloatArray | None = None

    def __post_init__(self) -> None:
        cat_grad = np.asarray(self.cat_grad, dtype=float)
        if cat_grad.ndim != 2:
            raise ValueError(
                f"categorical gradient must be K x C, got {cat_grad.shape}"
            )
        object.__setattr__(self, "cat_grad", cat_grad)
        if self.bin_grad is not None:
            bin_grad = np.asarray(self.bin_grad, dtype=float)
            expected = (cat_grad.shape[0], cat_grad.shape[1] - 1)
            if bin_grad.shape != expected:
                raise ValueError(
                    f"binary gradient must have shape {expected}, got "
                    f"{bin_grad.shape}"
                )
            object.__setattr__(self, "bin_grad", bin_grad)


@dataclasses.dataclass(frozen=True)
class StickParams:
    """Stick-breaking logits of a categorical table.

    Arguments:

        logits: ``K x (C-1)`` stick logits; stick ``i`` fires with probability
            ``q_i / sum(q_i..q_{C-1})`` of the relabeled table

        perm: ``K x C`` relabeling, ``perm[k, n]`` being the original category
            at stick position ``n``
    """

    logits: FloatArray
    perm: IntArray

    def __post_init__(self) -> None:
        logits = np.array(self.logits, dtype=float)
        perm = np.array(self.perm, dtype=np.int64)
        if logits.ndim != 2 or perm.shape != (
            logits.shape[0],
            logits.shape[1] + 1,
        ):
            raise ValueError(
                f"inconsistent stick shapes: logits {logits.shape}, "
                f"permutation {perm.shape}"
            )
        _check_permutation(perm)
        logits.flags.writeable = False
        perm.flags.writeable = False
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "perm", perm)

    @property
    def shape(self) -> tuple[int, int]:
        """``(K, C)``"""
        return typing.cast(tuple[int, int], self.perm.shape)

    @property
    def probs(self) -> FloatArray:
        """Firing probability of every stick."""
        return scipy.special.expit(self.logits)

    @property
    def is_ascending(self) -> bool:
        """Whether no stick fires with probability above one half."""
        return bool(np.all(self.probs <= 0.5 + ROW_SUM_TOLERANCE))


@dataclasses.dataclass(frozen=True)
class TreeParams:
    """Internal-node logits of a balanced binary tree over the categories.

    Arguments:

        logits: ``K x (C-1)`` node logits in pre-order; node ``n`` goes right
            with the probability mass of its right half over its own mass

        perm: ``K x C`` leaf relabeling (identity by default)
    """

    logits: FloatArray
    perm: IntArray

    def __post_init__(self) -> None:
        logits = np.array(self.logits, dtype=float)
        perm = np.array(self.perm, dtype=np.int64)
        if logits.ndim != 2 or perm.shape != (
            logits.shape[0],
            logits.shape[1] + 1,
        ):
            raise ValueError(
                f"inconsistent tree shapes: logits {logits.shape}, "
                f"permutation {perm.shape}"
            )
        _check_power_of_two(perm.shape[1])
        _check_permutation(perm)
        logits.flags.writeable = False
        perm.flags.writeable = False
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "perm", perm)

    @property
    def shape(self) -> tuple[int, int]:
        """``(K, C)``"""
        return typing.cast(tuple[int, int], self.perm.shape)

    @property
    def probs(self) -> FloatArray:
        """Probability of going right at every node."""
        return scipy.special.expit(self.logits)


def _check_permutation(perm: IntArray) -> None:
    expected = np.arange(perm.shape[1])
    if not np.all(np.sort(perm, axis=1) == expected):
        raise ValueError("relabeling is not a permutation in every row")


def _check_power_of_two(C: int) -> None:
    if C < 2 or (C & (C - 1)) != 0:
        raise ValueError(
            f"tree parameterization needs C to be a power of 2, got {C}"
        )


def identity_perm(K: int, C: int) -> IntArray:
    """Identity relabeling for ``K`` variables of ``C`` categories."""
    return np.tile(np.arange(C, dtype=np.int64), (K, 1))


def as_sample(z: npt.ArrayLike, shape: tuple[int, int]) -> IntArray:
    """Validates a categorical configuration against a ``(K, C)`` shape.

    Arguments:

        z: Length-``K`` sequence of categories

        shape: The ``(K, C)`` shape of the owning distribution


    Returns:

        The configuration as an integer array.
    """
    K, C = shape
    array = np.asarray(z)
    if array.shape != (K,):
        raise ValueError(f"sample must have shape ({K},), got {array.shape}")
    if not np.issubdtype(array.dtype, np.integer):
        if not np.all(np.equal(np.mod(array, 1), 0)):
            raise ValueError("sample entries must be integer categories")
    array = array.astype(np.int64)
    if np.any(array < 0) or np.any(array >= C):
        raise ValueError(f"sample entries must lie in [0, {C - 1}]")
    return array


def as_bits(bits: npt.ArrayLike) -> IntArray:
    """Validates a ``K x (C-1)`` binary table."""
    array = np.asarray(bits)
    if array.ndim != 2 or array.shape[1] < 1:
        raise ValueError(f"bits must be a K x (C-1) table, got {array.shape}")
    if not np.all((array == 0) | (array == 1)):
        raise ValueError("bit entries must be 0 or 1")
    return array.astype(np.int64)


def one_hot(z: IntArray, C: int) -> FloatArray:
    """One-hot encodes a configuration into a ``K x C`` table."""
    return np.eye(C)[np.asarray(z, dtype=np.int64)]


def softmax_probs(params: CategoricalParams) -> ProbTable:
    """Category probabilities of every variable (max-subtracted softmax)."""
    return ProbTable(scipy.special.softmax(params.logits, axis=1))


def log_probs(params: CategoricalParams) -> FloatArray:
    """Log-probabilities of every category."""
    return scipy.special.log_softmax(params.logits, axis=1)


def log_prob(params: CategoricalParams, z: npt.ArrayLike) -> float:
    """Log-probability of a full configuration."""
    z = as_sample(z, params.shape)
    return float(np.sum(log_probs(params)[np.arange(len(z)), z]))


def score_grad(params: CategoricalParams, z: npt.ArrayLike) -> GradEstimate:
    """Gradient of ``log q(z)`` with respect to the categorical logits.

    Row ``k`` is ``onehot(z_k) - softmax(logits_k)`` and sums to zero.
    """
    z = as_sample(z, params.shape)
    probs = softmax_probs(params).probs
    return GradEstimate(cat_grad=one_hot(z, params.shape[1]) - probs)


def inverse_cdf(probs: ProbTable, u: npt.ArrayLike) -> IntArray:
    """Inverse-CDF decoding of one uniform per variable.

    The category is the smallest ``c`` with ``cumsum(q)[c] > u``.
    """
    u = np.asarray(u, dtype=float)
    K, C = probs.shape
    if u.shape != (K,):
        raise ValueError(f"need one uniform per variable, got {u.shape}")
    cdf = np.cumsum(probs.probs, axis=1)
    z = np.sum(cdf <= u[:, None], axis=1)
    return np.minimum(z, C - 1).astype(np.int64)


def sample_categorical(
    probs: ProbTable, rng: np.random.Generator
) -> IntArray:
    """Draws one configuration by inverse-CDF sampling."""
    return inverse_cdf(probs, rng.random(probs.shape[0]))


def relabel(probs: ProbTable, ordering: str) -> tuple[IntArray, ProbTable]:
    """Reorders categories of every row.

    Arguments:

        probs: The table to relabel

        ordering: One of ``ascending`` (non-decreasing probabilities),
            ``descending`` (non-increasing probabilities) or ``default``
            (identity).  Sorts are stable, so ties keep their original order.


    Returns:

        The relabeling ``perm`` (``perm[k, n]`` is the original category now
        at position ``n``) and the relabeled table.
    """
    K, C = probs.shape
    if ordering == "ascending":
        perm = np.argsort(probs.probs, axis=1, kind="stable")
    elif ordering == "descending":
        perm = np.argsort(-probs.probs, axis=1, kind="stable")
    elif ordering == "default":
        perm = identity_perm(K, C)
    else:
        raise ValueError(
            f"unknown ordering `{ordering}' - choose from "
            f"{', '.join(ORDERINGS)}"
        )
    perm = perm.astype(np.int64)
    return perm, ProbTable(np.take_along_axis(probs.probs, perm, axis=1))


def ascending_relabel(probs: ProbTable) -> tuple[IntArray, ProbTable]:
    """Relabels every row in ascending order of probability."""
    return relabel(probs, "ascending")


def _clamp(probs: FloatArray) -> FloatArray:
    if np.any(probs < PROBABILITY_FLOOR):
        logger.debug(
            f"Clamping {int(np.sum(probs < PROBABILITY_FLOOR))} probabilities "
            f"to {PROBABILITY_FLOOR}"
        )
        probs = np.maximum(probs, PROBABILITY_FLOOR)
        probs = probs / probs.sum(axis=1, keepdims=True)
    return probs


def stick_logits(
    probs: ProbTable, perm: IntArray | None = None
) -> StickParams:
    """Stick-breaking logits of an (already relabeled) table.

    Stick ``i`` has logit ``log q_i - log sum(q_{i+1}..q_{C-1})``, the last
    category being reached when no stick fires.


    Arguments:

        probs: The table, in stick order

        perm: The relabeling that produced ``probs`` (identity if ``None``)


    Returns:

        The stick parameterization.
    """
    K, C = probs.shape
    p = _clamp(probs.probs)
    tail = np.cumsum(p[:, ::-1], axis=1)[:, ::-1]
    rest = tail[:, 1:]
    if np.any(rest <= 0):
        raise ValueError("zero tail mass while building stick logits")
    logits = np.log(p[:, :-1]) - np.log(rest)
    return StickParams(
        logits=logits, perm=identity_perm(K, C) if perm is None else perm
    )


def build_stick(probs: ProbTable, ordering: str = "ascending") -> StickParams:
    """Relabels ``probs`` with ``ordering`` and builds its sticks."""
    perm, relabeled = relabel(probs, ordering)
    return stick_logits(relabeled, perm)


def sb_decode(bits: npt.ArrayLike) -> IntArray:
    """Stick-breaking decoding: position of the first set bit per row.

    Rows with no set bit decode to the last position, ``C-1``.  Positions are
    in stick order (see :py:attr:`StickParams.perm`).
    """
    bits = as_bits(bits)
    terminal = np.ones((bits.shape[0], 1), dtype=bool)
    return np.argmax(
        np.concatenate([bits == 1, terminal], axis=1), axis=1
    ).astype(np.int64)


@functools.lru_cache(maxsize=None)
def tree_nodes(C: int) -> tuple[tuple[int, int, int], ...]:
    """Category ranges ``(lo, mid, hi)`` of every internal node, pre-order.

    The node covers categories ``lo..hi-1``; its left half is ``lo..mid-1``
    and its right half ``mid..hi-1``.
    """
    _check_power_of_two(C)
    nodes: list[tuple[int, int, int]] = []

    def visit(lo: int, hi: int) -> None:
        if hi - lo < 2:
            return
        mid = (lo + hi) // 2
        nodes.append((lo, mid, hi))
        visit(lo, mid)
        visit(mid, hi)

    visit(0, C)
    return tuple(nodes)


def tree_logits(probs: ProbTable, perm: IntArray | None = None) -> TreeParams:
    """Node logits ``log(mass(right) / mass(left))`` of a balanced tree.

    Arguments:

        probs: The table, in leaf order

        perm: The relabeling that produced ``probs`` (identity if ``None``)


    Returns:

        The tree parameterization.
    """
    K, C = probs.shape
    nodes = tree_nodes(C)
    p = _clamp(probs.probs)
    logits = np.empty((K, C - 1))
    for n, (lo, mid, hi) in enumerate(nodes):
        logits[:, n] = np.log(p[:, mid:hi].sum(axis=1)) - np.log(
            p[:, lo:mid].sum(axis=1)
        )
    return TreeParams(
        logits=logits, perm=identity_perm(K, C) if perm is None else perm
    )


def tree_route(bits: npt.ArrayLike) -> tuple[IntArray, BoolArray]:
    """Routes every row of ``bits`` from the root to a leaf.

    Returns:

        The leaf reached per row and a ``K x (C-1)`` mask of the nodes
        consulted on the way (``log2(C)`` per row).
    """
    bits = as_bits(bits)
    K, nodes = bits.shape
    C = nodes + 1
    _check_power_of_two(C)
    rows = np.arange(K)
    node = np.zeros(K, dtype=np.int64)
    leaf = np.zeros(K, dtype=np.int64)
    mask = np.zeros((K, nodes), dtype=bool)
    half = C // 2
    while half >= 1:
        mask[rows, node] = True
        right = bits[rows, node] == 1
        leaf = np.where(right, leaf + half, leaf)
        node = np.where(right, node + half, node + 1)
        half //= 2
    return leaf, mask


def tree_decode(bits: npt.ArrayLike) -> IntArray:
    """Leaf reached by every row of routing bits."""
    return tree_route(bits)[0]


def routing_set(bits: npt.ArrayLike) -> list[frozenset[int]]:
    """Indices of the nodes consulted while decoding every row."""
    _, mask = tree_route(bits)
    return [frozenset(int(n) for n in np.flatnonzero(row)) for row in mask]


def _check_bin_grad(bin_grad: npt.ArrayLike, K: int, C: int) -> FloatArray:
    g = np.asarray(bin_grad, dtype=float)
    if g.shape != (K, C - 1):
        raise ValueError(
            f"binary gradient must have shape {(K, C - 1)}, got {g.shape}"
        )
    if not np.all(np.isfinite(g)):
        raise ValueError("binary gradient contains non-finite entries")
    return g


def _unpermute(grad: FloatArray, perm: IntArray | None) -> FloatArray:
    if perm is None:
        return grad
    out = np.empty_like(grad)
    np.put_along_axis(out, np.asarray(perm, dtype=np.int64), grad, axis=1)
    return out


def _permute(logits: FloatArray, perm: IntArray | None) -> FloatArray:
    if perm is None:
        return logits
    return np.take_along_axis(logits, np.asarray(perm, dtype=np.int64), axis=1)


def sb_vjp(
    params: CategoricalParams,
    bin_grad: npt.ArrayLike,
    perm: IntArray | None = None,
) -> GradEstimate:
    """Pulls a stick-logit gradient back to the categorical logits.

    Stick ``i`` of the relabeled logits ``a`` is ``a_i - logsumexp(a_{i+1:})``,
    so its gradient row is ``e_i - softmax(a_{i+1:})`` on the trailing
    positions.  The probability floor of :py:func:`stick_logits` is not
    differentiated.


    Arguments:

        params: The categorical logits the sticks were built from

        bin_grad: ``K x (C-1)`` gradient on the stick logits

        perm: The relabeling used to build the sticks


    Returns:

        The categorical gradient, with ``bin_grad`` attached.
    """
    K, C = params.shape
    g = _check_bin_grad(bin_grad, K, C)
    a = _permute(params.logits, perm)
    grad = np.zeros((K, C))
    grad[:, :-1] += g
    for i in range(C - 1):
        tail = scipy.special.softmax(a[:, i + 1 :], axis=1)
        grad[:, i + 1 :] -= g[:, i : i + 1] * tail
    return GradEstimate(cat_grad=_unpermute(grad, perm), bin_grad=g)


def tree_vjp(
    params: CategoricalParams,
    bin_grad: npt.ArrayLike,
    perm: IntArray | None = None,
) -> GradEstimate:
    """Pulls a tree-logit gradient back to the categorical logits.

    Node logits are ``logsumexp(a_right) - logsumexp(a_left)``, whose
    gradient is the softmax of each half with opposite signs.
    """
    K, C = params.shape
    _check_power_of_two(C)
    g = _check_bin_grad(bin_grad, K, C)
    a = _permute(params.logits, perm)
    grad = np.zeros((K, C))
    for n, (lo, mid, hi) in enumerate(tree_nodes(C)):
        weight = g[:, n : n + 1]
        grad[:, mid:hi] += weight * scipy.special.softmax(a[:, mid:hi], axis=1)
        grad[:, lo:mid] -= weight * scipy.special.softmax(a[:, lo:mid], axis=1)
    return GradEstimate(cat_grad=_unpermute(grad, perm), bin_grad=g)
