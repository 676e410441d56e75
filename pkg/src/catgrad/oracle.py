# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Ground truth for the gradient estimators.

Exact gradients and exact estimator expectations are obtained by
enumeration, with compensated summation (:py:func:`math.fsum`).  Estimators
with continuous randomness are checked statistically, and the conditional
interval of the swap estimators against a rejection sampler.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
import math
import typing

import numpy as np
import numpy.typing as npt
import scipy.special
import scipy.stats

from .ars import (
    ars,
    ars_plus,
    arsm,
    arsm_plus,
    sample_dirichlet_uniform,
    swap_columns,
    swap_configs,
)
from .couplings import (
    AntitheticPair,
    CoupledCatPair,
    _antithetic_cells,
    enumerate_antithetic_bits,
    sb_coupling_from_bits,
)
from .dist import (
    CategoricalParams,
    FloatArray,
    GradEstimate,
    IntArray,
    ProbTable,
    ascending_relabel,
    build_stick,
    sb_decode,
    sb_vjp,
    softmax_probs,
    stick_logits,
    tree_decode,
    tree_logits,
    tree_vjp,
)
from .estimators import (
    CountingObjective,
    EstimatorOutput,
    Objective,
    disarm_binary,
    disarm_iw,
    disarm_sb,
    disarm_tree,
    reinforce,
    rloo,
)
from .registry import (
    ESTIMATORS,
    SWAP_ESTIMATORS,
    EstimatorFn,
    make_estimator,
    rloo_sample_count,
)

logger = logging.getLogger(__name__)

MAX_CONFIGURATIONS = 10**6
"""Largest ``C^K`` enumerated by :py:func:`exact_objective_grad`."""

MAX_ENUMERATION = 10**7
"""Largest number of estimator evaluations of an exact expectation."""

PROBABILITY_TOLERANCE = 1e-10
"""Allowed deviation from one of the enumerated probabilities."""

MIN_ACCEPTANCE = 1e-5
"""Rejection sampling gives up below this acceptance rate."""

FD_MAPS = ("linear", "stick", "tree", "objective")
"""Maps known to :py:func:`finite_diff_check`."""

BOOTSTRAP_CORRECTIONS = ("none", "holm")
"""Multiplicity corrections of the paired bootstrap comparisons."""


@dataclasses.dataclass(frozen=True)
class OracleReport:
    """Outcome of one oracle comparison.

    Arguments:

        estimator: Name of the estimator (or map) checked

        K: Number of variables of the instance

        C: Number of categories of the instance

        seed: Seed the instance was generated from, if any

        errors: Absolute errors (or absolute z-scores) per coordinate

        threshold: Largest error still passing

        statistic: What ``errors`` contains (``abs-error``, ``z-score``,
            ``relative-error`` ...)
    """

    estimator: str
    K: int
    C: int
    seed: int | None
    errors: tuple[float, ...]
    threshold: float
    statistic: str = "abs-error"

    @property
    def max_error(self) -> float:
        """Largest recorded error (``nan`` propagates)."""
        if not self.errors:
            return 0.0
        values = np.abs(np.asarray(self.errors, dtype=float))
        return float(np.nan if np.any(np.isnan(values)) else values.max())

    @property
    def passed(self) -> bool:
        """Whether every error is within the threshold."""
        return bool(self.max_error <= self.threshold)

    def to_dict(self) -> dict[str, typing.Any]:
        """JSON-serializable summary."""
        return dict(
            estimator=self.estimator,
            K=self.K,
            C=self.C,
            seed=self.seed,
            statistic=self.statistic,
            max_error=self.max_error,
            threshold=self.threshold,
            passed=self.passed,
        )


@dataclasses.dataclass(frozen=True)
class MonteCarloReport:
    """Monte Carlo mean of an estimator against the exact gradient."""

    mean: FloatArray
    stderr: FloatArray
    z_scores: FloatArray
    draws: int


@dataclasses.dataclass(frozen=True)
class RejectionReport:
    """Rejection-sampled conditional mean of ``pi_j``."""

    mean: float
    halfwidth: float
    accepted: int
    proposals: int

    def covers(self, value: float) -> bool:
        """Whether ``value`` lies within the confidence interval."""
        return abs(value - self.mean) <= self.halfwidth


def _guard(size: int, limit: int, what: str) -> None:
    if size > limit:
        raise ValueError(
            f"{what} needs {size} evaluations, above the limit of {limit}"
        )


def all_configurations(K: int, C: int) -> IntArray:
    """Every configuration of ``K`` variables, in lexicographic order."""
    _guard(C**K, MAX_CONFIGURATIONS, "configuration enumeration")
    return np.array(
        list(itertools.product(range(C), repeat=K)), dtype=np.int64
    ).reshape(-1, K)


def objective_table(f: Objective, K: int, C: int) -> FloatArray:
    """Dense ``C x ... x C`` table of an objective."""
    configurations = all_configurations(K, C)
    values = np.array([float(f(z)) for z in configurations])
    return values.reshape((C,) * K)


def _fsum_rows(terms: typing.Sequence[FloatArray], shape: tuple) -> FloatArray:
    if not terms:
        return np.zeros(shape)
    stacked = np.stack(terms).reshape(len(terms), -1)
    return np.array([math.fsum(column) for column in stacked.T]).reshape(shape)


def exact_objective_grad(
    params: CategoricalParams, f: Objective
) -> GradEstimate:
    """Exact gradient of ``E_q[f]`` with respect to the logits.

    ``grad[k, c] = sum_z q(z) f(z) (1{z_k = c} - q_{k,c})``, enumerated over
    all ``C^K`` configurations.
    """
    K, C = params.shape
    probs = softmax_probs(params).probs
    configurations = all_configurations(K, C)
    mass = np.prod(probs[np.arange(K)[None, :], configurations], axis=1)
    weighted = mass * np.array([float(f(z)) for z in configurations])
    total = math.fsum(weighted)
    grad = np.empty((K, C))
    for k in range(K):
        for c in range(C):
            grad[k, c] = (
                math.fsum(weighted[configurations[:, k] == c])
                - probs[k, c] * total
            )
    return GradEstimate(cat_grad=grad)


def expected_objective(params: CategoricalParams, f: Objective) -> float:
    """Exact ``E_q[f]`` by enumeration."""
    K, C = params.shape
    probs = softmax_probs(params).probs
    configurations = all_configurations(K, C)
    mass = np.prod(probs[np.arange(K)[None, :], configurations], axis=1)
    return math.fsum(
        mass * np.array([float(f(z)) for z in configurations])
    )


class _Scheme:
    """Finite randomness of an estimator, factorized over the variables.

    Every variable owns a list of outcomes (with probabilities).  An outcome
    places one category in each of the estimator's ``slots`` (the samples
    the objective is evaluated at).
    """

    slots: int = 1

    def __init__(self, params: CategoricalParams):
        self.params = params
        self.K, self.C = params.shape
        self.probs = softmax_probs(params).probs

    def outcomes(self, k: int) -> list[tuple[float, typing.Any]]:
        raise NotImplementedError

    def reference(self, k: int) -> typing.Any:
        """An outcome whose slots hold pairwise distinct categories."""
        raise NotImplementedError

    def categories(self, k: int, state: typing.Any) -> tuple[int, ...]:
        raise NotImplementedError

    def run(self, states: list[typing.Any], f: Objective) -> EstimatorOutput:
        raise NotImplementedError


class _Reinforce(_Scheme):
    def outcomes(self, k):
        return [(float(p), c) for c, p in enumerate(self.probs[k]) if p > 0]

    def reference(self, k):
        return 0

    def categories(self, k, state):
        return (state,)

    def run(self, states, f):
        return reinforce(self.params, np.array(states, dtype=np.int64), f)


class _LeaveOneOut(_Scheme):
    def __init__(self, params: CategoricalParams, n: int):
        super().__init__(params)
        self.slots = n

    def outcomes(self, k):
        result = []
        for state in itertools.product(range(self.C), repeat=self.slots):
            mass = math.prod(float(self.probs[k, c]) for c in state)
            if mass > 0:
                result.append((mass, state))
        return result

    def reference(self, k):
        return tuple(i % self.C for i in range(self.slots))

    def categories(self, k, state):
        return state

    def run(self, states, f):
        samples = [
            np.array([state[i] for state in states], dtype=np.int64)
            for i in range(self.slots)
        ]
        return rloo(self.params, samples, f)


class _Binary(_Scheme):
    slots = 2

    def __init__(self, params: CategoricalParams):
        super().__init__(params)
        if self.C != 2:
            raise ValueError(
                f"binary disarm needs two categories per variable, got {self.C}"
            )
        self.logits = params.logits[:, 0] - params.logits[:, 1]

    def outcomes(self, k):
        cells = _antithetic_cells(float(scipy.special.expit(self.logits[k])))
        return [
            (mass, cell) for cell, mass in sorted(cells.items()) if mass > 0
        ]

    def reference(self, k):
        return (1, 0)

    def categories(self, k, state):
        return (1 - state[0], 1 - state[1])

    def run(self, states, f):
        pair = AntitheticPair(
            b=np.array([s[0] for s in states], dtype=np.int64),
            b_tilde=np.array([s[1] for s in states], dtype=np.int64),
            u=np.zeros(self.K),
        )
        return disarm_binary(self.logits, pair, lambda b: f(1 - b))


class _BitPairs(_Scheme):
    """Antithetic bit-table pairs of a stick or tree parameterization.

    Bit pairs decoding to the same pair of categories are merged (keeping
    the first one): the estimators only read the bits consulted while
    decoding, and those are fixed by the decoded categories.
    """

    slots = 2

    def __init__(self, params, binary, decode):
        super().__init__(params)
        self.binary = binary
        self.decode = decode

    def outcomes(self, k):
        masses: dict[tuple[int, ...], list[float]] = {}
        states: dict[tuple[int, ...], tuple] = {}
        for mass, bits, bits_tilde in enumerate_antithetic_bits(
            self.binary.probs[k]
        ):
            key = self.categories(k, (bits, bits_tilde))
            masses.setdefault(key, []).append(mass)
            states.setdefault(key, (bits, bits_tilde))
        return [(math.fsum(masses[key]), states[key]) for key in states]

    def categories(self, k, state):
        bits, bits_tilde = state
        return (
            int(self.binary.perm[k, self.decode(bits[None, :])[0]]),
            int(self.binary.perm[k, self.decode(bits_tilde[None, :])[0]]),
        )

    def tables(self, states):
        return (
            np.stack([state[0] for state in states]),
            np.stack([state[1] for state in states]),
        )


class _Stick(_BitPairs):
    def __init__(self, params, ordering, weighted):
        stick = build_stick(softmax_probs(params), ordering)
        if weighted and not stick.is_ascending:
            raise ValueError("importance weighting needs ascending sticks")
        super().__init__(params, stick, sb_decode)
        self.weighted = weighted

    def reference(self, k):
        first = np.zeros(self.C - 1, dtype=np.int64)
        first[0] = 1
        return (first, np.zeros(self.C - 1, dtype=np.int64))

    def run(self, states, f):
        bits, bits_tilde = self.tables(states)
        if self.weighted:
            pair = sb_coupling_from_bits(self.binary, bits, bits_tilde)
            return disarm_iw(self.params, pair, f)
        return disarm_sb(self.params, self.binary, bits, bits_tilde, f)


class _Tree(_BitPairs):
    def __init__(self, params):
        tree = tree_logits(softmax_probs(params))
        super().__init__(params, tree, tree_decode)

    def reference(self, k):
        return (
            np.zeros(self.C - 1, dtype=np.int64),
            np.ones(self.C - 1, dtype=np.int64),
        )

    def run(self, states, f):
        bits, bits_tilde = self.tables(states)
        return disarm_tree(self.params, self.binary, bits, bits_tilde, f)


class _Independent(_Scheme):
    slots = 2

    def outcomes(self, k):
        return [
            (float(self.probs[k, a] * self.probs[k, b]), (a, b))
            for a in range(self.C)
            for b in range(self.C)
            if self.probs[k, a] * self.probs[k, b] > 0
        ]

    def reference(self, k):
        return (0, 1)

    def categories(self, k, state):
        return state

    def run(self, states, f):
        z = np.array([s[0] for s in states], dtype=np.int64)
        z_tilde = np.array([s[1] for s in states], dtype=np.int64)
        pair = CoupledCatPair(
            z=z, z_tilde=z_tilde, weights=(z != z_tilde).astype(float)
        )
        return disarm_iw(self.params, pair, f)


def _scheme(
    name: str,
    params: CategoricalParams,
    ordering: str,
    rloo_samples: int,
    coupling: str,
) -> _Scheme:
    if name not in ESTIMATORS:
        raise ValueError(f"unknown estimator `{name}'")
    if name in SWAP_ESTIMATORS:
        raise ValueError(
            f"`{name}' has continuous randomness and cannot be enumerated - "
            f"use mc_estimator_mean() instead"
        )
    if name == "reinforce":
        return _Reinforce(params)
    if name.startswith("rloo"):
        n = rloo_sample_count(name, params.shape[1], rloo_samples)
        if n < 2:
            raise ValueError(f"rloo needs at least 2 samples, got {n}")
        return _LeaveOneOut(params, n)
    if name == "disarm":
        return _Binary(params)
    if name == "disarm-iw":
        if coupling == "independent":
            return _Independent(params)
        return _Stick(params, "ascending", weighted=True)
    if name == "disarm-sb":
        return _Stick(params, ordering, weighted=False)
    return _Tree(params)


def _outcome_lists(scheme: _Scheme) -> list[list[tuple[float, typing.Any]]]:
    outcomes = [scheme.outcomes(k) for k in range(scheme.K)]
    for k, rows in enumerate(outcomes):
        total = math.fsum(mass for mass, _ in rows)
        if abs(total - 1.0) > PROBABILITY_TOLERANCE:
            raise RuntimeError(
                f"outcome probabilities of variable {k} sum to {total!r}"
            )
    return outcomes


def _indicator(configuration: tuple[int, ...]) -> Objective:
    return lambda z: 1.0 if tuple(int(c) for c in z) == configuration else 0.0


def _others_expectation(
    table: FloatArray, marginals: FloatArray, k: int
) -> FloatArray:
    """Expects ``table`` over every variable but ``k`` (axis-wise)."""
    result = table
    for j in reversed(range(table.ndim)):
        if j != k:
            result = np.tensordot(result, marginals[j], axes=([j], [0]))
    return result


def _factorized_expectation(scheme: _Scheme, f: Objective) -> FloatArray:
    """Exact expectation, one variable's randomness at a time.

    Component ``k`` depends on the other variables only through the objective
    values at the slots, linearly.  Probing the estimator with indicator
    objectives recovers the coefficient of every slot, which is then
    contracted with the exact slot marginals of the other variables.
    """
    K, C = scheme.K, scheme.C
    outcomes = _outcome_lists(scheme)
    _guard(
        sum(len(rows) for rows in outcomes) * scheme.slots,
        MAX_ENUMERATION,
        "exact estimator expectation",
    )
    table = objective_table(f, K, C)

    marginals = np.zeros((scheme.slots, K, C))
    for k, rows in enumerate(outcomes):
        for mass, state in rows:
            for slot, c in enumerate(scheme.categories(k, state)):
                marginals[slot, k, c] += mass

    references = [scheme.reference(k) for k in range(K)]
    grad = np.zeros((K, C))
    for k in range(K):
        conditional = [
            _others_expectation(table, marginals[slot], k)
            for slot in range(scheme.slots)
        ]
        terms = []
        for mass, state in outcomes[k]:
            states = list(references)
            states[k] = state
            per_variable = [
                scheme.categories(j, states[j]) for j in range(K)
            ]
            groups: dict[tuple[int, ...], int] = {}
            for slot in range(scheme.slots):
                configuration = tuple(cats[slot] for cats in per_variable)
                groups.setdefault(configuration, slot)
            row = np.zeros(C)
            for configuration, slot in groups.items():
                output = scheme.run(states, _indicator(configuration))
                row += (
                    output.grad.cat_grad[k]
                    * conditional[slot][configuration[k]]
                )
            terms.append(mass * row)
        grad[k] = _fsum_rows(terms, (C,))
    return grad


def _full_expectation(scheme: _Scheme, f: Objective) -> FloatArray:
    """Exact expectation over the full product of outcomes."""
    outcomes = _outcome_lists(scheme)
    _guard(
        math.prod(len(rows) for rows in outcomes),
        MAX_ENUMERATION,
        "exact estimator expectation",
    )
    counted = CountingObjective(f)
    terms = []
    for combination in itertools.product(*outcomes):
        mass = math.prod(m for m, _ in combination)
        states = [state for _, state in combination]
        terms.append(mass * scheme.run(states, counted).grad.cat_grad)
    return _fsum_rows(terms, (scheme.K, scheme.C))


def exact_estimator_expectation(
    estimator: str,
    params: CategoricalParams,
    f: Objective,
    ordering: str = "ascending",
    rloo_samples: int = 2,
    coupling: str = "stick",
    method: str = "factorized",
) -> GradEstimate:
    """Exact expectation of an estimator with finite randomness.

    Arguments:

        estimator: Estimator name (one of the finite estimators of
            :py:mod:`catgrad.registry`)

        params: The categorical logits

        f: The objective

        ordering: Stick ordering of ``disarm-sb``

        rloo_samples: Sample count of ``rloo``

        coupling: Coupling of ``disarm-iw``

        method: ``factorized`` (per-variable enumeration) or ``full``
            (product of all variables' outcomes, small instances only)


    Returns:

        The expected gradient.
    """
    scheme = _scheme(estimator, params, ordering, rloo_samples, coupling)
    if method == "factorized":
        grad = _factorized_expectation(scheme, f)
    elif method == "full":
        grad = _full_expectation(scheme, f)
    else:
        raise ValueError(f"unknown enumeration method `{method}'")
    return GradEstimate(cat_grad=grad)


def compare_exact(
    estimator: str,
    params: CategoricalParams,
    f: Objective,
    seed: int | None = None,
    threshold: float = 1e-9,
    **options: typing.Any,
) -> OracleReport:
    """Compares an exact estimator expectation with the exact gradient."""
    expected = exact_objective_grad(params, f).cat_grad
    got = exact_estimator_expectation(estimator, params, f, **options).cat_grad
    K, C = params.shape
    return OracleReport(
        estimator=estimator,
        K=K,
        C=C,
        seed=seed,
        errors=tuple(np.abs(got - expected).ravel().tolist()),
        threshold=threshold,
    )


def mc_estimator_mean(
    estimator: str | EstimatorFn,
    params: CategoricalParams,
    f: Objective,
    N: int,
    rng: np.random.Generator,
    oracle: GradEstimate | None = None,
    **options: typing.Any,
) -> MonteCarloReport:
    """Monte Carlo mean of an estimator and its z-scores.

    Arguments:

        estimator: Registered name, or a callable ``(params, f, rng) ->
            EstimatorOutput``

        params: The categorical logits

        f: The objective

        N: Number of draws (at least 1000)

        rng: Random stream

        oracle: Reference gradient (exact gradient if ``None``)

        options: Forwarded to :py:func:`catgrad.registry.make_estimator`


    Returns:

        Per-coordinate mean, standard error and z-score.
    """
    if N < 1000:
        raise ValueError(f"Monte Carlo checks need N >= 1000, got {N}")
    fn = (
        make_estimator(estimator, **options)
        if isinstance(estimator, str)
        else estimator
    )
    draws = np.stack([fn(params, f, rng).grad.cat_grad for _ in range(N)])
    mean = draws.mean(axis=0)
    stderr = draws.std(axis=0, ddof=1) / math.sqrt(N)
    expected = (
        exact_objective_grad(params, f) if oracle is None else oracle
    ).cat_grad
    difference = mean - expected
    with np.errstate(divide="ignore", invalid="ignore"):
        z_scores = np.where(
            stderr > 0,
            difference / stderr,
            np.where(np.abs(difference) <= 1e-12, 0.0, np.inf),
        )
    return MonteCarloReport(
        mean=mean, stderr=stderr, z_scores=z_scores, draws=N
    )


def paired_swap_draws(
    params: CategoricalParams,
    f: Objective,
    N: int,
    rng: np.random.Generator,
) -> dict[str, FloatArray]:
    """Draws the four swap estimators on shared simplex draws.

    ``ars`` and ``ars+`` also share their reference column.


    Returns:

        A ``N x K x C`` array of estimates per estimator name.
    """
    K, C = params.shape
    draws: dict[str, list[FloatArray]] = {
        "ars": [],
        "ars+": [],
        "arsm": [],
        "arsm+": [],
    }
    for _ in range(N):
        pi = sample_dirichlet_uniform(rng, K, C)
        j = int(rng.integers(C))
        state = swap_configs(pi, params, j)
        draws["ars"].append(ars(state, f, params).grad.cat_grad)
        draws["ars+"].append(ars_plus(pi, f, params, j, rng).grad.cat_grad)
        draws["arsm"].append(arsm(pi, f, params).grad.cat_grad)
        draws["arsm+"].append(arsm_plus(pi, f, params).grad.cat_grad)
    return {name: np.stack(values) for name, values in draws.items()}


def _holm(pvalues: FloatArray, alpha: float) -> npt.NDArray[np.bool_]:
    """Holm step-down rejections at family-wise error ``alpha``."""
    m = len(pvalues)
    rejected = np.zeros(m, dtype=bool)
    for i, index in enumerate(np.argsort(pvalues, kind="stable")):
        if pvalues[index] > alpha / (m - i):
            break
        rejected[index] = True
    return rejected


def _paired_bootstrap(
    a: npt.ArrayLike,
    b: npt.ArrayLike,
    rng: np.random.Generator,
    statistic: typing.Callable[[FloatArray], FloatArray],
    resamples: int,
    level: float,
    correction: str,
) -> npt.NDArray[np.bool_]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.shape[0] < 2:
        raise ValueError(
            f"need paired draws of identical shapes, got {a.shape}, {b.shape}"
        )
    if not 0 < level < 1 or resamples < 1:
        raise ValueError("need a level in (0, 1) and at least one resample")
    if correction not in BOOTSTRAP_CORRECTIONS:
        raise ValueError(
            f"unknown correction `{correction}' - choose from "
            f"{', '.join(BOOTSTRAP_CORRECTIONS)}"
        )
    N = a.shape[0]
    flat_a = a.reshape(N, -1)
    flat_b = b.reshape(N, -1)
    differences = np.empty((resamples, flat_a.shape[1]))
    for r in range(resamples):
        index = rng.integers(N, size=N)
        differences[r] = statistic(flat_a[index]) - statistic(flat_b[index])

    if correction == "none":
        lower = np.quantile(differences, 1.0 - level, axis=0)
        return (lower <= 0).reshape(a.shape[1:])

    # resampled tails cannot resolve p-values below 1 / resamples, so the
    # corrected test uses the normal approximation of the bootstrap
    observed = statistic(flat_a) - statistic(flat_b)
    spread = differences.std(axis=0, ddof=1)
    pvalues = np.where(observed > 0, 0.0, 1.0)
    scaled = spread > 0
    pvalues[scaled] = scipy.stats.norm.sf(observed[scaled] / spread[scaled])
    return ~_holm(pvalues, 1.0 - level).reshape(a.shape[1:])


def bootstrap_variance_le(
    a: npt.ArrayLike,
    b: npt.ArrayLike,
    rng: np.random.Generator,
    resamples: int = 1000,
    level: float = 0.95,
    correction: str = "none",
) -> npt.NDArray[np.bool_]:
    """One-sided paired bootstrap of ``Var(a) <= Var(b)``.

    Draws are resampled in pairs (the first axis indexes draws).  Without
    correction, a coordinate fails when the lower ``level`` bound of
    ``Var(a) - Var(b)`` is positive.  With ``correction="holm"``, the
    coordinates are tested jointly: one-sided p-values come from the normal
    approximation of the bootstrap distribution and are rejected by Holm's
    step-down procedure, keeping the chance of any false failure below
    ``1 - level``.


    Returns:

        Per-coordinate pass flags (shape of one draw).
    """
    return _paired_bootstrap(
        a,
        b,
        rng,
        lambda x: x.var(axis=0, ddof=1),
        resamples,
        level,
        correction,
    )


def bootstrap_mean_le(
    a: npt.ArrayLike,
    b: npt.ArrayLike,
    rng: np.random.Generator,
    resamples: int = 1000,
    level: float = 0.95,
    correction: str = "none",
) -> npt.NDArray[np.bool_]:
    """One-sided paired bootstrap of ``E[a] <= E[b]``."""
    return _paired_bootstrap(
        a, b, rng, lambda x: x.mean(axis=0), resamples, level, correction
    )


def rejection_conditional_mean(
    logits_row: npt.ArrayLike,
    configs: npt.ArrayLike,
    pi_row: npt.ArrayLike,
    j: int,
    l: int,  # noqa: E741
    N: int,
    rng: np.random.Generator,
    band: float = 2e-3,
    batch: int = 100_000,
    level: float = 0.99,
) -> RejectionReport:
    """Conditional mean of ``pi_j`` by rejection sampling.

    Uniform simplex rows are accepted when every coordinate other than ``j``
    and ``l`` lies within ``band`` of ``pi_row`` and every swapped
    configuration matches ``configs`` exactly.  With held coordinates, the
    reported mean is the intercept of a linear regression of ``pi_j`` on the
    offsets of the held coordinates from ``pi_row``, which removes the
    first-order bias of the band.


    Arguments:

        logits_row: Categorical logits of the variable

        configs: The ``C`` swapped categories to reproduce

        pi_row: Simplex row holding the conditioning coordinates

        j: Reference column

        l: Column absorbing the remaining mass

        N: Number of accepted samples to collect

        rng: Random stream

        band: Half-width of the conditioning band

        batch: Proposals drawn per round

        level: Confidence level of the reported interval


    Returns:

        The conditional mean estimate and its confidence half-width.
    """
    logits_row = np.asarray(logits_row, dtype=float)
    configs = np.asarray(configs, dtype=np.int64)
    pi_row = np.asarray(pi_row, dtype=float)
    C = len(logits_row)
    if l == j:
        raise ValueError("the redundant column must differ from the reference")
    held = [i for i in range(C) if i not in (j, l)]
    target = pi_row[held]

    accepted: list[FloatArray] = []
    offsets: list[FloatArray] = []
    count = 0
    proposals = 0
    while count < N:
        pi = sample_dirichlet_uniform(rng, batch, C)
        proposals += batch
        candidates = pi[np.all(np.abs(pi[:, held] - target) <= band, axis=1)]
        if len(candidates):
            with np.errstate(divide="ignore"):
                log_pi = np.log(candidates)
            match = np.ones(len(candidates), dtype=bool)
            for m in range(C):
                swapped = swap_columns(log_pi, m, j) - logits_row
                match &= np.argmin(swapped, axis=1) == configs[m]
            accepted.append(candidates[match, j])
            offsets.append(candidates[match][:, held] - target)
            count += int(match.sum())
        if proposals >= 10 * batch and count / proposals < MIN_ACCEPTANCE:
            raise RuntimeError(
                f"rejection sampling accepted {count} of {proposals} "
                f"proposals (rate {count / proposals:.2e} < "
                f"{MIN_ACCEPTANCE:.0e}) for C={C}, j={j}, l={l}, band={band}"
            )

    values = np.concatenate(accepted)
    quantile = scipy.stats.norm.ppf(0.5 + level / 2)
    design = np.hstack([np.ones((len(values), 1)), np.concatenate(offsets)])
    if design.shape[1] == 1 or len(values) <= 2 * design.shape[1]:
        mean = float(values.mean())
        stderr = values.std(ddof=1) / math.sqrt(len(values))
    else:
        coef, _, rank, _ = np.linalg.lstsq(design, values, rcond=None)
        if rank < design.shape[1]:
            raise RuntimeError(
                f"accepted samples do not span the band for C={C}, j={j}, "
                f"l={l}, band={band}"
            )
        residual = values - design @ coef
        dof = len(values) - design.shape[1]
        covariance = np.linalg.inv(design.T @ design) * (
            residual @ residual / dof
        )
        mean = float(coef[0])
        stderr = math.sqrt(covariance[0, 0])
    return RejectionReport(
        mean=mean,
        halfwidth=float(quantile * stderr),
        accepted=len(values),
        proposals=proposals,
    )


def _directional(
    fn: typing.Callable[[FloatArray], float],
    point: FloatArray,
    direction: FloatArray,
    eps: float,
) -> float:
    return (fn(point + eps * direction) - fn(point - eps * direction)) / (
        2.0 * eps
    )


def finite_diff_check(
    map_id: str,
    point: npt.ArrayLike,
    direction: npt.ArrayLike,
    eps: float = 1e-6,
    cotangent: npt.ArrayLike | None = None,
    objective: Objective | None = None,
) -> float:
    """Relative error between an analytic and a central-difference derivative.

    Arguments:

        map_id: ``linear`` (the pairing with ``cotangent``), ``stick`` or
            ``tree`` (the logit maps, paired with ``cotangent``) or
            ``objective`` (``E_q[objective]``)

        point: ``K x C`` categorical logits to differentiate at

        direction: Perturbation direction (same shape)

        eps: Central-difference step, within ``[1e-8, 1e-4]``

        cotangent: Weights of the map outputs (ones if ``None``)

        objective: Required by the ``objective`` map


    Returns:

        ``|fd - analytic| / max(|fd|, |analytic|)`` (the absolute difference
        when both are below ``1e-12``).
    """
    if not 1e-8 <= eps <= 1e-4:
        raise ValueError(f"step must lie within [1e-8, 1e-4], got {eps}")
    point = np.asarray(point, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if direction.shape != point.shape:
        raise ValueError("direction and point must have the same shape")
    params = CategoricalParams(point)
    K, C = params.shape

    if map_id == "linear":
        weights = (
            np.ones_like(point) if cotangent is None else np.asarray(cotangent)
        )

        def fn(x: FloatArray) -> float:
            return float(np.sum(weights * x))

        analytic = float(np.sum(weights * direction))

    elif map_id == "stick":
        weights = (
            np.ones((K, C - 1)) if cotangent is None else np.asarray(cotangent)
        )
        perm, _ = ascending_relabel(softmax_probs(params))

        def fn(x: FloatArray) -> float:
            probs = softmax_probs(CategoricalParams(x)).probs
            relabeled = ProbTable(np.take_along_axis(probs, perm, axis=1))
            return float(np.sum(weights * stick_logits(relabeled, perm).logits))

        analytic = float(
            np.sum(sb_vjp(params, weights, perm).cat_grad * direction)
        )

    elif map_id == "tree":
        weights = (
            np.ones((K, C - 1)) if cotangent is None else np.asarray(cotangent)
        )

        def fn(x: FloatArray) -> float:
            probs = softmax_probs(CategoricalParams(x))
            return float(np.sum(weights * tree_logits(probs).logits))

        analytic = float(np.sum(tree_vjp(params, weights).cat_grad * direction))

    elif map_id == "objective":
        if objective is None:
            raise ValueError("the objective map needs an objective")

        def fn(x: FloatArray) -> float:
            return expected_objective(CategoricalParams(x), objective)

        analytic = float(
            np.sum(exact_objective_grad(params, objective).cat_grad * direction)
        )

    else:
        raise ValueError(
            f"unknown map `{map_id}' - choose from {', '.join(FD_MAPS)}"
        )

    numeric = _directional(fn, point, direction, eps)
    scale = max(abs(numeric), abs(analytic))
    if scale < 1e-12:
        return abs(numeric - analytic)
    return abs(numeric - analytic) / scale
