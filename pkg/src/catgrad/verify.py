# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""The verification suite behind ``catgrad verify``.

Every check draws its instances from a seed recorded in the report, so any
failing instance can be replayed alone.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
import pathlib
import time
import typing

import numpy as np

from .ars import pi_conditional_interval, sample_dirichlet_uniform, swap_configs
from .config import BenchConfig, VerifyConfig
from .couplings import (
    AntitheticPair,
    _antithetic_cells,
    sb_coupling_from_bits,
    sb_coupling_joint,
    sb_importance_weight,
    support_check,
    tree_coupling_joint,
)
from .dist import (
    ORDERINGS,
    CategoricalParams,
    ProbTable,
    build_stick,
    softmax_probs,
    tree_logits,
)
from .estimators import disarm_binary, disarm_iw, disarm_sb, disarm_tree
from .models import random_lookup
from .oracle import (
    OracleReport,
    bootstrap_variance_le,
    compare_exact,
    finite_diff_check,
    mc_estimator_mean,
    paired_swap_draws,
    rejection_conditional_mean,
)
from .utils import build_id, derive_seed, human_time, write_json

logger = logging.getLogger(__name__)

CHECKS = (
    "exact",
    "coupling",
    "collapse",
    "finite-difference",
    "swap-mean",
    "dominance",
    "interval",
)
"""Names of the checks, in execution order."""

TREE_CATEGORIES = (2, 4, 8)

INTERVAL_BAND = 2e-3
"""Half-width of the conditioning band of the rejection sampler."""

Check = typing.Callable[[VerifyConfig, int], list[OracleReport]]


def instance_seed(seed: int, check: str, index: int) -> int:
    """Seed of one instance of a check."""
    return int(derive_seed(seed, "verify", check, index).generate_state(1)[0])


def random_params(
    rng: np.random.Generator, K: int, C: int, scale: float = 1.0
) -> CategoricalParams:
    """Logits with standard normal entries times ``scale``."""
    return CategoricalParams(scale * rng.standard_normal((K, C)))


def _instances(
    check: str, count: int, seed: int
) -> typing.Iterator[tuple[int, np.random.Generator]]:
    for i in range(count):
        s = instance_seed(seed, check, i)
        yield s, np.random.default_rng(s)


def check_exact(cfg: VerifyConfig, seed: int) -> list[OracleReport]:
    """Enumerated estimator expectations against the exact gradient."""
    reports = []
    for s, rng in _instances("exact", cfg.exact_instances, seed):
        K = int(rng.integers(1, cfg.max_vars + 1))
        C = int(rng.integers(2, cfg.max_categories + 1))
        params = random_params(rng, K, C)
        f = random_lookup(rng, K, C)
        variants: list[tuple[str, str, dict, float]] = [
            ("reinforce", "reinforce", {}, 1e-12),
            ("rloo[n=2]", "rloo", dict(rloo_samples=2), 1e-9),
            ("rloo[n=3]", "rloo", dict(rloo_samples=3), 1e-9),
            ("disarm-iw", "disarm-iw", {}, 1e-9),
        ]
        variants += [
            (f"disarm-sb[{o}]", "disarm-sb", dict(ordering=o), 1e-9)
            for o in ORDERINGS
        ]
        for label, name, options, threshold in variants:
            report = compare_exact(name, params, f, s, threshold, **options)
            reports.append(dataclasses.replace(report, estimator=label))

        C_tree = int(rng.choice(TREE_CATEGORIES))
        tree_params = random_params(rng, K, C_tree)
        tree_f = random_lookup(rng, K, C_tree)
        reports.append(compare_exact("disarm-tree", tree_params, tree_f, s))

        binary_params = random_params(rng, K, 2)
        binary_f = random_lookup(rng, K, 2)
        reports.append(compare_exact("disarm", binary_params, binary_f, s))
    return reports


def _stick_position(perm: np.ndarray, category: int) -> int:
    return int(np.flatnonzero(perm == category)[0])


def _positive_probs(rng: np.random.Generator, C: int) -> ProbTable:
    probs = np.maximum(rng.dirichlet(np.ones(C), size=2), 1e-6)
    return ProbTable(probs / probs.sum(axis=1, keepdims=True))


def check_coupling(cfg: VerifyConfig, seed: int) -> list[OracleReport]:
    """Marginals, support and importance weights of the couplings."""
    reports = []
    worked = build_stick(ProbTable(np.array([[0.2, 0.3, 0.5]])), "ascending")
    reports.append(
        OracleReport(
            estimator="stick-weight[worked]",
            K=1,
            C=3,
            seed=None,
            errors=(sb_importance_weight(worked, 0, 1, 2) - 2.0 / 3.0,),
            threshold=1e-12,
        )
    )
    for s, rng in _instances("coupling", cfg.coupling_instances, seed):
        C = int(rng.integers(2, cfg.max_categories + 1))
        probs = _positive_probs(rng, C)
        stick = build_stick(probs, "ascending")
        joint = sb_coupling_joint(stick)
        first, second = joint.marginals()
        marginal_errors = np.concatenate(
            [(first - probs.probs).ravel(), (second - probs.probs).ravel()]
        )
        reports.append(
            OracleReport(
                "stick-marginals", 2, C, s, tuple(marginal_errors), 1e-12
            )
        )
        reports.append(
            OracleReport(
                "stick-support",
                2,
                C,
                s,
                (0.0 if support_check(joint) else 1.0,),
                0.0,
                statistic="failures",
            )
        )
        weight_errors = []
        for k in range(2):
            for a, b in itertools.permutations(range(C), 2):
                expected = probs.probs[k, a] * probs.probs[k, b] / joint.table[
                    k, a, b
                ]
                got = sb_importance_weight(
                    stick,
                    k,
                    _stick_position(stick.perm[k], a),
                    _stick_position(stick.perm[k], b),
                )
                weight_errors.append(got - expected)
        reports.append(
            OracleReport("stick-weights", 2, C, s, tuple(weight_errors), 1e-10)
        )

        C_tree = int(rng.choice(TREE_CATEGORIES))
        tree_probs = _positive_probs(rng, C_tree)
        tree_joint = tree_coupling_joint(tree_logits(tree_probs))
        first, second = tree_joint.marginals()
        reports.append(
            OracleReport(
                "tree-marginals",
                2,
                C_tree,
                s,
                tuple(
                    np.concatenate(
                        [
                            (first - tree_probs.probs).ravel(),
                            (second - tree_probs.probs).ravel(),
                        ]
                    )
                ),
                1e-12,
            )
        )
    return reports


def binary_collapse_errors(
    params: CategoricalParams, f: typing.Callable
) -> list[float]:
    """Per-draw differences of the pair estimators and binary DisARM at C=2.

    Every antithetic outcome of the ``K`` variables is fed to all estimators
    through the same bits.
    """
    K, C = params.shape
    if C != 2:
        raise ValueError(f"the binary collapse needs C = 2, got {C}")
    probs = softmax_probs(params)
    logits = params.logits[:, 0] - params.logits[:, 1]
    stick = build_stick(probs, "ascending")
    tree = tree_logits(probs)
    cells = [
        [c for c, mass in sorted(_antithetic_cells(p).items()) if mass > 0]
        for p in stick.probs[:, 0].tolist()
    ]
    first, second = stick.perm[:, 0], stick.perm[:, 1]
    errors = []
    for combination in itertools.product(*cells):
        bits = np.array([[c[0]] for c in combination])
        bits_tilde = np.array([[c[1]] for c in combination])
        category = np.where(bits[:, 0] == 1, first, second)
        category_tilde = np.where(bits_tilde[:, 0] == 1, first, second)
        # binary bit 1 is category 0, tree bit 1 is category 1
        pair = AntitheticPair(
            b=(category == 0).astype(np.int64),
            b_tilde=(category_tilde == 0).astype(np.int64),
            u=np.zeros(K),
        )
        binary = disarm_binary(logits, pair, lambda b: f(1 - b))
        coupled = sb_coupling_from_bits(stick, bits, bits_tilde)
        outputs = [
            disarm_iw(params, coupled, f),
            disarm_sb(params, stick, bits, bits_tilde, f),
            disarm_tree(
                params,
                tree,
                category[:, None],
                category_tilde[:, None],
                f,
            ),
        ]
        for output in outputs:
            difference = output.grad.cat_grad - binary.grad.cat_grad
            errors.extend(difference.ravel().tolist())
    return errors


def check_collapse(cfg: VerifyConfig, seed: int) -> list[OracleReport]:
    """Pair estimators against binary DisARM at two categories."""
    reports = []
    for s, rng in _instances("collapse", cfg.exact_instances, seed):
        K = int(rng.integers(1, cfg.max_vars + 1))
        params = random_params(rng, K, 2)
        f = random_lookup(rng, K, 2)
        reports.append(
            OracleReport(
                "binary-collapse",
                K,
                2,
                s,
                tuple(binary_collapse_errors(params, f)),
                1e-12,
            )
        )
    return reports


def check_finite_difference(cfg: VerifyConfig, seed: int) -> list[OracleReport]:
    """Vector-Jacobian products and the exact gradient against differences."""
    reports = []
    for s, rng in _instances("finite-difference", cfg.fd_instances, seed):
        K = int(rng.integers(1, cfg.max_vars + 1))
        C = int(rng.integers(2, cfg.max_categories + 1))
        point = rng.standard_normal((K, C))
        direction = rng.standard_normal((K, C))
        stick_error = finite_diff_check(
            "stick", point, direction, cotangent=rng.standard_normal((K, C - 1))
        )
        C_tree = int(rng.choice(TREE_CATEGORIES))
        tree_point = rng.standard_normal((K, C_tree))
        tree_error = finite_diff_check(
            "tree",
            tree_point,
            rng.standard_normal((K, C_tree)),
            cotangent=rng.standard_normal((K, C_tree - 1)),
        )
        objective_error = finite_diff_check(
            "objective",
            point,
            direction,
            objective=random_lookup(rng, K, C),
        )
        reports += [
            OracleReport("sb-vjp", K, C, s, (stick_error,), 1e-5, "relative"),
            OracleReport(
                "tree-vjp", K, C_tree, s, (tree_error,), 1e-5, "relative"
            ),
            OracleReport(
                "objective-grad", K, C, s, (objective_error,), 1e-7, "relative"
            ),
        ]
    return reports


def check_swap_mean(cfg: VerifyConfig, seed: int) -> list[OracleReport]:
    """Monte Carlo means of the swap estimators against the exact gradient."""
    reports = []
    for s, rng in _instances("swap-mean", cfg.mc_instances, seed):
        K = int(rng.integers(1, 3))
        C = int(rng.integers(2, 5))
        params = random_params(rng, K, C)
        f = random_lookup(rng, K, C)
        for name in ("ars", "ars+", "arsm", "arsm+"):
            result = mc_estimator_mean(name, params, f, cfg.mc_draws, rng)
            reports.append(
                OracleReport(
                    name,
                    K,
                    C,
                    s,
                    tuple(np.abs(result.z_scores).ravel().tolist()),
                    cfg.z_threshold,
                    "z-score",
                )
            )
    return reports


def check_dominance(cfg: VerifyConfig, seed: int) -> list[OracleReport]:
    """Conditioned swap estimators have no more variance than the plain ones.

    All coordinates of one comparison are tested jointly (Holm), so a
    comparison fails with probability below 5% when dominance holds.
    """
    reports = []
    for s, rng in _instances("dominance", cfg.dominance_instances, seed):
        K = int(rng.integers(1, 3))
        C = int(rng.integers(2, 5))
        params = random_params(rng, K, C)
        f = random_lookup(rng, K, C)
        draws = paired_swap_draws(params, f, cfg.dominance_draws, rng)
        for better, plain in (("ars+", "ars"), ("arsm+", "arsm")):
            passed = bootstrap_variance_le(
                draws[better], draws[plain], rng, correction="holm"
            )
            reports.append(
                OracleReport(
                    f"{better}<={plain}",
                    K,
                    C,
                    s,
                    (float(np.sum(~passed)),),
                    0.0,
                    "failures",
                )
            )
    return reports


def check_interval(cfg: VerifyConfig, seed: int) -> list[OracleReport]:
    """Conditional intervals against rejection sampling, and containment.

    Each midpoint must lie within its confidence interval.  The intervals
    are Bonferroni-widened so that all instances pass together with 99%
    probability.
    """
    reports = []
    level = 1.0 - 0.01 / max(cfg.interval_instances, 1)
    for s, rng in _instances("interval", cfg.interval_instances, seed):
        C = int(rng.integers(2, 4))
        params = random_params(rng, 1, C)
        pi = sample_dirichlet_uniform(rng, 1, C)
        j = int(rng.integers(C))
        l = int(rng.choice([i for i in range(C) if i != j]))  # noqa: E741
        state = swap_configs(pi, params, j)
        configs = state.configs[:, 0]
        lo, hi = pi_conditional_interval(pi[0], params.logits[0], configs, j, l)
        result = rejection_conditional_mean(
            params.logits[0],
            configs,
            pi[0],
            j,
            l,
            cfg.interval_accepted,
            rng,
            band=INTERVAL_BAND,
            level=level,
        )
        reports.append(
            OracleReport(
                "interval-midpoint",
                1,
                C,
                s,
                (abs(0.5 * (lo + hi) - result.mean),),
                result.halfwidth,
                "abs-error",
            )
        )

    s = instance_seed(seed, "interval-containment", 0)
    rng = np.random.default_rng(s)
    outside = 0
    for _ in range(cfg.interval_draws):
        C = int(rng.integers(2, cfg.max_categories + 1))
        params = random_params(rng, 1, C)
        pi = sample_dirichlet_uniform(rng, 1, C)
        j = int(rng.integers(C))
        l = int(rng.choice([i for i in range(C) if i != j]))  # noqa: E741
        configs = swap_configs(pi, params, j).configs[:, 0]
        lo, hi = pi_conditional_interval(pi[0], params.logits[0], configs, j, l)
        if not lo - 1e-12 <= pi[0, j] <= hi + 1e-12:
            outside += 1
    reports.append(
        OracleReport(
            "interval-containment",
            1,
            cfg.max_categories,
            s,
            (float(outside),),
            0.0,
            "failures",
        )
    )
    return reports


_CHECKS: dict[str, Check] = {
    "exact": check_exact,
    "coupling": check_coupling,
    "collapse": check_collapse,
    "finite-difference": check_finite_difference,
    "swap-mean": check_swap_mean,
    "dominance": check_dominance,
    "interval": check_interval,
}


def verify(
    config: BenchConfig, checks: typing.Sequence[str] | None = None
) -> dict[str, typing.Any]:
    """Runs the verification suite.

    Arguments:

        config: Sizes come from ``[verify]``, the master seed from ``[run]``

        checks: Subset of :py:data:`CHECKS` to run (all if ``None``)


    Returns:

        The report, also written to ``verify.json`` in the output directory.
    """
    selected = list(CHECKS if not checks else checks)
    unknown = [c for c in selected if c not in _CHECKS]
    if unknown:
        raise ValueError(
            f"unknown check(s) {', '.join(unknown)} - choose from "
            f"{', '.join(CHECKS)}"
        )
    seed = config.run.seed
    results = {}
    for name in selected:
        start = time.perf_counter()
        reports = _CHECKS[name](config.verify, seed)
        failed = [r for r in reports if not r.passed]
        results[name] = dict(
            passed=not failed,
            instances=len(reports),
            failures=[r.to_dict() for r in failed],
            worst=max(
                (r.to_dict() for r in reports),
                key=lambda d: d["max_error"] / d["threshold"]
                if d["threshold"] > 0
                else d["max_error"],
                default=None,
            ),
            seeds=sorted({r.seed for r in reports if r.seed is not None}),
        )
        status = "passed" if not failed else f"FAILED ({len(failed)} reports)"
        log = logger.info if not failed else logger.error
        log(
            f"check `{name}': {status} over {len(reports)} reports in "
            f"{human_time(time.perf_counter() - start)}"
        )

    report = dict(
        build=build_id(),
        config=config.to_dict(),
        seed=seed,
        checks=results,
        passed=all(r["passed"] for r in results.values()),
    )
    out_dir = pathlib.Path(config.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "verify.json", report)
    return report
