# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Training the toy VAE and measuring estimator variance along the way."""

from __future__ import annotations

import dataclasses
import logging
import pathlib
import time
import typing

import numpy as np
import numpy.typing as npt

from .config import BenchConfig
from .dist import FloatArray
from .estimators import EstimatorOutput
from .models import (
    LinearToyVAE,
    SynthDataset,
    encoder_chain,
    multi_sample_bound,
    pathwise_grads,
    synth_data,
)
from .registry import EstimatorFn, make_estimator
from .tracking import (
    EVAL_COLUMNS,
    REPLAY_COLUMNS,
    TRAIN_COLUMNS,
    CsvWriter,
    VarianceTracker,
    ema_update,
)
from .utils import build_id, human_time, make_rng, write_json

logger = logging.getLogger(__name__)

ENCODER_BLOCKS = ("enc_w", "enc_b")
"""Parameter blocks whose gradient variance is tracked."""


@dataclasses.dataclass
class Adam:
    """Adaptive-moment optimizer ascending the objective.

    Arguments:

        learning_rate: Step size (zero leaves parameters untouched)

        beta1: Decay of the first-moment average

        beta2: Decay of the second-moment average

        epsilon: Denominator offset
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, FloatArray] = dataclasses.field(default_factory=dict)
    v: dict[str, FloatArray] = dataclasses.field(default_factory=dict)

    def step(
        self, params: dict[str, FloatArray], grads: dict[str, FloatArray]
    ) -> None:
        """Updates ``params`` in place along ``grads``."""
        self.t += 1
        for name, g in grads.items():
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g**2
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            params[name] += (
                self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
            )


@dataclasses.dataclass(frozen=True)
class BatchGradient:
    """Minibatch-averaged ELBO gradient of one estimator."""

    grads: dict[str, FloatArray]
    elbo: float
    f_evals: float

    @property
    def encoder(self) -> FloatArray:
        """Flattened encoder gradient."""
        return np.concatenate([self.grads[k].ravel() for k in ENCODER_BLOCKS])

    @property
    def finite(self) -> bool:
        return bool(
            np.isfinite(self.elbo)
            and all(np.all(np.isfinite(g)) for g in self.grads.values())
        )


def example_gradient(
    model: LinearToyVAE,
    x: npt.ArrayLike,
    estimator: EstimatorFn,
    rng: np.random.Generator,
) -> tuple[dict[str, FloatArray], EstimatorOutput]:
    """ELBO gradient at one example.

    The estimator provides the score part on the posterior logits; the
    pathwise part is averaged over the estimator's primary samples.
    """
    x = np.asarray(x, dtype=float)
    output = estimator(model.encoder_params(x), model.objective(x), rng)
    grads = encoder_chain(model, x, output.grad.cat_grad)
    weight = 1.0 / len(output.samples)
    for z in output.samples:
        for name, g in pathwise_grads(model, x, z).items():
            grads[name] = grads[name] + weight * g
    return grads, output


def batch_gradient(
    model: LinearToyVAE,
    batch: FloatArray,
    estimator: EstimatorFn,
    rng: np.random.Generator,
) -> BatchGradient:
    """Averages :py:func:`example_gradient` over a minibatch."""
    total = {name: np.zeros_like(p) for name, p in model.parameters.items()}
    elbo = 0.0
    f_evals = 0
    for x in batch:
        grads, output = example_gradient(model, x, estimator, rng)
        for name, g in grads.items():
            total[name] += g
        elbo += float(np.mean(output.values))
        f_evals += output.f_evals
    n = len(batch)
    return BatchGradient(
        grads={name: g / n for name, g in total.items()},
        elbo=elbo / n,
        f_evals=f_evals / n,
    )


def _split(dataset: SynthDataset, n: int) -> tuple[SynthDataset, SynthDataset]:
    def part(index: slice) -> SynthDataset:
        return SynthDataset(
            templates=dataset.templates,
            assignments=dataset.assignments[index],
            data=dataset.data[index],
        )

    return part(slice(0, n)), part(slice(n, None))


def prepare(
    config: BenchConfig,
) -> tuple[LinearToyVAE, SynthDataset, SynthDataset]:
    """Draws the data and the initial model of a configuration."""
    m, r = config.model, config.run
    dataset = synth_data(
        make_rng(r.seed, "data", replicate=r.replicate),
        m.train_size + m.test_size,
        m.data_dim,
        m.templates,
    )
    train, test = _split(dataset, m.train_size)
    model = LinearToyVAE.initialize(
        make_rng(r.seed, "init", replicate=r.replicate),
        m.data_dim,
        m.latent_vars,
        m.categories,
        data_mean=train.mean,
    )
    return model, train, test


def check_estimators(names: typing.Iterable[str], C: int) -> None:
    """Rejects estimators that cannot handle ``C`` categories."""
    for name in names:
        if name == "disarm" and C != 2:
            raise ValueError(f"`disarm' needs 2 categories, the model has {C}")
        if name == "disarm-tree" and (C & (C - 1)) != 0:
            raise ValueError(
                f"`disarm-tree' needs a power-of-2 category count, the model "
                f"has {C}"
            )


def _estimator(config: BenchConfig, name: str) -> EstimatorFn:
    r = config.run
    return make_estimator(
        name,
        ordering=r.ordering,
        rloo_samples=r.rloo_samples,
        coupling=r.coupling,
    )


def _optimizer(config: BenchConfig) -> Adam:
    o = config.optimizer
    return Adam(
        learning_rate=o.learning_rate,
        beta1=o.beta1,
        beta2=o.beta2,
        epsilon=o.epsilon,
    )


def _minibatch(
    dataset: SynthDataset, size: int, rng: np.random.Generator
) -> FloatArray:
    """Draws examples with replacement and binarizes them afresh."""
    index = rng.integers(len(dataset.assignments), size=size)
    probs = dataset.probs[index]
    return (rng.random(probs.shape) < probs).astype(float)


def evaluate(
    model: LinearToyVAE,
    test: SynthDataset,
    samples: int,
    examples: int,
    rng: np.random.Generator,
) -> float:
    """Mean multi-sample bound over the first held-out examples."""
    data = test.data[:examples].astype(float)
    return float(
        np.mean([multi_sample_bound(model, x, samples, rng) for x in data])
    )


def _header(config: BenchConfig) -> dict[str, typing.Any]:
    return dict(
        build=build_id(),
        config=config.to_dict(),
        optimizer=dataclasses.asdict(config.optimizer),
    )


def _diverged(
    out_dir: pathlib.Path,
    config: BenchConfig,
    step: int,
    estimator: str,
    gradient: BatchGradient,
) -> typing.NoReturn:
    record = dict(
        _header(config),
        step=step,
        estimator=estimator,
        elbo=gradient.elbo,
        non_finite=[
            name
            for name, g in gradient.grads.items()
            if not np.all(np.isfinite(g))
        ],
    )
    write_json(out_dir / "divergence.json", record)
    logger.error(f"Training diverged at step {step}, see divergence.json")
    raise RuntimeError(
        f"non-finite ELBO or gradient at step {step} with `{estimator}'"
    )


def train(config: BenchConfig) -> dict[str, typing.Any]:
    """Trains the toy VAE with ``config.run.estimator``.

    Writes ``train.csv`` (one row per step), ``eval.csv`` (held-out bound at
    step 0 and every ``eval_every`` steps), ``params.npz`` and
    ``summary.json`` to the output directory.  With ``timing`` disabled,
    every output is a function of the configuration alone.


    Returns:

        The summary written to ``summary.json``.
    """
    r = config.run
    out_dir = pathlib.Path(config.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    check_estimators([r.estimator], config.model.categories)

    model, train_set, test_set = prepare(config)
    estimator = _estimator(config, r.estimator)
    optimizer = _optimizer(config)
    tracker = VarianceTracker(decay=r.ema_decay)
    batch_rng = make_rng(r.seed, "batch", replicate=r.replicate)
    estimator_rng = make_rng(r.seed, "estimator", r.estimator, r.replicate)
    eval_rng = make_rng(r.seed, "eval", replicate=r.replicate)

    def bound() -> float:
        return evaluate(
            model, test_set, r.eval_samples, r.eval_examples, eval_rng
        )

    logger.info(
        f"Training with `{r.estimator}' for {r.steps} steps "
        f"(D={model.D}, K={model.K}, C={model.C}, seed={r.seed})..."
    )
    start = time.perf_counter()
    elbos: list[float] = []
    bounds = [(0, bound())]
    train_csv = CsvWriter(out_dir / "train.csv", TRAIN_COLUMNS)
    eval_csv = CsvWriter(out_dir / "eval.csv", EVAL_COLUMNS)
    with train_csv, eval_csv:
        eval_csv.write(*bounds[0])
        for step in range(1, r.steps + 1):
            batch = _minibatch(train_set, r.batch_size, batch_rng)
            gradient = batch_gradient(model, batch, estimator, estimator_rng)
            if not gradient.finite:
                _diverged(out_dir, config, step, r.estimator, gradient)
            tracker = ema_update(tracker, gradient.encoder)
            optimizer.step(model.parameters, gradient.grads)
            elbos.append(gradient.elbo)
            wall_ms = (time.perf_counter() - start) * 1000 if r.timing else 0.0
            train_csv.write(
                step,
                gradient.elbo,
                tracker.mean_variance,
                gradient.f_evals,
                wall_ms,
            )
            if step % r.eval_every == 0 or step == r.steps:
                bounds.append((step, bound()))
                eval_csv.write(*bounds[-1])
                logger.info(
                    f"step {step}: elbo {gradient.elbo:.4f}, held-out bound "
                    f"{bounds[-1][1]:.4f}"
                )

    np.savez(out_dir / "params.npz", **model.parameters)
    window = min(r.eval_every, len(elbos))
    summary = dict(
        _header(config),
        estimator=r.estimator,
        steps=r.steps,
        initial_elbo=float(np.mean(elbos[:window])),
        final_elbo=float(np.mean(elbos[-window:])),
        initial_bound=bounds[0][1],
        final_bound=bounds[-1][1],
        final_grad_var_mean=tracker.mean_variance,
    )
    if r.timing:
        elapsed = time.perf_counter() - start
        summary["elapsed"] = human_time(elapsed)
        logger.info(f"Training took {summary['elapsed']}")
    write_json(out_dir / "summary.json", summary)
    logger.info(f"Results written to `{str(out_dir)}'")
    return summary


def variance_replay(config: BenchConfig) -> dict[str, typing.Any]:
    """Measures every estimator's variance along one training trajectory.

    The model follows ``config.run.trajectory`` (``rloo`` by default).
    Every ``variance_every`` steps, each estimator of ``config.run.estimators``
    computes its gradient on the current minibatch and parameters, with its
    own random stream, and updates its tracker.  ``replay.csv`` receives one
    row per estimator every ``eval_every`` steps.


    Returns:

        The summary written to ``summary.json``.
    """
    r = config.run
    out_dir = pathlib.Path(config.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    check_estimators([r.trajectory, *r.estimators], config.model.categories)

    model, train_set, _ = prepare(config)
    trajectory = _estimator(config, r.trajectory)
    optimizer = _optimizer(config)
    batch_rng = make_rng(r.seed, "batch", replicate=r.replicate)
    trajectory_rng = make_rng(r.seed, "estimator", r.trajectory, r.replicate)
    measured = [
        (
            name,
            _estimator(config, name),
            make_rng(r.seed, "replay", name, r.replicate),
        )
        for name in r.estimators
    ]
    trackers = [VarianceTracker(decay=r.ema_decay) for _ in measured]

    logger.info(
        f"Replaying {len(measured)} estimator(s) along the `{r.trajectory}' "
        f"trajectory for {r.steps} steps..."
    )
    with CsvWriter(out_dir / "replay.csv", REPLAY_COLUMNS) as replay_csv:
        for step in range(1, r.steps + 1):
            batch = _minibatch(train_set, r.batch_size, batch_rng)
            if step % r.variance_every == 0:
                for i, (name, estimator, rng) in enumerate(measured):
                    g = batch_gradient(model, batch, estimator, rng)
                    if not g.finite:
                        _diverged(out_dir, config, step, name, g)
                    trackers[i] = ema_update(trackers[i], g.encoder)
            gradient = batch_gradient(model, batch, trajectory, trajectory_rng)
            if not gradient.finite:
                _diverged(out_dir, config, step, r.trajectory, gradient)
            optimizer.step(model.parameters, gradient.grads)
            if step % r.eval_every == 0 or step == r.steps:
                for (name, _, _), tracker in zip(measured, trackers):
                    if tracker.count:
                        replay_csv.write(step, name, tracker.mean_variance)
                logger.info(f"step {step}: elbo {gradient.elbo:.4f}")

    summary = dict(
        _header(config),
        trajectory=r.trajectory,
        steps=r.steps,
        final_grad_var_mean={
            name: tracker.mean_variance if tracker.count else None
            for (name, _, _), tracker in zip(measured, trackers)
        },
    )
    write_json(out_dir / "summary.json", summary)
    logger.info(f"Results written to `{str(out_dir)}'")
    return summary
