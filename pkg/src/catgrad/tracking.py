# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Gradient-variance tracking and the CSV files of the benchmark."""

from __future__ import annotations

import collections
import csv
import dataclasses
import logging
import pathlib
import typing

import numpy as np
import numpy.typing as npt

from .dist import FloatArray

logger = logging.getLogger(__name__)

TRAIN_COLUMNS = ("step", "elbo", "grad_var_mean", "f_evals", "wall_ms")
EVAL_COLUMNS = ("step", "bound")
REPLAY_COLUMNS = ("step", "estimator", "grad_var_mean")

NEGATIVE_VARIANCE_TOLERANCE = 1e-12
"""Larger negative variance estimates are reported before clamping."""


@dataclasses.dataclass(frozen=True)
class VarianceTracker:
    """Exponential moving averages of a gradient and its square.

    Arguments:

        decay: Weight of the past, in ``[0, 1)``

        mean: Moving average of the gradient (``None`` before the first
            observation)

        second: Moving average of the squared gradient

        count: Number of observations
    """

    decay: float = 0.999
    mean: FloatArray | None = None
    second: FloatArray | None = None
    count: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.decay < 1:
            raise ValueError(f"decay must lie in [0, 1), got {self.decay}")

    @property
    def variance(self) -> FloatArray:
        """Per-parameter variance ``EMA(g^2) - EMA(g)^2``, clamped at zero."""
        if self.mean is None or self.second is None:
            raise ValueError("the tracker has no observation yet")
        raw = self.second - self.mean**2
        lowest = float(raw.min()) if raw.size else 0.0
        if lowest < -NEGATIVE_VARIANCE_TOLERANCE:
            logger.debug(f"Clamping negative variance estimate {lowest:.3g}")
        return np.maximum(raw, 0.0)

    @property
    def mean_variance(self) -> float:
        """Average per-parameter variance."""
        return float(self.variance.mean())


def ema_update(
    tracker: VarianceTracker, gradient: npt.ArrayLike
) -> VarianceTracker:
    """Folds one gradient into the moving averages.

    The first observation initializes both averages; afterwards ``m <- d m +
    (1 - d) g`` and ``s <- d s + (1 - d) g^2``.
    """
    g = np.asarray(gradient, dtype=float).ravel()
    if tracker.mean is None or tracker.second is None:
        return dataclasses.replace(tracker, mean=g.copy(), second=g**2, count=1)
    if g.shape != tracker.mean.shape:
        raise ValueError(
            f"gradient of size {g.size} does not match the tracked "
            f"{tracker.mean.size} parameters"
        )
    d = tracker.decay
    return dataclasses.replace(
        tracker,
        mean=d * tracker.mean + (1 - d) * g,
        second=d * tracker.second + (1 - d) * g**2,
        count=tracker.count + 1,
    )


def _format(value: typing.Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class CsvWriter:
    """Writes rows of fixed columns, flushing after every row.

    Arguments:

        path: Output file (overwritten)

        columns: Header row
    """

    def __init__(self, path: str | pathlib.Path, columns: typing.Sequence[str]):
        self.path = pathlib.Path(path)
        self.columns = tuple(columns)
        self._file = self.path.open("w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(self.columns)

    def write(self, *values: typing.Any) -> None:
        if len(values) != len(self.columns):
            raise ValueError(
                f"expected {len(self.columns)} values "
                f"({', '.join(self.columns)}), got {len(values)}"
            )
        self._writer.writerow([_format(v) for v in values])
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> CsvWriter:
        return self

    def __exit__(self, *_: typing.Any) -> None:
        self.close()


def read_replay(
    path: str | pathlib.Path,
) -> dict[str, tuple[FloatArray, FloatArray]]:
    """Reads a replay CSV.

    Returns:

        Per estimator, the steps and the average gradient variance.
    """
    rows: dict[str, list[tuple[float, float]]] = collections.defaultdict(list)
    with pathlib.Path(path).open(encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != REPLAY_COLUMNS:
            raise ValueError(
                f"`{path}' does not have the replay columns "
                f"{', '.join(REPLAY_COLUMNS)}"
            )
        for row in reader:
            rows[row["estimator"]].append(
                (float(row["step"]), float(row["grad_var_mean"]))
            )
    return {
        name: (
            np.array([s for s, _ in values]),
            np.array([v for _, v in values]),
        )
        for name, values in rows.items()
    }


def post_burn_in_mean(
    replay: dict[str, tuple[FloatArray, FloatArray]],
    estimator: str,
    burn_in: int,
) -> float:
    """Mean variance of one estimator over steps past ``burn_in``."""
    if estimator not in replay:
        raise ValueError(f"estimator `{estimator}' is not in the replay")
    steps, variance = replay[estimator]
    kept = variance[steps > burn_in]
    if kept.size == 0:
        raise ValueError(f"no `{estimator}' rows after step {burn_in}")
    return float(kept.mean())


def compare_replays(
    paths: typing.Sequence[str | pathlib.Path],
    candidate: str,
    reference: str,
    rng: np.random.Generator,
    burn_in: int = 1000,
    resamples: int = 1000,
    level: float = 0.95,
) -> bool:
    """Whether ``candidate`` has no more variance than ``reference``.

    Each replay (one per seed) contributes the pair of post-burn-in mean
    variances; the pairs go through a one-sided paired bootstrap.
    """
    from .oracle import bootstrap_mean_le

    replays = [read_replay(p) for p in paths]
    a = np.array([post_burn_in_mean(r, candidate, burn_in) for r in replays])
    b = np.array([post_burn_in_mean(r, reference, burn_in) for r in replays])
    passed = bool(bootstrap_mean_le(a, b, rng, resamples, level))
    logger.info(
        f"Variance of {candidate} (mean {a.mean():.4g}) vs {reference} "
        f"(mean {b.mean():.4g}) over {len(paths)} replays: "
        f"{'not larger' if passed else 'larger'}"
    )
    return passed
