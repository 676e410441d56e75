# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Objectives and the linear toy VAE the estimators are exercised on."""

from __future__ import annotations

import dataclasses
import logging
import math
import pathlib
import struct
import typing

import numpy as np
import numpy.typing as npt
import scipy.special

from .dist import (
    CategoricalParams,
    FloatArray,
    IntArray,
    as_sample,
    one_hot,
    sample_categorical,
    softmax_probs,
)

logger = logging.getLogger(__name__)

DENSE_LIMIT = 10**5
"""Largest ``C^K`` stored as a dense lookup table."""

MAX_DATA_DIM = 64
"""Largest data dimension of synthetic datasets."""

DATASET_MAGIC = b"CGDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIII")

PARAMETER_NAMES = ("enc_w", "enc_b", "dec_w", "dec_b")
"""Parameter blocks of :py:class:`LinearToyVAE`."""


@dataclasses.dataclass(frozen=True)
class LookupObjective:
    """Objective read from a table.

    Arguments:

        table: Either a dense ``C x ... x C`` table (``K`` axes) indexed by the
            configuration, or a ``K x C`` table whose entries are summed over
            the variables when ``separable`` is set

        separable: Whether ``table`` holds per-variable terms
    """

    table: FloatArray
    separable: bool = False

    def __post_init__(self) -> None:
        table = np.array(self.table, dtype=float)
        if not np.all(np.isfinite(table)):
            raise ValueError("lookup table has non-finite entries")
        if self.separable:
            if table.ndim != 2:
                raise ValueError(
                    f"separable tables must be K x C, got {table.shape}"
                )
        else:
            if table.ndim < 1 or len(set(table.shape)) != 1:
                raise ValueError(
                    f"dense tables need C entries on every axis, got "
                    f"{table.shape}"
                )
            if table.size > DENSE_LIMIT:
                raise ValueError(
                    f"dense table of {table.size} entries exceeds "
                    f"{DENSE_LIMIT}, use a separable table"
                )
        table.flags.writeable = False
        object.__setattr__(self, "table", table)

    @property
    def shape(self) -> tuple[int, int]:
        """``(K, C)``"""
        if self.separable:
            return typing.cast(tuple[int, int], self.table.shape)
        return self.table.ndim, self.table.shape[0]

    def __call__(self, z: npt.ArrayLike) -> float:
        z = as_sample(z, self.shape)
        if self.separable:
            return float(self.table[np.arange(len(z)), z].sum())
        return float(self.table[tuple(z)])


def random_lookup(
    rng: np.random.Generator,
    K: int,
    C: int,
    separable: bool = False,
    scale: float = 1.0,
) -> LookupObjective:
    """Lookup objective with standard normal entries times ``scale``."""
    shape = (K, C) if separable else (C,) * K
    return LookupObjective(
        table=scale * rng.standard_normal(shape), separable=separable
    )


@dataclasses.dataclass(frozen=True)
class QuadraticObjective:
    """``f(z) = sum_k ||onehot(z_k) - target_k||^2``."""

    target: FloatArray

    def __post_init__(self) -> None:
        target = np.array(self.target, dtype=float)
        if target.ndim != 2 or not np.all(np.isfinite(target)):
            raise ValueError("target must be a finite K x C table")
        object.__setattr__(self, "target", target)

    def __call__(self, z: npt.ArrayLike) -> float:
        z = as_sample(z, typing.cast(tuple[int, int], self.target.shape))
        diff = one_hot(z, self.target.shape[1]) - self.target
        return float(np.sum(diff**2))


@dataclasses.dataclass
class LinearToyVAE:
    """Categorical VAE with linear encoder and decoder.

    The encoder maps ``x`` to ``K x C`` logits, ``enc_w @ x + enc_b``; the
    decoder maps the concatenated one-hot code to ``D`` Bernoulli logits,
    ``dec_w @ onehot(z) + dec_b``.  The prior is uniform.

    Arguments:

        enc_w: ``(K*C) x D`` encoder weights

        enc_b: ``K*C`` encoder bias

        dec_w: ``D x (K*C)`` decoder weights

        dec_b: ``D`` decoder bias

        K: Number of latent variables

        C: Categories per latent variable
    """

    enc_w: FloatArray
    enc_b: FloatArray
    dec_w: FloatArray
    dec_b: FloatArray
    K: int
    C: int

    def __post_init__(self) -> None:
        for name in PARAMETER_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        D = self.dec_b.shape[0] if self.dec_b.ndim == 1 else -1
        H = self.K * self.C
        expected = dict(enc_w=(H, D), enc_b=(H,), dec_w=(D, H), dec_b=(D,))
        for name, shape in expected.items():
            value = getattr(self, name)
            if value.shape != shape:
                raise ValueError(
                    f"`{name}' must have shape {shape}, got {value.shape}"
                )
            if not np.all(np.isfinite(value)):
                raise ValueError(f"`{name}' has non-finite entries")

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        D: int,
        K: int,
        C: int,
        scale: float = 0.01,
        data_mean: npt.ArrayLike | None = None,
    ) -> LinearToyVAE:
        """Small random weights; the decoder bias matches ``data_mean``."""
        H = K * C
        dec_b = np.zeros(D)
        if data_mean is not None:
            mean = np.clip(np.asarray(data_mean, dtype=float), 1e-3, 1 - 1e-3)
            dec_b = scipy.special.logit(mean)
        return cls(
            enc_w=scale * rng.standard_normal((H, D)),
            enc_b=np.zeros(H),
            dec_w=scale * rng.standard_normal((D, H)),
            dec_b=dec_b,
            K=K,
            C=C,
        )

    @property
    def D(self) -> int:
        return int(self.dec_b.shape[0])

    @property
    def parameters(self) -> dict[str, FloatArray]:
        """The parameter blocks (the arrays themselves, not copies)."""
        return {name: getattr(self, name) for name in PARAMETER_NAMES}

    def copy(self) -> LinearToyVAE:
        return LinearToyVAE(
            **{k: v.copy() for k, v in self.parameters.items()},
            K=self.K,
            C=self.C,
        )

    def encoder_params(self, x: npt.ArrayLike) -> CategoricalParams:
        """Posterior logits ``q(z | x)``."""
        x = np.asarray(x, dtype=float)
        return CategoricalParams(
            (self.enc_w @ x + self.enc_b).reshape(self.K, self.C)
        )

    def code(self, z: npt.ArrayLike) -> FloatArray:
        """Concatenated one-hot code of a configuration."""
        z = as_sample(z, (self.K, self.C))
        return one_hot(z, self.C).ravel()

    def decoder_logits(self, z: npt.ArrayLike) -> FloatArray:
        return self.dec_w @ self.code(z) + self.dec_b

    def objective(self, x: npt.ArrayLike) -> typing.Callable[[IntArray], float]:
        """The instantaneous ELBO at ``x`` as a function of ``z``."""
        x = np.asarray(x, dtype=float)
        posterior = scipy.special.log_softmax(
            self.encoder_params(x).logits, axis=1
        )
        return lambda z: _elbo(self, x, z, posterior)


def _log_likelihood(model: LinearToyVAE, x: FloatArray, z: IntArray) -> float:
    logits = model.decoder_logits(z)
    return float(np.sum(x * logits - np.logaddexp(0.0, logits)))


def _elbo(
    model: LinearToyVAE, x: FloatArray, z: npt.ArrayLike, posterior: FloatArray
) -> float:
    z = as_sample(z, (model.K, model.C))
    log_q = float(posterior[np.arange(model.K), z].sum())
    return _log_likelihood(model, x, z) - model.K * math.log(model.C) - log_q


def elbo_eval(
    model: LinearToyVAE, x: npt.ArrayLike, z: npt.ArrayLike
) -> float:
    """Instantaneous ELBO ``log p(x|z) + log p(z) - log q(z|x)``."""
    return model.objective(x)(np.asarray(z))


def pathwise_grads(
    model: LinearToyVAE, x: npt.ArrayLike, z: npt.ArrayLike
) -> dict[str, FloatArray]:
    """Gradients of the instantaneous ELBO at fixed ``z``.

    The decoder receives the Bernoulli log-likelihood derivative; the
    encoder only the explicit ``-log q(z|x)`` term.  The score-function part
    is left to the estimators.
    """
    x = np.asarray(x, dtype=float)
    z = as_sample(z, (model.K, model.C))
    code = model.code(z)
    residual = x - scipy.special.expit(model.dec_w @ code + model.dec_b)
    probs = scipy.special.softmax(model.encoder_params(x).logits, axis=1)
    entropy_term = -(one_hot(z, model.C) - probs).ravel()
    return dict(
        enc_w=np.outer(entropy_term, x),
        enc_b=entropy_term,
        dec_w=np.outer(residual, code),
        dec_b=residual,
    )


def encoder_chain(
    model: LinearToyVAE, x: npt.ArrayLike, cat_grad: npt.ArrayLike
) -> dict[str, FloatArray]:
    """Pulls a ``K x C`` posterior-logit gradient back to the parameters."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(cat_grad, dtype=float).reshape(-1)
    return dict(
        enc_w=np.outer(g, x),
        enc_b=g,
        dec_w=np.zeros_like(model.dec_w),
        dec_b=np.zeros_like(model.dec_b),
    )


def multi_sample_bound(
    model: LinearToyVAE,
    x: npt.ArrayLike,
    S: int,
    rng: np.random.Generator,
) -> float:
    """``log mean_s exp(ELBO(z_s))`` over ``S`` posterior draws."""
    if S < 1:
        raise ValueError(f"need at least one sample, got S={S}")
    x = np.asarray(x, dtype=float)
    f = model.objective(x)
    probs = softmax_probs(model.encoder_params(x))
    values = np.array([f(sample_categorical(probs, rng)) for _ in range(S)])
    return float(scipy.special.logsumexp(values) - math.log(S))


def exact_log_marginal(model: LinearToyVAE, x: npt.ArrayLike) -> float:
    """``log p(x)``, enumerating every configuration."""
    from .oracle import all_configurations

    x = np.asarray(x, dtype=float)
    joint = [
        _log_likelihood(model, x, z) - model.K * math.log(model.C)
        for z in all_configurations(model.K, model.C)
    ]
    return float(scipy.special.logsumexp(joint))


@dataclasses.dataclass(frozen=True)
class SynthDataset:
    """Binary data drawn from a mixture of Bernoulli templates.

    Arguments:

        templates: ``T x D`` pixel probabilities of every template

        assignments: Template of every example

        data: The first ``N x D`` binarization
    """

    templates: FloatArray
    assignments: IntArray
    data: npt.NDArray[np.uint8]

    @property
    def probs(self) -> FloatArray:
        """Per-example pixel probabilities."""
        return self.templates[self.assignments]

    @property
    def mean(self) -> FloatArray:
        """Expected pixel means under the template mixture."""
        return self.probs.mean(axis=0)

    def binarize(self, rng: np.random.Generator) -> npt.NDArray[np.uint8]:
        """Fresh binarization of every example."""
        return (rng.random(self.probs.shape) < self.probs).astype(np.uint8)


def synth_data(
    rng: np.random.Generator,
    N: int,
    D: int,
    templates: int | npt.ArrayLike = 4,
) -> SynthDataset:
    """Draws a synthetic binary dataset.

    Arguments:

        rng: Random stream

        N: Number of examples

        D: Data dimension (at most :py:data:`MAX_DATA_DIM`)

        templates: Number of templates (drawn from ``Beta(0.5, 0.5)`` pixel
            probabilities), or the ``T x D`` templates themselves


    Returns:

        The dataset, examples picking templates uniformly.
    """
    if not 1 <= D <= MAX_DATA_DIM:
        raise ValueError(f"data dimension must lie in [1, {MAX_DATA_DIM}]")
    if N < 1:
        raise ValueError(f"need at least one example, got N={N}")
    if isinstance(templates, (int, np.integer)):
        table = rng.beta(0.5, 0.5, size=(int(templates), D))
    else:
        table = np.asarray(templates, dtype=float)
        if table.ndim != 2 or table.shape[1] != D:
            raise ValueError(f"templates must be T x {D}, got {table.shape}")
        if np.any(table < 0) or np.any(table > 1):
            raise ValueError("template probabilities must lie in [0, 1]")
    if table.shape[0] < 1:
        raise ValueError("need at least one template")
    assignments = rng.integers(table.shape[0], size=N).astype(np.int64)
    probs = table[assignments]
    data = (rng.random(probs.shape) < probs).astype(np.uint8)
    return SynthDataset(templates=table, assignments=assignments, data=data)


def write_dataset(path: str | pathlib.Path, data: npt.ArrayLike) -> None:
    """Writes a binary ``N x D`` dataset.

    The file holds a 16-byte little-endian header (magic ``CGDS``, version,
    ``N``, ``D``) followed by ``N*D`` bytes, row major.
    """
    array = np.asarray(data)
    if array.ndim != 2 or not np.all((array == 0) | (array == 1)):
        raise ValueError("datasets must be N x D tables of zeros and ones")
    N, D = array.shape
    with pathlib.Path(path).open("wb") as f:
        f.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, N, D))
        f.write(array.astype(np.uint8).tobytes(order="C"))


def read_dataset(path: str | pathlib.Path) -> npt.NDArray[np.uint8]:
    """Reads a dataset written by :py:func:`write_dataset`."""
    raw = pathlib.Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"`{path}' is too short to hold a dataset header")
    magic, version, N, D = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise ValueError(f"`{path}' is not a dataset file (magic {magic!r})")
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    body = raw[_HEADER.size :]
    if len(body) != N * D:
        raise ValueError(
            f"`{path}' holds {len(body)} data bytes, expected {N * D}"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(N, D).copy()
