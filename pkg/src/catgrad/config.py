# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Benchmark configuration files.

A configuration is a TOML file with the sections ``[model]``,
``[optimizer]``, ``[run]``, ``[output]`` and ``[verify]``.  Every key is
optional; unknown keys are rejected.  Configurations can also be named in
the ``[configs]`` table of the user configuration file
(:py:data:`USER_CONFIGURATION`):

.. code-block:: toml

   [configs]
   default = "~/experiments/toy.toml"
   wide = "~/experiments/wide.toml"
"""

from __future__ import annotations

import dataclasses
import logging
import os
import pathlib
import typing

import tomli
import xdg

from .dist import ORDERINGS
from .registry import COUPLINGS, ESTIMATORS

logger = logging.getLogger(__name__)

USER_CONFIGURATION = xdg.xdg_config_home() / "catgrad.toml"
"""The default location for the user configuration file."""

REPLAY_ESTIMATORS = (
    "rloo",
    "rloo-ars",
    "rloo-arsm",
    "disarm-iw",
    "disarm-sb",
    "disarm-tree",
    "ars",
    "ars+",
    "arsm",
    "arsm+",
)
"""Estimators measured by default along the replay trajectory."""


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    data_dim: int = 16
    latent_vars: int = 4
    categories: int = 4
    templates: int = 8
    train_size: int = 1000
    test_size: int = 100


@dataclasses.dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Training and replay settings.

    ``estimator`` drives training; ``estimators`` are measured by the
    variance replay, whose trajectory always follows ``trajectory``.
    """

    estimator: str = "rloo"
    estimators: tuple[str, ...] = REPLAY_ESTIMATORS
    trajectory: str = "rloo"
    steps: int = 5000
    batch_size: int = 16
    eval_every: int = 100
    variance_every: int = 1
    eval_samples: int = 100
    eval_examples: int = 100
    ordering: str = "ascending"
    rloo_samples: int = 2
    coupling: str = "stick"
    ema_decay: float = 0.999
    seed: int = 0
    replicate: int = 0
    timing: bool = False


@dataclasses.dataclass(frozen=True)
class OutputConfig:
    directory: str = "results"


@dataclasses.dataclass(frozen=True)
class VerifyConfig:
    """Sizes of the verification suite."""

    exact_instances: int = 100
    max_vars: int = 3
    max_categories: int = 8
    coupling_instances: int = 50
    fd_instances: int = 100
    mc_instances: int = 20
    mc_draws: int = 200_000
    z_threshold: float = 4.0
    dominance_instances: int = 10
    dominance_draws: int = 20_000
    interval_instances: int = 20
    interval_accepted: int = 10_000
    interval_draws: int = 10_000


_SECTIONS: dict[str, type] = dict(
    model=ModelConfig,
    optimizer=OptimizerConfig,
    run=RunConfig,
    output=OutputConfig,
    verify=VerifyConfig,
)


def _section(cls: type, name: str, values: typing.Any) -> typing.Any:
    if not isinstance(values, dict):
        raise ValueError(f"[{name}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValueError(
            f"unknown key(s) in [{name}]: {', '.join(unknown)} - choose from "
            f"{', '.join(known)}"
        )
    converted = {}
    for key, value in values.items():
        default = known[key].default
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ValueError(f"[{name}] {key} must be a list")
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError(f"[{name}] {key} must be a boolean")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"[{name}] {key} must be an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"[{name}] {key} must be a number")
            value = float(value)
        elif not isinstance(value, type(default)):
            raise ValueError(
                f"[{name}] {key} must be a {type(default).__name__}"
            )
        converted[key] = value
    return cls(**converted)


@dataclasses.dataclass(frozen=True)
class BenchConfig:
    """Complete benchmark configuration."""

    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = dataclasses.field(
        default_factory=OptimizerConfig
    )
    run: RunConfig = dataclasses.field(default_factory=RunConfig)
    output: OutputConfig = dataclasses.field(default_factory=OutputConfig)
    verify: VerifyConfig = dataclasses.field(default_factory=VerifyConfig)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Checks cross-field constraints, raising :py:class:`ValueError`."""
        m, o, r = self.model, self.optimizer, self.run
        if m.data_dim < 1 or m.latent_vars < 1 or m.categories < 2:
            raise ValueError(
                f"model needs data_dim >= 1, latent_vars >= 1 and "
                f"categories >= 2, got {m}"
            )
        if m.templates < 1 or m.train_size < 1 or m.test_size < 1:
            raise ValueError("model needs templates, train and test sizes >= 1")
        if o.kind != "adam":
            raise ValueError(f"unknown optimizer `{o.kind}' - only adam")
        if o.learning_rate < 0:
            raise ValueError(
                f"learning rate must not be negative, got {o.learning_rate}"
            )
        if not (0 <= o.beta1 < 1 and 0 <= o.beta2 < 1) or o.epsilon <= 0:
            raise ValueError("adam needs betas in [0, 1) and epsilon > 0")
        for name in (r.estimator, r.trajectory, *r.estimators):
            if name not in ESTIMATORS:
                raise ValueError(
                    f"unknown estimator `{name}' - choose from "
                    f"{', '.join(ESTIMATORS)}"
                )
        if r.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering `{r.ordering}'")
        if r.coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling `{r.coupling}'")
        for key in ("steps", "batch_size", "eval_every", "variance_every"):
            if getattr(r, key) < 1:
                raise ValueError(f"[run] {key} must be >= 1")
        if r.eval_samples < 1 or r.eval_examples < 1:
            raise ValueError(
                "[run] eval_samples and eval_examples must be >= 1"
            )
        if r.rloo_samples < 2:
            raise ValueError("[run] rloo_samples must be >= 2")
        if not 0 <= r.ema_decay < 1:
            raise ValueError("[run] ema_decay must lie in [0, 1)")
        if r.seed < 0 or r.replicate < 0:
            raise ValueError("[run] seed and replicate must be >= 0")

    @classmethod
    def from_dict(cls, data: dict[str, typing.Any]) -> BenchConfig:
        """Builds a configuration from parsed TOML."""
        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise ValueError(
                f"unknown section(s) {', '.join(unknown)} - choose from "
                f"{', '.join(_SECTIONS)}"
            )
        return cls(
            **{
                name: _section(kind, name, data.get(name, {}))
                for name, kind in _SECTIONS.items()
            }
        )

    def to_dict(self) -> dict[str, typing.Any]:
        """Plain (JSON-serializable) representation."""
        result = dataclasses.asdict(self)
        result["run"]["estimators"] = list(self.run.estimators)
        return result

    def override(
        self,
        seed: int | None = None,
        directory: str | pathlib.Path | None = None,
    ) -> BenchConfig:
        """Copy with the command-line overrides applied."""
        run = (
            self.run
            if seed is None
            else dataclasses.replace(self.run, seed=seed)
        )
        output = (
            self.output
            if directory is None
            else dataclasses.replace(self.output, directory=str(directory))
        )
        return dataclasses.replace(self, run=run, output=output)


def load(path: str | pathlib.Path) -> BenchConfig:
    """Loads a configuration TOML file."""
    with pathlib.Path(path).open("rb") as f:
        return BenchConfig.from_dict(tomli.load(f))


def get_config_path(name: str | pathlib.Path) -> pathlib.Path | None:
    """Returns the configuration file a name refers to.

    An existing file is returned as is.  Otherwise the name is looked up in
    the ``[configs]`` table of the user configuration, ``default`` being the
    entry used when no ``--config`` is given.


    Arguments:

        name: Either a path to an existing TOML file, or a key of the user
            configuration


    Returns:

        Either ``None``, if the name is unknown, or the configured path.
    """
    path = pathlib.Path(name)
    if path.is_file():
        logger.debug(f"Using configuration file {str(path)}...")
        return path

    if USER_CONFIGURATION.exists():
        logger.debug(
            f"Loading user-configuration from {str(USER_CONFIGURATION)}..."
        )
        with USER_CONFIGURATION.open("rb") as f:
            usercfg = tomli.load(f)
    else:
        usercfg = {}

    value = usercfg.get("configs", {}).get(str(name))
    if value is None:
        if str(name) != "default":
            logger.warning(
                f"Requested configuration `{name}' is neither an existing "
                f"file nor a key of the [configs] table at "
                f"{str(USER_CONFIGURATION)}"
            )
        return None

    return pathlib.Path(os.path.expanduser(value))


def resolve(name: str | pathlib.Path | None) -> BenchConfig:
    """Loads the named configuration, or the defaults.

    With no name, the ``default`` entry of the user configuration is used if
    present; otherwise all defaults apply.
    """
    if name is None:
        path = get_config_path("default")
        return BenchConfig() if path is None else load(path)
    path = get_config_path(name)
    if path is None:
        raise FileNotFoundError(
            f"cannot find configuration `{name}' (not a file, nor a key of "
            f"{str(USER_CONFIGURATION)})"
        )
    logger.info(f"Loading configuration from `{str(path)}'...")
    return load(path)
