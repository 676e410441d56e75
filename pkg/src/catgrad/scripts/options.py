# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Options shared by the benchmark commands."""

from __future__ import annotations

import typing

import click

from ..click import validate_config


def config_options(f: typing.Callable[..., typing.Any]):
    """Adds ``--config``, ``--seed`` and ``--out-dir`` to a command."""
    f = click.option(
        "-o",
        "--out-dir",
        type=click.Path(file_okay=False, writable=True),
        default=None,
        help="Directory receiving the outputs (overrides [output] directory)",
    )(f)
    f = click.option(
        "-s",
        "--seed",
        type=click.IntRange(min=0),
        default=None,
        help="Master seed of every random stream (overrides [run] seed)",
    )(f)
    return click.option(
        "-c",
        "--config",
        default=None,
        callback=validate_config,
        help="TOML configuration file, or the name of an entry in the "
        "[configs] table of the user configuration (defaults apply if "
        "omitted)",
    )(f)
