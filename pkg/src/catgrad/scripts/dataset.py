# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

from __future__ import annotations

import click

from ..click import PreserveIndentCommand, validate_config, verbosity_option
from ..logging import setup

logger = setup(__name__.split(".", 1)[0])


@click.command(
    name="make-dataset",
    cls=PreserveIndentCommand,
    epilog="""
Examples:

  1. Writes the training and test data of the default configuration:

    .. code:: sh

       $ catgrad make-dataset -vv data/

  2. Same, for a given configuration and seed:

    .. code:: sh

       $ catgrad make-dataset -vv -c bench.toml -s 7 data/

""",
)
@click.argument(
    "output",
    type=click.Path(file_okay=False, writable=True),
)
@click.option(
    "-c",
    "--config",
    default=None,
    callback=validate_config,
    help="TOML configuration file, or the name of an entry in the "
    "[configs] table of the user configuration (defaults apply if omitted)",
)
@click.option(
    "-s",
    "--seed",
    type=click.IntRange(min=0),
    default=None,
    help="Master seed (overrides [run] seed)",
)
@verbosity_option(logger=logger)
def make_dataset(output, config, seed, **_) -> None:
    """Writes the synthetic binary dataset a configuration trains on."""

    import pathlib

    from ..models import write_dataset
    from ..training import prepare

    config = config.override(seed=seed)
    _, train_set, test_set = prepare(config)
    directory = pathlib.Path(output)
    directory.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train_set), ("test", test_set)):
        path = directory / f"{name}.bin"
        write_dataset(path, part.data)
        logger.info(f"Wrote {len(part.data)} examples to `{str(path)}'")
    click.echo(str(directory))
