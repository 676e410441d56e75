# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

from __future__ import annotations

import click

from ..click import PreserveIndentCommand, verbosity_option
from ..logging import setup
from .options import config_options

logger = setup(__name__.split(".", 1)[0])


@click.command(
    cls=PreserveIndentCommand,
    epilog="""
Examples:

  1. Trains the toy VAE with the default configuration (RLOO estimator):

    .. code:: sh

       $ catgrad train -vv

  2. Trains with the tree estimator on a given configuration and seed:

    .. code:: sh

       $ catgrad train -vv -c bench.toml -e disarm-tree -s 3 -o results/tree-3

""",
)
@config_options
@click.option(
    "-e",
    "--estimator",
    default=None,
    help="Estimator driving the training (overrides [run] estimator)",
)
@verbosity_option(logger=logger)
def train(config, seed, out_dir, estimator, **_) -> None:
    """Trains the toy VAE and records ELBO, bound and gradient variance."""

    import dataclasses

    from ..training import train as run_training

    config = config.override(seed=seed, directory=out_dir)
    if estimator is not None:
        try:
            config = dataclasses.replace(
                config,
                run=dataclasses.replace(config.run, estimator=estimator),
            )
        except ValueError as e:
            raise click.BadParameter(str(e), param_hint="--estimator")

    summary = run_training(config)
    click.echo(
        f"{summary['estimator']}: final elbo {summary['final_elbo']:.4f}, "
        f"final bound {summary['final_bound']:.4f}"
    )
