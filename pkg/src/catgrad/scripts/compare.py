# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

from __future__ import annotations

import click

from ..click import PreserveIndentCommand, verbosity_option
from ..logging import setup

logger = setup(__name__.split(".", 1)[0])


@click.command(
    cls=PreserveIndentCommand,
    epilog="""
Examples:

  1. Checks that ARSM has no more variance than RLOO over five replays:

    .. code:: sh

       $ catgrad compare -vv -r arsm -b rloo replay-*/replay.csv

""",
)
@click.argument(
    "replays",
    nargs=-1,
    required=True,
    type=click.Path(exists=True, dir_okay=False),
)
@click.option(
    "-r",
    "--candidate",
    required=True,
    help="Estimator expected to have the lower variance",
)
@click.option(
    "-b",
    "--baseline",
    required=True,
    help="Estimator compared against",
)
@click.option(
    "-n",
    "--burn-in",
    type=click.IntRange(min=0),
    default=1000,
    show_default=True,
    help="Steps ignored at the start of each replay",
)
@click.option(
    "-s",
    "--seed",
    type=click.IntRange(min=0),
    default=0,
    show_default=True,
    help="Seed of the bootstrap resampling",
)
@verbosity_option(logger=logger)
def compare(replays, candidate, baseline, burn_in, seed, **_) -> None:
    """Bootstraps post-burn-in variances of two estimators across replays."""

    from ..tracking import compare_replays
    from ..utils import make_rng

    if len(replays) < 2:
        raise click.BadParameter(
            "need the replays of at least two seeds", param_hint="REPLAYS"
        )
    try:
        passed = compare_replays(
            replays,
            candidate,
            baseline,
            make_rng(seed, "bootstrap"),
            burn_in=burn_in,
        )
    except ValueError as e:
        raise click.ClickException(str(e))
    if not passed:
        raise click.ClickException(
            f"`{candidate}' has a larger variance than `{baseline}'"
        )
    click.echo(f"{candidate}: variance not larger than {baseline}")
