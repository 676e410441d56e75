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
    name="variance-replay",
    cls=PreserveIndentCommand,
    epilog="""
Examples:

  1. Measures every default estimator along an RLOO trajectory:

    .. code:: sh

       $ catgrad variance-replay -vv -o results/replay-0

  2. Repeats the measurement for five seeds, to be compared afterwards:

    .. code:: sh

       $ for s in 0 1 2 3 4; do
       >   catgrad variance-replay -s $s -o replay-$s
       > done
       $ catgrad compare -r arsm -b rloo replay-*/replay.csv

""",
)
@config_options
@verbosity_option(logger=logger)
def variance_replay(config, seed, out_dir, **_) -> None:
    """Measures the gradient variance of several estimators on one path."""

    from ..training import variance_replay as run_replay

    summary = run_replay(config.override(seed=seed, directory=out_dir))
    for name, value in summary["final_grad_var_mean"].items():
        click.echo(f"{name}: {value if value is None else f'{value:.6g}'}")
