# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

from __future__ import annotations

import click

from ..click import PreserveIndentCommand, verbosity_option
from ..logging import setup
from ..verify import CHECKS
from .options import config_options

logger = setup(__name__.split(".", 1)[0])


@click.command(
    cls=PreserveIndentCommand,
    epilog="""
Examples:

  1. Runs every check at the default sizes, writing ``verify.json``:

    .. code:: sh

       $ catgrad verify -vv -o results/verify

  2. Runs the exact and coupling checks only:

    .. code:: sh

       $ catgrad verify -vv -k exact -k coupling

  3. Uses smaller Monte Carlo sizes from a configuration file:

    .. code:: sh

       $ cat quick.toml
       [verify]
       mc_draws = 20000
       dominance_draws = 5000
       $ catgrad verify -vv -c quick.toml

""",
)
@config_options
@click.option(
    "-k",
    "--check",
    "checks",
    multiple=True,
    type=click.Choice(CHECKS),
    help="Check to run (repeat for several; all checks if omitted)",
)
@verbosity_option(logger=logger)
def verify(config, seed, out_dir, checks, **_) -> None:
    """Checks estimators and couplings against exact and sampled oracles."""

    from ..verify import verify as run_checks

    report = run_checks(config.override(seed=seed, directory=out_dir), checks)
    for name, result in report["checks"].items():
        status = "ok" if result["passed"] else "FAILED"
        click.echo(f"{name}: {status} ({result['instances']} reports)")
    if not report["passed"]:
        raise click.ClickException("verification failed, see verify.json")
