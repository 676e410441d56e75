# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

from __future__ import annotations

import click

from ..click import AliasedGroup
from .compare import compare
from .dataset import make_dataset
from .replay import variance_replay
from .train import train
from .verify import verify


@click.group(
    cls=AliasedGroup,
    context_settings=dict(help_option_names=["-?", "-h", "--help"]),
)
def cli():
    """Categorical gradient estimators - see available commands below"""
    pass


cli.add_command(verify)
cli.add_command(train)
cli.add_command(variance_replay)
cli.add_command(compare)
cli.add_command(make_dataset)
