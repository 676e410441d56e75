# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Click helpers shared by the ``catgrad`` commands."""

from __future__ import annotations

import logging
import typing

import click

from .config import BenchConfig, resolve

VERBOSITY_LEVELS = (logging.ERROR, logging.WARNING, logging.INFO, logging.DEBUG)
"""Logger level reached by each count of ``-v``."""


def verbosity_option(
    logger: logging.Logger,
    default: int = 0,
    **kwargs: typing.Any,
) -> typing.Callable[..., typing.Any]:
    """Adds a counted ``-v``/``--verbose`` option setting ``logger``'s level.

    .. code-block:: python

       @verbosity_option(logger=logger)

    Without the option only errors are shown; ``-v`` adds warnings (clamped
    variances, diverging runs), ``-vv`` progress (evaluations, checks,
    output paths) and ``-vvv`` debugging output.  The count is also stored
    in ``ctx.meta["verbose"]``.


    Arguments:

        logger: Logger whose level follows the option

        default: Count used when the option is absent

        **kwargs: Forwarded to :py:func:`click.option`


    Returns:

        The option decorator.
    """

    def set_level(ctx: click.Context, _: click.Parameter, count: int) -> int:
        ctx.meta["verbose"] = count
        logger.setLevel(VERBOSITY_LEVELS[count])
        logger.debug(
            f"Logger `{logger.name}' now at "
            f"{logging.getLevelName(logger.level)}"
        )
        return count

    names = ", ".join(
        f"{i} ({logging.getLevelName(level).lower()})"
        for i, level in enumerate(VERBOSITY_LEVELS)
    )
    return click.option(
        "-v",
        "--verbose",
        count=True,
        type=click.IntRange(0, len(VERBOSITY_LEVELS) - 1, clamp=True),
        default=default,
        show_default=True,
        help=f"Repeat to show more messages; levels are {names}.",
        callback=set_level,
        **kwargs,
    )


class AliasedGroup(click.Group):
    """Command group also accepting unique prefixes of command names.

    ``catgrad var`` runs ``variance-replay``; ``catgrad v`` is ambiguous
    between it and ``verify`` and fails.
    """

    def get_command(  # type: ignore
        self, ctx: click.Context, cmd_name: str
    ) -> click.Command | None:
        candidates = [
            name
            for name in self.list_commands(ctx)
            if name == cmd_name or name.startswith(cmd_name)
        ]
        if cmd_name in candidates:
            candidates = [cmd_name]
        if len(candidates) > 1:
            ctx.fail(
                f"`{cmd_name}' may be any of {', '.join(sorted(candidates))}"
            )
        if not candidates:
            return None
        return super().get_command(ctx, candidates[0])


class PreserveIndentCommand(click.Command):
    """Command whose description and epilog keep their line breaks.

    Epilogs hold the indented ``Examples:`` sections of every command.
    """

    def _verbatim(
        self, text: str | None, formatter: click.HelpFormatter
    ) -> None:
        if not text:
            return
        formatter.write_paragraph()
        for line in text.splitlines():
            formatter.write_text(line)

    def format_epilog(
        self, ctx: click.Context, formatter: click.HelpFormatter
    ) -> None:
        self._verbatim(self.epilog, formatter)

    def format_description(
        self, ctx: click.Context, formatter: click.HelpFormatter
    ) -> None:
        self._verbatim(getattr(self, "description", None), formatter)


def validate_config(
    ctx: click.Context, param: click.Parameter, value: str | None
) -> BenchConfig:
    """Callback turning ``--config`` into a loaded configuration.

    ``value`` is a TOML file, a key of the user configuration, or ``None``
    for the defaults.  Problems are reported as bad parameters.
    """
    try:
        return resolve(value)
    except FileNotFoundError as e:
        raise click.BadParameter(str(e), ctx=ctx, param=param)
    except ValueError as e:
        raise click.BadParameter(
            f"invalid configuration `{value}': {e}", ctx=ctx, param=param
        )
    except OSError as e:
        raise click.BadParameter(
            f"cannot read configuration `{value}': {e}", ctx=ctx, param=param
        )
