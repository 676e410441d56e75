# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Console logging with separate streams for progress and problems."""

import logging
import sys
import typing

DEFAULT_FORMAT = "[%(levelname)s][%(name)s][%(asctime)s] %(message)s"
"""Record format of both console handlers."""


class _InfoFilter(logging.Filter):
    """Lets through records at :py:data:`logging.INFO` and below only."""

    def filter(self, record: logging.LogRecord) -> bool:
        return record.levelno <= logging.INFO


def _attach(
    logger: logging.Logger,
    handler_name: str,
    stream: typing.TextIO,
    level: int,
    formatter: logging.Formatter,
    only_progress: bool,
) -> None:
    installed = {h.name: h for h in logger.handlers}
    current = installed.get(handler_name)
    if current is not None and getattr(current, "stream", None) is stream:
        return
    if current is not None:
        logger.removeHandler(current)
    handler = logging.StreamHandler(stream)
    handler.setLevel(level)
    handler.setFormatter(formatter)
    if only_progress:
        handler.addFilter(_InfoFilter())
    handler.name = handler_name
    logger.addHandler(handler)


def setup(
    logger_name: str,
    format: str = DEFAULT_FORMAT,
    low_level_stream: typing.TextIO = sys.stdout,
    high_level_stream: typing.TextIO = sys.stderr,
) -> logging.Logger:
    """Prepares a named logger for console output.

    Two handlers are attached: debug and info records (training progress,
    verification checks, output paths) go to ``low_level_stream``; warnings
    and errors go to ``high_level_stream``.  The logger level itself is left
    alone, so verbosity is still controlled in a single place (see
    :py:func:`catgrad.click.verbosity_option`).  Calling this again with the
    same streams does not duplicate handlers.


    Arguments:

        logger_name: Name of the logger to configure (``catgrad`` for the
            command-line tools)

        format: Record format, see :py:class:`logging.LogRecord`

        low_level_stream: Destination of info messages and below

        high_level_stream: Destination of warnings and above


    Returns:

        The configured logger, also available through
        :py:func:`logging.getLogger`.
    """
    logger = logging.getLogger(logger_name)
    formatter = logging.Formatter(format)
    _attach(
        logger,
        f"debug_info+{logger_name}",
        low_level_stream,
        logging.DEBUG,
        formatter,
        only_progress=True,
    )
    _attach(
        logger,
        f"warn_err+{logger_name}",
        high_level_stream,
        logging.WARNING,
        formatter,
        only_progress=False,
    )
    return logger
