# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

"""Seeding, build identification, JSON output and formatting helpers."""

from __future__ import annotations

import importlib.metadata
import json
import logging
import math
import pathlib
import typing
import zlib

import numpy as np

logger = logging.getLogger(__name__)

_INTERVALS = (
    ("weeks", 604800),  # 60 * 60 * 24 * 7
    ("days", 86400),  # 60 * 60 * 24
    ("hours", 3600),  # 60 * 60
    ("minutes", 60),
    ("seconds", 1),
)
"""Time intervals that make up human readable time slots."""


def human_time(seconds: int | float, granularity: int = 2) -> str:
    """Human readable duration like "1 hour, 2 minutes".

    Arguments:

        seconds: The duration to convert

        granularity: How many of the leading non-zero units to show


    Returns:

        The formatted duration.
    """
    parts: list[str | None] = []
    for name, count in _INTERVALS:
        value = seconds // count
        if value:
            seconds -= value * count
            unit = name.rstrip("s") if value == 1 else name
            parts.append(f"{int(value)} {unit}")
        elif parts:
            parts.append(None)

    if not parts:
        if seconds < 1.0:
            return f"{seconds:.2f} seconds"
        return "1 second" if seconds == 1 else f"{int(seconds)} seconds"

    return ", ".join(p for p in parts[:granularity] if p is not None)


def stream_key(purpose: str, estimator: str = "") -> int:
    """Stable integer naming a random stream."""
    return zlib.crc32(f"{purpose}/{estimator}".encode("utf-8"))


def derive_seed(
    seed: int, purpose: str, estimator: str = "", replicate: int = 0
) -> np.random.SeedSequence:
    """Seed sequence of the stream ``(purpose, estimator, replicate)``.

    Streams are spawned from the master seed with the key ``(crc32 of
    "purpose/estimator", replicate)``, so adding a stream never shifts
    another one.
    """
    if seed < 0:
        raise ValueError(f"seeds must be non-negative, got {seed}")
    return np.random.SeedSequence(
        entropy=seed, spawn_key=(stream_key(purpose, estimator), replicate)
    )


def make_rng(
    seed: int, purpose: str, estimator: str = "", replicate: int = 0
) -> np.random.Generator:
    """Generator of the stream ``(purpose, estimator, replicate)``."""
    return np.random.default_rng(
        derive_seed(seed, purpose, estimator, replicate)
    )


def build_id() -> str:
    """Identifies the running code.

    Uses ``git describe --tags --always --dirty`` when running from a
    checkout, the installed package version otherwise.
    """
    try:
        import git

        repo = git.Repo(
            pathlib.Path(__file__).parent, search_parent_directories=True
        )
        return str(repo.git.describe("--tags", "--always", "--dirty"))
    except Exception as e:  # not a checkout, or git is unavailable
        logger.debug(f"Cannot describe the source tree ({e})")

    try:
        return importlib.metadata.version("catgrad")
    except importlib.metadata.PackageNotFoundError:
        return "unknown"


def json_safe(value: typing.Any) -> typing.Any:
    """Copy of ``value`` with non-finite floats spelled as strings.

    ``inf``, ``-inf`` and ``nan`` become ``"inf"``, ``"-inf"`` and ``"nan"``
    inside (nested) dictionaries, lists and tuples, keeping the result
    valid JSON.
    """
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def write_json(path: pathlib.Path, content: dict[str, typing.Any]) -> None:
    """Writes ``content`` as indented, strictly valid JSON."""
    with path.open("w", encoding="utf-8") as f:
        json.dump(json_safe(content), f, indent=2, allow_nan=False)
        f.write("\n")
