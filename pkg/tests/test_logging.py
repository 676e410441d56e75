# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

import io
import logging

from catgrad.logging import setup


def test_streams_split_by_level():
    """Progress goes to one stream, problems to the other."""
    low, high = io.StringIO(), io.StringIO()
    logger = setup(
        "catgrad-test-split",
        format="%(levelname)s %(message)s",
        low_level_stream=low,
        high_level_stream=high,
    )
    logger.setLevel(logging.DEBUG)
    logger.debug("tracking")
    logger.info("step 10")
    logger.warning("clamped")
    logger.error("diverged")
    assert low.getvalue() == "DEBUG tracking\nINFO step 10\n"
    assert high.getvalue() == "WARNING clamped\nERROR diverged\n"


def test_setup_is_idempotent():
    """Repeated calls with the same streams do not add handlers."""
    low, high = io.StringIO(), io.StringIO()
    for _ in range(3):
        logger = setup(
            "catgrad-test-repeat", low_level_stream=low, high_level_stream=high
        )
    assert len(logger.handlers) == 2
    other = io.StringIO()
    setup("catgrad-test-repeat", low_level_stream=other, high_level_stream=high)
    assert len(logger.handlers) == 2
    logger.setLevel(logging.INFO)
    logger.info("moved")
    assert "moved" in other.getvalue()
    assert "moved" not in low.getvalue()
