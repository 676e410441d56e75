# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

import numpy as np
import pytest

from catgrad.tracking import (
    REPLAY_COLUMNS,
    CsvWriter,
    VarianceTracker,
    compare_replays,
    ema_update,
    post_burn_in_mean,
    read_replay,
)


def test_first_observation():
    """The first gradient initializes both averages."""
    tracker = ema_update(VarianceTracker(decay=0.9), [1.0, -2.0])
    np.testing.assert_array_equal(tracker.mean, [1.0, -2.0])
    np.testing.assert_array_equal(tracker.second, [1.0, 4.0])
    assert tracker.count == 1
    assert tracker.mean_variance == 0.0


def test_moving_averages():
    """Later gradients are blended with the decay."""
    tracker = VarianceTracker(decay=0.5)
    for g in ([0.0], [2.0]):
        tracker = ema_update(tracker, g)
    assert tracker.mean[0] == pytest.approx(1.0)
    assert tracker.second[0] == pytest.approx(2.0)
    assert tracker.mean_variance == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ema_update(tracker, [1.0, 2.0])


def test_variance_clamped():
    """Negative rounding residues are reported as zero."""
    tracker = VarianceTracker(
        decay=0.5, mean=np.array([1.0]), second=np.array([1.0 - 1e-9]), count=3
    )
    assert tracker.mean_variance == 0.0


def test_tracker_validation():
    """Decays outside [0, 1) and empty trackers are rejected."""
    with pytest.raises(ValueError):
        VarianceTracker(decay=1.0)
    with pytest.raises(ValueError):
        VarianceTracker().variance


def test_csv_writer(tmp_path):
    """Rows are written under a fixed header."""
    path = tmp_path / "out.csv"
    with CsvWriter(path, ("step", "bound")) as writer:
        writer.write(10, 0.5)
        with pytest.raises(ValueError):
            writer.write(1)
    assert path.read_text().splitlines() == ["step,bound", "10,0.5"]


def _replay(path, rows):
    with CsvWriter(path, REPLAY_COLUMNS) as writer:
        for row in rows:
            writer.write(*row)
    return path


def test_read_replay(tmp_path):
    """Replays are grouped by estimator."""
    path = _replay(
        tmp_path / "replay.csv",
        [(1, "a", 2.0), (1, "b", 3.0), (2, "a", 4.0)],
    )
    replay = read_replay(path)
    np.testing.assert_array_equal(replay["a"][0], [1.0, 2.0])
    np.testing.assert_array_equal(replay["a"][1], [2.0, 4.0])
    assert post_burn_in_mean(replay, "a", 1) == 4.0
    with pytest.raises(ValueError):
        post_burn_in_mean(replay, "b", 1)
    with pytest.raises(ValueError):
        post_burn_in_mean(replay, "c", 0)
    (tmp_path / "other.csv").write_text("step,bound\n1,2\n")
    with pytest.raises(ValueError):
        read_replay(tmp_path / "other.csv")


def test_compare_replays(tmp_path):
    """Clearly smaller variance passes, clearly larger fails."""
    paths = [
        _replay(
            tmp_path / f"replay-{seed}.csv",
            [(step, "low", 1.0 + 0.01 * seed) for step in (5, 10)]
            + [(step, "high", 2.0 + 0.01 * seed) for step in (5, 10)],
        )
        for seed in range(5)
    ]
    rng = np.random.default_rng(0)
    assert compare_replays(paths, "low", "high", rng, burn_in=0)
    assert not compare_replays(paths, "high", "low", rng, burn_in=0)
