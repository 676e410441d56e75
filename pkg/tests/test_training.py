# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

import json

import numpy as np
import pytest

from catgrad import training
from catgrad.config import BenchConfig
from catgrad.registry import make_estimator
from catgrad.training import (
    Adam,
    BatchGradient,
    batch_gradient,
    check_estimators,
    prepare,
    train,
    variance_replay,
)


def _config(tmp_path, **run):
    settings = dict(
        steps=6,
        batch_size=3,
        eval_every=3,
        eval_samples=5,
        eval_examples=4,
    )
    settings.update(run)
    return BenchConfig.from_dict(
        dict(
            model=dict(
                data_dim=6,
                latent_vars=2,
                categories=4,
                templates=3,
                train_size=20,
                test_size=5,
            ),
            optimizer=dict(learning_rate=0.01),
            run=settings,
            output=dict(directory=str(tmp_path)),
        )
    )


def test_adam_direction():
    """Adam ascends, by about the learning rate on its first step."""
    params = dict(w=np.zeros(2))
    Adam(learning_rate=0.1).step(params, dict(w=np.array([3.0, -0.5])))
    np.testing.assert_allclose(params["w"], [0.1, -0.1], rtol=1e-6)


def test_adam_zero_learning_rate():
    """A zero learning rate leaves parameters untouched."""
    params = dict(w=np.array([1.0, 2.0]))
    optimizer = Adam(learning_rate=0.0)
    for _ in range(3):
        optimizer.step(params, dict(w=np.array([5.0, -5.0])))
    np.testing.assert_array_equal(params["w"], [1.0, 2.0])


def test_prepare_is_deterministic(tmp_path):
    """Data and initial parameters only depend on the configuration."""
    first, train_set, test_set = prepare(_config(tmp_path))
    second, _, _ = prepare(_config(tmp_path))
    assert train_set.data.shape == (20, 6)
    assert test_set.data.shape == (5, 6)
    for name, value in first.parameters.items():
        np.testing.assert_array_equal(value, second.parameters[name])


def test_batch_gradient(tmp_path):
    """Batch gradients cover every block and count evaluations."""
    model, train_set, _ = prepare(_config(tmp_path))
    gradient = batch_gradient(
        model,
        train_set.data[:4].astype(float),
        make_estimator("rloo", rloo_samples=3),
        np.random.default_rng(0),
    )
    assert gradient.finite
    assert gradient.encoder.shape == (8 * 6 + 8,)
    assert 1 <= gradient.f_evals <= 3
    assert set(gradient.grads) == set(model.parameters)


def test_check_estimators():
    """Binary and tree estimators need matching category counts."""
    check_estimators(["disarm", "disarm-tree"], 2)
    check_estimators(["disarm-tree", "ars"], 8)
    with pytest.raises(ValueError):
        check_estimators(["disarm"], 4)
    with pytest.raises(ValueError):
        check_estimators(["disarm-tree"], 3)


def test_train_outputs(tmp_path):
    """Training writes every output and is reproducible by default."""
    summary = train(_config(tmp_path / "a", estimator="disarm-sb"))
    train(_config(tmp_path / "b", estimator="disarm-sb"))
    for name in ("train.csv", "eval.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_text() == (
            tmp_path / "b" / name
        ).read_text()
    rows = (tmp_path / "a" / "train.csv").read_text().splitlines()
    assert rows[0] == "step,elbo,grad_var_mean,f_evals,wall_ms"
    assert len(rows) == 7
    assert all(row.endswith(",0.0") for row in rows[1:])
    steps = [
        row.split(",")[0]
        for row in (tmp_path / "a" / "eval.csv").read_text().splitlines()
    ]
    assert steps == ["step", "0", "3", "6"]
    with np.load(tmp_path / "a" / "params.npz") as params:
        assert params["enc_w"].shape == (8, 6)
    written = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert written["final_bound"] == summary["final_bound"]
    assert np.isfinite(summary["final_elbo"])


def test_train_timing(tmp_path):
    """Wall-clock times are only recorded on request."""
    summary = train(_config(tmp_path, estimator="rloo", timing=True))
    rows = (tmp_path / "train.csv").read_text().splitlines()[1:]
    assert any(float(row.split(",")[-1]) > 0 for row in rows)
    assert "elapsed" in summary


def test_train_rejects_estimator(tmp_path):
    """The binary estimator cannot train a four-category model."""
    with pytest.raises(ValueError):
        train(_config(tmp_path, estimator="disarm"))


def test_variance_replay(tmp_path):
    """Every measured estimator gets a row per evaluation."""
    summary = variance_replay(
        _config(tmp_path, estimators=["rloo", "disarm-tree", "arsm+"])
    )
    assert set(summary["final_grad_var_mean"]) == {
        "rloo",
        "disarm-tree",
        "arsm+",
    }
    assert all(v >= 0 for v in summary["final_grad_var_mean"].values())
    rows = (tmp_path / "replay.csv").read_text().splitlines()
    assert rows[0] == "step,estimator,grad_var_mean"
    assert len(rows) == 1 + 2 * 3


def test_replay_trajectory_is_shared(tmp_path):
    """Measured estimators do not change the trajectory."""
    a = variance_replay(_config(tmp_path / "a", estimators=["rloo"]))
    b = variance_replay(_config(tmp_path / "b", estimators=["rloo", "ars"]))
    assert a["final_grad_var_mean"]["rloo"] == b["final_grad_var_mean"]["rloo"]


def test_divergence(tmp_path, monkeypatch):
    """Non-finite gradients stop training with a record."""

    def broken(model, batch, estimator, rng):
        return BatchGradient(
            grads={k: np.zeros_like(v) for k, v in model.parameters.items()},
            elbo=float("nan"),
            f_evals=1.0,
        )

    monkeypatch.setattr(training, "batch_gradient", broken)
    with pytest.raises(RuntimeError):
        train(_config(tmp_path))
    record = json.loads((tmp_path / "divergence.json").read_text())
    assert record["step"] == 1
    assert record["elbo"] == "nan"
