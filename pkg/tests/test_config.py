# Copyright © 2023 Idiap Research Institute <contact@idiap.ch>
#
# SPDX-License-Identifier: BSD-3-Clause

import dataclasses

import pytest

from catgrad import config
from catgrad.config import BenchConfig, load, resolve


@pytest.fixture
def user_configuration(tmp_path, monkeypatch):
    path = tmp_path / "catgrad.toml"
    monkeypatch.setattr(config, "USER_CONFIGURATION", path)
    return path


def test_defaults():
    """Every section has usable defaults."""
    cfg = BenchConfig()
    assert cfg.run.estimator == "rloo"
    assert cfg.optimizer.kind == "adam"
    assert cfg.run.timing is False
    assert cfg.to_dict()["run"]["estimators"] == list(cfg.run.estimators)
    assert BenchConfig.from_dict(cfg.to_dict()) == cfg


def test_load(tmp_path):
    """Keys are read per section and integers widen to floats."""
    path = tmp_path / "bench.toml"
    path.write_text(
        "[model]\nlatent_vars = 2\n"
        "[optimizer]\nlearning_rate = 0\n"
        '[run]\nestimator = "disarm-tree"\nestimators = ["ars", "arsm"]\n'
        "timing = true\n"
    )
    cfg = load(path)
    assert cfg.model.latent_vars == 2
    assert cfg.optimizer.learning_rate == 0.0
    assert isinstance(cfg.optimizer.learning_rate, float)
    assert cfg.run.estimator == "disarm-tree"
    assert cfg.run.estimators == ("ars", "arsm")
    assert cfg.run.timing is True


@pytest.mark.parametrize(
    "data",
    [
        {"unknown": {}},
        {"run": {"color": "blue"}},
        {"run": {"steps": "many"}},
        {"run": {"steps": True}},
        {"run": {"timing": 1}},
        {"run": {"estimators": "ars"}},
        {"run": "steps"},
        {"run": {"steps": 0}},
        {"run": {"estimator": "gumbel"}},
        {"run": {"ordering": "random"}},
        {"run": {"rloo_samples": 1}},
        {"run": {"ema_decay": 1.0}},
        {"model": {"categories": 1}},
        {"optimizer": {"kind": "sgd"}},
        {"optimizer": {"learning_rate": -1.0}},
    ],
)
def test_invalid(data):
    """Unknown keys, wrong types and bad values are rejected."""
    with pytest.raises(ValueError):
        BenchConfig.from_dict(data)


def test_replace_revalidates():
    """Derived configurations are checked again."""
    cfg = BenchConfig()
    with pytest.raises(ValueError):
        dataclasses.replace(
            cfg, run=dataclasses.replace(cfg.run, estimator="nope")
        )


def test_override(tmp_path):
    """Command-line overrides replace the seed and output directory."""
    cfg = BenchConfig().override(seed=7, directory=tmp_path)
    assert cfg.run.seed == 7
    assert cfg.output.directory == str(tmp_path)
    assert BenchConfig().override() == BenchConfig()


def test_resolve(tmp_path, user_configuration):
    """Names are looked up in the user configuration."""
    bench = tmp_path / "wide.toml"
    bench.write_text("[model]\ncategories = 8\n")
    assert resolve(None) == BenchConfig()
    user_configuration.write_text(
        f'[configs]\nwide = "{bench}"\ndefault = "{bench}"\n'
    )
    assert resolve("wide").model.categories == 8
    assert resolve(None).model.categories == 8
    assert resolve(bench).model.categories == 8
    with pytest.raises(FileNotFoundError):
        resolve("narrow")
