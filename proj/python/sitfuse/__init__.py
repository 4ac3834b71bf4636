"""Situational fusion of perception representations for gridworld navigation.

Thin wrapper over the compiled core. Commands take an optional config path and a
list of dotted overrides such as ``"train.iterations=200"`` and return dicts.
"""

import json

from . import _core
from ._core import (
    ConfigError,
    DataError,
    Environment,
    affinity_loss,
    coefficient_of_variation,
    cross_entropy,
    load_balance_loss,
    softmax,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Environment",
    "affinity_loss",
    "analyze",
    "coefficient_of_variation",
    "compute_affinity",
    "config_digest",
    "cross_entropy",
    "default_config",
    "evaluate",
    "generate",
    "gradcheck",
    "load_balance_loss",
    "robust",
    "softmax",
    "table",
    "train",
]


def _overrides(config, overrides, out_dir):
    items = list(overrides or [])
    if out_dir is not None:
        items.append("out_dir=" + json.dumps(str(out_dir)))
    return str(config or ""), items


def default_config():
    return json.loads(_core.default_config())


def config_digest(config=None, overrides=None):
    return _core.config_digest(*_overrides(config, overrides, None))


def generate(config=None, overrides=None, out_dir=None):
    return json.loads(_core.gen(*_overrides(config, overrides, out_dir)))


def compute_affinity(config=None, overrides=None, out_dir=None):
    return json.loads(_core.affinity(*_overrides(config, overrides, out_dir)))


def train(model, config=None, overrides=None, out_dir=None):
    return json.loads(_core.train(*_overrides(config, overrides, out_dir), model))


def evaluate(rule="policy", model="", k=1, config=None, overrides=None, out_dir=None):
    return json.loads(_core.evaluate(*_overrides(config, overrides, out_dir), rule, model, k))


def robust(model, mode="renormalize", config=None, overrides=None, out_dir=None):
    return json.loads(_core.robust(*_overrides(config, overrides, out_dir), model, mode))


def analyze(model, config=None, overrides=None, out_dir=None):
    return json.loads(_core.analyze(*_overrides(config, overrides, out_dir), model))


def table(reports, out_prefix):
    return json.loads(_core.table([str(r) for r in reports], str(out_prefix)))


def gradcheck(seed=7, configurations=20):
    return json.loads(_core.gradcheck(seed, configurations))
