"""Self-damaging contrastive learning on long-tailed data.

Experiment stages take the same JSON config as the ``sdclr`` command line
tool, given here as a dict or a path to a JSON file.
"""

import json
import os

from . import _core
from ._core import (
    CapacityError,
    ContractError,
    InvalidParameter,
    InvalidSpec,
    TrainingDiverged,
    assign_groups,
    downsample_profile,
    exp_profile,
    few_shot_indices,
    forgetting_scores,
    magnitude_mask,
    ntxent_loss,
    pareto_profile,
    population_std,
)

__all__ = [
    "CapacityError",
    "ContractError",
    "InvalidParameter",
    "InvalidSpec",
    "TrainingDiverged",
    "assign_groups",
    "downsample_profile",
    "evaluate",
    "evaluate_predictions",
    "exp_profile",
    "experiment_hash",
    "few_shot_indices",
    "forgetting_scores",
    "load_config",
    "magnitude_mask",
    "make_data",
    "mine_pies",
    "ntxent_loss",
    "pareto_profile",
    "population_std",
    "pretrain",
    "report",
]


def _dump(config):
    if isinstance(config, (str, os.PathLike)):
        with open(config, encoding="utf-8") as f:
            config = json.load(f)
    return json.dumps(config)


def load_config(config):
    """Validated config dict with every default filled in."""
    return json.loads(_core.normalize_config(_dump(config)))


def experiment_hash(config):
    return _core.experiment_hash(_dump(config))


def make_data(config, force=False):
    return _core.make_data(_dump(config), force)


def pretrain(config, variant="sdclr", force=False):
    return _core.pretrain(_dump(config), variant, force)


def evaluate(config, variant="sdclr", protocol="linear", plots=False):
    return _core.evaluate(_dump(config), variant, protocol, plots)


def mine_pies(config, variant="sdclr", plots=False):
    return _core.mine_pies(_dump(config), variant, plots)


def report(run_dirs, out, force=False, plots=False):
    return _core.report([os.fspath(d) for d in run_dirs], os.fspath(out), force, plots)


def evaluate_predictions(predictions, labels, n_classes, group_of_class):
    """Per-class, per-group, Std and overall accuracy (percent) as a dict."""
    return json.loads(_core.evaluate_predictions(list(predictions), list(labels), n_classes, list(group_of_class)))
