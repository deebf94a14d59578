"""Strict JSON run configuration: parsing, defaults and conversion to a TrainConfig.

A run config has the sections ``dataset``, ``train``, ``strategy``,
``teacher`` and ``augment`` plus top-level ``seed`` and ``out``. Unknown keys
are rejected everywhere. :func:`resolve` fills in every default so the
persisted ``config.json`` fully describes a run.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from pathlib import Path

from .data import AugmentSpec, load_points_csv, make_two_moons, split_labeled
from .filters import FilterStrategy
from .trainer import TeacherSpec, TrainConfig


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


TWO_MOONS = "two-moons"
CSV = "csv"

DATASET_DEFAULTS = {
    "generator": TWO_MOONS,
    "n": 1000,
    "noise": 0.1,
    "per_class": 5,
    "test_fraction": 0.2,
    "path": None,
}

# TrainConfig fields that live in their own sections or at top level
_NOT_IN_TRAIN = {"strategy", "teacher", "augment", "seed"}
# JSON spelling of TrainConfig field names where they differ
_TRAIN_RENAMES = {"lam": "lambda"}
DEFAULT_EMA_DECAY = 0.99


def _train_defaults() -> dict:
    base = TrainConfig()
    out = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name in _NOT_IN_TRAIN:
            continue
        value = getattr(base, f.name)
        out[_TRAIN_RENAMES.get(f.name, f.name)] = list(value) if isinstance(value, tuple) else value
    return out


def default_document() -> dict:
    return {
        "seed": 0,
        "out": None,
        "dataset": dict(DATASET_DEFAULTS),
        "train": _train_defaults(),
        "strategy": {"name": "spf", "tau": None, "ramp_fraction": None,
                     "mask_threshold": None, "initial": "one"},
        "teacher": {"kind": "self", "ema_decay": None,
                    "hard_labels": TrainConfig().teacher.hard_labels},
        "augment": {"weak_sigma": AugmentSpec().weak_sigma, "strong_sigma": AugmentSpec().strong_sigma},
    }


def _merge(defaults: dict, given: dict, where: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(given).__name__}")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, f"{where}.{key}" if where else key)
        else:
            out[key] = value
    return out


def _materialize_strategy(section: dict) -> dict:
    strat = strategy_from(section)
    return {"name": strat.name, "tau": strat.tau, "ramp_fraction": strat.ramp_fraction,
            "mask_threshold": strat.mask_threshold, "initial": strat.initial}


def resolve(doc: dict | None = None) -> dict:
    """Merge ``doc`` over the defaults and validate.

    The result is a complete document that :func:`build_train_config` and
    :func:`build_dataset` accept, and that resolves to itself.
    """
    resolved = _merge(default_document(), doc or {}, "")
    if resolved["teacher"]["kind"] == "ema" and resolved["teacher"]["ema_decay"] is None:
        resolved["teacher"]["ema_decay"] = DEFAULT_EMA_DECAY
    try:
        resolved["strategy"] = _materialize_strategy(resolved["strategy"])
        build_train_config(resolved)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    _check_dataset(resolved["dataset"])
    return resolved


def set_value(doc: dict, path: str, value):
    """Set a dotted ``path`` such as ``"train.lr"`` in a raw document, creating sections."""
    *parents, leaf = path.split(".")
    node = doc
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value
    return doc


def read_document(path) -> dict:
    """Parse a config file without resolving it. Raises ConfigError on any problem."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def load(path) -> dict:
    return resolve(read_document(path))


def strategy_from(section: dict) -> FilterStrategy:
    return FilterStrategy.from_name(section["name"], tau=section["tau"],
                                    ramp_fraction=section["ramp_fraction"],
                                    mask_threshold=section["mask_threshold"],
                                    initial=section["initial"])


def _check_dataset(ds: dict):
    if ds["generator"] not in (TWO_MOONS, CSV):
        raise ConfigError(f"dataset.generator must be {TWO_MOONS!r} or {CSV!r}")
    if ds["generator"] == CSV and not ds["path"]:
        raise ConfigError("dataset.path is required for the csv generator")
    if int(ds["per_class"]) < 1 or int(ds["n"]) < 2:
        raise ConfigError("dataset.n must be at least 2 and dataset.per_class at least 1")
    if not 0.0 <= float(ds["test_fraction"]) < 1.0:
        raise ConfigError("dataset.test_fraction must lie in [0, 1)")


def build_train_config(doc: dict) -> TrainConfig:
    train = {}
    inverse = {v: k for k, v in _TRAIN_RENAMES.items()}
    for key, value in doc["train"].items():
        train[inverse.get(key, key)] = tuple(value) if isinstance(value, list) else value
    return TrainConfig(strategy=strategy_from(doc["strategy"]),
                       teacher=TeacherSpec(**doc["teacher"]),
                       augment=AugmentSpec(**doc["augment"]),
                       seed=int(doc["seed"]), **train)


def build_dataset(doc: dict):
    """Generate or load the points and split them. Returns ``(Dataset, HiddenTruth)``."""
    ds = doc["dataset"]
    if ds["generator"] == TWO_MOONS:
        points, classes = make_two_moons(int(ds["n"]), float(ds["noise"]), int(doc["seed"]))
    else:
        try:
            points, classes = load_points_csv(ds["path"])
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load dataset {ds['path']}: {exc}") from exc
    try:
        return split_labeled(points, classes, int(ds["per_class"]), int(doc["seed"]),
                             test_fraction=float(ds["test_fraction"]))
    except ValueError as exc:
        raise ConfigError(f"dataset: {exc}") from exc
