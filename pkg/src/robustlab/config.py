"""Run-config documents: strict JSON <-> TrainConfig plus a data section.

Unknown keys are rejected and every error names the offending field path
(``schedule.total_epochs``, ``data.train_images`` ...).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from pathlib import Path
from typing import Any, Optional, Union

from .attacks import AttackSpec, PerturbationModel
from .data import Dataset, gen_synthetic, load_idx, load_idx_images
from .nets import ModelSpec
from .regularize import RegularizerSpec
from .schedules import ScheduleSpec
from .trainer import TrainConfig, TrainData


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclasses.dataclass(frozen=True)
class IdxSource:
    kind: str = "idx"
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    unlabeled_images: Optional[str] = None


@dataclasses.dataclass(frozen=True)
class SyntheticSource:
    kind: str = "synthetic"
    generator: str = "two_gaussians"
    n_train: int = 512
    n_test: int = 256
    n_unlabeled: int = 0
    d: int = 2
    margin: float = 1.0
    seed: int = 0


# JSON key -> dataclass attribute where they differ
_RENAMES = {RegularizerSpec: {"lambda": "lam"}}


def _check_type(value, tp, path):
    origin = typing.get_origin(tp)
    if origin is Union:
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _check_type(value, inner[0], path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if tp is tuple or origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return tuple(value)
    return value


def _section(obj, cls, path):
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    renames = _RENAMES.get(cls, {})
    kwargs = {}
    for key, value in obj.items():
        attr = renames.get(key, key)
        if attr not in names or attr in renames.values() and key not in renames:
            raise ConfigError(f"{path}.{key}", "unknown key")
        kwargs[attr] = _check_type(value, hints[attr], f"{path}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(path, str(e)) from e


def _dump(obj) -> Any:
    if obj is None:
        return None
    d = obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj)
    for key, attr in _RENAMES.get(type(obj), {}).items():
        d[key] = d.pop(attr)
    return d


_TOP = {"model", "schedule", "perturbation", "train_attack", "eval_attack", "regularizer", "data",
        "weight_decay", "momentum", "batch_size", "epochs", "seed", "val_holdout",
        "eval_subsample", "eval_batch_size", "clamp", "record_seconds", "allow_stacked_l2",
        "catastrophic_check"}
_SCALARS = {f.name: f for f in dataclasses.fields(TrainConfig)
            if f.name not in ("model", "schedule", "pm", "train_attack", "eval_attack", "regularizer")}


def parse_document(doc: dict, base_dir: Optional[Path] = None):
    """Validate a run-config document; returns ``(TrainConfig, data source)``."""
    if not isinstance(doc, dict):
        raise ConfigError("$", "expected a JSON object")
    for key in doc:
        if key not in _TOP:
            raise ConfigError(key, "unknown key")
    for key in ("model", "schedule", "data"):
        if key not in doc:
            raise ConfigError(key, "required")
    kw = {
        "model": _section(doc["model"], ModelSpec, "model"),
        "schedule": _section(doc["schedule"], ScheduleSpec, "schedule"),
    }
    if "perturbation" in doc:
        kw["pm"] = _section(doc["perturbation"], PerturbationModel, "perturbation")
    for name in ("train_attack", "eval_attack"):
        if name in doc:
            kw[name] = None if doc[name] is None else _section(doc[name], AttackSpec, name)
    if "regularizer" in doc:
        kw["regularizer"] = _section(doc["regularizer"], RegularizerSpec, "regularizer")
    hints = typing.get_type_hints(TrainConfig)
    for name in _SCALARS:
        if name in doc:
            kw[name] = _check_type(doc[name], hints[name], name)
    kw.setdefault("epochs", kw["schedule"].total_epochs)
    try:
        config = TrainConfig(**kw)
        config.validate()
    except ValueError as e:
        raise ConfigError("$", str(e)) from e
    data = doc["data"]
    if not isinstance(data, dict) or data.get("kind") not in ("idx", "synthetic"):
        raise ConfigError("data.kind", "must be 'idx' or 'synthetic'")
    source = _section(data, IdxSource if data["kind"] == "idx" else SyntheticSource, "data")
    if isinstance(source, IdxSource):
        resolved = {}
        for f in dataclasses.fields(IdxSource):
            v = getattr(source, f.name)
            if f.name != "kind" and v is not None:
                if v == "":
                    raise ConfigError(f"data.{f.name}", "required")
                p = Path(v)
                if base_dir is not None and not p.is_absolute():
                    p = base_dir / p
                resolved[f.name] = str(p.resolve())
        source = dataclasses.replace(source, **resolved)
    return config, source


def load_document(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"invalid JSON: {e}") from e
    return parse_document(doc, path.parent)


def to_document(config: TrainConfig, source) -> dict:
    doc = {
        "model": _dump(config.model),
        "schedule": _dump(config.schedule),
        "perturbation": _dump(config.pm),
        "train_attack": _dump(config.train_attack),
        "eval_attack": _dump(config.eval_attack),
        "regularizer": _dump(config.regularizer),
        "data": dataclasses.asdict(source),
    }
    for name in _SCALARS:
        doc[name] = getattr(config, name)
    return doc


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def digest(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_data(source) -> TrainData:
    """Materialise the datasets a source describes (missing files raise FileNotFoundError)."""
    if isinstance(source, SyntheticSource):
        def make(n, tag, split):
            return gen_synthetic(source.generator, n, source.d, source.margin,
                                 _split_seed(source.seed, tag), split)
        unl = None
        if source.n_unlabeled:
            u = make(source.n_unlabeled, 2, "unlabeled")
            unl = Dataset(u.inputs, None, "unlabeled")
        return TrainData(make(source.n_train, 0, "train"), make(source.n_test, 1, "test"), unl)
    for f in ("train_images", "train_labels", "test_images", "test_labels"):
        if not Path(getattr(source, f)).is_file():
            raise FileNotFoundError(f"data.{f}: no such file {getattr(source, f)}")
    unl = None
    if source.unlabeled_images:
        if not Path(source.unlabeled_images).is_file():
            raise FileNotFoundError(f"data.unlabeled_images: no such file {source.unlabeled_images}")
        unl = load_idx_images(source.unlabeled_images)
    return TrainData(load_idx(source.train_images, source.train_labels, "train"),
                     load_idx(source.test_images, source.test_labels, "test"), unl)


def _split_seed(seed: int, tag: int) -> int:
    return (int(seed) * 1_000_003 + tag) & 0x7FFFFFFF
