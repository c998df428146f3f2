"""Run configuration: strict JSON in, dataclasses out, full echo into
every run directory and checkpoint. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .backend import RelationNetConfig
from .encoder import EncoderConfig
from .features import SpecAugmentConfig


@dataclass
class FeatureConfig:
    n_mels: int = 80
    window_ms: float = 25.0
    hop_ms: float = 10.0
    specaugment: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)


@dataclass
class TrainConfig:
    lr_initial: float = 0.001
    lr_decay_per_epoch: float = 0.97
    adam_betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 2e-5
    n_way: int = 6
    k_shot: int = 1
    n_query: int = 2
    lam: float = 1.0  # global-loss weight, used in the fine-tune stage
    epochs_local: int = 60
    epochs_finetune: int = 20
    episodes_per_epoch: int = 8
    regime: str = "improved"  # "vanilla" (one combination) or "improved" (cyclic)
    grad_clip_norm: float | None = 5.0
    seed: int = 0
    val_targets: int = 150
    val_nontargets: int = 150

    def __post_init__(self):
        if self.regime not in ("vanilla", "improved"):
            raise ValueError("regime must be 'vanilla' or 'improved'")
        if self.lr_initial <= 0 or self.lr_decay_per_epoch <= 0:
            raise ValueError("learning rates must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.k_shot < 1 or self.n_query < 1:
            raise ValueError("need k_shot >= 1 and n_query >= 1")


@dataclass
class EvalConfig:
    p_target: float = 0.01
    c_fa: float = 1.0
    c_miss: float = 1.0
    n_way: int = 5
    ident_k: int = 1
    ident_q: int = 5
    n_episodes: int = 1000


@dataclass
class RunConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    relation: RelationNetConfig = field(default_factory=RelationNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    manifest_path: str = ""

    def __post_init__(self):
        if self.relation.embedding_dim != self.encoder.embedding_dim:
            self.relation = dataclasses.replace(
                self.relation, embedding_dim=self.encoder.embedding_dim)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _from_plain(cls, data, path="config"):
    if dataclasses.is_dataclass(cls):
        if not isinstance(data, dict):
            raise ValueError("%s: expected an object for %s" % (path, cls.__name__))
        field_map = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(field_map))
        if unknown:
            raise ValueError("%s: unknown keys %s (known: %s)"
                             % (path, unknown, sorted(field_map)))
        kwargs = {}
        for name, value in data.items():
            f = field_map[name]
            kwargs[name] = _convert_field(f.type, value, "%s.%s" % (path, name))
        return cls(**kwargs)
    return data


_NESTED = (SpecAugmentConfig, FeatureConfig, EncoderConfig, RelationNetConfig,
           TrainConfig, EvalConfig)


def _convert_field(type_hint, value, path):
    hint = str(type_hint)
    for cls in _NESTED:
        if cls.__name__ in hint:
            return _from_plain(cls, value, path)
    if "tuple" in hint and isinstance(value, list):
        return tuple(value)
    return value


def config_to_dict(config: RunConfig) -> dict:
    return _to_plain(config)


def config_from_dict(data: dict) -> RunConfig:
    return _from_plain(RunConfig, data)


def save_config(config: RunConfig, path):
    with open(path, "w") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))
