"""Experiment configuration, TOML loading and shipped presets.

A config file is TOML with nested tables::

    learners = 10
    rounds = 2000
    seed = 0

    [protocol]
    kind = "dynamic"
    delta = 0.3

    [learner]
    lr = 0.1
    [learner.predictor]
    kind = "linear"

    [stream]
    kind = "drift"

Optional ``[[variants]]`` tables list protocol settings to compare and an
optional ``[sweep]`` table declares grid axes (see :mod:`dynavg.harness`).
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Literal

import numpy as np

from .errors import ConfigurationError
from .learners import LossSpec, PredictorSpec
from .metrics import CommCostModel
from .protocols import ProtocolSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# purpose tags for seed derivation: seed(master, purpose, index)
SEED_STREAM, SEED_INIT, SEED_PROTOCOL, SEED_CONCEPT, SEED_DATA, SEED_EVAL = 1, 2, 3, 4, 5, 6


def derive_seed(master: int, purpose: int, index: int = 0) -> int:
    """Per-component seed: 64 bits of ``SeedSequence([master, purpose, index])``."""
    ss = np.random.SeedSequence([int(master), int(purpose), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class LearnerConfig:
    optimizer: Literal["sgd", "adam", "rmsprop"] = "sgd"
    lr: float = 0.1
    batch_size: int = 10
    # per-learner B^i; overrides batch_size when set
    batch_sizes: tuple[int, ...] | None = None
    predictor: PredictorSpec = field(default_factory=PredictorSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    init_noise: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    eps: float = 1e-8


@dataclass(frozen=True)
class StreamConfig:
    kind: Literal["drift", "classification", "regression", "csv", "idx"] = "drift"
    input_dim: int = 50
    # drift stream
    drift_prob: float = 0.0
    label_noise: float = 0.05
    interactions: int = 5
    concept_seed: int | None = None
    # static synthetic tasks
    classes: int = 10
    separation: float = 1.0
    noise: float = 1.0
    samples: int | None = None
    # file-backed datasets
    path: str | None = None
    labels_path: str | None = None
    partition: Literal["shuffled-iid", "contiguous-shards", "unbalanced"] = "shuffled-iid"
    cycle: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    learners: int = 10
    rounds: int = 100
    seed: int = 0
    protocol: ProtocolSpec = field(default_factory=ProtocolSpec)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    cost: CommCostModel = field(default_factory=CommCostModel)
    out: str | None = None
    format: Literal["csv", "json"] = "csv"
    eval_samples: int = 1000

    def __post_init__(self):
        if self.learners < 1:
            raise ConfigurationError("learners must be >= 1")
        if self.rounds < 0:
            raise ConfigurationError("rounds must be >= 0")
        if self.format not in ("csv", "json"):
            raise ConfigurationError(f"format must be csv or json, not {self.format!r}")
        bs = self.learner.batch_sizes
        if bs is not None and len(bs) != self.learners:
            raise ConfigurationError(
                f"learner.batch_sizes has {len(bs)} entries for {self.learners} learners")
        if min(self.batch_sizes) < 1:
            raise ConfigurationError("learner batch sizes must be >= 1")
        if self.protocol.kind == "dynamic_weighted" and bs is None:
            raise ConfigurationError("protocol.kind dynamic_weighted needs learner.batch_sizes")

    @property
    def batch_sizes(self) -> list[int]:
        if self.learner.batch_sizes is not None:
            return list(self.learner.batch_sizes)
        return [self.learner.batch_size] * self.learners

    def learner_seeds(self) -> list[int]:
        return [derive_seed(self.seed, SEED_STREAM, i) for i in range(self.learners)]

    @property
    def concept_seed(self) -> int:
        if self.stream.concept_seed is not None:
            return self.stream.concept_seed
        return derive_seed(self.seed, SEED_CONCEPT)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_protocol(self, **changes) -> "ExperimentConfig":
        merged = {**dataclasses.asdict(self.protocol), **changes}
        return self.replace(protocol=_build(ProtocolSpec, merged, "protocol"))


def _build(cls, data: dict, where: str):
    """Instantiate dataclass ``cls`` from ``data``, naming unknown or bad fields."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected a table, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigurationError(f"{where}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if cls is LearnerConfig and name == "predictor":
            value = _build(PredictorSpec, value, f"{where}.predictor")
        elif cls is LearnerConfig and name == "loss":
            value = _build(LossSpec, value, f"{where}.loss")
        elif name == "batch_sizes" and value is not None:
            value = tuple(int(v) for v in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigurationError as exc:
        msg = str(exc)
        raise ConfigurationError(msg if msg.startswith(where) else f"{where}: {msg}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


_SECTIONS = {"protocol": ProtocolSpec, "learner": LearnerConfig,
             "stream": StreamConfig, "cost": CommCostModel}


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    data.pop("variants", None)
    data.pop("sweep", None)
    data.pop("description", None)
    top = {}
    for key, value in data.items():
        if key in _SECTIONS:
            top[key] = _build(_SECTIONS[key], value, key)
        else:
            top[key] = value
    return _build(ExperimentConfig, top, "config")


@dataclass
class ConfigFile:
    config: ExperimentConfig
    variants: list[dict] = field(default_factory=list)
    sweep: dict | None = None
    source: str = ""


def parse_config(text: str, source: str = "<string>") -> ConfigFile:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    variants = data.get("variants", [])
    for k, v in enumerate(variants):
        # validated against the base protocol so bad variants fail at load time
        _build(ProtocolSpec, v, f"variants[{k}]")
    return ConfigFile(config_from_dict(data), list(variants), data.get("sweep"), source)


PRESETS = ("mnist-like", "fedavg-cmp", "drift", "drift-desk")


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("dynavg").joinpath("presets").joinpath(f"{name}.toml").read_text()


def load_config(path_or_preset: str) -> ConfigFile:
    """Load a TOML config file, or a shipped preset by name."""
    path = Path(path_or_preset)
    if path.is_file():
        return parse_config(path.read_text(), str(path))
    if path_or_preset in PRESETS:
        return parse_config(preset_text(path_or_preset), f"preset:{path_or_preset}")
    raise ConfigurationError(f"config: no such file or preset {path_or_preset!r}")


def load_preset(name: str) -> ConfigFile:
    return parse_config(preset_text(name), f"preset:{name}")


def apply_overrides(cfg: ExperimentConfig, *, seed=None, out=None, protocol=None,
                    delta=None, period=None, fraction=None, learners=None,
                    rounds=None, fmt=None) -> ExperimentConfig:
    """CLI flags override the matching config keys."""
    top = {}
    if seed is not None:
        top["seed"] = seed
    if out is not None:
        top["out"] = out
    if learners is not None:
        top["learners"] = learners
    if rounds is not None:
        top["rounds"] = rounds
    if fmt is not None:
        top["format"] = fmt
    proto = {}
    if protocol is not None:
        proto["kind"] = protocol
        if protocol not in ("dynamic", "dynamic_weighted") and delta is None:
            proto["delta"] = None
        if protocol != "fedavg" and fraction is None:
            proto["fraction"] = 1.0
    if delta is not None:
        proto["delta"] = delta
    if period is not None:
        proto["period"] = period
    if fraction is not None:
        proto["fraction"] = fraction
    merged = dataclasses.asdict(cfg)
    merged.update(top)
    merged["protocol"].update(proto)
    if learners is not None and cfg.learner.batch_sizes is not None \
            and len(cfg.learner.batch_sizes) != learners:
        raise ConfigurationError("learners: override conflicts with learner.batch_sizes length")
    return config_from_dict(merged)
