"""Synchronization operators and the dynamic-averaging coordinator.

Every operator maps a configuration array ``cfg`` of shape ``(m, d)`` at
round ``t`` to a new configuration plus a :class:`SyncOutcome` that records
who took part and which messages were exchanged.  Byte sizes are assigned to
those messages later by :class:`dynavg.metrics.CommCostModel`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import ConfigurationError
from .params import as_config, as_counts, average, sq_distance, weighted_average

ProtocolKind = Literal["nosync", "serial", "periodic", "continuous",
                       "dynamic", "dynamic_weighted", "fedavg"]
PROTOCOL_KINDS = ("nosync", "serial", "periodic", "continuous",
                  "dynamic", "dynamic_weighted", "fedavg")


@dataclass(frozen=True)
class ProtocolSpec:
    kind: ProtocolKind = "periodic"
    period: int = 1
    delta: float | None = None
    fraction: float = 1.0
    reset_v_on_full_sync: bool = False
    augmentation: str = "random"

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise ConfigurationError(f"protocol.kind: unknown protocol {self.kind!r}")
        if self.kind == "continuous" and self.period != 1:
            object.__setattr__(self, "period", 1)
        if int(self.period) != self.period or self.period < 1:
            raise ConfigurationError("protocol.period must be a positive integer")
        dynamic = self.kind in ("dynamic", "dynamic_weighted")
        if dynamic and (self.delta is None or not self.delta > 0):
            raise ConfigurationError("protocol.delta must be a positive real for dynamic protocols")
        if not dynamic and self.delta is not None:
            raise ConfigurationError(f"protocol.delta is only valid for dynamic protocols, not {self.kind}")
        if not 0 < self.fraction <= 1:
            raise ConfigurationError("protocol.fraction must lie in (0, 1]")
        if self.kind != "fedavg" and self.fraction != 1.0:
            raise ConfigurationError("protocol.fraction is only valid for fedavg")
        if self.augmentation not in AUGMENTATIONS:
            raise ConfigurationError(f"protocol.augmentation: unknown strategy {self.augmentation!r}")

    @property
    def label(self) -> str:
        if self.kind in ("dynamic", "dynamic_weighted"):
            return f"{self.kind}(delta={self.delta:g},b={self.period})"
        if self.kind == "fedavg":
            return f"fedavg(C={self.fraction:g},b={self.period})"
        if self.kind in ("periodic", "continuous"):
            return f"periodic(b={self.period})"
        return self.kind


@dataclass(frozen=True)
class Message:
    direction: Literal["up", "down"]
    # "model": parameter vector; "model+count": vector plus the sample count;
    # "request": coordinator asks a learner for its model (header only)
    kind: Literal["model", "model+count", "request"]
    learner: int


@dataclass
class SyncOutcome:
    kind: Literal["none", "full", "partial", "periodic", "fedavg"] = "none"
    participants: frozenset[int] = frozenset()
    new_model: np.ndarray | None = None
    reference_updated: bool = False
    messages: list[Message] = field(default_factory=list)
    violators: frozenset[int] = frozenset()

    @property
    def model_transfers(self) -> int:
        return sum(msg.kind != "request" for msg in self.messages)


NO_SYNC = SyncOutcome()


def _full_outcome(kind, cfg: np.ndarray, idx: Sequence[int], mean: np.ndarray) -> SyncOutcome:
    msgs = [Message("up", "model", i) for i in idx] + [Message("down", "model", i) for i in idx]
    return SyncOutcome(kind=kind, participants=frozenset(idx), new_model=mean,
                       reference_updated=len(idx) == cfg.shape[0], messages=msgs)


def periodic_sync(cfg, t: int, b: int) -> tuple[np.ndarray, SyncOutcome]:
    """Replace every model by the global average on rounds that are multiples of ``b``."""
    cfg = as_config(cfg)
    if t % b != 0:
        return cfg, NO_SYNC
    mean = average(cfg)
    out = np.broadcast_to(mean, cfg.shape).copy()
    return out, _full_outcome("periodic", cfg, range(cfg.shape[0]), mean)


def fedavg_sample_size(m: int, fraction: float) -> int:
    return max(1, int(round(fraction * m)))


def fedavg_sync(cfg, t: int, b: int, fraction: float,
                rng: np.random.Generator) -> tuple[np.ndarray, SyncOutcome]:
    """Periodic averaging over a uniformly sampled subset of the learners."""
    cfg = as_config(cfg)
    if t % b != 0:
        return cfg, NO_SYNC
    m = cfg.shape[0]
    k = fedavg_sample_size(m, fraction)
    if k == m:
        chosen = np.arange(m)
    else:
        chosen = np.sort(rng.choice(m, size=k, replace=False))
    mean = average(cfg[chosen])
    out = cfg.copy()
    out[chosen] = mean
    return out, _full_outcome("fedavg", cfg, chosen.tolist(), mean)


def check_local_condition(f_i, r, delta: float, t: int, b: int) -> bool:
    """True when learner ``i`` must report a violation this round."""
    return t % b == 0 and sq_distance(f_i, r) > delta


# -- augmentation strategies: (rng, sorted outside indices) -> indices to add

def random_augmentation(rng: np.random.Generator, outside: list[int]) -> list[int]:
    return [outside[int(rng.integers(len(outside)))]]


def all_at_once_augmentation(rng: np.random.Generator, outside: list[int]) -> list[int]:
    return list(outside)


AUGMENTATIONS: dict[str, Callable[[np.random.Generator, list[int]], list[int]]] = {
    "random": random_augmentation,
    "all": all_at_once_augmentation,
}


@dataclass
class CoordinatorState:
    reference: np.ndarray
    delta: float
    rng: np.random.Generator
    violations: int = 0
    reset_v_on_full_sync: bool = False
    augment: Callable[[np.random.Generator, list[int]], list[int]] = random_augmentation
    # balancing-loop iterations of the most recent resolution
    last_augmentations: int = 0

    @classmethod
    def from_spec(cls, spec: ProtocolSpec, reference, rng: np.random.Generator):
        return cls(reference=np.array(reference, dtype=np.float64), delta=spec.delta,
                   rng=rng, reset_v_on_full_sync=spec.reset_v_on_full_sync,
                   augment=AUGMENTATIONS[spec.augmentation])


def _resolve(cfg, coord: CoordinatorState, violators, counts) -> tuple[np.ndarray, SyncOutcome]:
    cfg = as_config(cfg)
    m = cfg.shape[0]
    violators = frozenset(int(i) for i in violators)
    if not violators:
        raise ConfigurationError("resolve_violations needs at least one violator")
    if not all(0 <= i < m for i in violators):
        raise ConfigurationError(f"violator index out of range for m={m}")
    if counts is not None:
        counts = as_counts(counts, m)
    upload = "model" if counts is None else "model+count"

    def mean_of(members: list[int]) -> np.ndarray:
        idx = np.asarray(members)
        if counts is None:
            return average(cfg[idx])
        return weighted_average(cfg[idx], counts[idx])

    msgs = [Message("up", upload, i) for i in sorted(violators)]
    members = set(violators)

    def fetch(new: list[int]) -> None:
        for i in new:
            msgs.append(Message("down", "request", i))
            msgs.append(Message("up", upload, i))
        members.update(new)

    coord.violations += len(violators)
    forced_full = coord.violations >= m
    if forced_full:
        fetch([i for i in range(m) if i not in members])
        coord.violations = 0
    # for forced_full the loop below never runs

    rounds = 0
    while len(members) < m and sq_distance(mean_of(sorted(members)), coord.reference) > coord.delta:
        outside = [i for i in range(m) if i not in members]
        fetch(coord.augment(coord.rng, outside))
        rounds += 1
    coord.last_augmentations = rounds

    ordered = sorted(members)
    mean = mean_of(ordered)
    out = cfg.copy()
    out[ordered] = mean
    msgs.extend(Message("down", "model", i) for i in ordered)
    full = len(members) == m
    if full:
        coord.reference = mean.copy()
        if coord.reset_v_on_full_sync:
            coord.violations = 0
    assert 0 <= coord.violations <= m
    return out, SyncOutcome(kind="full" if full else "partial",
                            participants=frozenset(ordered), new_model=mean,
                            reference_updated=full, messages=msgs,
                            violators=violators)


def resolve_violations(cfg, coord: CoordinatorState, violators) -> tuple[np.ndarray, SyncOutcome]:
    """Balance reported violations (coordinator side of dynamic averaging).

    ``coord`` is updated in place (violation counter, reference model, RNG).
    The violators' uploads are included in the returned messages.
    """
    return _resolve(cfg, coord, violators, None)


def resolve_violations_weighted(cfg, counts, coord: CoordinatorState,
                                violators) -> tuple[np.ndarray, SyncOutcome]:
    """Like :func:`resolve_violations`, averaging with per-learner sample counts."""
    if counts is None:
        raise ConfigurationError("weighted resolution requires sample counts")
    return _resolve(cfg, coord, violators, counts)


def find_violators(cfg, reference, delta: float, t: int, b: int) -> list[int]:
    cfg = as_config(cfg)
    if t % b != 0:
        return []
    return [i for i, f in enumerate(cfg) if sq_distance(f, reference) > delta]


def dynamic_sync(cfg, t: int, b: int, coord: CoordinatorState,
                 counts=None) -> tuple[np.ndarray, SyncOutcome]:
    """Full dynamic averaging step: check local conditions, then balance."""
    cfg = as_config(cfg)
    violators = find_violators(cfg, coord.reference, coord.delta, t, b)
    if not violators:
        return cfg, NO_SYNC
    return _resolve(cfg, coord, violators, counts)


class Protocol:
    """Stateful wrapper around an operator, used by the round loop."""

    spec: ProtocolSpec

    def sync(self, cfg: np.ndarray, t: int) -> tuple[np.ndarray, SyncOutcome]:
        raise NotImplementedError


class NoSync(Protocol):
    def __init__(self, spec: ProtocolSpec | None = None):
        self.spec = spec or ProtocolSpec("nosync")

    def sync(self, cfg, t):
        return cfg, NO_SYNC


class Periodic(Protocol):
    def __init__(self, spec: ProtocolSpec):
        self.spec = spec

    def sync(self, cfg, t):
        return periodic_sync(cfg, t, self.spec.period)


class FedAvg(Protocol):
    def __init__(self, spec: ProtocolSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng

    def sync(self, cfg, t):
        return fedavg_sync(cfg, t, self.spec.period, self.spec.fraction, self.rng)


class Dynamic(Protocol):
    def __init__(self, spec: ProtocolSpec, reference, rng: np.random.Generator,
                 counts=None):
        if spec.kind == "dynamic_weighted" and counts is None:
            raise ConfigurationError("dynamic_weighted requires per-learner sample counts")
        self.spec = spec
        self.coord = CoordinatorState.from_spec(spec, reference, rng)
        self.counts = None if spec.kind == "dynamic" else np.asarray(counts)

    def sync(self, cfg, t):
        return dynamic_sync(cfg, t, self.spec.period, self.coord, self.counts)


def make_protocol(spec: ProtocolSpec, reference, rng: np.random.Generator,
                  counts=None) -> Protocol:
    if spec.kind in ("nosync", "serial"):
        return NoSync(spec)
    if spec.kind in ("periodic", "continuous"):
        return Periodic(spec)
    if spec.kind == "fedavg":
        return FedAvg(spec, rng)
    return Dynamic(spec, reference, rng, counts)
