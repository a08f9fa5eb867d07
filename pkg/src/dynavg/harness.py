"""Experiment runner: builds a world from a config, runs it, sweeps grids."""
from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import (SEED_DATA, SEED_EVAL, SEED_INIT, SEED_PROTOCOL, ConfigFile,
                     ExperimentConfig, config_from_dict, derive_seed)
from .errors import ConfigurationError, StreamExhausted
from .learners import LabeledBatch, Learner, OptimizerState, glorot_init, loss_and_grad, outputs, perturb_init
from .metrics import RunLedger, efficiency_report, export, git_describe
from .protocols import ProtocolSpec, make_protocol
from .simulation import World, run_rounds
from .streams import (Dataset, DatasetStream, DriftStream, DriftStreamSpec, GaussianClassTask,
                      LinearRegressionTask, PartitionPolicy, derive_rng, load_idx_dataset,
                      partition, read_csv)

log = logging.getLogger(__name__)


def _static_task(cfg: ExperimentConfig):
    s = cfg.stream
    if s.kind == "classification":
        return GaussianClassTask(s.input_dim, s.classes, cfg.seed, s.separation, s.noise)
    return LinearRegressionTask(s.input_dim, cfg.seed, s.noise)


def materialize_dataset(cfg: ExperimentConfig) -> Dataset:
    """The finite dataset behind a static or file-backed stream."""
    s = cfg.stream
    if s.kind in ("classification", "regression"):
        n = s.samples or cfg.rounds * sum(cfg.batch_sizes)
        return _static_task(cfg).sample(n, derive_rng(cfg.seed, SEED_DATA))
    if s.kind == "csv":
        if not s.path:
            raise ConfigurationError("stream.path is required for csv streams")
        return read_csv(s.path)
    if s.kind == "idx":
        if not (s.path and s.labels_path):
            raise ConfigurationError("stream.path and stream.labels_path are required for idx streams")
        return load_idx_dataset(s.path, s.labels_path)
    raise ConfigurationError(f"stream.kind {s.kind!r} is not dataset-backed")


def build_stream(cfg: ExperimentConfig):
    s = cfg.stream
    if s.kind == "drift":
        spec = DriftStreamSpec(input_dim=s.input_dim, drift_prob=s.drift_prob,
                               concept_seed=cfg.concept_seed, label_noise=s.label_noise,
                               interactions=s.interactions)
        return DriftStream(spec, cfg.learner_seeds())
    data = materialize_dataset(cfg)
    if data.input_dim != cfg.learner.predictor.input_dim:
        raise ConfigurationError(
            f"learner.predictor.input_dim is {cfg.learner.predictor.input_dim} "
            f"but the data has {data.input_dim} features")
    if s.partition == "unbalanced":
        policy = PartitionPolicy("unbalanced", tuple(cfg.batch_sizes))
    else:
        policy = PartitionPolicy(s.partition)
    return DatasetStream(partition(data, cfg.learners, policy, seed=cfg.seed), cycle=s.cycle)


def initial_models(cfg: ExperimentConfig, count: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Shared base initialization and ``count`` perturbed copies of it."""
    spec = cfg.learner.predictor
    base = glorot_init(spec, derive_rng(cfg.seed, SEED_INIT))
    models = [perturb_init(spec, base, cfg.learner.init_noise, derive_rng(cfg.seed, SEED_INIT, i + 1))
              for i in range(count)]
    return base, models


def _optimizer(cfg: ExperimentConfig, lr: float) -> OptimizerState:
    L = cfg.learner
    return OptimizerState(L.optimizer, lr=lr, beta1=L.beta1, beta2=L.beta2, rho=L.rho, eps=L.eps)


def build_world(cfg: ExperimentConfig) -> World:
    L = cfg.learner
    serial = cfg.protocol.kind == "serial"
    ledger = RunLedger(m=1 if serial else cfg.learners, run_params=run_params(cfg))
    ledger.meta.update(config=cfg.to_dict(), seeds=seed_table(cfg), protocol=cfg.protocol.label)
    if cfg.stream.kind == "drift" and L.predictor.input_dim != cfg.stream.input_dim:
        raise ConfigurationError(
            f"learner.predictor.input_dim is {L.predictor.input_dim} "
            f"but stream.input_dim is {cfg.stream.input_dim}")
    stream = build_stream(cfg)
    if serial:
        # one learner on all m batches with the rate divided by m
        base, _ = initial_models(cfg, 0)
        learners = [Learner(L.predictor, L.loss, _optimizer(cfg, L.lr / cfg.learners), base)]
        ledger.system_learners = cfg.learners
        sample_values = sum(cfg.batch_sizes) * (L.predictor.input_dim + 1)
        ledger.meta["data_centralization_bytes_per_round"] = sample_values * cfg.cost.bytes_per_param
    else:
        base, models = initial_models(cfg, cfg.learners)
        learners = [Learner(L.predictor, L.loss, _optimizer(cfg, L.lr), f) for f in models]
    counts = cfg.batch_sizes if cfg.protocol.kind == "dynamic_weighted" else None
    protocol = make_protocol(cfg.protocol, base, derive_rng(cfg.seed, SEED_PROTOCOL), counts)
    return World(learners, protocol, stream, ledger, cfg.cost, cfg.batch_sizes, serial=serial)


def run_params(cfg: ExperimentConfig) -> dict[str, Any]:
    """Fields that must match for two runs to be a paired comparison."""
    return {"seed": cfg.seed, "learners": cfg.learners, "rounds": cfg.rounds,
            "stream": dataclasses.asdict(cfg.stream), "batch_sizes": cfg.batch_sizes}


def seed_table(cfg: ExperimentConfig) -> dict[str, Any]:
    return {"master": cfg.seed, "rule": "SeedSequence([master, purpose, index])",
            "learner_streams": cfg.learner_seeds(), "concept": cfg.concept_seed,
            "protocol": derive_seed(cfg.seed, SEED_PROTOCOL)}


@dataclass
class RunResult:
    config: ExperimentConfig
    ledger: RunLedger
    world: World
    evaluation: dict[str, float] = field(default_factory=dict)
    paths: list[Path] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def summary(self) -> dict[str, Any]:
        return {**self.ledger.summary(), **self.evaluation}


def evaluate(cfg: ExperimentConfig, world: World) -> dict[str, float]:
    """Accuracy and mean loss of the averaged model on fresh held-out samples."""
    if cfg.eval_samples <= 0 or cfg.stream.kind not in ("drift", "classification", "regression"):
        return {}
    rng = derive_rng(cfg.seed, SEED_EVAL)
    data = world.stream.sample(cfg.eval_samples, rng) if cfg.stream.kind == "drift" \
        else _static_task(cfg).sample(cfg.eval_samples, rng)
    f = world.mean_model()
    spec, loss = cfg.learner.predictor, cfg.learner.loss
    value, _ = loss_and_grad(spec, dataclasses.replace(loss, l2=0.0), f,
                             LabeledBatch(data.features, data.labels))
    out = {"eval_loss": value / len(data)}
    if loss.kind == "cross_entropy":
        out["eval_accuracy"] = float(np.mean(outputs(spec, f, data.features).argmax(axis=1) == data.labels))
    elif loss.kind == "logistic":
        out["eval_accuracy"] = float(np.mean((outputs(spec, f, data.features)[:, 0] > 0) == data.labels))
    return out


def run(cfg: ExperimentConfig, write: bool = True, quiet: bool = True) -> RunResult:
    start = time.perf_counter()
    world = build_world(cfg)
    run_rounds(world, cfg.rounds)
    result = RunResult(cfg, world.ledger, world, evaluate(cfg, world))
    result.seconds = time.perf_counter() - start
    world.ledger.meta["evaluation"] = result.evaluation
    if write and cfg.out:
        out = Path(cfg.out)
        result.paths.append(export(world.ledger, cfg.format, out / f"{cfg.name}.{cfg.format}"))
    if not quiet:
        s = result.summary
        print(f"{cfg.name} [{cfg.protocol.label}] rounds={s['rounds']} cum_loss={s['cum_loss']:.6g} "
              f"cum_bytes={s['cum_bytes']} syncs_full={s['syncs_full']} "
              f"syncs_partial={s['syncs_partial']}")
    return result


def reference_losses(cfg: ExperimentConfig, f_star) -> np.ndarray:
    """Per-round, per-learner losses of a fixed model on the run's sample sequence."""
    world = build_world(cfg)
    L = cfg.learner
    f_star = np.asarray(f_star, dtype=np.float64)
    rows = []
    for t in range(1, cfg.rounds + 1):
        world.stream.maybe_drift(t)
        batches = [world.stream.next_batch(i, t, b) for i, b in enumerate(cfg.batch_sizes)]
        rows.append([loss_and_grad(L.predictor, L.loss, f_star, b)[0] for b in batches])
    return np.array(rows).reshape(cfg.rounds, cfg.learners)


# -- sweeps ------------------------------------------------------------------

# grid axes -> (config path, protocol kinds the axis applies to; None = all)
SWEEP_AXES = {
    "delta": ("protocol.delta", ("dynamic", "dynamic_weighted")),
    "period": ("protocol.period", ("periodic", "dynamic", "dynamic_weighted", "fedavg")),
    "fraction": ("protocol.fraction", ("fedavg",)),
    "learners": ("learners", None),
    "init_noise": ("learner.init_noise", None),
    "seed": ("seed", None),
    "rounds": ("rounds", None),
}


@dataclass
class SweepSpec:
    axes: dict[str, list] = field(default_factory=dict)
    variants: list[dict] = field(default_factory=list)
    max_cells: int = 256

    @classmethod
    def from_config_file(cls, cf: ConfigFile) -> "SweepSpec":
        table = dict(cf.sweep or {})
        max_cells = int(table.pop("max_cells", 256))
        unknown = sorted(set(table) - set(SWEEP_AXES))
        if unknown:
            raise ConfigurationError(f"sweep: unknown axis {', '.join(unknown)}")
        axes = {k: list(v) if isinstance(v, list) else [v] for k, v in table.items()}
        return cls(axes, list(cf.variants), max_cells)


@dataclass
class Cell:
    name: str
    config: ExperimentConfig
    coords: dict[str, Any]


def _set(cfg: ExperimentConfig, path: str, value) -> ExperimentConfig:
    if path.startswith("protocol."):
        return cfg.with_protocol(**{path.split(".", 1)[1]: value})
    if path == "learner.init_noise":
        return cfg.replace(learner=dataclasses.replace(cfg.learner, init_noise=float(value)))
    return cfg.replace(**{path: value})


def expand_grid(base: ExperimentConfig, spec: SweepSpec) -> list[Cell]:
    variants = spec.variants or [dataclasses.asdict(base.protocol)]
    cells = []
    for variant in variants:
        vcfg = base.with_protocol(**{"delta": None, "fraction": 1.0, **variant})
        kind = vcfg.protocol.kind
        axes = [(name, values) for name, values in spec.axes.items()
                if SWEEP_AXES[name][1] is None or kind in SWEEP_AXES[name][1]]
        for combo in itertools.product(*(values for _, values in axes)):
            cfg = vcfg
            coords = {}
            for (name, _), value in zip(axes, combo):
                cfg = _set(cfg, SWEEP_AXES[name][0], value)
                coords[name] = value
            label = cfg.protocol.label
            extra = ",".join(f"{k}={v}" for k, v in coords.items()
                             if not (k in ("delta", "period", "fraction")))
            name = f"{label}" + (f"[{extra}]" if extra else "")
            cells.append(Cell(name, cfg.replace(name=_file_safe(name)), coords))
            if len(cells) > spec.max_cells:
                raise ConfigurationError(
                    f"sweep grid exceeds max_cells={spec.max_cells}; narrow the axes or raise the cap")
    return cells


def _file_safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.=," else "_" for c in name)


@dataclass
class SweepResult:
    cells: list[Cell]
    results: list[RunResult]
    report: dict[str, Any]


def _group_key(coords: dict) -> tuple:
    return tuple(sorted((k, v) for k, v in coords.items() if k not in ("delta", "period", "fraction")))


def sweep(base: ExperimentConfig, spec: SweepSpec, write: bool = True,
          quiet: bool = True) -> SweepResult:
    """Run every grid cell; cells differing only in protocol share all stream seeds."""
    cells = expand_grid(base, spec)
    results = []
    for cell in cells:
        cfg = cell.config
        if cfg.out:
            cfg = cfg.replace(out=str(Path(cfg.out) / "cells"))
        results.append(run(cfg, write=write, quiet=quiet))

    groups: dict[tuple, dict[str, RunLedger]] = {}
    for cell, res in zip(cells, results):
        groups.setdefault(_group_key(cell.coords), {})[res.config.protocol.label] = res.ledger
    per_group = []
    for key, ledgers in groups.items():
        per_group.append({"group": dict(key), "efficiency": efficiency_report(ledgers)})

    report = {
        "cells": [{"name": c.name, "coords": c.coords, "protocol": r.config.protocol.label,
                   **r.summary} for c, r in zip(cells, results)],
        "groups": per_group,
        "mean_over_seeds": _mean_over_seeds(cells, results),
        "git_describe": git_describe(),
    }
    if "init_noise" in spec.axes and "period" in spec.axes:
        report["relative_accuracy"] = relative_accuracy_matrix(cells, results)
    if write and base.out:
        path = Path(base.out) / f"{base.name}-sweep.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report, indent=1, default=str))
    return SweepResult(cells, results, report)


def _mean_over_seeds(cells: Sequence[Cell], results: Sequence[RunResult]) -> list[dict]:
    buckets: dict[tuple, list[RunResult]] = {}
    for cell, res in zip(cells, results):
        key = (res.config.protocol.label,) + tuple(
            sorted((k, v) for k, v in cell.coords.items() if k != "seed"))
        buckets.setdefault(key, []).append(res)
    rows = []
    for key, group in buckets.items():
        rows.append({
            "protocol": key[0], "coords": dict(key[1:]), "seeds": len(group),
            "cum_loss": float(np.mean([r.ledger.total_loss for r in group])),
            "cum_loss_per_learner": float(np.mean([r.ledger.summary()["cum_loss_per_learner"]
                                                   for r in group])),
            "cum_bytes": float(np.mean([r.ledger.total_bytes for r in group])),
        })
    return rows


def relative_accuracy_matrix(cells: Sequence[Cell], results: Sequence[RunResult]) -> dict[str, Any]:
    """Averaged-model accuracy per (protocol, init_noise, period), relative to init_noise=0, b=1."""
    acc: dict[tuple, list[float]] = {}
    for cell, res in zip(cells, results):
        if "eval_accuracy" not in res.evaluation:
            continue
        kind = res.config.protocol.kind
        key = (kind, float(res.config.learner.init_noise), res.config.protocol.period)
        acc.setdefault(key, []).append(res.evaluation["eval_accuracy"])
    out: dict[str, Any] = {}
    for kind in sorted({k[0] for k in acc}):
        ref = acc.get((kind, 0.0, 1))
        if not ref:
            continue
        ref_acc = float(np.mean(ref))
        eps_vals = sorted({k[1] for k in acc if k[0] == kind})
        b_vals = sorted({k[2] for k in acc if k[0] == kind})
        out[kind] = {
            "init_noise": eps_vals, "period": b_vals,
            "matrix": [[float(np.mean(acc[(kind, e, b)])) / ref_acc if (kind, e, b) in acc else None
                        for b in b_vals] for e in eps_vals],
        }
    return out


# -- data generation ---------------------------------------------------------

def gen_data(cfg: ExperimentConfig, path) -> tuple[Path, Path]:
    """Write the stream a run would observe to CSV, with a JSON sidecar.

    Rows are ordered by round, then learner, then sample: ``t, learner,
    x0..x{d-1}, y``.  The sidecar records the seeds and drift rounds.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stream = build_stream(cfg)
    d = stream.input_dim
    lines = [",".join(["t", "learner", *(f"x{j}" for j in range(d)), "y"])]
    ended = None
    for t in range(1, cfg.rounds + 1):
        stream.maybe_drift(t)
        try:
            batches = [stream.next_batch(i, t, b) for i, b in enumerate(cfg.batch_sizes)]
        except StreamExhausted:
            ended = t
            break
        for i, batch in enumerate(batches):
            for x, y in zip(batch.features, batch.labels):
                lines.append(",".join([str(t), str(i), *map(repr, x.tolist()), repr(float(y))]))
    path.write_text("\n".join(lines) + "\n")
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    meta = {"config": cfg.to_dict(), "seeds": seed_table(cfg),
            "drift_rounds": [e.t for e in stream.events], "rows": len(lines) - 1,
            "ended_early_at": ended}
    sidecar.write_text(json.dumps(meta, indent=1, default=str))
    return path, sidecar


def regenerate_from_sidecar(sidecar, path) -> tuple[Path, Path]:
    meta = json.loads(Path(sidecar).read_text())
    return gen_data(config_from_dict(meta["config"]), path)
