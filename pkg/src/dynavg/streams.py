"""Data sources for the round loop.

Two kinds of stream share one interface (``maybe_drift`` once per round,
then ``next_batch`` per learner):

* :class:`DriftStream` draws fresh samples from a shared binary concept that
  is regenerated at random rounds (concept drift).
* :class:`DatasetStream` serves per-learner shards of a finite dataset,
  e.g. one loaded from CSV or IDX files or materialized by a task generator.

Each learner owns its sample RNG, so the sample sequence a learner sees
depends only on the seeds, never on the synchronization protocol.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, ParseError, StreamExhausted
from .learners import LabeledBatch


@dataclass
class Dataset:
    features: np.ndarray  # (n, input_dim)
    labels: np.ndarray    # (n,)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D array")
        if len(self.features) != len(self.labels):
            raise DataError(f"{len(self.features)} feature rows but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


def derive_rng(*key: int) -> np.random.Generator:
    """Generator for an integer key path, e.g. ``(master_seed, purpose, learner)``.

    Built on ``SeedSequence``, whose entropy mixing is stable across numpy
    releases, so seeds keep their meaning between versions.
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


# -- drifting binary concept -------------------------------------------------

@dataclass(frozen=True)
class DriftStreamSpec:
    input_dim: int = 50
    drift_prob: float = 0.0
    concept_seed: int = 0
    label_noise: float = 0.05
    interactions: int = 5
    probe_size: int = 512
    min_label_change: float = 0.1

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigurationError("stream.input_dim must be positive")
        if not 0 <= self.drift_prob <= 1:
            raise ConfigurationError("stream.drift_prob must lie in [0, 1]")
        if not 0 <= self.label_noise < 0.5:
            raise ConfigurationError("stream.label_noise must lie in [0, 0.5)")
        if self.interactions and self.input_dim < 2:
            raise ConfigurationError("pairwise interactions need input_dim >= 2")


@dataclass
class Concept:
    """Hyperplane plus a few pairwise interaction terms."""
    weights: np.ndarray
    pairs: np.ndarray   # (k, 2) feature indices
    coefs: np.ndarray   # (k,)

    @classmethod
    def random(cls, spec: DriftStreamSpec, rng: np.random.Generator) -> "Concept":
        d = spec.input_dim
        w = rng.standard_normal(d)
        pairs = np.array([rng.choice(d, size=2, replace=False) for _ in range(spec.interactions)],
                         dtype=np.int64).reshape(-1, 2)
        coefs = rng.standard_normal(spec.interactions)
        return cls(w, pairs, coefs)

    def score(self, X: np.ndarray) -> np.ndarray:
        s = X @ self.weights
        if len(self.coefs):
            s = s + (X[:, self.pairs[:, 0]] * X[:, self.pairs[:, 1]]) @ self.coefs
        return s

    def label(self, X: np.ndarray) -> np.ndarray:
        return (self.score(X) > 0).astype(np.float64)


@dataclass(frozen=True)
class DriftEvent:
    t: int


class DriftStream:
    """Samples ``x ~ U[-1, 1]^d`` labelled by a shared, occasionally redrawn concept."""

    def __init__(self, spec: DriftStreamSpec, learner_seeds: Sequence[int]):
        self.spec = spec
        self.learner_seeds = list(learner_seeds)
        self._concept_rng = derive_rng(spec.concept_seed, 0)
        self._trigger_rng = derive_rng(spec.concept_seed, 1)
        self._rngs = [np.random.default_rng(s) for s in self.learner_seeds]
        self.probe = self._concept_rng.uniform(-1, 1, size=(spec.probe_size, spec.input_dim))
        self.concept = Concept.random(spec, self._concept_rng)
        self.events: list[DriftEvent] = []

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    def bayes_label(self, X) -> np.ndarray:
        return self.concept.label(np.atleast_2d(X))

    def maybe_drift(self, t: int) -> DriftEvent | None:
        """Redraw the concept with probability ``drift_prob``; call once per round."""
        if not self._trigger_rng.random() < self.spec.drift_prob:
            return None
        before = self.concept.label(self.probe)
        while True:
            concept = Concept.random(self.spec, self._concept_rng)
            if np.mean(concept.label(self.probe) != before) >= self.spec.min_label_change:
                break
        self.concept = concept
        event = DriftEvent(t)
        self.events.append(event)
        return event

    def next_batch(self, learner_id: int, t: int, size: int) -> LabeledBatch:
        rng = self._rngs[learner_id]
        X = rng.uniform(-1, 1, size=(size, self.spec.input_dim))
        y = self.concept.label(X)
        flip = rng.random(size) < self.spec.label_noise
        return LabeledBatch(X, np.where(flip, 1.0 - y, y))

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        """Noise-free evaluation sample from the current concept."""
        X = rng.uniform(-1, 1, size=(n, self.spec.input_dim))
        return Dataset(X, self.concept.label(X))


# -- static synthetic tasks --------------------------------------------------

class GaussianClassTask:
    """Gaussian class clusters: means ``~ N(0, separation^2)``, spread ``noise``."""

    def __init__(self, input_dim: int, classes: int, seed: int,
                 separation: float = 1.0, noise: float = 1.0):
        if classes < 2:
            raise ConfigurationError("classification task needs classes >= 2")
        self.input_dim, self.classes = input_dim, classes
        self.noise = noise
        self.means = separation * derive_rng(seed, 10).standard_normal((classes, input_dim))

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        y = rng.integers(self.classes, size=n)
        X = self.means[y] + self.noise * rng.standard_normal((n, self.input_dim))
        return Dataset(X, y.astype(np.float64))


class LinearRegressionTask:
    def __init__(self, input_dim: int, seed: int, noise: float = 0.1):
        self.input_dim, self.noise = input_dim, noise
        self.weights = derive_rng(seed, 11).standard_normal(input_dim)

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        X = rng.standard_normal((n, self.input_dim))
        return Dataset(X, X @ self.weights + self.noise * rng.standard_normal(n))


def make_classification_task(n: int, input_dim: int, classes: int, seed: int,
                             separation: float = 1.0, noise: float = 1.0) -> Dataset:
    task = GaussianClassTask(input_dim, classes, seed, separation, noise)
    return task.sample(n, derive_rng(seed, 12))


def make_regression_task(n: int, input_dim: int, seed: int, noise: float = 0.1) -> Dataset:
    return LinearRegressionTask(input_dim, seed, noise).sample(n, derive_rng(seed, 12))


# -- finite datasets as streams ---------------------------------------------

@dataclass(frozen=True)
class PartitionPolicy:
    kind: Literal["shuffled-iid", "contiguous-shards", "unbalanced"] = "shuffled-iid"
    weights: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("shuffled-iid", "contiguous-shards", "unbalanced"):
            raise ConfigurationError(f"unknown partition policy {self.kind!r}")
        if self.kind == "unbalanced" and (not self.weights or min(self.weights) < 1):
            raise ConfigurationError("unbalanced partition needs positive per-learner weights")


def partition(dataset: Dataset, m: int, policy: PartitionPolicy | str = "shuffled-iid",
              seed: int = 0) -> list[Dataset]:
    """Split ``dataset`` into ``m`` disjoint shards whose union is the dataset.

    ``unbalanced`` shards are sized proportionally to ``policy.weights``.
    """
    if isinstance(policy, str):
        policy = PartitionPolicy(policy)
    n = len(dataset)
    if m < 1:
        raise ConfigurationError("partition needs m >= 1")
    if m > n:
        raise ConfigurationError(f"cannot split {n} samples into {m} non-empty shards")
    if policy.kind == "contiguous-shards":
        order = np.arange(n)
    else:
        order = derive_rng(seed, 20).permutation(n)
    if policy.kind == "unbalanced":
        if len(policy.weights) != m:
            raise ConfigurationError(f"{len(policy.weights)} weights for {m} learners")
        w = np.asarray(policy.weights, dtype=np.float64)
        bounds = np.rint(n * np.cumsum(w) / w.sum()).astype(np.int64)
        parts = np.split(order, bounds[:-1])
        if any(len(p) == 0 for p in parts):
            raise ConfigurationError("unbalanced partition produced an empty shard")
    else:
        parts = np.array_split(order, m)
    return [dataset.subset(p) for p in parts]


class DatasetStream:
    """Serves consecutive rows of each learner's shard; ``cycle`` wraps around."""

    def __init__(self, shards: Sequence[Dataset], cycle: bool = False):
        self.shards = list(shards)
        self.cycle = cycle
        self._pos = [0] * len(self.shards)
        self.events: list[DriftEvent] = []
        dims = {s.input_dim for s in self.shards}
        if len(dims) != 1:
            raise DataError(f"shards have different feature widths {sorted(dims)}")

    @property
    def input_dim(self) -> int:
        return self.shards[0].input_dim

    def maybe_drift(self, t: int) -> None:
        return None

    def next_batch(self, learner_id: int, t: int, size: int) -> LabeledBatch:
        shard, pos = self.shards[learner_id], self._pos[learner_id]
        n = len(shard)
        if self.cycle:
            idx = (pos + np.arange(size)) % n
        else:
            if pos + size > n:
                raise StreamExhausted(
                    f"learner {learner_id} needs {size} samples at round {t}, {n - pos} left")
            idx = np.arange(pos, pos + size)
        self._pos[learner_id] = pos + size
        return LabeledBatch(shard.features[idx], shard.labels[idx])


# -- IDX binary format -------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def _parse_idx(data: bytes, expected_magic: int | None = None) -> np.ndarray:
    if len(data) < 4:
        raise ParseError(f"truncated IDX header: {len(data)} bytes, need 4", offset=len(data))
    magic, = struct.unpack(">I", data[:4])
    if expected_magic is not None and magic != expected_magic:
        raise ParseError(f"bad IDX magic 0x{magic:08X}, expected 0x{expected_magic:08X}", offset=0)
    if data[0] != 0 or data[1] != 0 or data[2] not in _IDX_DTYPES or data[3] == 0:
        raise ParseError(f"bad IDX magic 0x{magic:08X}", offset=0)
    dtype = np.dtype(_IDX_DTYPES[data[2]])
    ndim = data[3]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise ParseError(f"truncated IDX dimension table: need {header} bytes", offset=len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header])
    need = header + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(data) < need:
        raise ParseError(f"truncated IDX payload: need {need} bytes, got {len(data)}", offset=len(data))
    if len(data) > need:
        raise ParseError(f"{len(data) - need} trailing bytes after IDX payload", offset=need)
    return np.frombuffer(data[header:need], dtype=dtype).reshape(dims)


def read_idx(path) -> np.ndarray:
    """Raw IDX tensor with its stored element type and shape."""
    return _parse_idx(Path(path).read_bytes())


def read_idx_images(path) -> np.ndarray:
    """Image tensor flattened to ``(n, rows * cols)`` rows scaled to [0, 1]."""
    arr = _parse_idx(Path(path).read_bytes(), IDX_IMAGES_MAGIC)
    return arr.reshape(arr.shape[0], -1).astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    return _parse_idx(Path(path).read_bytes(), IDX_LABELS_MAGIC).astype(np.float64)


def load_idx_dataset(images_path, labels_path) -> Dataset:
    X = read_idx_images(images_path)
    y = read_idx_labels(labels_path)
    if len(X) != len(y):
        raise DataError(f"{len(X)} images but {len(y)} labels")
    return Dataset(X, y)


def write_idx(path, array) -> None:
    arr = np.asarray(array)
    codes = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_DTYPES.items()}
    code = codes.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise DataError(f"dtype {arr.dtype} has no IDX type code")
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype(_IDX_DTYPES[code]).tobytes())


# -- CSV ---------------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    label_column: int = -1
    drop_columns: tuple[int, ...] = field(default=())


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_csv(path, schema: CsvSchema | None = None) -> Dataset:
    """Numeric CSV with the label in ``schema.label_column`` (default: last).

    A first row containing any non-numeric cell is treated as a header.
    """
    schema = schema or CsvSchema()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        # (file line number, cells), blank lines skipped
        rows = [(reader.line_num, r) for r in reader if r and any(c.strip() for c in r)]
    if rows and not all(_is_number(c) for c in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise ParseError("CSV file contains no data rows", row=1)
    width = len(rows[0][1])
    values = np.empty((len(rows), width))
    for k, (line, row) in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"ragged row: {len(row)} cells, expected {width}", row=line)
        for c, cell in enumerate(row):
            try:
                values[k, c] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", row=line, column=c + 1) from None
    keep = [c for c in range(width) if c not in {d % width for d in schema.drop_columns}]
    label = schema.label_column % width
    feat = [c for c in keep if c != label]
    return Dataset(values[:, feat], values[:, label])
