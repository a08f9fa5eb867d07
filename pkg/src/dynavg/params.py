"""Dense parameter vectors and model configurations.

A model is a flat float64 vector of fixed dimension ``d``; a configuration
of ``m`` local models is stored as an ``(m, d)`` array.  All functions are
pure: inputs are never modified and fresh arrays are returned.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericError


def as_params(weights, dim: int | None = None) -> np.ndarray:
    """Validate ``weights`` as a model vector and return a float64 copy."""
    f = np.array(weights, dtype=np.float64).reshape(-1)
    if f.size == 0:
        raise ConfigurationError("model vector must have dimension >= 1")
    if dim is not None and f.size != dim:
        raise ConfigurationError(f"model has dimension {f.size}, expected {dim}")
    if not np.all(np.isfinite(f)):
        raise NumericError("model vector contains non-finite entries")
    return f


def as_config(models) -> np.ndarray:
    """Stack ``models`` into an ``(m, d)`` float64 configuration array."""
    if isinstance(models, np.ndarray):
        cfg = np.array(models, dtype=np.float64)
        if cfg.ndim == 1:
            cfg = cfg.reshape(-1, 1)
    else:
        rows = [np.asarray(f, dtype=np.float64).reshape(-1) for f in models]
        if not rows:
            raise ConfigurationError("configuration must contain at least one model")
        dims = {r.size for r in rows}
        if len(dims) != 1:
            raise ConfigurationError(f"models have mismatched dimensions {sorted(dims)}")
        cfg = np.stack(rows)
    if cfg.ndim != 2 or cfg.shape[0] == 0 or cfg.shape[1] == 0:
        raise ConfigurationError(f"configuration has invalid shape {cfg.shape}")
    return cfg


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ConfigurationError(f"dimension mismatch: {a.shape} vs {b.shape}")


def average(cfg) -> np.ndarray:
    cfg = as_config(cfg)
    return cfg.sum(axis=0) / cfg.shape[0]


def weighted_average(cfg, counts: Sequence[int]) -> np.ndarray:
    """Average of the models weighted by their sample counts."""
    cfg = as_config(cfg)
    w = as_counts(counts, cfg.shape[0])
    if np.all(w == w[0]):
        # equal weights cancel; reduce exactly to the plain mean, bit for bit
        return average(cfg)
    w = w.astype(np.float64)
    return (cfg * w[:, None]).sum(axis=0) / w.sum()


def as_counts(counts, m: int) -> np.ndarray:
    """Validate per-learner sample counts (positive integers, one per model)."""
    w = np.asarray(counts)
    if w.shape != (m,):
        raise ConfigurationError(f"got {w.size} counts for {m} models")
    if not np.issubdtype(w.dtype, np.integer) or np.any(w < 1):
        raise ConfigurationError("counts must be positive integers")
    return w


def sq_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    diff = a - b
    return float(diff @ diff)


def divergence(cfg) -> float:
    """Mean squared distance of the models to their average."""
    cfg = as_config(cfg)
    diff = cfg - average(cfg)
    return float(np.einsum("ij,ij->", diff, diff) / cfg.shape[0])


def axpy(dst, scale: float, src) -> np.ndarray:
    """Return ``dst + scale * src``."""
    dst = np.asarray(dst, dtype=np.float64)
    src = np.asarray(src, dtype=np.float64)
    _check_pair(dst, src)
    if not np.isfinite(scale):
        raise NumericError(f"scale must be finite, got {scale}")
    return dst + scale * src
