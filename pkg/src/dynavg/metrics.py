"""Loss and communication accounting for a run.

The ledger keeps one :class:`RoundRecord` per round.  Cumulative loss is the
sum over rounds and learners of the loss each local model suffered on its
batch; cumulative communication is the byte total of all protocol messages.
"""
from __future__ import annotations

import csv
import io
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigurationError
from .protocols import Message, SyncOutcome

CSV_COLUMNS = ("t", "cum_loss", "inst_loss_mean", "cum_bytes", "msgs",
               "syncs_full", "syncs_partial", "violations", "drift")


@dataclass(frozen=True)
class CommCostModel:
    bytes_per_param: int = 8
    header_bytes: int = 64
    count_requests: bool = True

    def __post_init__(self):
        if self.bytes_per_param < 1 or self.header_bytes < 0:
            raise ConfigurationError("cost.bytes_per_param must be >= 1 and cost.header_bytes >= 0")

    def model_bytes(self, dim: int) -> int:
        return dim * self.bytes_per_param + self.header_bytes

    def message_bytes(self, msg: Message, dim: int) -> int:
        if msg.kind == "request":
            return self.header_bytes if self.count_requests else 0
        if msg.kind == "model+count":
            # the sample count travels as one extra value in the payload
            return (dim + 1) * self.bytes_per_param + self.header_bytes
        return self.model_bytes(dim)

    def is_charged(self, msg: Message) -> bool:
        return msg.kind != "request" or self.count_requests


@dataclass
class RoundRecord:
    t: int
    losses: np.ndarray
    drift: bool = False
    msgs: int = 0
    bytes: int = 0
    syncs_full: int = 0
    syncs_partial: int = 0
    violations: int = 0


@dataclass
class RunLedger:
    m: int
    records: list[RoundRecord] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)
    # identifies (seeds, stream, T, m) so reports can refuse unpaired runs
    run_params: dict[str, Any] = field(default_factory=dict)
    drift_rounds: list[int] = field(default_factory=list)
    # learners represented by the run when it differs from the loss columns
    # (the serial baseline has one loss column standing for all m learners)
    system_learners: int | None = None

    def record_round(self, t: int, losses, drift: bool = False) -> RoundRecord:
        if self.records and t <= self.records[-1].t:
            raise ConfigurationError(f"round {t} recorded after round {self.records[-1].t}")
        rec = RoundRecord(t, np.asarray(losses, dtype=np.float64).reshape(-1), bool(drift))
        self.records.append(rec)
        if drift:
            self.drift_rounds.append(t)
        return rec

    def __len__(self) -> int:
        return len(self.records)

    @property
    def rounds(self) -> np.ndarray:
        return np.array([r.t for r in self.records], dtype=np.int64)

    @property
    def losses(self) -> np.ndarray:
        """Per-round, per-learner instantaneous losses, shape ``(T, m)``."""
        if not self.records:
            return np.zeros((0, self.m))
        return np.stack([r.losses for r in self.records])

    @property
    def round_loss(self) -> np.ndarray:
        return np.array([float(np.sum(r.losses)) for r in self.records])

    @property
    def cum_loss(self) -> np.ndarray:
        return np.cumsum(self.round_loss)

    @property
    def msgs(self) -> np.ndarray:
        return np.array([r.msgs for r in self.records], dtype=np.int64)

    @property
    def cum_bytes(self) -> np.ndarray:
        return np.cumsum(np.array([r.bytes for r in self.records], dtype=np.int64))

    @property
    def total_loss(self) -> float:
        return float(self.cum_loss[-1]) if self.records else 0.0

    @property
    def total_bytes(self) -> int:
        return int(self.cum_bytes[-1]) if self.records else 0

    def summary(self) -> dict[str, Any]:
        n = self.system_learners or self.m
        return {
            "rounds": len(self.records),
            "learners": n,
            "cum_loss": self.total_loss,
            "cum_loss_per_learner": self.total_loss / n,
            "cum_bytes": self.total_bytes,
            "messages": int(self.msgs.sum()) if self.records else 0,
            "syncs_full": sum(r.syncs_full for r in self.records),
            "syncs_partial": sum(r.syncs_partial for r in self.records),
            "violations": sum(r.violations for r in self.records),
            "drifts": len(self.drift_rounds),
        }


def outcome_bytes(outcome: SyncOutcome, cost: CommCostModel, dim: int) -> int:
    return sum(cost.message_bytes(msg, dim) for msg in outcome.messages)


def charge(ledger: RunLedger, outcome: SyncOutcome, cost: CommCostModel, dim: int) -> int:
    """Add the outcome's messages to the ledger's current round; returns the bytes added."""
    if not ledger.records:
        raise ConfigurationError("charge called before any round was recorded")
    rec = ledger.records[-1]
    added = outcome_bytes(outcome, cost, dim)
    rec.bytes += added
    rec.msgs += sum(cost.is_charged(msg) for msg in outcome.messages)
    rec.violations += len(outcome.violators)
    if outcome.kind != "none":
        full = len(outcome.participants) == ledger.m
        if full:
            rec.syncs_full += 1
        else:
            rec.syncs_partial += 1
    return added


def regret(ledger: RunLedger, reference_losses) -> float:
    """Cumulative loss in excess of a reference model on the same samples."""
    ref = np.asarray(reference_losses, dtype=np.float64)
    own = ledger.losses
    if ref.shape != own.shape:
        raise ConfigurationError(f"reference losses have shape {ref.shape}, ledger has {own.shape}")
    return float(np.sum(own - ref))


def efficiency_report(ledgers: Mapping[str, RunLedger], serial: str = "serial",
                      periodic: str = "periodic(b=1)", tolerance: float = 0.1) -> dict[str, dict]:
    """Loss ratios against the serial baseline and byte ratios against continuous averaging.

    A protocol is flagged ``consistent`` when its cumulative loss is within
    ``tolerance`` (relative) of the serial learner's; ratios are ``None``
    when the baseline is missing.
    """
    keys = {json.dumps(led.run_params, sort_keys=True, default=str) for led in ledgers.values()}
    if len(keys) > 1:
        raise ConfigurationError("efficiency_report needs ledgers with identical seeds, streams, T and m")
    base_loss = ledgers[serial].total_loss if serial in ledgers else None
    base_bytes = ledgers[periodic].total_bytes if periodic in ledgers else None
    report = {}
    for name, led in ledgers.items():
        loss, nbytes = led.total_loss, led.total_bytes
        loss_ratio = loss / base_loss if base_loss else None
        report[name] = {
            "cum_loss": loss,
            "cum_loss_per_learner": loss / (led.system_learners or led.m),
            "cum_bytes": nbytes,
            "loss_ratio": loss_ratio,
            "comm_ratio": nbytes / base_bytes if base_bytes else None,
            "consistent": None if loss_ratio is None else bool(loss_ratio <= 1 + tolerance),
        }
    return report


@dataclass(frozen=True)
class DriftResponse:
    before: list[float]
    after: list[float]

    @property
    def ratio(self) -> float:
        """Pooled mean messages after drifts over pooled mean before them."""
        if not self.before:
            return float("nan")
        b = float(np.mean(self.before))
        return float(np.mean(self.after)) / b if b > 0 else float("inf")

    def __add__(self, other: "DriftResponse") -> "DriftResponse":
        return DriftResponse(self.before + other.before, self.after + other.after)


def drift_response(ledger: RunLedger, window: int = 50) -> DriftResponse:
    """Mean messages per round in the windows before and after each drift.

    A drift at round t contributes rounds ``[t-window, t-1]`` and
    ``[t, t+window-1]``; drifts whose windows do not fit in the run are skipped.
    """
    msgs = ledger.msgs.astype(np.float64)
    first = int(ledger.records[0].t) if ledger.records else 1
    before, after = [], []
    for t in ledger.drift_rounds:
        k = t - first
        if k - window >= 0 and k + window <= len(msgs):
            before.append(float(msgs[k - window:k].mean()))
            after.append(float(msgs[k:k + window].mean()))
    return DriftResponse(before, after)


# -- export --------------------------------------------------------------------

def ledger_rows(ledger: RunLedger) -> list[dict[str, Any]]:
    cum_loss, cum_bytes = ledger.cum_loss, ledger.cum_bytes
    return [{
        "t": r.t,
        "cum_loss": float(cum_loss[k]),
        "inst_loss_mean": float(np.mean(r.losses)),
        "cum_bytes": int(cum_bytes[k]),
        "msgs": r.msgs,
        "syncs_full": r.syncs_full,
        "syncs_partial": r.syncs_partial,
        "violations": r.violations,
        "drift": int(r.drift),
    } for k, r in enumerate(ledger.records)]


def to_csv(ledger: RunLedger) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in ledger_rows(ledger):
        # repr() round-trips floats exactly
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def to_json(ledger: RunLedger) -> str:
    doc = {
        "metadata": {**ledger.meta, "git_describe": ledger.meta.get("git_describe") or git_describe()},
        "summary": ledger.summary(),
        "columns": list(CSV_COLUMNS),
        "rounds": ledger_rows(ledger),
        "drift_rounds": ledger.drift_rounds,
        "learner_losses": ledger.losses.tolist(),
    }
    return json.dumps(doc, indent=1, sort_keys=False, default=str)


def export(ledger: RunLedger, fmt: str, path) -> Path:
    path = Path(path)
    if fmt == "csv":
        text = to_csv(ledger)
    elif fmt == "json":
        text = to_json(ledger)
    else:
        raise ConfigurationError(f"unknown export format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def read_csv_export(path) -> dict[str, np.ndarray]:
    """Columns of an exported ledger CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ConfigurationError(f"unexpected ledger columns {header}")
        rows = list(reader)
    cols = {}
    for j, name in enumerate(header):
        vals = [row[j] for row in rows]
        if name in ("cum_loss", "inst_loss_mean"):
            cols[name] = np.array([float(v) for v in vals])
        else:
            cols[name] = np.array([int(v) for v in vals], dtype=np.int64)
    return cols
