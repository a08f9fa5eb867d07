"""Round-synchronous simulation of ``m`` learners and a coordinator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StreamExhausted
from .learners import LabeledBatch, Learner, local_round
from .metrics import CommCostModel, RunLedger, charge
from .protocols import Protocol


@dataclass
class World:
    learners: list[Learner]
    protocol: Protocol
    stream: object  # DriftStream or DatasetStream
    ledger: RunLedger
    cost: CommCostModel
    batch_sizes: list[int]
    # one learner consuming every stream's batch (the centralized baseline)
    serial: bool = False

    @property
    def dim(self) -> int:
        return self.learners[0].model.size

    def configuration(self) -> np.ndarray:
        return np.stack([lr.model for lr in self.learners])

    def mean_model(self) -> np.ndarray:
        return self.configuration().mean(axis=0)


def run_round(world: World, t: int) -> World:
    """Observe, update locally, synchronize and record round ``t``.

    Raises :class:`StreamExhausted` before anything is recorded when a
    finite stream cannot supply the round's batches.
    """
    event = world.stream.maybe_drift(t)
    batches = [world.stream.next_batch(i, t, b) for i, b in enumerate(world.batch_sizes)]
    if world.serial:
        losses = [local_round(world.learners[0], LabeledBatch.concat(batches))]
    else:
        losses = [local_round(lr, batch) for lr, batch in zip(world.learners, batches)]
    world.ledger.record_round(t, losses, drift=event is not None)

    cfg, outcome = world.protocol.sync(world.configuration(), t)
    for i in outcome.participants:
        world.learners[i].model = cfg[i].copy()
    charge(world.ledger, outcome, world.cost, world.dim)
    return world


def run_rounds(world: World, rounds: int) -> World:
    """Run rounds ``1..rounds``; a finite stream running dry ends the run early."""
    for t in range(1, rounds + 1):
        try:
            run_round(world, t)
        except StreamExhausted:
            world.ledger.meta["ended_early_at"] = t
            break
    return world
