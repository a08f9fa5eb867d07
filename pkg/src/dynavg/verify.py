"""Randomized property suites for the protocol operators and learners.

Each suite draws its instances from a fixed default seed, so a run is
reproducible.  A suite reports its number of trials, failures and the worst
observed value of the checked quantity.

    >>> [r.ok for r in verify("condition-soundness", trials=100)]
    [True]
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .learners import (LabeledBatch, Learner, LossSpec, OptimizerState, PredictorSpec,
                       glorot_init, local_round, loss_and_grad)
from .params import average, divergence, sq_distance
from .protocols import (CoordinatorState, dynamic_sync, find_violators, periodic_sync,
                        resolve_violations)

SUITES = ("prop1", "lemma1", "def2", "condition-soundness", "gradcheck")
DEFAULT_SEED = 20240917


@dataclass
class SuiteReport:
    suite: str
    trials: int
    failures: int
    worst: float
    tolerance: float
    seconds: float = 0.0
    # first few failing instances, for the report
    examples: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return (f"{status} {self.suite}: {self.failures}/{self.trials} failures, "
                f"worst={self.worst:.3e} (tol {self.tolerance:g}), {self.seconds:.2f}s")


class _Tally:
    def __init__(self, suite: str, tolerance: float):
        self.report = SuiteReport(suite, 0, 0, 0.0, tolerance)
        self._start = time.perf_counter()

    def add(self, value: float, ok: bool, **info) -> None:
        r = self.report
        r.trials += 1
        r.worst = max(r.worst, float(value))
        if not ok:
            r.failures += 1
            if len(r.examples) < 5:
                r.examples.append({"value": float(value), **info})

    def done(self) -> SuiteReport:
        self.report.seconds = time.perf_counter() - self._start
        return self.report


def _random_batch(rng, spec: PredictorSpec, loss: LossSpec, n: int) -> LabeledBatch:
    X = rng.uniform(-1, 1, (n, spec.input_dim))
    if loss.kind == "squared":
        y = rng.standard_normal((n, spec.outputs)) if spec.outputs > 1 else rng.standard_normal(n)
    elif loss.kind == "logistic":
        y = rng.integers(0, 2, n).astype(np.float64)
    else:
        y = rng.integers(0, spec.outputs, n)
    return LabeledBatch(X, y)


# -- suites ------------------------------------------------------------------

def check_prop1(trials: int = 1000, seed: int = DEFAULT_SEED, tol: float = 1e-12) -> SuiteReport:
    """Continuous averaging against serial mini-batch SGD on the pooled batch.

    m learners with batch B and rate eta, averaged after every round, should
    track one learner on the m*B batch with rate eta/m.  The error per round
    is measured relative to ``||f|| + ||(eta/m) G||`` (model plus step size).
    """
    rng = np.random.default_rng([seed, 1])
    tally = _Tally("prop1", tol)
    for k in range(trials):
        m, B = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        d = int(rng.integers(1, 101))
        kind = ("squared", "logistic")[k % 2]
        spec, loss = PredictorSpec("linear", d), LossSpec(kind, 0.0)
        eta = float(rng.uniform(0.001, 0.1))
        f0 = glorot_init(spec, rng) + rng.normal(0, 0.1, spec.num_params)
        team = [Learner(spec, loss, OptimizerState("sgd", eta), f0.copy()) for _ in range(m)]
        solo = Learner(spec, loss, OptimizerState("sgd", eta / m), f0.copy())
        worst = 0.0
        for t in range(1, int(rng.integers(1, 6)) + 1):
            batches = [_random_batch(rng, spec, loss, B) for _ in range(m)]
            pooled = LabeledBatch.concat(batches)
            _, grad = loss_and_grad(spec, loss, solo.model, pooled)
            step = (eta / m) * np.linalg.norm(grad)
            for lr, b in zip(team, batches):
                local_round(lr, b)
            local_round(solo, pooled)
            cfg, _ = periodic_sync(np.stack([lr.model for lr in team]), t, 1)
            for lr, row in zip(team, cfg):
                lr.model = row.copy()
            scale = np.linalg.norm(solo.model) + step
            worst = max(worst, float(np.linalg.norm(team[0].model - solo.model) / scale))
        tally.add(worst, worst <= tol, m=m, B=B, d=d, loss=kind)
    return tally.done()


def check_condition_soundness(trials: int = 10_000, seed: int = DEFAULT_SEED) -> SuiteReport:
    """All local conditions hold => divergence <= delta."""
    rng = np.random.default_rng([seed, 2])
    tally = _Tally("condition-soundness", 0.0)
    while tally.report.trials < trials:
        m, d = int(rng.integers(1, 33)), int(rng.integers(1, 65))
        r = rng.standard_normal(d) * rng.uniform(0.1, 10)
        delta = float(10 ** rng.uniform(-4, 2))
        # points inside the delta-ball around r, some on its boundary
        dirs = rng.standard_normal((m, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = np.sqrt(delta) * np.where(rng.random(m) < 0.3, 1.0, rng.random(m) ** (1 / d))
        cfg = r + dirs * radii[:, None]
        for i in range(m):
            # pull boundary points that rounded outside back onto the ball
            shrink = 1e-15
            while sq_distance(cfg[i], r) > delta:
                cfg[i] = r + (cfg[i] - r) * (1 - shrink)
                shrink *= 2
        excess = divergence(cfg) - delta
        tally.add(max(excess, 0.0), excess <= 0.0, m=m, d=d, delta=delta)
    return tally.done()


Resolver = Callable[[np.ndarray, CoordinatorState, list], tuple]


def check_def2(trials: int = 10_000, seed: int = DEFAULT_SEED, tol: float = 1e-9,
               resolver: Resolver = resolve_violations) -> SuiteReport:
    """Mean preservation and bounded divergence of violation resolution.

    ``resolver`` is replaceable so a deliberately broken operator can be
    checked to fail.
    """
    rng = np.random.default_rng([seed, 3])
    tally = _Tally("def2", tol)
    while tally.report.trials < trials:
        m, d = int(rng.integers(1, 17)), int(rng.integers(1, 33))
        r = rng.standard_normal(d)
        cfg = r + rng.standard_normal((m, d)) * rng.uniform(0.05, 2.0, (m, 1))
        delta = float(np.quantile([sq_distance(f, r) for f in cfg], rng.uniform(0, 0.95)))
        violators = find_violators(cfg, r, delta, 1, 1)
        if not violators:
            continue
        coord = CoordinatorState(reference=r.copy(), delta=delta,
                                 rng=np.random.default_rng(rng.integers(2**63)),
                                 violations=int(rng.integers(0, m)))
        out, outcome = resolver(cfg, coord, violators)
        before, after = average(cfg), average(out)
        mean_err = np.linalg.norm(after - before) / max(np.linalg.norm(before), 1e-300)
        conditions = all(sq_distance(f, coord.reference) <= delta * (1 + 1e-12) + 1e-15
                         for f in out)
        div_excess = divergence(out) - delta if conditions else 0.0
        ok = mean_err <= tol and conditions and div_excess <= tol * max(delta, 1.0)
        tally.add(mean_err, ok, m=m, d=d, mean_error=float(mean_err),
                  conditions=conditions, divergence_excess=float(div_excess))
    return tally.done()


def check_lemma1(trials: int = 10_000, seed: int = DEFAULT_SEED, slack: float = 1e-9) -> SuiteReport:
    """Dynamic vs periodic on paired configurations adds at most delta to their distance."""
    rng = np.random.default_rng([seed, 4])
    tally = _Tally("lemma1", slack)
    for _ in range(trials):
        m, d = int(rng.integers(1, 17)), int(rng.integers(1, 33))
        b = int(rng.integers(1, 5))
        t = int(rng.integers(1, 13))
        r = rng.standard_normal(d)
        dcfg = r + rng.standard_normal((m, d)) * rng.uniform(0.05, 2.0)
        scfg = dcfg + rng.standard_normal((m, d)) * rng.uniform(0, 2.0)
        delta = float(10 ** rng.uniform(-2, 1))
        coord = CoordinatorState(reference=r.copy(), delta=delta,
                                 rng=np.random.default_rng(rng.integers(2**63)),
                                 violations=int(rng.integers(0, m)))
        dyn, _ = dynamic_sync(dcfg, t, b, coord)
        per, _ = periodic_sync(scfg, t, b)
        lhs = float(np.mean(np.sum((dyn - per) ** 2, axis=1)))
        rhs = float(np.mean(np.sum((dcfg - scfg) ** 2, axis=1))) + delta
        tally.add(max(lhs - rhs, 0.0), lhs <= rhs + slack, m=m, d=d, b=b, t=t)
    return tally.done()


GRADCHECK_CASES = (
    (PredictorSpec("linear", 6), "squared"),
    (PredictorSpec("linear", 6), "logistic"),
    (PredictorSpec("linear", 6, outputs=3), "cross_entropy"),
    (PredictorSpec("mlp", 5, hidden_units=4), "squared"),
    (PredictorSpec("mlp", 5, hidden_units=4), "logistic"),
    (PredictorSpec("mlp", 5, hidden_units=4, outputs=3), "cross_entropy"),
    (PredictorSpec("mlp", 5, hidden_units=4, activation="relu"), "squared"),
    (PredictorSpec("mlp", 5, hidden_units=4, activation="relu", outputs=3), "cross_entropy"),
)


def numeric_grad(spec: PredictorSpec, loss: LossSpec, f: np.ndarray, batch: LabeledBatch,
                 h: float = 1e-6) -> np.ndarray:
    """Central finite differences of the batch loss."""
    g = np.empty_like(f)
    for j in range(f.size):
        e = np.zeros_like(f)
        e[j] = h
        g[j] = (loss_and_grad(spec, loss, f + e, batch)[0]
                - loss_and_grad(spec, loss, f - e, batch)[0]) / (2 * h)
    return g


def check_gradients(trials: int = 200, seed: int = DEFAULT_SEED, tol: float = 1e-5) -> SuiteReport:
    """Analytic gradients against central differences for every (predictor, loss) case."""
    rng = np.random.default_rng([seed, 5])
    tally = _Tally("gradcheck", tol)
    for spec, kind in GRADCHECK_CASES:
        for _ in range(trials):
            loss = LossSpec(kind, float(rng.choice([0.0, 0.1])))
            f = glorot_init(spec, rng) + rng.normal(0, 0.3, spec.num_params)
            batch = _random_batch(rng, spec, loss, int(rng.integers(1, 6)))
            _, g = loss_and_grad(spec, loss, f, batch)
            g_fd = numeric_grad(spec, loss, f, batch)
            err = np.linalg.norm(g - g_fd) / max(np.linalg.norm(g), np.linalg.norm(g_fd), 1e-8)
            tally.add(err, err <= tol, predictor=spec.kind, activation=spec.activation, loss=kind)
    return tally.done()


_RUNNERS = {
    "prop1": check_prop1,
    "lemma1": check_lemma1,
    "def2": check_def2,
    "condition-soundness": check_condition_soundness,
    "gradcheck": check_gradients,
}


def verify(suite: str = "all", seed: int | None = None, trials: int | None = None) -> list[SuiteReport]:
    """Run one suite or ``"all"``; ``trials`` overrides every suite's default count."""
    if suite == "all":
        names = list(SUITES)
    elif suite in _RUNNERS:
        names = [suite]
    else:
        raise ConfigurationError(f"unknown suite {suite!r}; choose from all, {', '.join(SUITES)}")
    kwargs = {}
    if seed is not None:
        kwargs["seed"] = seed
    if trials is not None:
        kwargs["trials"] = trials
    return [_RUNNERS[name](**kwargs) for name in names]
