"""Stage I: joint training of supernet weights and the exploitation distribution.

Each step: one gate draw picks the exploitation distribution (probability K)
or the uniform exploration distribution; lambda architectures are sampled
from it over the currently active space; all of them are evaluated on the
same batch; the weights move by the averaged gradient and theta by a
natural-gradient step on the batch utilities. K is refreshed from the
entropy ratio every ``update_interval`` epochs, and progressive-expansion
events are applied at epoch boundaries.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from . import distribution as dist
from .distribution import CategoricalParams, ControllerState, Gate, UtilityMode
from .space import ExpansionSchedule, SearchSpace, expand

log = logging.getLogger(__name__)

GATE_MODES = ("ee", "exploit_only", "explore_only")


class TrainingAborted(RuntimeError):
    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass
class TrainConfig:
    epochs: int = 10
    steps_per_epoch: int = 50
    samples_per_step: int = 8
    update_interval: int = 1
    weight_lr: float = 1e-3
    theta_lr: float | None = None
    utility: str = "ranking"
    gate: str = "ee"
    importance_weighting: bool = False
    progressive: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_step < 1:
            raise ValueError("samples_per_step must be >= 1")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("epochs and steps_per_epoch must be >= 1")
        if self.update_interval < 1:
            raise ValueError("update_interval must be >= 1")
        if self.gate not in GATE_MODES:
            raise ValueError(f"gate must be one of {GATE_MODES}, got {self.gate!r}")
        UtilityMode(self.utility)
        if self.utility == "ranking" and self.samples_per_step < 2:
            raise ValueError("ranking utilities need samples_per_step >= 2")

    @property
    def effective_theta_lr(self) -> float:
        return self.theta_lr if self.theta_lr is not None else 0.1 / self.samples_per_step

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


@dataclass
class StepRecord:
    epoch: int
    step: int
    gate: str
    K: float
    entropy: float
    max_entropy: float
    archs: list[str]
    losses: list[float]


@dataclass
class TrainHistory:
    records: list[StepRecord] = field(default_factory=list)
    expansions: list[tuple[int, str, str]] = field(default_factory=list)
    refreshes: list[int] = field(default_factory=list)
    # entropy after the last update of each epoch, before any widening
    epoch_end_entropy: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records],
                "expansions": [list(e) for e in self.expansions],
                "refreshes": list(self.refreshes),
                "epoch_end_entropy": list(self.epoch_end_entropy)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls([StepRecord(**r) for r in d["records"]],
                   [tuple(e) for e in d["expansions"]], list(d["refreshes"]),
                   list(d.get("epoch_end_entropy", [])))

    @property
    def best_loss(self) -> float:
        return min(min(r.losses) for r in self.records)


@dataclass
class TrainState:
    """Everything needed to resume training bit-exactly."""

    space: SearchSpace
    params: CategoricalParams
    controller: ControllerState
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    history: TrainHistory = field(default_factory=TrainHistory)


def initial_state(space: SearchSpace, config: TrainConfig,
                  schedule: ExpansionSchedule | None = None) -> TrainState:
    start = space.initial() if (config.progressive and schedule and schedule.events) else space.full()
    params = dist.uniform_init(start)
    return TrainState(start, params, ControllerState(interval=config.update_interval),
                      np.random.default_rng(config.seed))


def _encode(space: SearchSpace, arch) -> str:
    return "".join(str(i) for i in space.to_indices(arch)) if max(space.group_sizes()) <= 10 \
        else ".".join(str(i) for i in space.to_indices(arch))


def sample_step(params: CategoricalParams, space: SearchSpace, gate: Gate, lam: int,
                rng: np.random.Generator):
    """Draw ``lam`` architectures from the distribution the gate selected."""
    if lam < 1:
        raise ValueError("need at least one sample per step")
    source = params if gate is Gate.EXPLOIT else dist.uniform_init(space)
    return dist.sample_many(source, rng, lam)


def _refresh(state: TrainState, config: TrainConfig) -> ControllerState:
    c = dist.update_controller(state.params, state.space, state.controller)
    if config.gate == "exploit_only":
        return ControllerState(1.0, c.interval, c.rho, c.rho_max)
    if config.gate == "explore_only":
        return ControllerState(0.0, c.interval, c.rho, c.rho_max)
    return c


def train(space: SearchSpace, schedule: ExpansionSchedule | None, backend, config: TrainConfig,
          state: TrainState | None = None,
          on_epoch_end: Callable[[TrainState], None] | None = None):
    """Run (or resume) Stage I. Returns ``(backend, params, history, state)``."""
    if backend.space.full() != space.full():
        raise ValueError("backend is bound to a different search space")
    schedule = schedule if (schedule is not None and config.progressive) else ExpansionSchedule()
    state = state or initial_state(space, config, schedule)
    rng = state.rng
    lam = config.samples_per_step
    theta_lr = config.effective_theta_lr

    while state.epoch < config.epochs:
        e = state.epoch
        grown = expand(state.space, schedule, e)
        if grown is not state.space:
            before = state.space.describe()
            state.space = grown
            state.params = dist.widen(state.params, grown)
            state.history.expansions.append((e, before, grown.describe()))
            log.info("epoch %d: expanded to %s", e, grown.describe())
        if e % config.update_interval == 0:
            state.controller = _refresh(state, config)
            state.history.refreshes.append(e)

        for s in range(config.steps_per_epoch):
            batch = backend.next_batch(rng)
            gate = dist.controller_gate(state.controller, rng)
            archs = sample_step(state.params, state.space, gate, lam, rng)
            lr = config.weight_lr * max(0.0, 1.0 - state.step / config.total_steps)
            losses = backend.train_step(archs, batch, lr, rng)
            record = StepRecord(e, state.step, gate.value, state.controller.K,
                                dist.entropy(state.params), dist.max_entropy(state.space),
                                [_encode(state.space, a) for a in archs],
                                [float(x) for x in losses])
            if not np.all(np.isfinite(losses)):
                raise TrainingAborted(f"non-finite loss at epoch {e} step {state.step}", record)
            utils = dist.utility_transform(losses, config.utility)
            if gate is Gate.EXPLORE and config.importance_weighting:
                utils = utils * np.array([dist.importance_weight(state.params, a) for a in archs])
            state.params = dist.natural_gradient_step(state.params, list(zip(archs, utils)), theta_lr)
            state.history.records.append(record)
            state.step += 1

        state.history.epoch_end_entropy.append(dist.entropy(state.params))
        state.epoch += 1
        if on_epoch_end is not None:
            on_epoch_end(state)

    return backend, state.params, state.history, state


# -- reporting --------------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "step", "gate", "K", "entropy", "max_entropy",
                   "mean_loss", "min_loss", "archs", "losses")

REPORT_COLUMNS = ("epoch", "K", "entropy_start", "entropy_end", "max_entropy",
                  "explore_fraction", "mean_loss", "best_loss", "refreshed")


def history_csv(history: TrainHistory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for r in history.records:
        w.writerow([r.epoch, r.step, r.gate, repr(r.K), repr(r.entropy), repr(r.max_entropy),
                    repr(float(np.mean(r.losses))), repr(min(r.losses)),
                    ";".join(r.archs), ";".join(repr(x) for x in r.losses)])
    return buf.getvalue()


def progress_report(history: TrainHistory) -> list[dict]:
    """One row per epoch: controller, entropy, exploration rate and losses."""
    by_epoch: dict[int, list[StepRecord]] = {}
    for r in history.records:
        by_epoch.setdefault(r.epoch, []).append(r)
    epochs = sorted(by_epoch)
    rows = []
    for i, e in enumerate(epochs):
        recs = by_epoch[e]
        ends = history.epoch_end_entropy
        rows.append({
            "epoch": e,
            "K": recs[0].K,
            "entropy_start": recs[0].entropy,
            "entropy_end": ends[e] if e < len(ends) else recs[-1].entropy,
            "max_entropy": recs[0].max_entropy,
            "explore_fraction": sum(r.gate == Gate.EXPLORE.value for r in recs) / len(recs),
            "mean_loss": float(np.mean([np.mean(r.losses) for r in recs])),
            "best_loss": min(min(r.losses) for r in recs),
            "refreshed": e in history.refreshes,
        })
    return rows


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in rows:
        w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in REPORT_COLUMNS])
    return buf.getvalue()
