"""Stage II: constraint-aware search over a trained supernet, plus baselines.

Weights are never touched here: every searcher only calls
``backend.accuracy``. The distribution searcher reuses the natural-gradient
update of :mod:`eesng.distribution` with utilities computed from the
negated rewards (the update minimizes).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import distribution as dist
from .cost import NetConfig, cost as arch_cost
from .distribution import CategoricalParams
from .space import ArchitectureSpec, SearchSpace, cardinality, enumerate_space

PENALTY_FORMS = ("as_written", "violation_proportional")
TOP_K = 10


@dataclass(frozen=True)
class RewardConfig:
    omega: float
    t_max: float
    alpha: float = 2.0
    metric: str = "params"
    penalty_form: str = "as_written"

    def __post_init__(self):
        if not self.omega < self.t_max:
            raise ValueError(f"constraint {self.omega} must be below the supernet cost {self.t_max}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.penalty_form not in PENALTY_FORMS:
            raise ValueError(f"penalty_form must be one of {PENALTY_FORMS}")


def reward(acc: float, t_m: float, cfg: RewardConfig) -> float:
    """Accuracy if the cost is under budget, otherwise accuracy times a penalty in [0, 1]."""
    if t_m > cfg.t_max:
        raise ValueError(f"cost {t_m} exceeds supernet cost {cfg.t_max}")
    if t_m < cfg.omega:
        return acc
    span = cfg.t_max - cfg.omega
    if cfg.penalty_form == "as_written":
        return acc * ((t_m - cfg.omega) / span) ** cfg.alpha
    return acc * ((cfg.t_max - t_m) / span) ** cfg.alpha


@dataclass
class SearchResult:
    best_arch: ArchitectureSpec | None
    best_accuracy: float
    best_cost: float
    best_reward: float
    feasible: bool
    evaluations: int
    reward_trace: list[float] = field(default_factory=list)
    best_trace: list[float] = field(default_factory=list)
    evals_trace: list[int] = field(default_factory=list)
    top10: list[list[float]] = field(default_factory=list)
    final_params: CategoricalParams | None = None
    method: str = ""

    def evaluations_to_reach(self, accuracy: float, tol: float = 1e-12) -> float:
        """Evaluations spent when the best feasible accuracy first reached ``accuracy``."""
        for best, n in zip(self.best_trace, self.evals_trace):
            if best >= accuracy - tol:
                return n
        return math.inf

    def to_dict(self) -> dict:
        return {"method": self.method,
                "architecture": self.best_arch.to_dict() if self.best_arch else None,
                "accuracy": self.best_accuracy, "cost": self.best_cost,
                "reward": self.best_reward, "feasible": self.feasible,
                "evaluations": self.evaluations}


class _Tracker:
    """Best feasible architecture, top-k rewards and per-step traces."""

    def __init__(self, backend, cfg: RewardConfig, net: NetConfig, val_batches):
        self.backend, self.cfg, self.net, self.val = backend, cfg, net, val_batches
        self.acc_cache: dict[ArchitectureSpec, float] = {}
        self.cost_cache: dict[ArchitectureSpec, float] = {}
        self.top: dict[ArchitectureSpec, float] = {}
        self.best: ArchitectureSpec | None = None
        self.best_acc = -math.inf
        self.best_any: tuple[float, ArchitectureSpec] | None = None
        self.evaluations = 0
        self.result = SearchResult(None, math.nan, math.nan, math.nan, False, 0)

    def cost(self, arch):
        if arch not in self.cost_cache:
            self.cost_cache[arch] = arch_cost(arch, self.net, self.cfg.metric)
        return self.cost_cache[arch]

    def evaluate(self, arch) -> float:
        self.evaluations += 1
        if arch not in self.acc_cache:
            self.acc_cache[arch] = self.backend.accuracy(arch, self.val)
        acc = self.acc_cache[arch]
        t = self.cost(arch)
        r = reward(acc, t, self.cfg)
        if t < self.cfg.omega and acc > self.best_acc:
            self.best, self.best_acc = arch, acc
        if self.best_any is None or r > self.best_any[0]:
            self.best_any = (r, arch)
        if arch not in self.top or self.top[arch] < r:
            self.top[arch] = r
        return r

    def end_step(self, rewards):
        res = self.result
        res.reward_trace.append(float(np.mean(rewards)))
        res.best_trace.append(self.best_acc if self.best is not None else -math.inf)
        res.evals_trace.append(self.evaluations)
        top = sorted(self.top.values(), reverse=True)[:TOP_K]
        if len(self.top) > 4 * TOP_K:
            keep = sorted(self.top.items(), key=lambda kv: -kv[1])[:TOP_K]
            self.top = dict(keep)
        res.top10.append(top)

    def finish(self, method, params=None) -> SearchResult:
        res = self.result
        res.method = method
        res.evaluations = self.evaluations
        res.final_params = params
        if self.best is not None:
            arch = self.best
            res.feasible = True
        elif self.best_any is not None:
            arch = self.best_any[1]
        else:
            raise ValueError("search performed no evaluations")
        res.best_arch = arch
        res.best_accuracy = self.acc_cache[arch]
        res.best_cost = self.cost(arch)
        res.best_reward = reward(res.best_accuracy, res.best_cost, self.cfg)
        return res


def distribution_search(backend, space: SearchSpace, cfg: RewardConfig, net: NetConfig,
                        steps: int, samples_per_step: int, val_batches, rng: np.random.Generator,
                        theta_init: CategoricalParams | None = None, lr: float | None = None,
                        utility: str = "ranking") -> SearchResult:
    """Sample from theta, score by reward with inherited weights, natural-gradient step."""
    space = space.full()
    params = theta_init if theta_init is not None else dist.uniform_init(space)
    if params.space.full() != space:
        raise ValueError("theta_init is bound to a different space")
    lr = lr if lr is not None else 0.1 / samples_per_step
    tr = _Tracker(backend, cfg, net, val_batches)
    for _ in range(steps):
        archs = dist.sample_many(params, rng, samples_per_step)
        rewards = np.array([tr.evaluate(a) for a in archs])
        if samples_per_step >= 2 or utility != "ranking":
            utils = dist.utility_transform(-rewards, utility)
            params = dist.natural_gradient_step(params, list(zip(archs, utils)), lr)
        tr.end_step(rewards)
    return tr.finish("distribution", params)


def random_search(backend, space: SearchSpace, cfg: RewardConfig, net: NetConfig, budget: int,
                  rng: np.random.Generator, val_batches=None, dedup: bool = False,
                  samples_per_step: int = 1, limit: int = 1_000_000) -> SearchResult:
    """Uniform sampling; ``dedup`` draws distinct architectures without replacement."""
    if budget <= 0:
        raise ValueError("random search needs a positive budget")
    space = space.full()
    if dedup:
        pool = list(enumerate_space(space, limit))
        order = rng.permutation(len(pool))[:budget]
        archs = [pool[i] for i in order]
    else:
        archs = dist.sample_many(dist.uniform_init(space), rng, budget)
    tr = _Tracker(backend, cfg, net, val_batches)
    for i in range(0, len(archs), samples_per_step):
        chunk = archs[i:i + samples_per_step]
        tr.end_step([tr.evaluate(a) for a in chunk])
    return tr.finish("random")


def evolutionary_search(backend, space: SearchSpace, cfg: RewardConfig, net: NetConfig,
                        population: int, generations: int, mutation_rate: float,
                        rng: np.random.Generator, val_batches=None, elitism: int = 1) -> SearchResult:
    """Tournament (size 2) selection, uniform crossover, per-variable mutation, elitism."""
    if population < 1 or generations < 1:
        raise ValueError("population and generations must be positive")
    space = space.full()
    sizes = np.array(space.group_sizes())
    tr = _Tracker(backend, cfg, net, val_batches)
    idx_pop = dist.sample_indices(dist.uniform_init(space), rng, population)
    pop = [space.from_indices(row) for row in idx_pop]
    fit = [tr.evaluate(a) for a in pop]
    tr.end_step(fit)
    for _ in range(generations - 1):
        order = np.argsort(-np.array(fit), kind="stable")
        n_elite = min(elitism, population)
        elites = [pop[i] for i in order[:n_elite]]
        elite_fit = [fit[i] for i in order[:n_elite]]
        children = []
        for _ in range(max(population - n_elite, 1)):
            parents = []
            for _ in range(2):
                a, b = rng.integers(len(pop), size=2)
                parents.append(pop[a] if fit[a] >= fit[b] else pop[b])
            pa, pb = (space.to_indices(p) for p in parents)
            child = np.where(rng.random(len(sizes)) < 0.5, pa, pb)
            mutate = rng.random(len(sizes)) < mutation_rate
            fresh = (rng.random(len(sizes)) * sizes).astype(np.int64)
            child = np.where(mutate, fresh, child)
            children.append(space.from_indices(child))
        child_fit = [tr.evaluate(c) for c in children]
        merged = list(zip(elites + children, elite_fit + child_fit))
        if len(merged) > population:
            merged.sort(key=lambda t: -t[1])
            merged = merged[:population]
        pop = [a for a, _ in merged]
        fit = [f for _, f in merged]
        tr.end_step(child_fit)
    return tr.finish("evolutionary")


def evaluate_arch(backend, arch: ArchitectureSpec, val_batches) -> float:
    return backend.accuracy(arch, val_batches)


def constrained_optimum(backend, space: SearchSpace, cfg: RewardConfig, net: NetConfig,
                        val_batches=None, limit: int = 200_000):
    """Enumeration oracle: (best feasible accuracy, architectures attaining it)."""
    if cardinality(space.full()) > limit:
        raise ValueError("space too large to enumerate")
    best, winners = -math.inf, []
    for arch in enumerate_space(space.full(), limit):
        if arch_cost(arch, net, cfg.metric) >= cfg.omega:
            continue
        acc = backend.accuracy(arch, val_batches)
        if acc > best:
            best, winners = acc, [arch]
        elif acc == best:
            winners.append(arch)
    return best, winners


TRACE_COLUMNS = ("step", "evaluations", "mean_reward", "best_feasible_accuracy") + tuple(
    f"top{i + 1}" for i in range(TOP_K))


def trace_csv(result: SearchResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for step, (r, b, n, top) in enumerate(zip(result.reward_trace, result.best_trace,
                                               result.evals_trace, result.top10)):
        tops = [repr(x) for x in top] + [""] * (TOP_K - len(top))
        w.writerow([step, n, repr(r), repr(b)] + tops)
    return buf.getvalue()
