"""Seeded comparisons on tabular landscapes.

* searcher comparison on planted-optimum landscapes: distribution search vs
  random search vs evolutionary search at an equal evaluation budget, with
  the top-10 reward log per step;
* gate ablation on deceptive landscapes: ee vs exploit-only vs explore-only
  Stage-I training.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .backends import TabularBackend
from .cost import NetConfig, min_cost, supernet_cost
from .landscape import make_landscape, tabular_loss
from .search import (TOP_K, RewardConfig, constrained_optimum, distribution_search,
                     evolutionary_search, random_search)
from .space import SearchSpace, default_schedule
from .trainer import TrainConfig, train

SEARCH_COLUMNS = ("method", "seed", "step", "evaluations", "best_feasible_accuracy") + tuple(
    f"top{i + 1}" for i in range(TOP_K))
TRAIN_COLUMNS = ("mode", "seed", "step", "gate", "K", "entropy", "step_best_loss", "best_loss_so_far")
SUMMARY_COLUMNS = ("experiment", "method", "statistic", "n", "median", "q25", "q75", "values")


@dataclass
class SearchOutcome:
    method: str
    seed: int
    optimum: float
    found: bool
    evals_to_optimum: float
    result: object


def omega_for(space: SearchSpace, net: NetConfig, fraction: float, metric: str = "params") -> float:
    lo, hi = min_cost(space, net, metric), supernet_cost(space, net, metric)
    return lo + fraction * (hi - lo)


def compare_searchers(space: SearchSpace, seeds: int = 20, steps: int = 200, samples_per_step: int = 8,
                      omega_fraction: float = 0.5, penalty: str = "violation_proportional",
                      population: int = 16, mutation_rate: float = 0.1,
                      methods=("distribution", "random", "evolutionary")) -> list[SearchOutcome]:
    space = space.full()
    net = NetConfig.for_space(space)
    budget = steps * samples_per_step
    cfg = RewardConfig(omega=omega_for(space, net, omega_fraction), t_max=supernet_cost(space, net),
                       penalty_form=penalty)
    out = []
    for seed in range(seeds):
        backend = TabularBackend(make_landscape(space, "planted_optimum", seed))
        optimum, _ = constrained_optimum(backend, space, cfg, net)
        for method in methods:
            rng = np.random.default_rng([seed, methods.index(method)])
            if method == "distribution":
                res = distribution_search(backend, space, cfg, net, steps, samples_per_step, None, rng)
            elif method == "random":
                res = random_search(backend, space, cfg, net, budget, rng,
                                    samples_per_step=samples_per_step)
            elif method == "evolutionary":
                res = evolutionary_search(backend, space, cfg, net, population,
                                          max(budget // population, 1), mutation_rate, rng)
            else:
                raise ValueError(f"unknown search method {method!r}")
            n = res.evaluations_to_reach(optimum)
            out.append(SearchOutcome(method, seed, optimum, res.best_accuracy >= optimum - 1e-12
                                     and res.feasible, n, res))
    return out


@dataclass
class TrainOutcome:
    mode: str
    seed: int
    best_loss: float
    mode_loss: float
    history: object


def gate_ablation(space: SearchSpace, seeds: int = 20, modes=("ee", "exploit_only", "explore_only"),
                  epochs: int = 10, steps_per_epoch: int = 50, samples_per_step: int = 8,
                  generator: str = "deceptive") -> list[TrainOutcome]:
    out = []
    for seed in range(seeds):
        land = make_landscape(space, generator, seed)
        for mode in modes:
            cfg = TrainConfig(epochs=epochs, steps_per_epoch=steps_per_epoch,
                              samples_per_step=samples_per_step, gate=mode, seed=seed)
            _, params, hist, _ = train(space, default_schedule(space, epochs), TabularBackend(land), cfg)
            out.append(TrainOutcome(mode, seed, hist.best_loss, tabular_loss(land, params.mode()), hist))
    return out


def _quantile(values, q):
    # linear interpolation that keeps inf (never-reached) entries meaningful
    x = np.sort(np.asarray(values, dtype=float))
    pos = q * (len(x) - 1)
    lo, hi = int(np.floor(pos)), int(np.ceil(pos))
    if x[lo] == x[hi]:
        return float(x[lo])
    return float(x[lo] + (x[hi] - x[lo]) * (pos - lo))


def _quantiles(values):
    return _quantile(values, 0.5), _quantile(values, 0.25), _quantile(values, 0.75)


def summarize(search: list[SearchOutcome], ablation: list[TrainOutcome]) -> list[dict]:
    rows = []
    for method in dict.fromkeys(o.method for o in search):
        vals = [o.evals_to_optimum for o in search if o.method == method]
        med, q25, q75 = _quantiles(vals)
        rows.append({"experiment": "search", "method": method, "statistic": "evals_to_optimum",
                     "n": len(vals), "median": med, "q25": q25, "q75": q75, "values": vals})
        found = [float(o.found) for o in search if o.method == method]
        rows.append({"experiment": "search", "method": method, "statistic": "found_fraction",
                     "n": len(found), "median": float(np.mean(found)), "q25": math.nan,
                     "q75": math.nan, "values": found})
    for mode in dict.fromkeys(o.mode for o in ablation):
        for stat in ("best_loss", "mode_loss"):
            vals = [getattr(o, stat) for o in ablation if o.mode == mode]
            med, q25, q75 = _quantiles(vals)
            rows.append({"experiment": "ablation", "method": mode, "statistic": f"final_{stat}",
                         "n": len(vals), "median": med, "q25": q25, "q75": q75, "values": vals})
    return rows


def search_csv(outcomes: list[SearchOutcome]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SEARCH_COLUMNS)
    for o in outcomes:
        r = o.result
        for step, (n, best, top) in enumerate(zip(r.evals_trace, r.best_trace, r.top10)):
            tops = [repr(x) for x in top] + [""] * (TOP_K - len(top))
            w.writerow([o.method, o.seed, step, n, repr(best)] + tops)
    return buf.getvalue()


def train_csv(outcomes: list[TrainOutcome]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAIN_COLUMNS)
    for o in outcomes:
        best = math.inf
        for rec in o.history.records:
            step_best = min(rec.losses)
            best = min(best, step_best)
            w.writerow([o.mode, o.seed, rec.step, rec.gate, repr(rec.K), repr(rec.entropy),
                        repr(step_best), repr(best)])
    return buf.getvalue()


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([row["experiment"], row["method"], row["statistic"], row["n"], repr(row["median"]),
                    repr(row["q25"]), repr(row["q75"]), ";".join(repr(v) for v in row["values"])])
    return buf.getvalue()
