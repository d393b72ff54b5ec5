"""Exploit-explore distribution group over architectures.

The exploitation distribution is a product of independent categoricals, one
per encoded variable, held in the expectation parameterization (the
probability vectors themselves). Under that parameterization the natural
gradient of the log-likelihood of a sample is ``onehot(sample) - theta``, so
a stochastic natural-gradient step is a cheap convex-combination update.

The exploration distribution is the uniform product distribution over the
active options. A Bernoulli gate with success probability
``K = entropy(theta) / max_entropy`` picks which of the two to sample from.

Variables belonging to layers at or beyond a sample's depth do not affect the
sampled network. They are excluded from the log-likelihood and from the
update; in expectation their full-product contribution is zero anyway (the
loss does not depend on them), so this only removes variance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .space import ArchitectureSpec, SearchSpace, enumerate_space

P_MIN = 1e-3


class ZeroProbability(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CategoricalParams:
    """One probability vector per encoded variable; inactive options hold 0."""

    probs: tuple[np.ndarray, ...]
    space: SearchSpace

    def __post_init__(self):
        probs = []
        for p in self.probs:
            p = np.array(p, dtype=np.float64)
            p.setflags(write=False)
            probs.append(p)
        object.__setattr__(self, "probs", tuple(probs))

    def __len__(self):
        return len(self.probs)

    def support(self) -> list[np.ndarray]:
        return [p > 0 for p in self.probs]

    def mode(self) -> ArchitectureSpec:
        return self.space.from_indices([int(np.argmax(p)) for p in self.probs])

    def table(self) -> list[tuple[int, int, float]]:
        """(variable id, option value, probability) rows for inspection."""
        rows = []
        for v, (dim, p) in enumerate(zip(self.space.variable_dims(), self.probs)):
            for opt, q in zip(self.space.options(dim), p):
                rows.append((v, opt, float(q)))
        return rows

    def format_table(self) -> str:
        dims = self.space.variable_dims()
        lines = ["var  dim           option  prob"]
        for v, opt, q in self.table():
            lines.append(f"{v:<4} {dims[v]:<13} {opt:>6}  {q:.6f}")
        return "\n".join(lines)


def uniform_init(space: SearchSpace) -> CategoricalParams:
    probs = []
    for mask in space.variable_active_masks():
        p = mask.astype(np.float64)
        probs.append(p / p.sum())
    return CategoricalParams(tuple(probs), space)


def deterministic(space: SearchSpace, arch: ArchitectureSpec) -> CategoricalParams:
    """All mass on ``arch`` (no floor); handy for tests and degenerate search."""
    probs = []
    for i, size in zip(space.to_indices(arch), space.group_sizes()):
        p = np.zeros(size)
        p[i] = 1.0
        probs.append(p)
    return CategoricalParams(tuple(probs), space)


# -- sampling ------------------------------------------------------------------

def sample_indices(params: CategoricalParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` raw draws (no canonicalization) as an ``(n, num_variables)`` array."""
    u = rng.random((n, len(params.probs)))
    out = np.empty((n, len(params.probs)), dtype=np.int64)
    for v, p in enumerate(params.probs):
        cdf = np.cumsum(p)
        cdf[-1] = np.inf
        idx = np.searchsorted(cdf, u[:, v], side="right")
        # never land on a zero-probability option through rounding
        bad = p[idx] == 0
        if bad.any():
            idx[bad] = np.argmax(p)
        out[:, v] = idx
    return out


def sample_many(params: CategoricalParams, rng: np.random.Generator, n: int) -> list[ArchitectureSpec]:
    return [params.space.from_indices(row) for row in sample_indices(params, rng, n)]


def sample(params: CategoricalParams, rng: np.random.Generator) -> ArchitectureSpec:
    return sample_many(params, rng, 1)[0]


def _active_variables(space: SearchSpace, depth: int) -> int:
    """Number of leading variables that influence a network of this depth."""
    return 1 + 2 * depth


def log_likelihood(params: CategoricalParams, arch: ArchitectureSpec, strict: bool = False) -> float:
    idx = params.space.to_indices(arch)
    total = 0.0
    for v in range(_active_variables(params.space, arch.depth)):
        p = params.probs[v][idx[v]]
        if p == 0:
            if strict:
                raise ZeroProbability(f"variable {v} option {idx[v]} has probability 0")
            return -np.inf
        total += np.log(p)
    return float(total)


def probability(params: CategoricalParams, arch: ArchitectureSpec) -> float:
    return float(np.exp(log_likelihood(params, arch)))


def entropy(params: CategoricalParams) -> float:
    h = 0.0
    for p in params.probs:
        q = p[p > 0]
        h -= float(np.sum(q * np.log(q)))
    return h


def max_entropy(space: SearchSpace) -> float:
    """Entropy of the uniform distribution over the active options (sum of ln |active|).

    Evaluated with the same arithmetic as :func:`entropy` so that a uniform
    ``params`` gives a ratio of exactly 1.
    """
    return entropy(uniform_init(space))


# -- utilities and updates ---------------------------------------------------------

class UtilityMode(str, enum.Enum):
    RANKING = "ranking"
    RAW_LOSS = "raw_loss"


def utility_transform(losses: Sequence[float], mode: UtilityMode | str = UtilityMode.RANKING) -> np.ndarray:
    """Map a batch of losses to update weights (positive = push away).

    Ranking mode: better half gets -1, worse half +1, the middle sample of an
    odd batch 0; tied losses share the mean of their rank utilities.
    """
    losses = np.asarray(losses, dtype=np.float64)
    mode = UtilityMode(mode)
    if mode is UtilityMode.RAW_LOSS:
        return losses.copy()
    lam = len(losses)
    if lam < 2:
        raise ValueError("ranking utilities need at least 2 samples")
    base = np.zeros(lam)
    base[: lam // 2] = -1.0
    base[lam - lam // 2:] = 1.0
    order = np.argsort(losses, kind="stable")
    sorted_losses = losses[order]
    util_sorted = base.copy()
    start = 0
    while start < lam:
        stop = start + 1
        while stop < lam and sorted_losses[stop] == sorted_losses[start]:
            stop += 1
        util_sorted[start:stop] = base[start:stop].mean()
        start = stop
    util = np.empty(lam)
    util[order] = util_sorted
    return util


def natural_gradient(params: CategoricalParams, batch: Sequence[tuple[ArchitectureSpec, float]]) -> list[np.ndarray]:
    """Monte-Carlo natural gradient ``mean_j u_j * (onehot(m_j) - theta)``."""
    grads = [np.zeros_like(p) for p in params.probs]
    lam = len(batch)
    if lam < 1:
        raise ValueError("empty batch")
    for arch, u in batch:
        if u == 0:
            continue
        idx = params.space.to_indices(arch)
        for v in range(_active_variables(params.space, arch.depth)):
            g = grads[v]
            g -= u * params.probs[v]
            g[idx[v]] += u
    return [g / lam for g in grads]


def project(p: np.ndarray, support: np.ndarray, p_min: float = P_MIN) -> np.ndarray:
    """Clamp to [p_min, 1] on the support and renormalize to sum 1.

    Floored entries are pinned at ``p_min`` and the rest rescaled; repeated
    until no rescaled entry drops below the floor.
    """
    n = int(support.sum())
    out = np.zeros_like(p)
    if n == 1:
        out[support] = 1.0
        return out
    if n * p_min > 1:
        raise ValueError(f"floor {p_min} infeasible for {n} options")
    x = np.clip(p[support], p_min, 1.0)
    fixed = x <= p_min
    for _ in range(n + 1):
        free_mass = 1.0 - p_min * fixed.sum()
        s = x[~fixed].sum()
        x = np.where(fixed, p_min, x * (free_mass / s))
        newly = (~fixed) & (x < p_min)
        if not newly.any():
            break
        fixed |= newly
    x = np.where(fixed, p_min, np.maximum(x, p_min))
    out[support] = x
    return out


def natural_gradient_step(params: CategoricalParams, batch: Sequence[tuple[ArchitectureSpec, float]],
                          lr: float, p_min: float = P_MIN, projected: bool = True) -> CategoricalParams:
    """``theta <- theta - lr * natural_gradient``, then projection onto the floored simplex."""
    grads = natural_gradient(params, batch)
    new = []
    for p, g, s in zip(params.probs, grads, params.support()):
        q = p - lr * g
        new.append(project(q, s, p_min) if projected else q)
    return CategoricalParams(tuple(new), params.space)


def widen(params: CategoricalParams, space: SearchSpace) -> CategoricalParams:
    """Rebind to an expanded space; every newly active option gets ``1/(2*|active|)``."""
    new = []
    for p, mask in zip(params.probs, space.variable_active_masks()):
        p = p.copy()
        added = mask & (p == 0)
        for i in np.flatnonzero(added):
            n_active = int((p > 0).sum()) + 1
            p_new = 1.0 / (2 * n_active)
            p *= (1.0 - p_new)
            p[i] = p_new
        new.append(p)
    return CategoricalParams(tuple(new), space)


def rebind_uniform(space: SearchSpace) -> CategoricalParams:
    return uniform_init(space)


# -- controller ----------------------------------------------------------------

class Gate(str, enum.Enum):
    EXPLOIT = "exploit"
    EXPLORE = "explore"


@dataclass(frozen=True)
class ControllerState:
    K: float = 1.0
    interval: int = 1
    rho: float = 0.0
    rho_max: float = 0.0

    def to_dict(self) -> dict:
        return {"K": self.K, "interval": self.interval, "rho": self.rho, "rho_max": self.rho_max}


def update_controller(params: CategoricalParams, space: SearchSpace,
                      state: ControllerState) -> ControllerState:
    rho_max = max_entropy(space)
    rho = min(max(entropy(params), 0.0), rho_max)
    k = rho / rho_max if rho_max > 0 else 1.0
    return ControllerState(K=k, interval=state.interval, rho=rho, rho_max=rho_max)


def controller_gate(state: ControllerState, rng: np.random.Generator) -> Gate:
    return Gate.EXPLOIT if rng.random() < state.K else Gate.EXPLORE


def exploration_probability(space: SearchSpace, arch: ArchitectureSpec) -> float:
    """Probability of ``arch`` under the uniform product distribution."""
    sizes = [m.sum() for m in space.variable_active_masks()]
    return float(np.prod([1.0 / s for s in sizes[:_active_variables(space, arch.depth)]]))


def importance_weight(params: CategoricalParams, arch: ArchitectureSpec,
                      lo: float = 0.1, hi: float = 10.0) -> float:
    w = probability(params, arch) / exploration_probability(params.space, arch)
    return float(np.clip(w, lo, hi))


# -- oracle ------------------------------------------------------------------------

def exact_expected_loss(params: CategoricalParams, loss_oracle, space: SearchSpace | None = None,
                        limit: int = 200_000) -> float:
    """Sum of ``P_theta(m) * loss(m)`` over the enumerated space."""
    space = space or params.space
    total = 0.0
    for arch in enumerate_space(space, limit):
        p = probability(params, arch)
        if p > 0:
            total += p * loss_oracle(arch)
    return total
