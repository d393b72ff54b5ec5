"""Tabular synthetic loss landscapes with known optima.

``planted_optimum``: loss is the Hamming distance between the canonical
encodings of an architecture and a random target.

``deceptive``: the planted target is a shallow network; a decoy that differs
from it in every variable sits inside a wide basin::

    loss = min(H(m, target), offset + slope * H(m, decoy))

With the defaults (offset 1, slope 1/4) the basin term is lower almost
everywhere, so per-variable descent from the uniform distribution drifts to
the decoy (loss 1) while the global optimum (loss 0) stays at the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .space import ArchitectureSpec, SearchSpace

GENERATORS = ("planted_optimum", "deceptive")


@dataclass(frozen=True, eq=False)
class TabularLandscape:
    space: SearchSpace
    generator: str
    seed: int
    target: ArchitectureSpec
    decoy: ArchitectureSpec | None = None
    noise: float = 0.0
    basin_offset: float = 1.0
    basin_slope: float = 0.25

    @property
    def max_loss(self) -> float:
        n = self.space.num_variables
        if self.generator == "deceptive":
            return self.basin_offset + self.basin_slope * n
        return float(n)

    def to_dict(self) -> dict:
        return {"generator": self.generator, "seed": self.seed, "noise": self.noise,
                "basin_offset": self.basin_offset, "basin_slope": self.basin_slope}


def _random_arch(space, rng, depth=None):
    d = depth if depth is not None else space.depth_options[rng.integers(len(space.depth_options))]
    heads = tuple(space.head_options[i] for i in rng.integers(len(space.head_options), size=space.max_depth))
    inters = tuple(space.intermediate_options[i]
                   for i in rng.integers(len(space.intermediate_options), size=space.max_depth))
    return space.canonicalize(ArchitectureSpec(d, heads, inters))


def make_landscape(space: SearchSpace, generator: str = "planted_optimum", seed: int = 0,
                   noise: float = 0.0, **kw) -> TabularLandscape:
    space = space.full()
    rng = np.random.default_rng(seed)
    if generator == "planted_optimum":
        return TabularLandscape(space, generator, seed, _random_arch(space, rng), noise=noise, **kw)
    if generator != "deceptive":
        raise ValueError(f"unknown landscape generator {generator!r}; expected one of {GENERATORS}")
    if len(space.depth_options) < 2:
        raise ValueError("deceptive landscape needs at least two depth options")
    target = _random_arch(space, rng, depth=min(space.depth_options))
    t_idx = space.to_indices(target)
    sizes = space.group_sizes()
    if min(sizes) < 2:
        raise ValueError("deceptive landscape needs at least two options per variable")
    d_idx = [space.depth_options.index(max(space.depth_options))]
    for v in range(1, len(sizes)):
        others = [i for i in range(sizes[v]) if i != t_idx[v]]
        d_idx.append(others[rng.integers(len(others))])
    decoy = space.from_indices(d_idx)
    return TabularLandscape(space, generator, seed, target, decoy, noise=noise, **kw)


def hamming(space: SearchSpace, a: ArchitectureSpec, b: ArchitectureSpec) -> int:
    return int(np.sum(space.to_indices(a) != space.to_indices(b)))


def tabular_loss(landscape: TabularLandscape, arch: ArchitectureSpec,
                 rng: np.random.Generator | None = None) -> float:
    """Landscape value, plus ``noise * N(0, 1)`` drawn from ``rng`` when both are set."""
    sp = landscape.space
    idx = sp.to_indices(arch)
    h_t = float(np.sum(idx != sp.to_indices(landscape.target)))
    if landscape.generator == "deceptive":
        h_d = float(np.sum(idx != sp.to_indices(landscape.decoy)))
        loss = min(h_t, landscape.basin_offset + landscape.basin_slope * h_d)
    else:
        loss = h_t
    if landscape.noise > 0 and rng is not None:
        loss += landscape.noise * rng.standard_normal()
    return loss


def tabular_accuracy(landscape: TabularLandscape, arch: ArchitectureSpec) -> float:
    return 1.0 - tabular_loss(landscape, arch) / landscape.max_loss
