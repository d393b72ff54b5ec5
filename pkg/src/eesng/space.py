"""Architecture search space, categorical encoding and progressive expansion.

An architecture is a depth plus per-layer head counts and FFN intermediate
sizes. The encoding is fixed-length: one categorical variable for the depth,
then a (head, intermediate) pair for every layer up to ``max_depth``, in
ascending layer order. Layers at or beyond the depth are inactive and carry
the canonical fill (the largest option), so every semantic architecture has
exactly one encoding.

Each dimension keeps an *active* subset used during progressive expansion.
The active subset of a dimension is always its ``n`` largest options; for the
head and intermediate lists (which are stored largest first) that is a prefix.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

DIMENSIONS = ("head", "intermediate", "depth")


class InvalidArchitecture(ValueError):
    """Raised when an architecture or encoding does not belong to a space."""


class SpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    depth: int
    heads: tuple[int, ...]
    intermediates: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "depth", int(self.depth))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "intermediates", tuple(int(k) for k in self.intermediates))

    def to_dict(self) -> dict:
        return {"depth": self.depth, "heads": list(self.heads),
                "intermediates": list(self.intermediates)}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(d["depth"], tuple(d["heads"]), tuple(d["intermediates"]))

    def __str__(self):
        layers = " ".join(f"{h}/{k}" for h, k in
                          zip(self.heads[:self.depth], self.intermediates[:self.depth]))
        return f"d={self.depth} [{layers}]"


def _check_options(name, options):
    if len(options) == 0:
        raise ValueError(f"{name}: option list is empty")
    if len(set(options)) != len(options):
        raise ValueError(f"{name}: duplicate options {list(options)}")
    if any(o <= 0 for o in options):
        raise ValueError(f"{name}: options must be positive integers")


@dataclass(frozen=True)
class SearchSpace:
    """Option lists per decision variable plus the progressive-expansion state.

    ``active`` maps each dimension name to the number of options currently
    trainable (always the largest ones). ``None`` means everything is active.
    """

    max_depth: int
    depth_options: tuple[int, ...]
    head_options: tuple[int, ...]
    intermediate_options: tuple[int, ...]
    active: dict = field(default=None, compare=True)

    def __post_init__(self):
        for name in ("depth_options", "head_options", "intermediate_options"):
            object.__setattr__(self, name, tuple(int(o) for o in getattr(self, name)))
        _check_options("depth", self.depth_options)
        _check_options("heads", self.head_options)
        _check_options("intermediates", self.intermediate_options)
        if max(self.depth_options) != self.max_depth:
            raise ValueError(f"max(depth_options)={max(self.depth_options)} "
                             f"!= max_depth={self.max_depth}")
        full = {"depth": len(self.depth_options), "head": len(self.head_options),
                "intermediate": len(self.intermediate_options)}
        active = dict(full) if self.active is None else dict(self.active)
        for dim in DIMENSIONS:
            if not 1 <= active[dim] <= full[dim]:
                raise ValueError(f"active count for {dim} out of range: {active[dim]}")
        object.__setattr__(self, "active", active)

    # frozen dataclass with a dict field: hash on the tuple view
    def __hash__(self):
        return hash((self.max_depth, self.depth_options, self.head_options,
                     self.intermediate_options, tuple(sorted(self.active.items()))))

    # -- option bookkeeping -------------------------------------------------

    def options(self, dim: str) -> tuple[int, ...]:
        return {"depth": self.depth_options, "head": self.head_options,
                "intermediate": self.intermediate_options}[dim]

    def active_options(self, dim: str) -> tuple[int, ...]:
        opts = self.options(dim)
        keep = set(sorted(opts, reverse=True)[:self.active[dim]])
        return tuple(o for o in opts if o in keep)

    def active_mask(self, dim: str) -> np.ndarray:
        keep = set(self.active_options(dim))
        return np.array([o in keep for o in self.options(dim)])

    @property
    def fully_active(self) -> bool:
        return all(self.active[d] == len(self.options(d)) for d in DIMENSIONS)

    def full(self) -> "SearchSpace":
        return replace(self, active=None)

    def restricted(self, **counts) -> "SearchSpace":
        active = dict(self.active)
        active.update(counts)
        return replace(self, active=active)

    def initial(self) -> "SearchSpace":
        """Only the largest option of every dimension active."""
        return replace(self, active={d: 1 for d in DIMENSIONS})

    @property
    def num_variables(self) -> int:
        return 1 + 2 * self.max_depth

    def variable_dims(self) -> list[str]:
        """Dimension name of every categorical variable, in encoding order."""
        return ["depth"] + ["head", "intermediate"] * self.max_depth

    def group_sizes(self) -> list[int]:
        return [len(self.options(d)) for d in self.variable_dims()]

    def variable_active_masks(self) -> list[np.ndarray]:
        masks = {d: self.active_mask(d) for d in DIMENSIONS}
        return [masks[d] for d in self.variable_dims()]

    # -- architectures ------------------------------------------------------

    @property
    def canonical_head(self) -> int:
        return max(self.head_options)

    @property
    def canonical_intermediate(self) -> int:
        return max(self.intermediate_options)

    def canonicalize(self, arch: ArchitectureSpec) -> ArchitectureSpec:
        d = arch.depth
        heads = arch.heads[:d] + (self.canonical_head,) * (self.max_depth - d)
        inters = arch.intermediates[:d] + (self.canonical_intermediate,) * (self.max_depth - d)
        if heads == arch.heads and inters == arch.intermediates:
            return arch
        return ArchitectureSpec(d, heads, inters)

    def validate(self, arch: ArchitectureSpec, active_only: bool = True) -> None:
        pick = self.active_options if active_only else self.options
        if len(arch.heads) != self.max_depth or len(arch.intermediates) != self.max_depth:
            raise InvalidArchitecture(
                f"expected per-layer vectors of length {self.max_depth}: {arch}")
        if arch.depth not in pick("depth"):
            raise InvalidArchitecture(f"depth {arch.depth} not in {pick('depth')}")
        heads, inters = set(pick("head")), set(pick("intermediate"))
        for layer, (h, k) in enumerate(zip(arch.heads, arch.intermediates)):
            if layer >= arch.depth:
                # inactive layers only need to be members of the full lists
                if h not in self.head_options or k not in self.intermediate_options:
                    raise InvalidArchitecture(f"layer {layer}: ({h}, {k}) not in space")
                continue
            if h not in heads:
                raise InvalidArchitecture(f"layer {layer}: head count {h} not in {sorted(heads)}")
            if k not in inters:
                raise InvalidArchitecture(
                    f"layer {layer}: intermediate size {k} not in {sorted(inters)}")

    def contains(self, arch: ArchitectureSpec, active_only: bool = True) -> bool:
        try:
            self.validate(arch, active_only)
        except InvalidArchitecture:
            return False
        return True

    def to_indices(self, arch: ArchitectureSpec) -> np.ndarray:
        """Option index of every variable (canonical fill for inactive layers)."""
        self.validate(arch)
        arch = self.canonicalize(arch)
        idx = [self.depth_options.index(arch.depth)]
        for h, k in zip(arch.heads, arch.intermediates):
            idx.append(self.head_options.index(h))
            idx.append(self.intermediate_options.index(k))
        return np.array(idx, dtype=np.int64)

    def from_indices(self, idx: Sequence[int]) -> ArchitectureSpec:
        depth = self.depth_options[idx[0]]
        heads = tuple(self.head_options[i] for i in idx[1::2])
        inters = tuple(self.intermediate_options[i] for i in idx[2::2])
        return self.canonicalize(ArchitectureSpec(depth, heads, inters))

    def largest(self) -> ArchitectureSpec:
        return ArchitectureSpec(max(self.active_options("depth")),
                                (max(self.active_options("head")),) * self.max_depth,
                                (max(self.active_options("intermediate")),) * self.max_depth)

    def smallest(self) -> ArchitectureSpec:
        d = min(self.active_options("depth"))
        return self.canonicalize(ArchitectureSpec(
            d, (min(self.active_options("head")),) * self.max_depth,
            (min(self.active_options("intermediate")),) * self.max_depth))

    def describe(self) -> str:
        parts = []
        for dim in ("depth", "head", "intermediate"):
            parts.append(f"{dim}={list(self.active_options(dim))}/{list(self.options(dim))}")
        return " ".join(parts)


def encode(arch: ArchitectureSpec, space: SearchSpace) -> list[np.ndarray]:
    """One-hot group per variable: depth, then (head, intermediate) per layer."""
    idx = space.to_indices(arch)
    groups = []
    for i, size in zip(idx, space.group_sizes()):
        g = np.zeros(size)
        g[i] = 1.0
        groups.append(g)
    return groups


def decode(onehots: Sequence[np.ndarray], space: SearchSpace) -> ArchitectureSpec:
    sizes = space.group_sizes()
    if len(onehots) != len(sizes):
        raise InvalidArchitecture(f"expected {len(sizes)} one-hot groups, got {len(onehots)}")
    idx = []
    for v, (g, size, mask) in enumerate(zip(onehots, sizes, space.variable_active_masks())):
        g = np.asarray(g)
        if g.shape != (size,) or not np.all((g == 0) | (g == 1)) or g.sum() != 1:
            raise InvalidArchitecture(f"group {v} is not a one-hot vector of length {size}: {g}")
        i = int(np.argmax(g))
        if not mask[i]:
            raise InvalidArchitecture(f"group {v} selects inactive option {i}")
        idx.append(i)
    arch = space.from_indices(idx)
    if space.to_indices(arch).tolist() != idx:
        raise InvalidArchitecture("encoding is not canonical for the selected depth")
    return arch


def cardinality(space: SearchSpace, active_only: bool = False) -> int:
    """Number of distinct architectures; inactive-layer fills are not counted."""
    pick = space.active_options if active_only else space.options
    per_layer = len(pick("head")) * len(pick("intermediate"))
    return sum(per_layer ** d for d in pick("depth"))


def enumerate_space(space: SearchSpace, limit: int = 1_000_000,
                    active_only: bool = False) -> Iterator[ArchitectureSpec]:
    n = cardinality(space, active_only)
    if n > limit:
        raise SpaceTooLarge(f"space has {n} architectures, limit is {limit}")
    pick = space.active_options if active_only else space.options
    layer_choices = list(itertools.product(pick("head"), pick("intermediate")))
    pad = space.max_depth
    for d in pick("depth"):
        for layers in itertools.product(layer_choices, repeat=d):
            heads = tuple(h for h, _ in layers) + (space.canonical_head,) * (pad - d)
            inters = tuple(k for _, k in layers) + (space.canonical_intermediate,) * (pad - d)
            yield ArchitectureSpec(d, heads, inters)


# -- progressive expansion ---------------------------------------------------

@dataclass(frozen=True)
class ExpansionEvent:
    epoch: int
    dim: str
    option: int


@dataclass(frozen=True)
class ExpansionSchedule:
    events: tuple[ExpansionEvent, ...] = ()

    def __post_init__(self):
        epochs = [e.epoch for e in self.events]
        if epochs != sorted(epochs):
            raise ValueError("expansion events must be sorted by epoch")

    def events_at(self, epoch: int) -> list[ExpansionEvent]:
        return [e for e in self.events if e.epoch == epoch]

    @property
    def last_epoch(self) -> int:
        return self.events[-1].epoch if self.events else -1


def default_schedule(space: SearchSpace, total_epochs: int,
                     spacing: float | None = None) -> ExpansionSchedule:
    """Heads first, then intermediate sizes, then depth; one option per event.

    Event ``i`` fires at ``floor((i + 1) * spacing)`` with the default spacing
    ``total_epochs / n_events``, clipped to the last epoch so the final epoch
    always trains the full space.
    """
    pending = []
    for dim in DIMENSIONS:
        ordered = sorted(space.options(dim), reverse=True)
        pending.extend((dim, o) for o in ordered[1:])
    if not pending:
        return ExpansionSchedule()
    if spacing is None:
        spacing = total_epochs / len(pending)
    last = max(total_epochs - 1, 0)
    events = tuple(ExpansionEvent(min(int((i + 1) * spacing), last), dim, opt)
                   for i, (dim, opt) in enumerate(pending))
    return ExpansionSchedule(events)


def expand(space: SearchSpace, schedule: ExpansionSchedule, epoch: int) -> SearchSpace:
    """Apply every event scheduled at or before ``epoch``. Never shrinks."""
    active = dict(space.active)
    for ev in schedule.events:
        if ev.epoch > epoch:
            break
        rank = sorted(space.options(ev.dim), reverse=True).index(ev.option)
        active[ev.dim] = max(active[ev.dim], rank + 1)
    if active == space.active:
        return space
    return replace(space, active=active)


# -- presets -----------------------------------------------------------------

def bert_space() -> SearchSpace:
    return SearchSpace(12, (6, 8, 10, 12), (12, 8, 4), (3072, 1024, 768, 512))


def desk_space() -> SearchSpace:
    return SearchSpace(4, (2, 3, 4), (4, 2, 1), (64, 32, 16))


PRESETS = {"bert": bert_space, "desk": desk_space}

_KEYS = {"max_depth": "max_depth", "depth": "depth_options", "heads": "head_options",
         "intermediates": "intermediate_options"}


def parse_space(text: str) -> SearchSpace:
    """Parse ``key = 1,2,3`` lines (``#`` comments allowed)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = values', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            nums = tuple(int(v) for v in val.split(",") if v.strip())
        except ValueError:
            raise ValueError(f"line {lineno}: {key} must be comma-separated integers") from None
        values[_KEYS[key]] = nums
    for field_name in ("depth_options", "head_options", "intermediate_options"):
        if field_name not in values:
            key = next(k for k, v in _KEYS.items() if v == field_name)
            raise ValueError(f"missing key {key!r}")
    max_depth = values.pop("max_depth", None)
    max_depth = max_depth[0] if max_depth else max(values["depth_options"])
    return SearchSpace(max_depth, **values)


def load_space(name_or_path: str) -> SearchSpace:
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]()
    return parse_space(Path(name_or_path).read_text())


def format_space(space: SearchSpace) -> str:
    return (f"max_depth = {space.max_depth}\n"
            f"depth = {','.join(map(str, space.depth_options))}\n"
            f"heads = {','.join(map(str, space.head_options))}\n"
            f"intermediates = {','.join(map(str, space.intermediate_options))}\n")
