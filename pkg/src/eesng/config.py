"""Experiment configuration: INI-style sections of ``key = value`` lines.

Example::

    [experiment]
    seed = 0
    output = runs/desk

    [space]
    preset = desk            ; or a path, or inline depth/heads/intermediates

    [backend]
    kind = tabular           ; tabular | neural
    generator = planted_optimum

    [train]
    epochs = 10
    steps_per_epoch = 50

    [search small]
    omega = 20000
    metric = params
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from .space import SearchSpace, load_space, parse_space
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class BackendConfig:
    kind: str = "tabular"
    generator: str = "planted_optimum"
    landscape_seed: int = 0
    noise: float = 0.0
    task: str = "t1"
    vocab_size: int = 16
    embed_dim: int = 32
    seq_len: int = 16
    num_classes: int = 2
    batch_size: int = 32
    val_batches: int = 8
    val_seed: int = 12345
    dtype: str = "float64"
    workers: int = 1


@dataclass
class SearchJob:
    name: str
    omega: float
    metric: str = "params"
    steps: int = 200
    samples_per_step: int = 8
    penalty: str = "as_written"
    warm_start: bool = False


@dataclass
class BenchmarkConfig:
    seeds: int = 20
    search_steps: int = 200
    samples_per_step: int = 8
    omega_fraction: float = 0.5
    penalty: str = "violation_proportional"
    population: int = 16
    mutation_rate: float = 0.1
    train_epochs: int = 10
    train_steps: int = 50
    train_generator: str = "deceptive"
    modes: tuple[str, ...] = ("ee", "exploit_only", "explore_only")


@dataclass
class ExperimentConfig:
    space: SearchSpace
    backend: BackendConfig
    train: TrainConfig
    searches: list[SearchJob] = field(default_factory=list)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    output: str = "out"
    seed: int = 0
    expansion_spacing: float | None = None


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return lineno
    return None


class _Reader:
    def __init__(self, cp: configparser.ConfigParser, text: str, source: str):
        self.cp, self.text, self.source = cp, text, source

    def err(self, section, key, msg):
        line = _line_of(self.text, section, key)
        where = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{where}: [{section}] {key}: {msg}")

    def get(self, section, key, typ, default=..., choices=None):
        if not self.cp.has_option(section, key):
            if default is ...:
                raise ConfigError(f"{self.source}: missing required field [{section}] {key}")
            return default
        raw = self.cp.get(section, key).strip()
        try:
            if typ is bool:
                val = {"true": True, "yes": True, "on": True, "1": True,
                       "false": False, "no": False, "off": False, "0": False}[raw.lower()]
            elif typ is tuple:
                val = tuple(s.strip() for s in raw.split(",") if s.strip())
            else:
                val = typ(raw)
        except (ValueError, KeyError):
            raise self.err(section, key, f"cannot parse {raw!r} as {typ.__name__}") from None
        if choices is not None and val not in choices:
            raise self.err(section, key, f"{val!r} not one of {list(choices)}")
        return val

    def check_known(self, section, known):
        for key in self.cp.options(section):
            if key not in known:
                raise self.err(section, key, "unknown field")


def _space(r: _Reader, base_dir: Path) -> SearchSpace:
    if not r.cp.has_section("space"):
        raise ConfigError(f"{r.source}: missing required section [space]")
    r.check_known("space", {"preset", "max_depth", "depth", "heads", "intermediates"})
    if r.cp.has_option("space", "preset"):
        name = r.get("space", "preset", str)
        try:
            if "/" in name or name.endswith(".txt"):
                path = Path(name)
                return load_space(str(path if path.is_absolute() else base_dir / path))
            return load_space(name)
        except (OSError, ValueError) as exc:
            raise r.err("space", "preset", str(exc)) from None
    lines = [f"{k} = {r.cp.get('space', k)}" for k in ("max_depth", "depth", "heads", "intermediates")
             if r.cp.has_option("space", k)]
    try:
        return parse_space("\n".join(lines))
    except ValueError as exc:
        raise ConfigError(f"{r.source}: [space] {exc}") from None


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    r = _Reader(cp, text, source)
    base_dir = base_dir or Path(".")

    seed = r.get("experiment", "seed", int, 0) if cp.has_section("experiment") else 0
    output = r.get("experiment", "output", str, "out") if cp.has_section("experiment") else "out"
    space = _space(r, base_dir)

    if not cp.has_section("backend"):
        raise ConfigError(f"{source}: missing required section [backend]")
    bk = BackendConfig()
    r.check_known("backend", set(vars(bk)))
    bk.kind = r.get("backend", "kind", str, choices=("tabular", "neural"))
    for name, default in vars(BackendConfig()).items():
        if name == "kind":
            continue
        setattr(bk, name, r.get("backend", name, type(default), default))

    if not cp.has_section("train"):
        raise ConfigError(f"{source}: missing required section [train]")
    tr = {}
    known = set(TrainConfig.__dataclass_fields__) | {"expansion_spacing"}
    r.check_known("train", known)
    tr["epochs"] = r.get("train", "epochs", int)
    tr["steps_per_epoch"] = r.get("train", "steps_per_epoch", int)
    default_lam = 8 if bk.kind == "tabular" else 2
    tr["samples_per_step"] = r.get("train", "samples_per_step", int, default_lam)
    tr["update_interval"] = r.get("train", "update_interval", int, 1)
    tr["weight_lr"] = r.get("train", "weight_lr", float, 1e-3)
    tr["theta_lr"] = r.get("train", "theta_lr", float, None)
    tr["utility"] = r.get("train", "utility", str, "ranking", ("ranking", "raw_loss"))
    tr["gate"] = r.get("train", "gate", str, "ee", ("ee", "exploit_only", "explore_only"))
    tr["importance_weighting"] = r.get("train", "importance_weighting", bool, False)
    tr["progressive"] = r.get("train", "progressive", bool, True)
    tr["seed"] = r.get("train", "seed", int, seed)
    spacing = r.get("train", "expansion_spacing", float, None)
    try:
        train = TrainConfig(**tr)
    except ValueError as exc:
        raise ConfigError(f"{source}: [train] {exc}") from None

    searches = []
    for sec in cp.sections():
        if not (sec == "search" or sec.startswith("search ")):
            continue
        r.check_known(sec, {"omega", "metric", "steps", "samples_per_step", "penalty", "warm_start"})
        name = sec[len("search"):].strip() or f"job{len(searches)}"
        searches.append(SearchJob(
            name=name,
            omega=r.get(sec, "omega", float),
            metric=r.get(sec, "metric", str, "params", ("params", "flops")),
            steps=r.get(sec, "steps", int, 200),
            samples_per_step=r.get(sec, "samples_per_step", int, 8),
            penalty=r.get(sec, "penalty", str, "as_written", ("as_written", "violation_proportional")),
            warm_start=r.get(sec, "warm_start", bool, False)))

    bench = BenchmarkConfig()
    if cp.has_section("benchmark"):
        r.check_known("benchmark", set(vars(bench)))
        for name, default in vars(BenchmarkConfig()).items():
            setattr(bench, name, r.get("benchmark", name, type(default), default))

    return ExperimentConfig(space, bk, train, searches, bench, output, seed, spacing)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path), path.parent)
