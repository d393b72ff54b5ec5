"""Binary checkpoint container.

Layout (all little-endian)::

    b"EESN"  u32 version  u32 n_records
    n_records x [ u16 name_len, name (utf-8), u8 dtype_tag, u8 ndim,
                  ndim x u64 shape, u64 n_bytes, raw data ]

Non-tensor state (space, controller, RNG state, configs, history) is one
JSON document stored as the uint8 record ``meta``. Writes are atomic: a
temporary file in the target directory is renamed over the destination.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import distribution as dist
from .backends import NeuralBackend, TabularBackend
from .distribution import CategoricalParams, ControllerState
from .landscape import make_landscape
from .space import ExpansionEvent, ExpansionSchedule, SearchSpace
from .supernet import AdamState, SupernetConfig, SupernetWeights
from .trainer import TrainConfig, TrainHistory, TrainState

MAGIC = b"EESN"
VERSION = 1

_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
_TAGS = {np.dtype(v).str: k for k, v in _DTYPES.items()}


class CorruptCheckpoint(ValueError):
    pass


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def _tag(a: np.ndarray) -> int:
    key = a.dtype.newbyteorder("<").str if a.dtype.byteorder not in "|" else a.dtype.str
    if key not in _TAGS:
        raise TypeError(f"unsupported dtype {a.dtype}")
    return _TAGS[key]


def dumps(ckpt: Checkpoint) -> bytes:
    records = {"meta": np.frombuffer(json.dumps(ckpt.meta, sort_keys=True).encode(), dtype=np.uint8)}
    records.update(ckpt.tensors)
    out = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, arr in records.items():
        arr = np.asarray(arr)
        tag = _tag(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<BB", tag, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(struct.pack("<Q", len(data)))
        out.append(data)
    return b"".join(out)


def loads(buf: bytes) -> Checkpoint:
    try:
        if buf[:4] != MAGIC:
            raise CorruptCheckpoint("bad magic header")
        version, n = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CorruptCheckpoint(f"unsupported checkpoint version {version}")
        pos = 12
        tensors = {}
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + ln].decode()
            pos += ln
            tag, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            if tag not in _DTYPES or pos + nbytes > len(buf):
                raise CorruptCheckpoint(f"record {name!r} is malformed or truncated")
            arr = np.frombuffer(buf[pos:pos + nbytes], dtype=_DTYPES[tag])
            pos += nbytes
            tensors[name] = arr.reshape(shape).copy()
        if pos != len(buf):
            raise CorruptCheckpoint("trailing bytes after last record")
        meta = json.loads(tensors.pop("meta").tobytes().decode())
    except CorruptCheckpoint:
        raise
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"cannot parse checkpoint: {exc}") from exc
    return Checkpoint(meta, tensors)


def save(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".eesn")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(dumps(ckpt))
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path: str | Path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read {path}: {exc}") from exc
    return loads(buf)


# -- training state <-> checkpoint -------------------------------------------------

def space_to_dict(space: SearchSpace) -> dict:
    return {"max_depth": space.max_depth, "depth_options": list(space.depth_options),
            "head_options": list(space.head_options),
            "intermediate_options": list(space.intermediate_options), "active": dict(space.active)}


def space_from_dict(d: dict) -> SearchSpace:
    return SearchSpace(d["max_depth"], tuple(d["depth_options"]), tuple(d["head_options"]),
                       tuple(d["intermediate_options"]), dict(d["active"]))


def backend_meta(backend) -> dict:
    if isinstance(backend, TabularBackend):
        return {"kind": "tabular", "landscape": backend.landscape.to_dict()}
    return {"kind": "neural", "task": backend.task, "batch_size": backend.batch_size,
            "supernet": backend.config.to_dict(), "adam_t": backend.adam.t,
            "workers": backend.workers}


def from_training(state: TrainState, backend, config: TrainConfig, schedule: ExpansionSchedule,
                  full_space: SearchSpace, extra: dict | None = None) -> Checkpoint:
    meta = {
        "format": "eesng-checkpoint",
        "space": space_to_dict(state.space),
        "full_space": space_to_dict(full_space.full()),
        "controller": state.controller.to_dict(),
        "rng": state.rng.bit_generator.state,
        "epoch": state.epoch,
        "step": state.step,
        "train_config": asdict(config),
        "schedule": [[e.epoch, e.dim, e.option] for e in schedule.events],
        "backend": backend_meta(backend),
        "history": state.history.to_dict(),
        "extra": extra or {},
    }
    tensors = {f"theta.{i}": p for i, p in enumerate(state.params.probs)}
    if isinstance(backend, NeuralBackend):
        for name, t in backend.weights.tensors.items():
            tensors[f"w.{name}"] = t
            tensors[f"adam.m.{name}"] = backend.adam.m[name]
            tensors[f"adam.v.{name}"] = backend.adam.v[name]
    return Checkpoint(meta, tensors)


@dataclass
class Restored:
    space: SearchSpace
    schedule: ExpansionSchedule
    backend: object
    config: TrainConfig
    state: TrainState
    extra: dict


def restore(ckpt: Checkpoint) -> Restored:
    m = ckpt.meta
    try:
        space = space_from_dict(m["space"])
        full = space_from_dict(m["full_space"])
        n_vars = space.num_variables
        params = CategoricalParams(tuple(ckpt.tensors[f"theta.{i}"] for i in range(n_vars)), space)
        controller = ControllerState(**m["controller"])
        rng = np.random.default_rng()
        rng.bit_generator.state = m["rng"]
        config = TrainConfig(**m["train_config"])
        schedule = ExpansionSchedule(tuple(ExpansionEvent(*e) for e in m["schedule"]))
        b = m["backend"]
        if b["kind"] == "tabular":
            ld = dict(b["landscape"])
            backend = TabularBackend(make_landscape(full, ld.pop("generator"), ld.pop("seed"), **ld))
        else:
            cfg = SupernetConfig.from_dict(b["supernet"])
            names = [k[2:] for k in ckpt.tensors if k.startswith("w.")]
            W = SupernetWeights(cfg, {n: ckpt.tensors[f"w.{n}"] for n in names})
            adam = AdamState({n: ckpt.tensors[f"adam.m.{n}"] for n in names},
                             {n: ckpt.tensors[f"adam.v.{n}"] for n in names}, b["adam_t"])
            backend = NeuralBackend(W, full, b["task"], b["batch_size"], adam, b.get("workers", 1))
        history = TrainHistory.from_dict(m["history"])
    except (KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"checkpoint is missing state: {exc}") from exc
    state = TrainState(space, params, controller, rng, m["epoch"], m["step"], history)
    return Restored(full, schedule, backend, config, state, m.get("extra", {}))


def final_theta(ckpt: Checkpoint) -> CategoricalParams:
    space = space_from_dict(ckpt.meta["space"])
    return CategoricalParams(tuple(ckpt.tensors[f"theta.{i}"] for i in range(space.num_variables)),
                             space)


def uniform_theta(ckpt: Checkpoint) -> CategoricalParams:
    return dist.uniform_init(space_from_dict(ckpt.meta["full_space"]))
