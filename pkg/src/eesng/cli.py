"""Command-line entry point: ``eesng {train,search,benchmark,enumerate,cost,eval}``.

Exit codes: 0 success, 2 configuration/usage error, 3 infeasible constraint,
4 corrupt checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import benchmark as bench
from . import checkpoint as ckpt_io
from . import distribution as dist
from .backends import NeuralBackend, TabularBackend
from .checkpoint import CorruptCheckpoint
from .config import ConfigError, ExperimentConfig, load_config
from .cost import NetConfig, breakdown, min_cost, supernet_cost
from .landscape import make_landscape
from .search import RewardConfig, distribution_search, trace_csv
from .space import (ArchitectureSpec, InvalidArchitecture, SpaceTooLarge, cardinality,
                    default_schedule, enumerate_space, load_space)
from .supernet import SupernetConfig, init_weights
from .tasks import make_batches
from .trainer import history_csv, progress_report, report_csv, train

log = logging.getLogger("eesng")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_CORRUPT = 0, 2, 3, 4


class Infeasible(RuntimeError):
    pass


@contextmanager
def output_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"output directory {out} is locked by another run ({lock})") from None
    os.close(fd)
    try:
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _write(path: Path, text: str):
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- backends from config / checkpoint -------------------------------------------------

def build_backend(cfg: ExperimentConfig):
    b = cfg.backend
    space = cfg.space.full()
    if b.kind == "tabular":
        return TabularBackend(make_landscape(space, b.generator, b.landscape_seed, b.noise))
    net = SupernetConfig.for_space(space, vocab_size=b.vocab_size, embed_dim=b.embed_dim,
                                   seq_len=b.seq_len, num_classes=b.num_classes, dtype=b.dtype)
    W = init_weights(net, np.random.default_rng([cfg.seed, 1]))
    return NeuralBackend(W, space, b.task, b.batch_size, workers=b.workers)


def validation_batches(extra: dict, backend, n_batches: int | None = None, seed: int | None = None):
    if not isinstance(backend, NeuralBackend):
        return None
    cfg = backend.config
    return make_batches(backend.task, extra.get("val_seed", 12345) if seed is None else seed,
                        n_batches or extra.get("val_batches", 8), backend.batch_size,
                        cfg.vocab_size, cfg.seq_len)


def net_config_for(backend, space) -> NetConfig:
    if isinstance(backend, NeuralBackend):
        return backend.config.net_config()
    return NetConfig.for_space(space)


def parse_arch(text: str, space) -> ArchitectureSpec:
    if text == "max":
        return space.full().largest()
    if text == "min":
        return space.full().smallest()
    try:
        d = json.loads(text)
        depth, heads, inters = int(d["depth"]), list(d["heads"]), list(d["intermediates"])
    except (ValueError, KeyError, TypeError):
        raise ConfigError(f"--arch must be 'max', 'min' or JSON with depth/heads/intermediates: {text!r}")
    # per-layer lists may stop at the active depth
    pad = space.max_depth - len(heads)
    heads += [space.canonical_head] * max(pad, 0)
    inters += [space.canonical_intermediate] * max(space.max_depth - len(inters), 0)
    arch = ArchitectureSpec(depth, tuple(heads), tuple(inters))
    space.full().validate(arch)
    return space.canonicalize(arch)


# -- commands ------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output)
    with output_lock(out):
        space = cfg.space.full()
        schedule = default_schedule(space, cfg.train.epochs, cfg.expansion_spacing)
        extra = {"val_seed": cfg.backend.val_seed, "val_batches": cfg.backend.val_batches,
                 "seed": cfg.seed}
        state = None
        if args.resume:
            r = ckpt_io.restore(ckpt_io.load(args.resume))
            backend, state, schedule, extra = r.backend, r.state, r.schedule, r.extra or extra
            train_cfg = r.config
        else:
            backend = build_backend(cfg)
            train_cfg = cfg.train
        (out / "checkpoints").mkdir(exist_ok=True)

        def on_epoch_end(st):
            ck = ckpt_io.from_training(st, backend, train_cfg, schedule, space, extra)
            ckpt_io.save(out / "checkpoints" / f"epoch_{st.epoch:03d}.eesn", ck)
            ckpt_io.save(out / "checkpoint.eesn", ck)
            log.info("epoch %d done, checkpoint written", st.epoch)

        _, params, history, _ = train(space, schedule, backend, train_cfg, state, on_epoch_end)
        _write(out / "history.csv", history_csv(history))
        _write(out / "report.csv", report_csv(progress_report(history)))
        _write(out / "theta.txt", params.format_table() + "\n")
    print(f"trained {train_cfg.epochs} epochs; checkpoint at {out / 'checkpoint.eesn'}")
    return EXIT_OK


def cmd_search(args) -> int:
    ck = ckpt_io.load(args.checkpoint)
    before = sha256_file(args.checkpoint)
    r = ckpt_io.restore(ck)
    space = r.space.full()
    backend = r.backend
    net = net_config_for(backend, space)
    lo, hi = min_cost(space, net, args.metric), supernet_cost(space, net, args.metric)
    if args.omega <= lo:
        raise Infeasible(f"omega {args.omega:g} is not above the minimal architecture cost "
                         f"{lo} ({args.metric}); no architecture can satisfy T(m) < omega")
    if args.omega >= hi:
        raise ConfigError(f"omega {args.omega:g} must be below the supernet cost {hi} ({args.metric})")
    rcfg = RewardConfig(omega=args.omega, t_max=hi, metric=args.metric, penalty_form=args.penalty)
    val = validation_batches(r.extra, backend, args.val_batches)
    if args.warm_start:
        theta = dist.widen(ckpt_io.final_theta(ck), space)
    else:
        theta = dist.uniform_init(space)
    seed = args.seed if args.seed is not None else r.extra.get("seed", 0)
    res = distribution_search(backend, space, rcfg, net, args.steps, args.samples, val,
                              np.random.default_rng(seed), theta_init=theta)
    reference = backend.accuracy(space.largest(), val)
    after = sha256_file(args.checkpoint)
    if before != after or backend.checksum() != ckpt_io.restore(ck).backend.checksum():
        raise RuntimeError("supernet weights changed during search")

    out = Path(args.out or Path(args.checkpoint).parent / "search")
    name = args.name or f"{args.metric}_{args.omega:g}"
    with output_lock(out):
        trace_path = out / f"search_{name}_trace.csv"
        _write(trace_path, trace_csv(res))
        record = res.to_dict()
        record.update({"omega": args.omega, "metric": args.metric, "penalty_form": args.penalty,
                       "supernet_cost": hi, "min_cost": lo, "seed": seed, "steps": args.steps,
                       "samples_per_step": args.samples, "trace": trace_path.name,
                       "full_size_accuracy": reference,
                       "accuracy_ratio": res.best_accuracy / reference if reference > 0 else None,
                       "checkpoint_sha256": after, "warm_start": bool(args.warm_start)})
        _write(out / f"search_{name}.json", _dump_json(record))
    print(_dump_json(record), end="")
    if not res.feasible:
        raise Infeasible(f"no feasible architecture found under omega={args.omega:g}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config)
    b = cfg.benchmark
    out = Path(args.out or cfg.output)
    with output_lock(out):
        search = bench.compare_searchers(cfg.space, b.seeds, b.search_steps, b.samples_per_step,
                                         b.omega_fraction, b.penalty, b.population, b.mutation_rate)
        ablation = bench.gate_ablation(cfg.space, b.seeds, b.modes, b.train_epochs, b.train_steps,
                                       b.samples_per_step, b.train_generator)
        rows = bench.summarize(search, ablation)
        _write(out / "search_traces.csv", bench.search_csv(search))
        _write(out / "train_traces.csv", bench.train_csv(ablation))
        _write(out / "summary.csv", bench.summary_csv(rows))
    for row in rows:
        print(f"{row['experiment']:9s} {row['method']:13s} {row['statistic']:18s} "
              f"median={row['median']:.4g} iqr=[{row['q25']:.4g}, {row['q75']:.4g}]")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    space = load_space(args.space)
    net = NetConfig.for_space(space)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("index", "depth", "heads", "intermediates", "params", "flops"))
        for i, arch in enumerate(enumerate_space(space, args.limit)):
            b = breakdown(arch, net)
            w.writerow((i, arch.depth, ",".join(map(str, arch.heads)),
                        ",".join(map(str, arch.intermediates)), b.total_without_embedding, b.flops))
    finally:
        if args.out:
            fh.close()
    if args.out:
        print(f"{cardinality(space)} architectures written to {args.out}")
    return EXIT_OK


def cmd_cost(args) -> int:
    if args.checkpoint:
        r = ckpt_io.restore(ckpt_io.load(args.checkpoint))
        space, net = r.space, net_config_for(r.backend, r.space)
    else:
        space = load_space(args.space)
        net = NetConfig(embed_dim=args.embed_dim, max_heads=max(space.head_options),
                        vocab_size=args.vocab_size, num_classes=args.num_classes, seq_len=args.seq_len)
    arch = parse_arch(args.arch, space)
    rec = breakdown(arch, net).to_dict()
    rec["architecture"] = arch.to_dict()
    rec["supernet_params"] = supernet_cost(space, net, "params")
    rec["supernet_flops"] = supernet_cost(space, net, "flops")
    print(_dump_json(rec), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    r = ckpt_io.restore(ckpt_io.load(args.checkpoint))
    arch = parse_arch(args.arch, r.space)
    val = validation_batches(r.extra, r.backend, args.val_batches, args.val_seed)
    acc = r.backend.accuracy(arch, val)
    print(_dump_json({"architecture": arch.to_dict(), "accuracy": acc}), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eesng", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="Stage I: train supernet and distribution")
    t.add_argument("config")
    t.add_argument("--out", help="output directory (default: [experiment] output)")
    t.add_argument("--resume", help="continue from a checkpoint written by an earlier run")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("search", help="Stage II: constraint-aware search with frozen weights")
    s.add_argument("checkpoint")
    s.add_argument("--omega", type=float, required=True, help="cost budget (params or FLOPs)")
    s.add_argument("--metric", choices=("params", "flops"), default="params")
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--samples", type=int, default=8, help="architectures sampled per step")
    s.add_argument("--penalty", choices=("as_written", "violation_proportional"), default="as_written")
    s.add_argument("--seed", type=int)
    s.add_argument("--warm-start", action="store_true", help="start from the Stage-I distribution")
    s.add_argument("--val-batches", type=int)
    s.add_argument("--name", help="output file stem")
    s.add_argument("--out")
    s.set_defaults(func=cmd_search)

    b = sub.add_parser("benchmark", help="searcher comparison and gate ablation on tabular landscapes")
    b.add_argument("config")
    b.add_argument("--out")
    b.set_defaults(func=cmd_benchmark)

    e = sub.add_parser("enumerate", help="list every architecture of a space as CSV")
    e.add_argument("--space", default="desk", help="preset name or space file")
    e.add_argument("--limit", type=int, default=1_000_000)
    e.add_argument("--out")
    e.set_defaults(func=cmd_enumerate)

    c = sub.add_parser("cost", help="parameter/FLOP breakdown of one architecture as JSON")
    c.add_argument("--arch", default="max", help="'max', 'min' or JSON")
    c.add_argument("--space", default="desk")
    c.add_argument("--checkpoint", help="take space and shapes from a checkpoint")
    c.add_argument("--embed-dim", type=int, default=32)
    c.add_argument("--vocab-size", type=int, default=16)
    c.add_argument("--num-classes", type=int, default=2)
    c.add_argument("--seq-len", type=int, default=16)
    c.set_defaults(func=cmd_cost)

    v = sub.add_parser("eval", help="accuracy of one architecture with inherited weights")
    v.add_argument("checkpoint")
    v.add_argument("--arch", default="max")
    v.add_argument("--val-batches", type=int)
    v.add_argument("--val-seed", type=int)
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, InvalidArchitecture, SpaceTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except CorruptCheckpoint as exc:
        print(f"corrupt checkpoint: {exc}", file=sys.stderr)
        return EXIT_CORRUPT


if __name__ == "__main__":
    sys.exit(main())
