import csv
import hashlib
import json
import subprocess
import sys
import time

import pytest

from eesng.cli import main
from eesng.cost import NetConfig, supernet_cost
from eesng.space import desk_space

TAB = """[experiment]
seed = 1
output = {out}

[space]
preset = desk

[backend]
kind = tabular
generator = planted_optimum
landscape_seed = 3

[train]
epochs = {epochs}
steps_per_epoch = 50
"""

NEURAL = """[experiment]
seed = 0
output = {out}

[space]
preset = desk

[backend]
kind = neural
task = t1
batch_size = 16
val_batches = 2

[train]
epochs = 3
steps_per_epoch = 4
"""


def write_cfg(tmp_path, template, name="c.ini", **kw):
    f = tmp_path / name
    f.write_text(template.format(**kw))
    return f


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def trained(tmp_path):
    out = tmp_path / "run"
    assert main(["train", str(write_cfg(tmp_path, TAB, out=out, epochs=6))]) == 0
    return out


def test_train_outputs(trained):
    names = sorted(p.name for p in trained.iterdir())
    assert names == ["checkpoint.eesn", "checkpoints", "history.csv", "report.csv", "theta.txt"]
    assert len(list((trained / "checkpoints").iterdir())) == 6
    assert len((trained / "history.csv").read_text().splitlines()) == 1 + 300


def test_tabular_train_is_fast_and_reproducible(tmp_path):
    t0 = time.perf_counter()
    outs = []
    for i in range(2):
        out = tmp_path / f"r{i}"
        assert main(["train", str(write_cfg(tmp_path, TAB, out=out, epochs=10))]) == 0
        outs.append(out)
    assert (time.perf_counter() - t0) / 2 < 60
    for name in ("history.csv", "report.csv", "theta.txt", "checkpoint.eesn"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_search_multi_omega(trained, tmp_path, capsys):
    ckpt = trained / "checkpoint.eesn"
    before = sha(ckpt)
    for omega in ("12000", "20000", "28000"):
        assert main(["search", str(ckpt), "--omega", omega, "--steps", "40", "--out", str(tmp_path / "s")]) == 0
        rec = json.loads((tmp_path / "s" / f"search_params_{omega}.json").read_text())
        assert rec["feasible"] and rec["cost"] < float(omega)
        assert rec["checkpoint_sha256"] == before
        assert (tmp_path / "s" / rec["trace"]).exists()
    assert sha(ckpt) == before


def test_search_same_seed_identical(trained, tmp_path):
    ckpt = str(trained / "checkpoint.eesn")
    texts = []
    for d in ("a", "b"):
        assert main(["search", ckpt, "--omega", "15000", "--steps", "20", "--seed", "4",
                     "--out", str(tmp_path / d)]) == 0
        texts.append((tmp_path / d / "search_params_15000.json").read_bytes())
        texts.append((tmp_path / d / "search_params_15000_trace.csv").read_bytes())
    assert texts[0] == texts[2] and texts[1] == texts[3]


def test_search_warm_start_and_flops(trained, tmp_path):
    ckpt = str(trained / "checkpoint.eesn")
    top = supernet_cost(desk_space(), NetConfig(), "flops")
    assert main(["search", ckpt, "--omega", str(top // 2), "--metric", "flops", "--warm-start",
                 "--steps", "20", "--out", str(tmp_path / "w")]) == 0


def test_infeasible_omega(trained, capsys):
    rc = main(["search", str(trained / "checkpoint.eesn"), "--omega", "100"])
    assert rc == 3
    assert "4626" in capsys.readouterr().err


def test_omega_above_supernet_is_config_error(trained):
    assert main(["search", str(trained / "checkpoint.eesn"), "--omega", "1e9"]) == 2


def test_corrupt_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.eesn"
    bad.write_bytes(b"EESN\x01\x00\x00\x00garbage")
    assert main(["eval", str(bad)]) == 4
    assert main(["search", str(bad), "--omega", "5000"]) == 4
    assert "corrupt" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    f = write_cfg(tmp_path, TAB.replace("steps_per_epoch = 50\n", ""), out=tmp_path / "x", epochs=2)
    assert main(["train", str(f)]) == 2
    assert "steps_per_epoch" in capsys.readouterr().err
    assert main(["train", str(tmp_path / "nope.ini")]) == 2


def test_lock_file(tmp_path):
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".lock").touch()
    assert main(["train", str(write_cfg(tmp_path, TAB, out=out, epochs=2))]) == 2


def test_resume_via_cli(tmp_path):
    full = tmp_path / "full"
    assert main(["train", str(write_cfg(tmp_path, TAB, out=full, epochs=6))]) == 0
    part = tmp_path / "part"
    assert main(["train", str(write_cfg(tmp_path, TAB, out=part, epochs=6)),
                 "--resume", str(full / "checkpoints" / "epoch_003.eesn")]) == 0
    assert (part / "history.csv").read_bytes() == (full / "history.csv").read_bytes()
    assert (part / "checkpoint.eesn").read_bytes() == (full / "checkpoint.eesn").read_bytes()


def test_enumerate(tmp_path):
    out = tmp_path / "e.csv"
    assert main(["enumerate", "--space", "desk", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 7371
    assert max(int(r["params"]) for r in rows) == supernet_cost(desk_space(), NetConfig())
    assert main(["enumerate", "--space", "bert"]) == 2


def test_cost_max_is_supernet(capsys):
    assert main(["cost", "--arch", "max"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["total_without_embedding"] == rec["supernet_params"] == supernet_cost(desk_space(), NetConfig())
    assert rec["flops"] == rec["supernet_flops"]
    assert main(["cost", "--arch", '{"depth": 2, "heads": [3, 3], "intermediates": [64, 64]}']) == 2


def test_neural_eval_deterministic(tmp_path, capsys):
    out = tmp_path / "n"
    assert main(["train", str(write_cfg(tmp_path, NEURAL, out=out))]) == 0
    capsys.readouterr()
    arch = '{"depth": 3, "heads": [2, 1, 4], "intermediates": [32, 16, 64]}'
    results = []
    for _ in range(2):
        assert main(["eval", str(out / "checkpoint.eesn"), "--arch", arch]) == 0
        results.append(capsys.readouterr().out)
    assert results[0] == results[1]
    rec = json.loads(results[0])
    assert rec["architecture"]["heads"] == [2, 1, 4, 4] and 0 <= rec["accuracy"] <= 1
    assert main(["cost", "--checkpoint", str(out / "checkpoint.eesn"), "--arch", "min"]) == 0


def test_benchmark_rows(tmp_path):
    cfg = TAB.format(out=tmp_path / "b", epochs=2) + """
[benchmark]
seeds = 2
search_steps = 5
samples_per_step = 4
population = 4
train_epochs = 2
train_steps = 3
"""
    f = tmp_path / "b.ini"
    f.write_text(cfg)
    assert main(["benchmark", str(f)]) == 0
    rows = list(csv.DictReader((tmp_path / "b" / "search_traces.csv").open()))
    keys = [(r["method"], r["seed"], r["step"]) for r in rows]
    assert len(keys) == len(set(keys))
    assert {(m, s) for m, s, _ in keys} == {(m, str(s)) for m in ("distribution", "random", "evolutionary")
                                            for s in range(2)}
    assert sum(1 for k in keys if k[0] == "distribution") == 2 * 5
    train_rows = list(csv.DictReader((tmp_path / "b" / "train_traces.csv").open()))
    assert len(train_rows) == 3 * 2 * 2 * 3
    summary = list(csv.DictReader((tmp_path / "b" / "summary.csv").open()))
    assert {"median", "q25", "q75"} <= set(summary[0])


def test_module_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "eesng", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("train", "search", "benchmark", "enumerate", "cost", "eval"):
        assert cmd in r.stdout
