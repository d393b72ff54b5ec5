import math

import numpy as np
import pytest
from scipy import stats

from eesng import distribution as dist
from eesng.backends import NeuralBackend, TabularBackend
from eesng.distribution import Gate
from eesng.landscape import make_landscape
from eesng.space import SearchSpace, default_schedule, desk_space
from eesng.supernet import SupernetConfig, init_weights
from eesng.trainer import (HISTORY_COLUMNS, TrainConfig, TrainingAborted, history_csv,
                           progress_report, report_csv, sample_step, train)


def run(seed=0, generator="planted_optimum", **kw):
    sp = desk_space()
    cfg = TrainConfig(seed=seed, **{"epochs": 6, "steps_per_epoch": 30, **kw})
    backend = TabularBackend(make_landscape(sp, generator, seed))
    return train(sp, default_schedule(sp, cfg.epochs), backend, cfg)


def test_record_count_and_columns():
    _, params, hist, state = run()
    assert len(hist.records) == 6 * 30
    assert state.space.fully_active and params.space.fully_active
    lines = history_csv(hist).splitlines()
    assert lines[0].split(",") == list(HISTORY_COLUMNS)
    assert len(lines) == 1 + 180


def test_gate_modes_force_K():
    _, _, hist, _ = run(gate="exploit_only")
    assert all(r.K == 1.0 and r.gate == "exploit" for r in hist.records)
    _, _, hist, _ = run(gate="explore_only")
    assert all(r.K == 0.0 and r.gate == "explore" for r in hist.records)


def test_zero_theta_lr_keeps_uniform():
    _, params, hist, _ = run(theta_lr=0.0, progressive=False)
    for p, m in zip(params.probs, params.space.variable_active_masks()):
        assert np.allclose(p[m], 1 / m.sum())
    assert all(r.entropy == pytest.approx(r.max_entropy) for r in hist.records)


def test_reproducible():
    a = run(seed=4)[2]
    b = run(seed=4)[2]
    assert history_csv(a) == history_csv(b)
    assert history_csv(a) != history_csv(run(seed=5)[2])


def test_sample_step(desk):
    rng = np.random.default_rng(0)
    det = dist.deterministic(desk, desk.smallest())
    assert sample_step(det, desk, Gate.EXPLOIT, 5, rng) == [desk.smallest()] * 5
    with pytest.raises(ValueError):
        sample_step(det, desk, Gate.EXPLOIT, 0, rng)
    archs = sample_step(det, desk, Gate.EXPLORE, 100_000, rng)
    idx = np.array([desk.to_indices(a) for a in archs])
    for v in range(5):
        assert stats.chisquare(np.bincount(idx[:, v], minlength=3)).pvalue > 1e-3


def test_explore_respects_active_space(desk):
    sp = desk.initial()
    archs = sample_step(dist.uniform_init(sp), sp, Gate.EXPLORE, 50, np.random.default_rng(0))
    assert set(archs) == {desk.largest()}


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(samples_per_step=0)
    with pytest.raises(ValueError):
        TrainConfig(samples_per_step=1)
    with pytest.raises(ValueError):
        TrainConfig(gate="sometimes")
    TrainConfig(samples_per_step=1, utility="raw_loss")
    assert TrainConfig(samples_per_step=8).effective_theta_lr == pytest.approx(0.0125)


def test_backend_space_mismatch():
    other = SearchSpace(2, (2,), (4, 2), (64,))
    cfg = TrainConfig(epochs=1, steps_per_epoch=1)
    with pytest.raises(ValueError):
        train(desk_space(), None, TabularBackend(make_landscape(other, "planted_optimum", 0)), cfg)


class NanBackend(TabularBackend):
    def train_step(self, archs, batch, lr, rng=None):
        return np.full(len(archs), np.nan)


def test_non_finite_aborts(desk):
    cfg = TrainConfig(epochs=1, steps_per_epoch=3)
    with pytest.raises(TrainingAborted) as exc:
        train(desk, None, NanBackend(make_landscape(desk, "planted_optimum", 0)), cfg)
    assert exc.value.record.step == 0


def test_progress_report():
    _, _, hist, _ = run(epochs=8, steps_per_epoch=40)
    rows = progress_report(hist)
    assert len(rows) == 8
    for row in rows:
        if row["refreshed"] and row["max_entropy"] > 0:
            assert row["K"] == pytest.approx(row["entropy_start"] / row["max_entropy"])
    assert len(report_csv(rows).splitlines()) == 9


def test_entropy_decreases_within_epochs():
    flags = []
    for seed in range(10):
        flags += [r["entropy_end"] <= r["entropy_start"] for r in progress_report(run(seed, epochs=10, steps_per_epoch=50)[2])]
    assert np.mean(flags) >= 0.9


def test_exploration_rises_as_entropy_falls():
    early, late = [], []
    for seed in range(10):
        g = np.array([r.gate == "explore" for r in run(seed, epochs=10, steps_per_epoch=50)[2].records])
        q = len(g) // 4
        early.append(g[:q].mean())
        late.append(g[-q:].mean())
    assert np.mean(late) > np.mean(early)


def test_explore_frequency_matches_K():
    _, _, hist, _ = run(epochs=10, steps_per_epoch=200)
    for e in range(2, 10):
        recs = [r for r in hist.records if r.epoch == e]
        k = recs[0].K
        n = len(recs)
        freq = sum(r.gate == "explore" for r in recs) / n
        assert abs(freq - (1 - k)) <= 3 * math.sqrt(k * (1 - k) / n) + 1e-12


def _neural(space, workers=1, seed=0):
    cfg = SupernetConfig.for_space(space)
    return NeuralBackend(init_weights(cfg, np.random.default_rng(seed)), space, "t1", 16, workers=workers)


def test_single_architecture_plain_training():
    sp = SearchSpace(2, (2,), (2,), (16,))
    backend = _neural(sp)
    cfg = TrainConfig(epochs=4, steps_per_epoch=40, samples_per_step=1, utility="raw_loss",
                      weight_lr=3e-3, progressive=False)
    _, _, hist, _ = train(sp, None, backend, cfg)
    losses = np.array([r.losses[0] for r in hist.records])
    assert losses[-40:].mean() < 0.8 * losses[:40].mean()


def test_parallel_equals_sequential():
    sp = desk_space()
    cfg = TrainConfig(epochs=3, steps_per_epoch=4, samples_per_step=4)
    a = train(sp, default_schedule(sp, 3), _neural(sp, 1), cfg)[0]
    b = train(sp, default_schedule(sp, 3), _neural(sp, 3), cfg)[0]
    assert a.checksum() == b.checksum()
