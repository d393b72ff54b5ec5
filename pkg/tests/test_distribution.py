import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from eesng import distribution as dist
from eesng.distribution import CategoricalParams, ControllerState, Gate, P_MIN
from eesng.space import ArchitectureSpec, SearchSpace, enumerate_space, expand, default_schedule


def random_params(space, rng, floor=True):
    probs = []
    for m in space.variable_active_masks():
        p = np.zeros(len(m))
        p[m] = rng.dirichlet(np.ones(m.sum()))
        probs.append(dist.project(p, m) if floor else p)
    return CategoricalParams(tuple(probs), space)


def exact_natural_gradient(params, loss, space):
    """sum_m P(m) L(m) (U(m) - theta) by a raw product over variable indices."""
    theta = [np.asarray(p) for p in params.probs]
    grads = [np.zeros_like(p) for p in theta]
    for idx in itertools.product(*[range(len(p)) for p in theta]):
        pm = math.prod(theta[v][i] for v, i in enumerate(idx))
        if pm == 0:
            continue
        arch = space.from_indices(idx)
        l = loss(arch)
        for v, i in enumerate(idx):
            u = np.zeros_like(theta[v])
            u[i] = 1.0
            grads[v] += pm * l * (u - theta[v])
    return grads


def test_uniform_init(desk):
    p = dist.uniform_init(desk)
    assert np.allclose(p.probs[0], 1 / 3)
    one = dist.uniform_init(desk.initial())
    assert one.probs[1].tolist() == [1.0, 0.0, 0.0]


def test_deterministic_sampling(desk):
    a = desk.smallest()
    p = dist.deterministic(desk, a)
    rng = np.random.default_rng(0)
    assert all(s == a for s in dist.sample_many(p, rng, 50))


def test_sampling_reproducible(desk):
    p = dist.uniform_init(desk)
    a = dist.sample_many(p, np.random.default_rng(7), 100)
    b = dist.sample_many(p, np.random.default_rng(7), 100)
    assert a == b


def test_uniform_sampling_chi_square(desk):
    p = dist.uniform_init(desk)
    idx = np.array([desk.to_indices(a) for a in dist.sample_many(p, np.random.default_rng(1), 100_000)])
    # depth and the two always-active layers
    for v in range(5):
        counts = np.bincount(idx[:, v], minlength=3)
        assert stats.chisquare(counts).pvalue > 1e-3, (v, counts)
    # layer 3 heads, conditioned on depth >= 3
    deep = idx[idx[:, 0] >= 1]
    assert stats.chisquare(np.bincount(deep[:, 5], minlength=3)).pvalue > 1e-3
    # inactive layers carry the canonical (largest) option
    shallow = idx[idx[:, 0] == 0]
    assert np.all(shallow[:, 5:] == 0)


def test_log_likelihood_examples():
    sp = SearchSpace(2, (2,), tuple(range(9, 0, -1)), tuple(range(90, 0, -10)))
    p = dist.uniform_init(sp)
    assert dist.log_likelihood(p, sp.largest()) == pytest.approx(4 * math.log(1 / 9))
    det = dist.deterministic(sp, sp.largest())
    assert dist.log_likelihood(det, sp.largest()) == 0.0
    assert dist.log_likelihood(det, sp.smallest()) == -math.inf
    with pytest.raises(dist.ZeroProbability):
        dist.log_likelihood(det, sp.smallest(), strict=True)


@pytest.mark.parametrize("seed", range(5))
def test_likelihood_matches_enumeration(tiny, desk, seed):
    rng = np.random.default_rng(seed)
    for space in (tiny, desk):
        p = random_params(space, rng)
        probs = [math.exp(dist.log_likelihood(p, a)) for a in enumerate_space(space)]
        assert sum(probs) == pytest.approx(1.0, abs=1e-12)
    p = random_params(tiny, rng)
    for idx in itertools.product(range(1), range(2), range(2), range(2), range(2)):
        direct = math.prod(p.probs[v][i] for v, i in enumerate(idx))
        assert dist.probability(p, tiny.from_indices(idx)) == pytest.approx(direct, rel=1e-12)


def test_entropy():
    sp = SearchSpace(1, (1,), (3, 2, 1), (4,))
    assert dist.entropy(dist.uniform_init(sp)) == pytest.approx(math.log(3))
    assert dist.max_entropy(sp) == pytest.approx(math.log(3))
    assert dist.entropy(dist.deterministic(sp, sp.largest())) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_entropy_bounded(seed):
    from eesng.space import desk_space
    sp = desk_space()
    p = random_params(sp, np.random.default_rng(seed), floor=False)
    assert 0 <= dist.entropy(p) <= dist.max_entropy(sp) + 1e-12


def test_step_example():
    sp = SearchSpace(1, (1,), (2, 1), (4,))
    p = dist.uniform_init(sp)
    a = sp.largest()
    new = dist.natural_gradient_step(p, [(a, -1.0)], 0.1, projected=False)
    assert new.probs[1].tolist() == pytest.approx([0.55, 0.45])


def test_zero_utility_is_noop(desk):
    p = random_params(desk, np.random.default_rng(3))
    batch = [(a, 0.0) for a in dist.sample_many(p, np.random.default_rng(0), 8)]
    new = dist.natural_gradient_step(p, batch, 0.5)
    for a, b in zip(p.probs, new.probs):
        assert np.allclose(a, b, atol=1e-15)


def test_utility_transform():
    assert dist.utility_transform([0.2, 0.9]).tolist() == [-1.0, 1.0]
    assert dist.utility_transform([0.5, 0.5]).tolist() == [0.0, 0.0]
    assert dist.utility_transform([3.0, 1.0, 2.0]).tolist() == [1.0, -1.0, 0.0]
    assert dist.utility_transform([1.0, 4.0], "raw_loss").tolist() == [1.0, 4.0]
    with pytest.raises(ValueError):
        dist.utility_transform([1.0])
    u = dist.utility_transform(np.random.default_rng(0).random(9))
    assert u.sum() == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=12))
def test_rank_invariance(losses):
    x = np.array(losses, dtype=float)
    a = dist.utility_transform(x)
    b = dist.utility_transform(np.exp(x / 100) * 5 + 2)
    assert np.allclose(a, b)


def test_reinforcement(desk):
    rng = np.random.default_rng(5)
    p = random_params(desk, rng)
    archs = dist.sample_many(p, rng, 4)
    best = archs[0]
    new = dist.natural_gradient_step(p, list(zip(archs, [-1.0, 1.0, 1.0, 1.0])), 0.01)
    idx = desk.to_indices(best)
    n_active = 1 + 2 * best.depth
    for v in range(n_active):
        others = [desk.to_indices(a)[v] for a in archs[1:]]
        if idx[v] not in others:
            assert new.probs[v][idx[v]] > p.probs[v][idx[v]]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 2.0))
def test_simplex_preserved(seed, lr):
    from eesng.space import desk_space
    sp = desk_space()
    rng = np.random.default_rng(seed)
    p = dist.uniform_init(sp)
    for _ in range(20):
        archs = dist.sample_many(p, rng, 4)
        u = rng.normal(size=4) * 3
        p = dist.natural_gradient_step(p, list(zip(archs, u)), lr)
        for q in p.probs:
            assert abs(q.sum() - 1) < 1e-9
            assert q.min() >= P_MIN - 1e-15 and q.max() <= 1


def test_projection_floor():
    s = np.array([True, True, True, False])
    q = dist.project(np.array([1.5, -0.3, 0.0, 0.0]), s)
    assert q.sum() == pytest.approx(1.0)
    assert q[1] == q[2] == P_MIN and q[3] == 0.0


def test_mc_gradient_unbiased(tiny):
    rng = np.random.default_rng(11)
    p = random_params(tiny, rng)
    target = tiny.largest()
    loss = lambda a: float(np.sum(tiny.to_indices(a) != tiny.to_indices(target)))  # noqa: E731
    exact = exact_natural_gradient(p, loss, tiny)
    archs = dist.sample_many(p, rng, 40_000)
    mc = dist.natural_gradient(p, [(a, loss(a)) for a in archs])
    err = max(np.abs(a - b).max() for a, b in zip(exact, mc))
    assert err < 0.03


def test_controller_limits(desk):
    c = dist.update_controller(dist.uniform_init(desk), desk, ControllerState())
    assert c.K == pytest.approx(1.0)
    c = dist.update_controller(dist.deterministic(desk, desk.largest()), desk, ControllerState())
    assert c.K == 0.0
    rng = np.random.default_rng(0)
    for _ in range(200):
        c = dist.update_controller(random_params(desk, rng, floor=False), desk, ControllerState())
        assert 0.0 <= c.K <= 1.0 and 0 <= c.rho <= c.rho_max


def test_controller_single_option_space(desk):
    sp = desk.initial()
    c = dist.update_controller(dist.uniform_init(sp), sp, ControllerState())
    assert c.K == 1.0


def test_gate_frequency():
    rng = np.random.default_rng(0)
    assert all(dist.controller_gate(ControllerState(K=1.0), rng) is Gate.EXPLOIT for _ in range(1000))
    assert all(dist.controller_gate(ControllerState(K=0.0), rng) is Gate.EXPLORE for _ in range(1000))
    n = 100_000
    hits = sum(dist.controller_gate(ControllerState(K=0.7), rng) is Gate.EXPLOIT for _ in range(n))
    assert abs(hits / n - 0.7) < 0.01


def test_widen(desk):
    sched = default_schedule(desk, 6)
    sp0 = desk.initial()
    sp1 = expand(sp0, sched, sched.events[0].epoch)
    p = dist.widen(dist.uniform_init(sp0), sp1)
    # one new head option next to one existing: p_new = 1 / (2 * 2)
    assert p.probs[1].tolist() == pytest.approx([0.75, 0.25, 0.0])
    assert p.probs[0].tolist() == [0.0, 0.0, 1.0]


def test_importance_weight_clipped(desk):
    det = dist.deterministic(desk, desk.largest())
    assert dist.importance_weight(det, desk.largest()) == 10.0
    p = dist.CategoricalParams(tuple(dist.project(np.where(m, 1.0, 0.0), m) for m in desk.variable_active_masks()),
                               desk)
    assert dist.importance_weight(p, desk.largest()) == pytest.approx(1.0)
    assert dist.exploration_probability(desk, desk.smallest()) == pytest.approx(3.0 ** -5)


def test_exact_expected_loss(tiny):
    loss = lambda a: float(sum(a.heads) + sum(a.intermediates))  # noqa: E731
    det = dist.deterministic(tiny, tiny.smallest())
    assert dist.exact_expected_loss(det, loss) == loss(tiny.smallest())
    uni = dist.uniform_init(tiny)
    mean = np.mean([loss(a) for a in enumerate_space(tiny)])
    assert dist.exact_expected_loss(uni, loss) == pytest.approx(mean)
    rng = np.random.default_rng(2)
    p = random_params(tiny, rng)
    draws = np.array([loss(a) for a in dist.sample_many(p, rng, 20_000)])
    se = draws.std() / math.sqrt(len(draws))
    assert abs(draws.mean() - dist.exact_expected_loss(p, loss)) < 3 * se
