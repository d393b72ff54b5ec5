import itertools

import numpy as np
import pytest

from eesng.space import ArchitectureSpec, SearchSpace, desk_space


@pytest.fixture
def desk():
    return desk_space()


@pytest.fixture
def tiny():
    """16 architectures: fixed depth 2, two head and two intermediate options per layer."""
    return SearchSpace(2, (2,), (2, 1), (8, 4))


def brute_force_archs(space: SearchSpace):
    """Distinct sub-networks by raw product over every variable, deduplicated on active layers."""
    seen = set()
    out = []
    for d in space.depth_options:
        for hs in itertools.product(space.head_options, repeat=space.max_depth):
            for ks in itertools.product(space.intermediate_options, repeat=space.max_depth):
                key = (d, hs[:d], ks[:d])
                if key not in seen:
                    seen.add(key)
                    out.append(key)
    return out


def random_arch(space: SearchSpace, rng) -> ArchitectureSpec:
    d = space.depth_options[rng.integers(len(space.depth_options))]
    hs = [space.head_options[i] for i in rng.integers(len(space.head_options), size=space.max_depth)]
    ks = [space.intermediate_options[i] for i in rng.integers(len(space.intermediate_options), size=space.max_depth)]
    return space.canonicalize(ArchitectureSpec(d, tuple(hs), tuple(ks)))


def fd_check(W, arch, batch, rng, coords_per_tensor=10, h=1e-3):
    """Worst relative error between analytic gradients and a 5-point central difference.

    Coordinates are drawn from the slice ``arch`` uses. A coordinate whose
    analytic and numeric values are both below 1e-10 counts as agreeing
    (e.g. key biases, which softmax is invariant to).
    """
    from eesng import supernet as sn

    grads = sn.gradients(W, arch, batch)
    masks = sn.active_masks(W, arch)
    worst = 0.0
    for name, t in W.tensors.items():
        idx = np.argwhere(masks[name])
        pick = idx[rng.choice(len(idx), size=min(coords_per_tensor, len(idx)), replace=False)]
        for c in map(tuple, pick):
            orig = t[c]
            vals = []
            for step in (2 * h, h, -h, -2 * h):
                t[c] = orig + step
                vals.append(sn.forward(W, arch, batch)[0])
            t[c] = orig
            num = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
            ana = grads[name][c]
            if abs(ana) < 1e-10 and abs(num) < 1e-10:
                continue
            rel = abs(ana - num) / max(abs(ana), abs(num))
            worst = max(worst, rel)
    return worst


def perturbed_weights(space, seed, scale=0.1):
    """Random supernet with biases and LN parameters moved away from their init values."""
    from eesng.supernet import SupernetConfig, init_weights

    rng = np.random.default_rng(seed)
    W = init_weights(SupernetConfig.for_space(space), rng)
    for name, t in W.tensors.items():
        if t.ndim == 1:
            t += scale * rng.standard_normal(t.shape)
    return W
