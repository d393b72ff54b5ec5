"""Evaluation backends shared by the trainer and the searchers.

A backend turns a list of architectures plus a data batch into losses (and,
for the neural backend, a weight update). Both expose ``accuracy`` for the
search stage.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from . import supernet as sn
from .landscape import TabularLandscape, tabular_accuracy, tabular_loss
from .space import ArchitectureSpec, SearchSpace
from .tasks import make_batch


class TabularBackend:
    kind = "tabular"

    def __init__(self, landscape: TabularLandscape):
        self.landscape = landscape

    @property
    def space(self) -> SearchSpace:
        return self.landscape.space

    def next_batch(self, rng: np.random.Generator):
        return None

    def train_step(self, archs: Sequence[ArchitectureSpec], batch, lr: float,
                   rng: np.random.Generator | None = None) -> np.ndarray:
        return np.array([tabular_loss(self.landscape, a, rng) for a in archs])

    def accuracy(self, arch: ArchitectureSpec, val_batches=None) -> float:
        return tabular_accuracy(self.landscape, arch)

    def checksum(self) -> str:
        return repr(sorted(self.landscape.to_dict().items()))


class NeuralBackend:
    """Elastic-transformer supernet trained with lazy (masked) Adam."""

    kind = "neural"

    def __init__(self, weights: sn.SupernetWeights, space: SearchSpace, task: str = "t1",
                 batch_size: int = 32, adam: sn.AdamState | None = None, workers: int = 1):
        self.weights = weights
        self._space = space.full()
        self.task = task
        self.batch_size = batch_size
        self.adam = adam if adam is not None else sn.AdamState.zeros(weights)
        self.workers = workers

    @property
    def space(self) -> SearchSpace:
        return self._space

    @property
    def config(self) -> sn.SupernetConfig:
        return self.weights.config

    def next_batch(self, rng: np.random.Generator):
        cfg = self.config
        return make_batch(self.task, rng, self.batch_size, cfg.vocab_size, cfg.seq_len)

    def _evaluate(self, archs, batch):
        fn = lambda a: sn.loss_and_gradients(self.weights, a, batch)  # noqa: E731
        if self.workers > 1 and len(archs) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(fn, archs))
        return [fn(a) for a in archs]

    def train_step(self, archs: Sequence[ArchitectureSpec], batch, lr: float,
                   rng: np.random.Generator | None = None) -> np.ndarray:
        # all evaluations read the same weight snapshot; reduction order is the sample order
        results = self._evaluate(archs, batch)
        losses = np.array([r[0] for r in results])
        if not np.all(np.isfinite(losses)):
            return losses
        lam = len(archs)
        grads = {k: np.zeros_like(v) for k, v in self.weights.tensors.items()}
        masks = {k: np.zeros(v.shape, dtype=bool) for k, v in self.weights.tensors.items()}
        for arch, (_, g) in zip(archs, results):
            for k in grads:
                grads[k] += g[k]
            for k, m in sn.active_masks(self.weights, arch).items():
                masks[k] |= m
        for k in grads:
            grads[k] /= lam
        sn.apply_update(self.weights, grads, lr, self.adam, masks)
        return losses

    def accuracy(self, arch: ArchitectureSpec, val_batches) -> float:
        return sn.accuracy(self.weights, arch, val_batches)

    def checksum(self) -> str:
        return self.weights.checksum()
