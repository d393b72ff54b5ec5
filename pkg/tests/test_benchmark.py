import math

import numpy as np

from eesng import benchmark as bench
from eesng.space import SearchSpace


def test_quantile_matches_numpy_on_finite():
    rng = np.random.default_rng(0)
    for n in (1, 2, 5, 20):
        x = rng.random(n)
        for q in (0.25, 0.5, 0.75):
            assert bench._quantile(x, q) == np.quantile(x, q)


def test_quantile_with_unreached():
    assert bench._quantile([1.0, math.inf, math.inf], 0.5) == math.inf
    assert bench._quantile([1.0, 3.0, math.inf, math.inf], 0.5) == math.inf
    assert bench._quantile([1.0, 3.0, 5.0, math.inf], 0.5) == 4.0


def test_summary_shape():
    sp = SearchSpace(2, (1, 2), (2, 1), (8, 4))
    search = bench.compare_searchers(sp, seeds=2, steps=5, samples_per_step=4, population=4)
    ablation = bench.gate_ablation(sp, seeds=2, epochs=2, steps_per_epoch=3, samples_per_step=4)
    rows = bench.summarize(search, ablation)
    stats = {(r["experiment"], r["method"], r["statistic"]) for r in rows}
    assert ("search", "random", "evals_to_optimum") in stats
    assert ("ablation", "exploit_only", "final_best_loss") in stats
    assert all(r["n"] == 2 for r in rows)
    assert bench.summary_csv(rows).splitlines()[0] == ",".join(bench.SUMMARY_COLUMNS)
