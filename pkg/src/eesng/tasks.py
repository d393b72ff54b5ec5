"""Synthetic sequence-classification tasks generated from a seed.

t1 (majority): label 1 iff more than half the tokens come from the lower
half of the vocabulary. Exact ties are never generated.

t2 (duplicate): label 1 iff some token occurs twice. Negatives are
sequences of distinct tokens, so ``vocab_size >= seq_len`` is required.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

TASKS = ("t1", "t2")


def _majority(rng, n, vocab, seq_len):
    labels = rng.integers(0, 2, n)
    half = vocab // 2
    tokens = np.empty((n, seq_len), dtype=np.int64)
    for i, y in enumerate(labels):
        if y:
            n_low = rng.integers(seq_len // 2 + 1, seq_len + 1)
        else:
            n_low = rng.integers(0, (seq_len + 1) // 2)
        low = rng.integers(0, half, n_low)
        high = rng.integers(half, vocab, seq_len - n_low)
        tokens[i] = rng.permutation(np.concatenate([low, high]))
    return tokens, labels


def _duplicate(rng, n, vocab, seq_len):
    if vocab < seq_len:
        raise ValueError("duplicate task needs vocab_size >= seq_len")
    labels = rng.integers(0, 2, n)
    tokens = np.empty((n, seq_len), dtype=np.int64)
    for i, y in enumerate(labels):
        seq = rng.choice(vocab, seq_len, replace=False)
        if y:
            a, b = rng.choice(seq_len, 2, replace=False)
            seq[b] = seq[a]
        tokens[i] = seq
    return tokens, labels


def make_batch(task: str, rng: np.random.Generator, batch_size: int,
               vocab_size: int = 16, seq_len: int = 16):
    if task == "t1":
        return _majority(rng, batch_size, vocab_size, seq_len)
    if task == "t2":
        return _duplicate(rng, batch_size, vocab_size, seq_len)
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def make_batches(task: str, seed: int, n_batches: int, batch_size: int,
                 vocab_size: int = 16, seq_len: int = 16):
    rng = np.random.default_rng(seed)
    return [make_batch(task, rng, batch_size, vocab_size, seq_len) for _ in range(n_batches)]


def load_dataset(path: str | Path, batch_size: int):
    """Read ``tok tok tok ...<TAB>label`` lines and cut them into batches."""
    rows, labels = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            toks, label = line.rsplit("\t", 1)
            rows.append([int(t) for t in toks.split()])
            labels.append(int(label))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: expected 'ids<TAB>label'") from None
    lengths = {len(r) for r in rows}
    if len(lengths) > 1:
        raise ValueError(f"{path}: sequences have differing lengths {sorted(lengths)}")
    tokens = np.array(rows, dtype=np.int64)
    labels = np.array(labels, dtype=np.int64)
    return [(tokens[i:i + batch_size], labels[i:i + batch_size])
            for i in range(0, len(labels), batch_size)]
