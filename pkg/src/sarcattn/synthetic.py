"""Seeded synthetic cue-word corpus for desk-scale verification.

Sentences are 5-15 random filler tokens; label 1 sentences additionally
carry the designated cue token at a random position. Classes are balanced
50/50 and an 80/20 train/test split is written into each line.
"""

from __future__ import annotations

import json

import numpy as np

DEFAULT_CUE = "totally"


def generate_synthetic(n: int, vocab_size: int, seed: int,
                       cue: str = DEFAULT_CUE) -> list[dict]:
    """Return `n` {"text", "label", "split"} rows, seed-deterministic."""
    if n < 10:
        raise ValueError(f"n must be >= 10, got {n}")
    if vocab_size < 10:
        raise ValueError(f"vocab_size must be >= 10, got {vocab_size}")
    rng = np.random.default_rng(seed)
    fillers = [f"w{i:02d}" for i in range(vocab_size)]
    if cue in fillers:
        raise ValueError(f"cue token {cue!r} collides with the filler vocabulary")
    n_pos = n // 2
    labels = np.array([1] * n_pos + [0] * (n - n_pos))
    rng.shuffle(labels)
    rows = []
    n_train = int(round(n * 0.8))
    for i, label in enumerate(labels):
        length = int(rng.integers(5, 16))
        tokens = [fillers[k] for k in rng.integers(0, vocab_size, size=length)]
        if label == 1:
            tokens[int(rng.integers(0, length))] = cue
        rows.append({
            "text": " ".join(tokens),
            "label": int(label),
            "split": "train" if i < n_train else "test",
        })
    return rows


def write_jsonl(rows: list[dict], path):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
