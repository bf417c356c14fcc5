"""Deterministic bag-of-tokens embeddings and exhaustive kNN demo retrieval.

The embedding function is deliberately pluggable in shape (one function,
one index type) but the default is a dependency-free L2-normalized token
count over prompt plus target, which is enough to pair candidates with
holdout examples that share surface statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dataset, Example

DemoSet = list  # ordered holdout examples, most similar first


def embed_example(example: Example, vocab: int) -> np.ndarray:
    """Unit-L2 token-count vector over prompt ⊕ target (all-zero if empty)."""
    counts = np.zeros(vocab)
    for tok in list(example.prompt) + list(example.target()):
        counts[tok] += 1.0
    norm = float(np.linalg.norm(counts))
    return counts / norm if norm > 0 else counts


@dataclass
class EmbedIndex:
    """One embedding per holdout example, in dataset order; ids are positions."""

    ids: list[int]
    vectors: np.ndarray  # (n, vocab), unit rows
    examples: list[Example]

    def __len__(self) -> int:
        return len(self.ids)


def build_index(holdout: Dataset, vocab: int) -> EmbedIndex:
    if len(holdout) == 0:
        raise ValueError("holdout set may not be empty")
    vectors = np.stack([embed_example(ex, vocab) for ex in holdout])
    return EmbedIndex(list(range(len(holdout))), vectors, list(holdout))


def knn_ids(index: EmbedIndex, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    """(holdout id, cosine similarity) for the top min(k, n) entries.

    Ordered by descending similarity, ties by ascending id; a zero query is
    similar 0 to everything so the result is pure id order.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    sims = index.vectors @ query
    order = sorted(range(len(index.ids)), key=lambda i: (-sims[i], index.ids[i]))
    return [(index.ids[i], float(sims[i])) for i in order[: min(k, len(order))]]


def knn(index: EmbedIndex, query: np.ndarray, k: int) -> DemoSet:
    """The retrieved holdout examples themselves, most similar first."""
    by_id = {i: ex for i, ex in zip(index.ids, index.examples)}
    return [by_id[i] for i, _ in knn_ids(index, query, k)]


def dump_demo_assignments(index: EmbedIndex, train: Dataset, vocab: int, k: int, path: str | Path) -> None:
    """Inspection CSV: one row per train example with its demo ids and similarities."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["train_id", "demo_ids", "similarities"])
        for i, ex in enumerate(train):
            pairs = knn_ids(index, embed_example(ex, vocab), k)
            writer.writerow(
                [i, " ".join(str(j) for j, _ in pairs), " ".join(f"{s:.6f}" for _, s in pairs)]
            )
