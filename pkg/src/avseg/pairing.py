"""Nearest-neighbour tables and triplet sampling over global embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError


@dataclass(frozen=True)
class PairTable:
    """Row i lists the k most cosine-similar embeddings to i, nearest first."""

    neighbors: np.ndarray

    def __post_init__(self):
        if self.neighbors.ndim != 2:
            raise ShapeError(f"neighbor table must be 2-D, got {self.neighbors.shape}")

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]


def build_knn_table(embeddings, k: int = 7) -> PairTable:
    """Exact cosine k-nearest-neighbour table.

    Requires at least k + 2 embeddings so every row leaves a non-empty
    negative pool (the row itself and its k neighbors are excluded).
    Ties in similarity break toward the lower index.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise ShapeError(f"embeddings must be (N, d), got {e.shape}")
    n = e.shape[0]
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if n < k + 2:
        raise ConfigError(f"need at least k + 2 = {k + 2} embeddings, got {n}")
    norms = np.linalg.norm(e, axis=1)
    if np.min(norms) <= 1e-12:
        raise DomainError("cannot build neighbor table over a near-zero embedding")
    unit = e / norms[:, None]
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)
    idx = np.arange(n)
    rows = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        # primary key: similarity descending; secondary: index ascending
        order = np.lexsort((idx, -sims[i]))
        rows[i] = order[:k]
    return PairTable(rows)


def sample_triplet(index: int, table: PairTable, rng: np.random.Generator) -> tuple[int, int]:
    """Draw (positive, negative) for an anchor.

    The positive is uniform over the anchor's neighbor row; the negative
    is uniform over everything else (anchor and row excluded).
    """
    if not 0 <= index < table.n:
        raise ConfigError(f"anchor index {index} out of range for table of {table.n}")
    row = table.neighbors[index]
    pos = int(row[rng.integers(row.shape[0])])
    excluded = np.zeros(table.n, dtype=bool)
    excluded[index] = True
    excluded[row] = True
    pool = np.flatnonzero(~excluded)
    if pool.size == 0:
        raise ConfigError("no negatives available; dataset too small for this k")
    neg = int(pool[rng.integers(pool.size)])
    return pos, neg
