import numpy as np
import pytest

from avseg.errors import ConfigError, DomainError, ShapeError
from avseg.pairing import PairTable, build_knn_table, sample_triplet


def brute_force_knn(e, k):
    """O(N^2) oracle: sort every row by (similarity desc, index asc)."""
    n = e.shape[0]
    unit = e / np.linalg.norm(e, axis=1)[:, None]
    rows = []
    for i in range(n):
        sims = [(float(unit[i] @ unit[j]), j) for j in range(n) if j != i]
        sims.sort(key=lambda t: (-t[0], t[1]))
        rows.append([j for _, j in sims[:k]])
    return np.asarray(rows, dtype=np.int64)


def test_three_point_example():
    e = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    table = build_knn_table(e, k=1)
    np.testing.assert_array_equal(table.neighbors, [[1], [0], [1]])


def test_tie_break_by_lower_index():
    e = np.ones((4, 3))
    table = build_knn_table(e, k=2)
    np.testing.assert_array_equal(table.neighbors[0], [1, 2])


def test_self_never_in_own_row(rng):
    e = rng.normal(size=(30, 8))
    table = build_knn_table(e, k=5)
    for i in range(30):
        assert i not in table.neighbors[i]


def test_matches_brute_force_over_seeds():
    for seed in range(20):
        r = np.random.default_rng(seed)
        n = int(r.integers(10, 201))
        d = int(r.integers(2, 33))
        k = int(r.integers(1, min(8, n - 2) + 1))
        e = r.normal(size=(n, d))
        table = build_knn_table(e, k=k)
        np.testing.assert_array_equal(table.neighbors, brute_force_knn(e, k))


def test_size_and_norm_guards(rng):
    with pytest.raises(ConfigError):
        build_knn_table(rng.normal(size=(8, 4)), k=7)  # needs N >= k + 2
    bad = rng.normal(size=(10, 4))
    bad[3] = 0.0
    with pytest.raises(DomainError):
        build_knn_table(bad, k=3)
    with pytest.raises(ShapeError):
        build_knn_table(rng.normal(size=10), k=2)


def test_sample_triplet_forced_negative():
    table = PairTable(np.array([[1], [0], [1]], dtype=np.int64))
    for seed in range(10):
        pos, neg = sample_triplet(0, table, np.random.default_rng(seed))
        assert pos == 1
        assert neg == 2  # the complement holds exactly one index


def test_sample_triplet_determinism(rng):
    e = np.random.default_rng(7).normal(size=(20, 6))
    table = build_knn_table(e, k=4)
    a = sample_triplet(5, table, np.random.default_rng(123))
    b = sample_triplet(5, table, np.random.default_rng(123))
    assert a == b


def test_sample_triplet_exclusions_property():
    e = np.random.default_rng(11).normal(size=(25, 5))
    table = build_knn_table(e, k=6)
    for seed in range(200):
        i = seed % 25
        pos, neg = sample_triplet(i, table, np.random.default_rng(seed))
        assert pos in table.neighbors[i]
        assert neg != i
        assert neg not in table.neighbors[i]


def test_negative_sampling_is_uniform():
    # N=5, K=2: each anchor leaves two legal negatives
    e = np.array([[1.0, 0.0], [0.99, 0.01], [0.98, 0.02], [0.0, 1.0], [0.01, 0.99]])
    table = build_knn_table(e, k=2)
    legal = [j for j in range(5) if j != 0 and j not in table.neighbors[0]]
    assert len(legal) == 2
    rng = np.random.default_rng(0)
    counts = {j: 0 for j in legal}
    draws = 10_000
    for _ in range(draws):
        _, neg = sample_triplet(0, table, rng)
        counts[neg] += 1
    for j in legal:
        assert abs(counts[j] / draws - 0.5) < 0.05
