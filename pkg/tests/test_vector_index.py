import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import full_sort_knn
from polymine.embedding_store import EmbeddingMatrix, normalize
from polymine.errors import DimMismatch, KExceedsTargets, TooFewRows
from polymine.synthetic import clustered, random_unit
from polymine.vector_index import (
    build_ivf,
    knn_exact,
    knn_exact_arrays,
    knn_ivf,
    knn_ivf_arrays,
    recall_at_k,
    topk_rows,
)


def unit(x):
    return normalize(EmbeddingMatrix(np.asarray(x, dtype=np.float64)))


def full_sort_oracle(q, t, k, exclude_self=False):
    return full_sort_knn(q.data, t.data, k, exclude_self)


class TestExact:
    def test_self_is_top_without_exclusion(self, rng):
        m = unit(rng.standard_normal((50, 8)))
        for nl in knn_exact(m, m, 1):
            assert nl.rows[0] == nl.query_row
            assert nl.cosines[0] == pytest.approx(1.0, abs=1e-6)

    def test_two_axis_targets(self):
        t = unit([[1.0, 0.0], [0.0, 1.0]])
        q = unit([[0.8, 0.6]])
        assert knn_exact(q, t, 1)[0].rows[0] == 0

    def test_exclude_self(self, rng):
        m = unit(rng.standard_normal((30, 5)))
        for nl in knn_exact(m, m, 4, exclude_self=True):
            assert nl.query_row not in nl.rows

    def test_k_exceeds(self, rng):
        m = unit(rng.standard_normal((4, 3)))
        with pytest.raises(KExceedsTargets):
            knn_exact(m, m, 4, exclude_self=True)

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimMismatch):
            knn_exact(unit(rng.standard_normal((3, 3))), unit(rng.standard_normal((3, 4))), 1)

    def test_ties_break_by_row(self):
        t = unit([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
        q = unit([[1.0, 0.0]])
        assert knn_exact(q, t, 3)[0].rows.tolist() == [0, 2, 3]

    def test_matches_full_sort_oracle(self, rng):
        q = unit(rng.standard_normal((300, 32)))
        t = unit(rng.standard_normal((1500, 32)))
        rows, _ = knn_exact_arrays(q, t, 16)
        assert rows.tolist() == full_sort_oracle(q, t, 16)

    def test_blocked_equals_workers(self, rng):
        m = unit(rng.standard_normal((2500, 16)))
        a = knn_exact_arrays(m, m, 8, exclude_self=True, workers=1)
        b = knn_exact_arrays(m, m, 8, exclude_self=True, workers=4)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    @given(st.integers(0, 2**32 - 1))
    def test_target_permutation_invariance(self, seed):
        r = np.random.default_rng(seed)
        q = unit(r.standard_normal((10, 6)))
        t = unit(r.standard_normal((40, 6)))
        perm = r.permutation(40)
        a_rows, a_cos = knn_exact_arrays(q, t, 5)
        b_rows, b_cos = knn_exact_arrays(q, t.take(perm), 5)
        np.testing.assert_array_equal(a_cos, b_cos)
        # same multiset of original rows at each cosine level
        for i in range(10):
            assert sorted(zip(a_cos[i], a_rows[i])) == sorted(zip(b_cos[i], perm[b_rows[i]]))

    def test_cosine_symmetry(self, rng):
        a = unit(rng.standard_normal((20, 12)))
        b = unit(rng.standard_normal((25, 12)))
        from polymine.vector_index import similarity
        assert np.max(np.abs(similarity(a.data, b.data) - similarity(b.data, a.data).T)) <= 1e-12


def test_topk_rows_tie_heavy():
    scores = np.array([[1.0, 3.0, 3.0, 2.0, 3.0, 0.0]])
    idx, vals = topk_rows(scores, 2)
    assert idx.tolist() == [[1, 2]] and vals.tolist() == [[3.0, 3.0]]


class TestIvf:
    def test_single_cell(self, rng):
        m = unit(rng.standard_normal((40, 4)))
        idx = build_ivf(m, n_cells=1)
        assert idx.cell_members[0].tolist() == list(range(40))

    def test_partition(self, rng):
        m = unit(rng.standard_normal((500, 8)))
        idx = build_ivf(m, n_cells=12, seed=3)
        rows = np.concatenate(idx.cell_members)
        assert sorted(rows.tolist()) == list(range(500))

    def test_too_few_rows(self, rng):
        with pytest.raises(TooFewRows):
            build_ivf(unit(rng.standard_normal((3, 4))), n_cells=4)

    def test_two_clusters_are_pure(self, rng):
        d = 16
        centre = random_unit(1, d, rng)[0]
        a = centre + 0.05 * rng.standard_normal((300, d))
        b = -centre + 0.05 * rng.standard_normal((300, d))
        labels = np.array([0] * 300 + [1] * 300)
        perm = rng.permutation(600)
        m = unit(np.vstack([a, b])[perm])
        labels = labels[perm]
        idx = build_ivf(m, n_cells=2, seed=1)
        for members in idx.cell_members:
            share = np.bincount(labels[members], minlength=2).max() / len(members)
            assert share >= 0.99

    def test_seed_determinism(self, rng):
        m = unit(rng.standard_normal((400, 8)))
        a, b = build_ivf(m, n_cells=10, seed=5), build_ivf(m, n_cells=10, seed=5)
        assert a.centroids == b.centroids
        assert all(np.array_equal(x, y) for x, y in zip(a.cell_members, b.cell_members))

    def test_full_probe_equals_exact(self, rng):
        m = unit(rng.standard_normal((800, 12)))
        q = unit(rng.standard_normal((200, 12)))
        idx = build_ivf(m, n_cells=9, seed=2).with_probe(9)
        ar, ac = knn_ivf_arrays(idx, q, 10)
        er, ec = knn_exact_arrays(q, m, 10)
        assert np.array_equal(ar, er) and np.array_equal(ac, ec)

    def test_member_finds_itself(self, rng):
        x, _ = clustered(2000, 16, 20, 1.0, rng)
        m = unit(x)
        idx = build_ivf(m, seed=0)
        for cell in (0, 7, 13):
            row = int(idx.cell_members[cell][0])
            nl = knn_ivf(idx, m.take([row]), 1)[0]
            assert nl.rows[0] == row

    def test_rank1_never_beats_exact(self, rng):
        x, _ = clustered(3000, 16, 30, 1.5, rng)
        m = unit(x)
        q = unit(rng.standard_normal((300, 16)))
        idx = build_ivf(m, seed=4)
        _, ac = knn_ivf_arrays(idx, q, 1)
        _, ec = knn_exact_arrays(q, m, 1)
        assert np.all(ac[:, 0] <= ec[:, 0])

    @pytest.mark.slow
    def test_default_recall_on_clustered_10k(self, rng):
        x, _ = clustered(10_000, 32, 100, 1.0, rng)
        m = unit(x)
        idx = build_ivf(m, seed=0)
        assert idx.n_cells == 100 and idx.n_probe == 12
        ar, _ = knn_ivf_arrays(idx, m, 16)
        er, _ = knn_exact_arrays(m, m, 16)
        assert recall_at_k(ar, er) >= 0.95
