import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_independent_sets, eq1_margin
from polymine.embedding_store import SegmentRecord
from polymine.errors import (
    DegenerateDenominator,
    DimMismatch,
    EmptyStore,
    MissingSpan,
    OverlappingVadUnits,
    PolymineError,
    UnsortedInput,
)
from polymine.miner import (
    MinedPair,
    MiningConfig,
    best_interval_set,
    cap_alignments,
    format_pairs,
    make_overlapping_candidates,
    margin_score,
    mine,
    read_pairs,
    resolve_overlaps,
    segment_corpus,
    write_pairs,
)
from polymine.synthetic import text_store


def store(x, prefix, lang="xx"):
    x = np.asarray(x, dtype=np.float64)
    return text_store(x, [f"{prefix}{i:04d}" for i in range(len(x))], lang).normalized()


class TestMarginScore:
    def test_equal_neighbours_give_one(self):
        assert margin_score(0.7, [0.7] * 16, [0.7] * 16) == pytest.approx(1.0, abs=1e-12)

    def test_point_nine_over_half(self):
        assert margin_score(0.9, [0.5] * 16, [0.5] * 16) == pytest.approx(1.8, abs=1e-12)

    def test_difference_kind(self):
        assert margin_score(0.9, [0.5] * 4, [0.5] * 4, "difference") == pytest.approx(0.4, abs=1e-12)

    def test_random_k4_matches_one_liner(self, rng):
        for _ in range(50):
            c = rng.uniform(0.1, 1)
            nx, ny = rng.uniform(0.1, 1, 4), rng.uniform(0.1, 1, 4)
            oracle = eq1_margin(c, nx, ny)
            assert margin_score(c, list(nx), list(ny)) == pytest.approx(oracle, rel=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateDenominator):
            margin_score(0.5, [0.0] * 3, [0.0] * 3)
        with pytest.raises(DegenerateDenominator):
            margin_score(0.5, [-0.2] * 3, [0.1] * 3)

    def test_length_mismatch(self):
        with pytest.raises(PolymineError):
            margin_score(0.5, [0.1, 0.2], [0.1])

    @given(
        st.floats(0.01, 1.0),
        st.lists(st.floats(0.01, 1.0), min_size=1, max_size=16),
        st.floats(1e-3, 1e3),
    )
    def test_ratio_scale_invariance(self, c, nn, lam):
        nx, ny = nn, list(reversed(nn))
        base = margin_score(c, nx, ny)
        scaled = margin_score(c * lam, [v * lam for v in nx], [v * lam for v in ny])
        assert scaled == pytest.approx(base, rel=1e-9)


class TestMine:
    def test_three_orthogonal_rows(self, rng):
        x = np.eye(3) + 0.01 * rng.standard_normal((3, 3))
        a, b = store(x, "s"), store(x, "t")
        pairs = mine(a, b, MiningConfig(k=1, threshold=1.0))
        # brute force: margin of all 9 (i, j) with k=1 neighbour sets
        m = a.matrix.as_f64() @ b.matrix.as_f64().T
        fwd_best = m.max(axis=1)
        bwd_best = m.max(axis=0)
        best_for_src = {}
        for i, j in itertools.product(range(3), range(3)):
            score = m[i, j] / (fwd_best[i] / 2 + bwd_best[j] / 2)
            best_for_src.setdefault(i, (score, j))
            if score > best_for_src[i][0]:
                best_for_src[i] = (score, j)
        assert all(j == i for i, (_, j) in best_for_src.items())
        assert {(p.src_id, p.tgt_id) for p in pairs} == {(f"s{i:04d}", f"t{i:04d}") for i in range(3)}
        assert all(p.direction == "both" for p in pairs)

    def test_infinite_threshold_is_empty(self, rng):
        x = rng.standard_normal((20, 8))
        assert mine(store(x, "s"), store(x, "t"), MiningConfig(k=3, threshold=math.inf)) == []

    def test_empty_store(self, rng):
        a = store(rng.standard_normal((3, 4)), "s")
        with pytest.raises(EmptyStore):
            mine(a, a.subset([]), MiningConfig(k=1))

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimMismatch):
            mine(store(rng.standard_normal((3, 4)), "s"), store(rng.standard_normal((3, 5)), "t"), MiningConfig(k=1))

    def test_self_mining_excludes_identity(self, rng):
        a = store(rng.standard_normal((30, 6)), "s")
        pairs = mine(a, a, MiningConfig(k=3, threshold=0.0))
        assert pairs and all(p.src_id != p.tgt_id for p in pairs)

    def test_output_invariants(self, rng):
        a, b = store(rng.standard_normal((80, 8)), "s"), store(rng.standard_normal((70, 8)), "t")
        pairs = mine(a, b, MiningConfig(k=4, threshold=0.9))
        keys = [(p.src_id, p.tgt_id) for p in pairs]
        assert len(keys) == len(set(keys))
        assert pairs == sorted(pairs, key=MinedPair.sort_key)
        assert all(p.margin > 0 and p.margin >= 0.9 for p in pairs)

    def test_threshold_monotone(self, rng):
        a, b = store(rng.standard_normal((60, 8)), "s"), store(rng.standard_normal((60, 8)), "t")
        prev = None
        for t in (0.8, 1.0, 1.05, 1.1, 1.2):
            cur = {(p.src_id, p.tgt_id) for p in mine(a, b, MiningConfig(k=4, threshold=t))}
            if prev is not None:
                assert cur <= prev
            prev = cur

    def test_exact_equals_full_probe_ivf(self, rng):
        a, b = store(rng.standard_normal((300, 12)), "s"), store(rng.standard_normal((250, 12)), "t")
        cfg = MiningConfig(k=5, threshold=1.0, n_cells=8, n_probe=8)
        assert format_pairs(mine(a, b, cfg, "exact")) == format_pairs(mine(a, b, cfg, "ivf"))

    def test_planted_small(self):
        from polymine.synthetic import planted_corpus

        pc = planted_corpus(n_planted=40, n_rows=400, dim=1024, seed=3)
        pairs = mine(
            text_store(pc.src, pc.src_ids, "en").normalized(),
            text_store(pc.tgt, pc.tgt_ids, "fr").normalized(),
            MiningConfig(),
        )
        got = {(p.src_id, p.tgt_id) for p in pairs}
        assert len(got & pc.gold) >= 0.99 * len(pc.gold)
        assert len(got - pc.gold) <= 0.01 * len(got)

    def test_cap_alignments(self):
        ps = [
            MinedPair("a", "x", 0.9, 1.5, "both"),
            MinedPair("a", "y", 0.9, 1.4, "forward"),
            MinedPair("b", "x", 0.9, 1.3, "backward"),
            MinedPair("b", "y", 0.9, 1.2, "both"),
        ]
        kept = cap_alignments(ps, 1)
        assert [(p.src_id, p.tgt_id) for p in kept] == [("a", "x"), ("b", "y")]

    def test_tsv_round_trip_and_determinism(self, rng, tmp_path):
        a, b = store(rng.standard_normal((50, 8)), "s"), store(rng.standard_normal((50, 8)), "t")
        cfg = MiningConfig(k=4, threshold=1.0)
        p1, p2 = tmp_path / "1.tsv", tmp_path / "2.tsv"
        write_pairs(p1, mine(a, b, cfg))
        write_pairs(p2, mine(a, b, cfg))
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_bytes().startswith(b"src_id\ttgt_id\tcosine\tmargin\tdirection\n")
        assert read_pairs(p1) == mine(a, b, cfg)


def seg(id_, start, end, uri="a.wav", parent="a.wav"):
    return SegmentRecord(id=id_, lang="en", modality="speech", audio_uri=uri, start_ms=start, end_ms=end, parent_id=parent)


class TestResolve:
    def test_disjoint_both_kept(self):
        segs = {"p": seg("p", 0, 1000), "q": seg("q", 1000, 2000)}
        pairs = [MinedPair("p", "t1", 0.9, 1.2, "both"), MinedPair("q", "t2", 0.9, 1.3, "both")]
        assert len(resolve_overlaps(pairs, segs)) == 2

    def test_two_short_beat_one_long(self):
        segs = {"A": seg("A", 0, 10_000), "B": seg("B", 0, 6000), "C": seg("C", 6000, 10_000)}
        pairs = [
            MinedPair("A", "t1", 0.9, 1.3, "both"),
            MinedPair("B", "t2", 0.9, 1.2, "both"),
            MinedPair("C", "t3", 0.9, 1.2, "both"),
        ]
        assert {p.src_id for p in resolve_overlaps(pairs, segs)} == {"B", "C"}

    def test_target_side_resolved(self):
        segs = {"A": seg("A", 0, 10_000, "b.wav", "b.wav"), "B": seg("B", 0, 6000, "b.wav", "b.wav")}
        pairs = [MinedPair("s1", "A", 0.9, 1.3, "both"), MinedPair("s2", "B", 0.9, 1.2, "both")]
        assert [p.tgt_id for p in resolve_overlaps(pairs, segs)] == ["A"]

    def test_text_ids_untouched(self):
        pairs = [MinedPair("x", "y", 0.9, 1.2, "both"), MinedPair("x2", "y", 0.9, 1.2, "both")]
        assert len(resolve_overlaps(pairs, {})) == 2

    def test_missing_span(self):
        bad = SegmentRecord(id="A", lang="en", modality="speech", audio_uri="a.wav", parent_id="a.wav")
        with pytest.raises(MissingSpan):
            resolve_overlaps([MinedPair("A", "t", 0.9, 1.2, "both")], {"A": bad})

    def test_dp_matches_brute_force_2_pow_12(self, rng):
        for _ in range(10):
            starts = rng.integers(0, 50, 12)
            ivs = [(float(s), float(s + rng.integers(1, 20)), float(rng.uniform(1, 3))) for s in starts]
            total, chosen = best_interval_set(ivs)
            assert total == pytest.approx(brute_independent_sets(ivs), abs=1e-12)
            assert total == pytest.approx(math.fsum(ivs[i][2] for i in chosen), abs=1e-12)

    @given(st.lists(st.tuples(st.integers(0, 100), st.integers(1, 30), st.floats(0.5, 5)), min_size=1, max_size=25))
    def test_resolved_nonoverlapping_and_beats_any_single(self, cands):
        segs, pairs = {}, []
        for i, (s, d, w) in enumerate(cands):
            sid = f"c{i:02d}"
            segs[sid] = seg(sid, s, s + d)
            pairs.append(MinedPair(sid, f"t{i:02d}", 0.9, w, "both"))
        out = resolve_overlaps(pairs, segs)
        spans = [(segs[p.src_id].start_ms, segs[p.src_id].end_ms) for p in out]
        for a, b in itertools.combinations(spans, 2):
            assert a[1] <= b[0] or b[1] <= a[0]
        assert math.fsum(p.margin for p in out) >= max(w for _, _, w in cands) - 1e-12


class TestCandidates:
    @staticmethod
    def units(n, uri="a.wav"):
        return [seg(f"u{i}", 1000 * i, 1000 * i + 800, uri, None) for i in range(n)]

    @pytest.mark.parametrize("n,m,expected", [(1, 3, 1), (8, 8, 36), (9, 8, 44)])
    def test_counts(self, n, m, expected):
        assert len(make_overlapping_candidates(self.units(n), m)) == expected

    def test_long_files_approach_eight_per_unit(self):
        n = 2000
        assert len(make_overlapping_candidates(self.units(n), 8)) / n == pytest.approx(8.0, abs=0.02)

    def test_candidates_are_distinct_spans(self):
        cands = make_overlapping_candidates(self.units(9), 8)
        assert len({(c.start_ms, c.end_ms) for c in cands}) == len(cands)

    @given(st.integers(1, 15), st.integers(1, 10))
    def test_count_formula(self, n, m):
        assert len(make_overlapping_candidates(self.units(n), m)) == sum(min(m, n - i) for i in range(n))

    def test_candidate_fields(self):
        cands = make_overlapping_candidates(self.units(3), 2)
        assert cands[1].id == "a.wav@0-1800"
        assert all(c.parent_id == "a.wav" for c in cands)

    def test_unsorted(self):
        u = self.units(3)
        with pytest.raises(UnsortedInput):
            make_overlapping_candidates([u[1], u[0], u[2]], 2)

    def test_overlapping(self):
        u = [seg("u0", 0, 1500, parent=None), seg("u1", 1000, 2000, parent=None)]
        with pytest.raises(OverlappingVadUnits):
            make_overlapping_candidates(u, 2)

    def test_segment_corpus_groups_by_uri(self):
        units = self.units(3, "a.wav") + self.units(2, "b.wav")[::-1]
        text = SegmentRecord(id="t", lang="en", modality="text", text="hi")
        out = segment_corpus(units + [text], 8)
        assert len(out) == 6 + 3 + 1

    def test_segment_corpus_missing_span(self):
        bad = SegmentRecord(id="u", lang="en", modality="speech", audio_uri="a.wav")
        with pytest.raises(MissingSpan):
            segment_corpus(self.units(2) + [bad], 2)
