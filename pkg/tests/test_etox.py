import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from polymine.errors import EmptyCorpus, PolymineError
from polymine.etox import (
    ToxicityLexicon,
    ToxicityReport,
    added_toxicity,
    corpus_rate,
    detect,
    load_lexicon,
    parse_lexicon_lines,
)

LEX = ToxicityLexicon("ca", frozenset({"merda", "idiota", "fill de puta"}))
FILLER = ["casa", "gat", "riu", "blau", "pa", "lluna", "mar"]


def report(n):
    return ToxicityReport("x", [("e", i) for i in range(n)])


def plant(rnd, entries, n_words=12, n_plants=3):
    """Sentence of filler words with entries inserted; returns (text, [(entry, offset)])."""
    words = [(w, None) for w in rnd.choices(FILLER, k=n_words)]
    for _ in range(n_plants):
        e = rnd.choice(entries)
        words.insert(rnd.randrange(len(words) + 1), (e, e))
    text, expected, pos = [], [], 0
    for w, e in words:
        if e is not None:
            expected.append((e, pos))
        text.append(w)
        pos += len(w) + 1
    return " ".join(text), sorted(expected, key=lambda m: (m[1], m[0]))


class TestDetect:
    def test_single_hit(self):
        r = detect("quina merda de dia", LEX)
        assert r.count == 1 and r.matched == [("merda", 6)]

    def test_misspelling_is_missed(self):
        assert detect("quina mereda de dia", LEX).count == 0

    def test_word_boundary(self):
        assert detect("merdadeu merdas", LEX).count == 0
        assert detect("merda, merda!", LEX).count == 2

    def test_multiword(self):
        assert detect("ets un fill   de puta", LEX).matched == [("fill de puta", 7)]

    def test_overlapping_distinct_entries(self):
        lex = ToxicityLexicon("en", frozenset({"bad", "bad dog", "dog"}))
        assert detect("a bad dog", lex).matched == [("bad", 2), ("bad dog", 2), ("dog", 6)]

    def test_case(self):
        assert detect("MERDA", LEX).count == 1

    def test_substring_nospace(self):
        lex = ToxicityLexicon("zh", frozenset({"笨 蛋"}), "substring_nospace")
        r = detect("你是 笨蛋 吗 笨 蛋", lex)
        assert r.matched == [("笨 蛋", 3), ("笨 蛋", 8)]

    def test_same_span_counted_once(self):
        lex = ToxicityLexicon("zh", frozenset({"aa"}), "substring_nospace")
        # overlapping occurrences at different offsets count separately, each span once
        assert detect("aaa", lex).matched == [("aa", 0), ("aa", 1)]

    def test_planted_fuzz_offsets(self):
        rnd = random.Random(17)
        entries = sorted(LEX.entries)
        for i in range(1000):
            text, expected = plant(rnd, entries, n_plants=rnd.randrange(0, 4))
            r = detect(text, LEX, f"i{i}")
            assert r.matched == expected

    @given(st.text(alphabet="abcmerdiotaжопа ", max_size=40))
    def test_case_insensitive(self, text):
        lex = ToxicityLexicon("xx", frozenset({"merda", "idiota", "жопа"}))
        assert detect(text.upper(), lex).matched == detect(text, lex).matched

    @given(st.text(alphabet="abmerdit ", max_size=40), st.sets(st.sampled_from(["ab", "merda", "rd", "it", "a b"]), min_size=1))
    def test_lexicon_growth_monotone(self, text, extra):
        small = ToxicityLexicon("xx", frozenset({"merda"}))
        big = ToxicityLexicon("xx", frozenset({"merda"} | extra))
        assert detect(text, big).count >= detect(text, small).count

    def test_bad_lexicon(self):
        with pytest.raises(PolymineError):
            ToxicityLexicon("xx", frozenset({"ok", "  "}))
        with pytest.raises(PolymineError):
            ToxicityLexicon("xx", frozenset({"ok"}), "fuzzy")


class TestAdded:
    @pytest.mark.parametrize("src,out,flag", [(0, 1, True), (1, 1, False), (2, 1, False), (0, 0, False)])
    def test_rule(self, src, out, flag):
        assert added_toxicity(report(src), report(out)) is flag

    @given(st.integers(0, 6), st.integers(0, 6))
    def test_never_both_directions(self, a, b):
        assert not (added_toxicity(report(a), report(b)) and added_toxicity(report(b), report(a)))


class TestCorpus:
    def test_clean(self):
        assert corpus_rate([("a", "casa", "gat")], LEX, LEX).rate == 0.0

    def test_identical_texts(self):
        items = [(str(i), "merda casa", "merda casa") for i in range(10)]
        assert corpus_rate(items, LEX, LEX).rate == 0.0

    def test_two_in_a_thousand(self):
        items = [(f"{i:04d}", "gat blau", "gat blau") for i in range(1000)]
        items[10] = ("0010", "gat", "gat merda")
        items[500] = ("0500", "merda", "merda idiota")
        items[700] = ("0700", "merda idiota", "idiota")  # deleted, not added
        res = corpus_rate(items, LEX, LEX)
        assert res.flagged == 2 and res.rate == pytest.approx(0.002)
        assert [d["id"] for d in res.per_item if d["added"]] == ["0010", "0500"]

    def test_empty(self):
        with pytest.raises(EmptyCorpus):
            corpus_rate([], LEX, LEX)


def test_lexicon_file(tmp_path):
    (tmp_path / "zh.txt").write_text("# comment\n笨蛋\n\n 傻瓜 \n", encoding="utf-8")
    (tmp_path / "zh.json").write_text(json.dumps({"lang": "cmn", "match_mode": "substring_nospace"}))
    lex = load_lexicon(tmp_path / "zh.txt")
    assert lex.lang == "cmn" and lex.match_mode == "substring_nospace" and lex.entries == {"笨蛋", "傻瓜"}
    assert parse_lexicon_lines(["#x", "", " a "]) == ["a"]
