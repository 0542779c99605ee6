"""chrF / chrF++, xsim error rate, speaker-robustness scores and the gender gap."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .embedding_store import EmbeddingMatrix
from .errors import CountMismatch, DimMismatch, EmptyInput, NonPositiveDenominator, PolymineError
from .vector_index import similarity, topk_rows

# ASCII punctuation split off word edges for word n-grams (chrF++ convention)
_PUNCTS = frozenset("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~")


@dataclass(frozen=True)
class ChrfConfig:
    char_order: int = 6
    word_order: int = 2
    beta: float = 2.0
    remove_spaces_for_char_ngrams: bool = True
    effective_order: bool = True
    lowercase: bool = False

    def __post_init__(self):
        if self.char_order < 1 or self.word_order < 0 or not self.beta > 0:
            raise PolymineError(f"invalid chrF config {self}")

    @property
    def signature(self) -> str:
        return (
            f"nrefs:1|case:{'lc' if self.lowercase else 'mixed'}|eff:{'yes' if self.effective_order else 'no'}"
            f"|nc:{self.char_order}|nw:{self.word_order}|space:{'no' if self.remove_spaces_for_char_ngrams else 'yes'}"
        )


CHRF = ChrfConfig(word_order=0)
CHRF_PP = ChrfConfig(word_order=2)


def _ngrams(seq, n) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def _words(text: str) -> list[str]:
    out = []
    for w in text.split():
        if len(w) > 1 and w[-1] in _PUNCTS:
            out += [w[:-1], w[-1]]
        elif len(w) > 1 and w[0] in _PUNCTS:
            out += [w[0], w[1:]]
        else:
            out.append(w)
    return out


def chrf_statistics(hypothesis: str, reference: str, cfg: ChrfConfig = CHRF_PP) -> list[tuple[int, int, int]]:
    """(hyp n-grams, ref n-grams, matches) per char order then per word order."""
    if cfg.lowercase:
        hypothesis, reference = hypothesis.lower(), reference.lower()
    if cfg.remove_spaces_for_char_ngrams:
        hc, rc = "".join(hypothesis.split()), "".join(reference.split())
    else:
        hc, rc = hypothesis.strip(), reference.strip()
    stats = []
    for n in range(1, cfg.char_order + 1):
        h, r = _ngrams(hc, n), _ngrams(rc, n)
        stats.append((sum(h.values()), sum(r.values()), sum((h & r).values())))
    hw, rw = _words(hypothesis), _words(reference)
    for n in range(1, cfg.word_order + 1):
        h, r = _ngrams(hw, n), _ngrams(rw, n)
        stats.append((sum(h.values()), sum(r.values()), sum((h & r).values())))
    return stats


def chrf(hypothesis: str, reference: str, cfg: ChrfConfig = CHRF_PP) -> float:
    """Sentence-level chrF(++) in [0, 100].

    Precision and recall are averaged over the n-gram orders that both sides
    have (all orders when effective_order is off, counting missing ones as 0),
    then combined into F-beta.
    """
    b2 = cfg.beta**2
    precs, recs = [], []
    for n_hyp, n_ref, n_match in chrf_statistics(hypothesis, reference, cfg):
        if n_hyp > 0 and n_ref > 0:
            precs.append(n_match / n_hyp)
            recs.append(n_match / n_ref)
        elif not cfg.effective_order:
            precs.append(0.0)
            recs.append(0.0)
    if not precs:
        return 0.0
    p, r = sum(precs) / len(precs), sum(recs) / len(recs)
    if p + r == 0:
        return 0.0
    return 100.0 * (1 + b2) * p * r / (b2 * p + r)


def corpus_chrf(pairs: Sequence[tuple[str, str]], cfg: ChrfConfig = CHRF_PP) -> list[float]:
    return [chrf(h, r, cfg) for h, r in pairs]


# -- xsim ------------------------------------------------------------------------


def xsim(
    src: EmbeddingMatrix,
    tgt: EmbeddingMatrix,
    gold: Optional[Sequence[int]] = None,
    mode: str = "cosine",
    k: int = 4,
) -> float:
    """Share of source rows whose best-scoring target row is not the gold one.

    `gold[i]` is the target row aligned with source row i (identity by default).
    mode "cosine" ranks by cosine; mode "margin" ranks by the ratio margin with
    k-nearest-neighbour averages taken in both directions.
    """
    if src.dim != tgt.dim:
        raise DimMismatch(f"src dim {src.dim} != tgt dim {tgt.dim}")
    if src.count != tgt.count:
        raise CountMismatch(f"{src.count} source rows vs {tgt.count} target rows")
    n = src.count
    if n == 0:
        return 0.0
    gold = np.arange(n) if gold is None else np.asarray(gold, dtype=np.int64)
    if sorted(gold.tolist()) != list(range(n)):
        raise PolymineError("gold must be a permutation of target rows")
    s = _unit_rows(src.as_f64())
    t = _unit_rows(tgt.as_f64())
    scores = similarity(s, t)
    if mode == "margin":
        kk = min(k, n)
        fwd = topk_rows(scores, kk)[1].mean(axis=1)
        bwd = topk_rows(scores.T.copy(), kk)[1].mean(axis=1)
        scores = scores / ((fwd[:, None] + bwd[None, :]) / 2.0)
    elif mode != "cosine":
        raise PolymineError(f"unknown xsim mode {mode!r}")
    best = topk_rows(scores, 1)[0][:, 0]
    return float(np.mean(best != gold))


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise PolymineError("zero-norm row in xsim input")
    return x / norms


# -- robustness and bias ------------------------------------------------------------


@dataclass
class GroupScores:
    key: str
    scores: list

    def __post_init__(self):
        if not self.scores:
            raise EmptyInput(f"group {self.key!r} has no scores")


def robustness(groups: Sequence[GroupScores], ddof: int = 1) -> dict:
    """Average by-group mean and average by-group coefficient of variation.

    The coefficient of variation only averages over groups with more than one
    score and a positive mean; every group counts toward the mean score.
    `ddof=1` is the sample standard deviation, `ddof=0` the population one.
    """
    if not groups:
        raise EmptyInput("no groups")
    means = [math.fsum(g.scores) / len(g.scores) for g in groups]
    cvs = []
    for g, mu in zip(groups, means):
        if len(g.scores) > 1 and mu > 0:
            var = math.fsum((x - mu) ** 2 for x in g.scores) / (len(g.scores) - ddof)
            cvs.append(math.sqrt(var) / mu)
    return {
        "chrf_ms": math.fsum(means) / len(means),
        "coefvar_ms": math.fsum(cvs) / len(cvs) if cvs else math.nan,
        "n_groups": len(groups),
        "n_cv_groups": len(cvs),
    }


def gender_delta(masc: float, fem: float) -> float:
    """Relative masculine-minus-feminine gap, (M - F) / min(M, F)."""
    den = min(masc, fem)
    if not den > 0:
        raise NonPositiveDenominator(f"min(M, F) = {den} must be positive")
    return (masc - fem) / den
