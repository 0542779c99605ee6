"""Per-language LID score calibration with two class-conditional Gaussians.

A segment is kept when the posterior of a correct classification exceeds that of
an incorrect one, which reduces to ``score >= threshold`` at the decision
boundary between the two class means.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

from .embedding_store import SegmentRecord
from .errors import MissingLidScore, PolymineError

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6


@dataclass
class LidCalibration:
    lang: str
    mu_correct: float
    sigma_correct: float
    mu_incorrect: float
    sigma_incorrect: float
    prior_correct: float
    threshold: float
    fallback: Optional[str] = None  # why the threshold is not a fitted boundary, if it isn't

    def log_posterior_gap(self, s: float) -> float:
        """log p(correct, s) - log p(incorrect, s)."""
        return _log_joint(s, self.mu_correct, self.sigma_correct, self.prior_correct) - _log_joint(
            s, self.mu_incorrect, self.sigma_incorrect, 1.0 - self.prior_correct
        )


def _log_joint(s, mu, sigma, prior):
    return math.log(prior) - math.log(sigma) - 0.5 * ((s - mu) / sigma) ** 2


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    mu = math.fsum(xs) / n
    var = math.fsum((x - mu) ** 2 for x in xs) / (n - 1)
    return mu, max(math.sqrt(var), SIGMA_FLOOR)


def decision_boundary(mu_c, sd_c, mu_i, sd_i, prior_c) -> tuple[float, Optional[str]]:
    """Score where the two weighted Gaussian densities cross.

    Returns (threshold, fallback_reason). Solves a*s^2 + b*s + c = 0 from equating
    log densities; when two roots exist the one between the means is chosen.
    """
    prior_i = 1.0 - prior_c
    a = 1.0 / (2 * sd_i**2) - 1.0 / (2 * sd_c**2)
    b = mu_c / sd_c**2 - mu_i / sd_i**2
    c = mu_i**2 / (2 * sd_i**2) - mu_c**2 / (2 * sd_c**2) + math.log(prior_c * sd_i / (prior_i * sd_c))
    lo, hi = min(mu_c, mu_i), max(mu_c, mu_i)
    mid = (mu_c + mu_i) / 2
    scale = max(abs(b), abs(c), 1.0)
    if abs(a) <= 1e-12 * scale:
        if b == 0.0:
            return (-math.inf, "correct_dominates") if c >= 0 else (math.inf, "incorrect_dominates")
        return -c / b, None
    disc = b * b - 4 * a * c
    if disc < 0:
        # no crossing: the gap has the sign of `a` everywhere
        return (-math.inf, "correct_dominates") if a > 0 else (math.inf, "incorrect_dominates")
    sq = math.sqrt(disc)
    # numerically stable pair of roots
    q = -0.5 * (b + math.copysign(sq, b))
    roots = sorted({q / a, c / q} if q != 0 else {0.0})
    inside = [r for r in roots if lo <= r <= hi]
    if inside:
        return min(inside, key=lambda r: abs(r - mid)), None
    return min(roots, key=lambda r: abs(r - mid)), "root_outside_means"


def fit(dev: Iterable[tuple[str, float, bool]]) -> dict[str, LidCalibration]:
    by_lang: dict[str, tuple[list, list]] = defaultdict(lambda: ([], []))
    for lang, score, ok in dev:
        by_lang[lang][0 if ok else 1].append(float(score))
    out = {}
    for lang in sorted(by_lang):
        correct, incorrect = (sorted(v) for v in by_lang[lang])  # sorted: order-independent sums
        n = len(correct) + len(incorrect)
        prior = len(correct) / n
        if len(correct) < 2 or len(incorrect) < 2:
            log.warning("%s: %d correct / %d incorrect dev samples; accepting everything", lang, len(correct), len(incorrect))
            mu_c, sd_c = _mean_std(correct) if len(correct) >= 2 else (math.nan, math.nan)
            mu_i, sd_i = _mean_std(incorrect) if len(incorrect) >= 2 else (math.nan, math.nan)
            out[lang] = LidCalibration(lang, mu_c, sd_c, mu_i, sd_i, prior, -math.inf, "insufficient_samples")
            continue
        mu_c, sd_c = _mean_std(correct)
        mu_i, sd_i = _mean_std(incorrect)
        t, why = decision_boundary(mu_c, sd_c, mu_i, sd_i, prior)
        if why:
            log.warning("%s: threshold fallback (%s) -> %s", lang, why, t)
        out[lang] = LidCalibration(lang, mu_c, sd_c, mu_i, sd_i, prior, t, why)
    return out


def apply(
    records: Sequence[SegmentRecord], cal: dict[str, LidCalibration]
) -> tuple[list[SegmentRecord], list[SegmentRecord]]:
    accepted, rejected = [], []
    unknown = set()
    for r in records:
        if r.lid_score is None:
            raise MissingLidScore(f"record {r.id} has no lid_score")
        c = cal.get(r.lang)
        if c is None:
            unknown.add(r.lang)
            accepted.append(r)
        elif r.lid_score >= c.threshold:
            accepted.append(r)
        else:
            rejected.append(r)
    if unknown:
        log.warning("no calibration for languages %s; their records pass through", sorted(unknown))
    log.info("lid filter: %d accepted, %d rejected", len(accepted), len(rejected))
    return accepted, rejected


@dataclass
class LidEvalReport:
    f1_micro: float
    f1_macro: float
    coverage: float
    per_language: dict  # lang -> (precision, recall, f1, n)


def _f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def evaluate(
    labels: Sequence[tuple[str, str]], accepted_mask: Optional[Sequence[bool]] = None, count_rejected_as_errors=False
) -> LidEvalReport:
    """F1 of LID predictions over accepted items.

    By default rejected items leave both numerator and denominator. With
    `count_rejected_as_errors`, a rejected item is a missed prediction: it adds a
    false negative to its true language and nothing to precision.
    """
    if accepted_mask is None:
        accepted_mask = [True] * len(labels)
    if len(accepted_mask) != len(labels):
        raise PolymineError("labels and accepted_mask differ in length")
    tp, fp, fn, n = defaultdict(int), defaultdict(int), defaultdict(int), defaultdict(int)
    accepted = 0
    for (true, pred), ok in zip(labels, accepted_mask):
        if not ok:
            if count_rejected_as_errors:
                fn[true] += 1
                n[true] += 1
            continue
        accepted += 1
        n[true] += 1
        if true == pred:
            tp[true] += 1
        else:
            fp[pred] += 1
            fn[true] += 1
    # macro average runs over reference languages only
    langs = sorted(n)
    per = {}
    for lang in langs:
        p = tp[lang] / (tp[lang] + fp[lang]) if tp[lang] + fp[lang] else 0.0
        r = tp[lang] / (tp[lang] + fn[lang]) if tp[lang] + fn[lang] else 0.0
        per[lang] = (p, r, _f1(p, r), n[lang])
    TP, FP, FN = sum(tp.values()), sum(fp.values()), sum(fn.values())
    micro_p = TP / (TP + FP) if TP + FP else 0.0
    micro_r = TP / (TP + FN) if TP + FN else 0.0
    total = len(labels)
    return LidEvalReport(
        f1_micro=_f1(micro_p, micro_r),
        f1_macro=sum(v[2] for v in per.values()) / len(per) if per else 0.0,
        coverage=accepted / total if total else 1.0,
        per_language=per,
    )


def _json_float(x: float):
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return x


def _from_json_float(x):
    if x is None:
        return math.nan
    return float(x)


def save_calibration(path, cal: dict[str, LidCalibration]) -> None:
    rows = [{k: _json_float(v) if isinstance(v, float) else v for k, v in asdict(c).items()} for c in cal.values()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(sorted(rows, key=lambda r: r["lang"]), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_calibration(path) -> dict[str, LidCalibration]:
    with open(path, encoding="utf-8") as fh:
        rows = json.load(fh)
    out = {}
    for r in rows:
        for k in ("mu_correct", "sigma_correct", "mu_incorrect", "sigma_incorrect", "prior_correct", "threshold"):
            r[k] = _from_json_float(r[k])
        out[r["lang"]] = LidCalibration(**r)
    return out


def read_dev_tsv(path) -> list[tuple[str, float, bool]]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            flag = row["is_correct"].strip().lower()
            if flag not in ("1", "0", "true", "false"):
                raise PolymineError(f"bad is_correct value {row['is_correct']!r}")
            out.append((row["lang"], float(row["score"]), flag in ("1", "true")))
    return out
