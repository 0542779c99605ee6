"""Effect of per-language LID thresholds on F1 and coverage with synthetic scores.

    python3 scripts/lid_filtering.py --langs 20 --per-lang 2000
"""

import argparse
import random

from polymine.embedding_store import SegmentRecord
from polymine.lid_calibration import apply, evaluate, fit
from polymine.synthetic import lid_dev_scores


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--langs", type=int, default=20)
    ap.add_argument("--per-lang", type=int, default=2000)
    ap.add_argument("--prior", type=float, default=0.9)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    langs = [f"l{i:02d}" for i in range(args.langs)]
    cal = fit(lid_dev_scores(langs, args.per_lang, prior=args.prior, seed=args.seed))
    test = lid_dev_scores(langs, args.per_lang, prior=args.prior, seed=args.seed + 1)
    rnd = random.Random(args.seed)
    labels = [(l, l if ok else rnd.choice([x for x in langs if x != l])) for l, _, ok in test]
    recs = [SegmentRecord(id=str(i), lang=l, modality="text", text="-", lid_score=s) for i, (l, s, _) in enumerate(test)]
    accepted, _ = apply(recs, cal)
    keep = {r.id for r in accepted}
    mask = [r.id in keep for r in recs]
    base, filt = evaluate(labels), evaluate(labels, mask)
    strict = evaluate(labels, mask, count_rejected_as_errors=True)
    print(f"{'':24}{'micro-F1':>9}{'macro-F1':>9}{'coverage':>9}")
    for name, r in (("no filter", base), ("filtered", filt), ("filtered, rej = error", strict)):
        print(f"{name:24}{100 * r.f1_micro:9.1f}{100 * r.f1_macro:9.1f}{100 * r.coverage:9.1f}")
    t = sorted(c.threshold for c in cal.values())
    print(f"thresholds: min {t[0]:.3f}  median {t[len(t) // 2]:.3f}  max {t[-1]:.3f}")


if __name__ == "__main__":
    main()
