"""Score a fixed set of sentence pairs with sacrebleu and freeze the values.

Run offline once; the test suite only reads the resulting JSON, so sacrebleu is
not a runtime or test dependency.

    python3 scripts/freeze_chrf_fixture.py tests/fixtures/chrf_reference.json
"""

import argparse
import json

from sacrebleu.metrics import CHRF

PAIRS = [
    ("The cat sat on the mat.", "The cat sat on the mat."),
    ("The cat sat on the mat.", "A cat was sitting on the mat."),
    ("aaaa", "zzzz"),
    ("Hello, world!", "Hello world"),
    ("I would like a cup of tea, please.", "Could I have a cup of tea?"),
    ("Der schnelle braune Fuchs springt.", "Der flinke braune Fuchs springt über den Hund."),
    ("Il pleut des cordes aujourd'hui.", "Il pleut beaucoup aujourd'hui."),
    ("", "Nothing was produced."),
    ("Something was produced.", ""),
    ("x", "x y"),
    ("Das ist gut", "das ist gut"),
    ("¿Dónde está la biblioteca?", "¿Dónde queda la biblioteca?"),
    ("Она читает книгу в парке.", "Она читала книгу в саду."),
    ("我们明天去北京。", "我们明天要去北京。"),
    ("The model (v2) scored 45.0 / 49.9 points.", "The model v2 scored 49.9 points."),
    ("one two three four five six seven", "seven six five four three two one"),
    ("New York-based firm's \"results\" were strong.", "The New York firm reported strong results."),
    ("a a a a a a", "a"),
    ("Tim Cook unveiled the new device on Monday.", "On Monday, Tim Cook presented the new device."),
    ("  leading and   trailing spaces  ", "leading and trailing spaces"),
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    args = ap.parse_args()
    chrf = CHRF(char_order=6, word_order=0, beta=2)
    chrfpp = CHRF(char_order=6, word_order=2, beta=2)
    rows = [
        {
            "hypothesis": h,
            "reference": r,
            "chrf": chrf.sentence_score(h, [r]).score,
            "chrf_pp": chrfpp.sentence_score(h, [r]).score,
        }
        for h, r in PAIRS
    ]
    doc = {"scorer": f"sacrebleu {__import__('sacrebleu').__version__}", "signature": str(chrfpp.get_signature()), "pairs": rows}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


if __name__ == "__main__":
    main()
