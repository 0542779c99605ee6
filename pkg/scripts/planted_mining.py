"""Recall and precision of margin mining on a planted synthetic corpus.

    python3 scripts/planted_mining.py --rows 5000 --planted 500 --dim 1024
"""

import argparse
import time

from polymine.miner import MiningConfig, mine
from polymine.synthetic import planted_corpus, text_store


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=5000)
    ap.add_argument("--planted", type=int, default=500)
    ap.add_argument("--dim", type=int, default=1024)
    ap.add_argument("--pair-cos", type=float, default=0.95)
    ap.add_argument("--background-cos", type=float, default=0.3)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--index", choices=("exact", "ivf"), default="exact")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    pc = planted_corpus(args.planted, args.rows, args.dim, args.pair_cos, args.background_cos, args.seed)
    src = text_store(pc.src, pc.src_ids, "src").normalized()
    tgt = text_store(pc.tgt, pc.tgt_ids, "tgt").normalized()
    print(f"{'threshold':>9}  {'pairs':>6}  {'recall':>7}  {'spurious':>8}")
    t0 = time.perf_counter()
    pairs = mine(src, tgt, MiningConfig(k=args.k, threshold=0.0), args.index, args.seed, args.workers)
    elapsed = time.perf_counter() - t0
    for t in (1.0, 1.06, 1.1, 1.15, 1.2, 1.3, 1.5):
        got = {(p.src_id, p.tgt_id) for p in pairs if p.margin >= t}
        recall = len(got & pc.gold) / len(pc.gold)
        spurious = len(got - pc.gold) / max(len(got), 1)
        print(f"{t:9.2f}  {len(got):6d}  {recall:7.4f}  {spurious:8.4f}")
    print(f"mining time {elapsed:.1f}s ({args.index}, {args.workers} worker(s))")


if __name__ == "__main__":
    main()
