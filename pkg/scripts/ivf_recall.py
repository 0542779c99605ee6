"""IVF recall@k against exact search as a function of probe count and data shape.

    python3 scripts/ivf_recall.py --rows 10000 --dim 32
"""

import argparse
import time

import numpy as np

from polymine.embedding_store import EmbeddingMatrix, normalize
from polymine.synthetic import clustered
from polymine.vector_index import build_ivf, knn_exact_arrays, knn_ivf_arrays, recall_at_k


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=10_000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--clusters", type=int, default=100)
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    data = {
        "clustered": EmbeddingMatrix(clustered(args.rows, args.dim, args.clusters, args.noise, rng)[0], normalized=True),
        "uniform": normalize(EmbeddingMatrix(rng.standard_normal((args.rows, args.dim)))),
    }
    for name, m in data.items():
        exact, _ = knn_exact_arrays(m, m, args.k)
        index = build_ivf(m, seed=args.seed)
        print(f"{name}: {index.n_cells} cells, default probe {index.n_probe}")
        for probe in sorted({1, 2, 4, index.n_probe, 2 * index.n_probe, index.n_cells // 2, index.n_cells}):
            t0 = time.perf_counter()
            approx, _ = knn_ivf_arrays(index.with_probe(probe), m, args.k)
            print(f"  probe {probe:4d}  recall@{args.k} {recall_at_k(approx, exact):.4f}  {time.perf_counter() - t0:.2f}s")


if __name__ == "__main__":
    main()
