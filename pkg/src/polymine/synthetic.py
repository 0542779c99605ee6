"""Synthetic embedding corpora with known ground truth, for tests and experiments."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding_store import EmbeddingMatrix, EmbeddingStore, SegmentRecord, join


def random_unit(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _orthogonal_to(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    x = x - np.outer(x @ g, g)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def clustered(n: int, dim: int, n_clusters: int, noise: float, rng: np.random.Generator):
    """Unit vectors scattered around `n_clusters` random centres; returns (vectors, labels)."""
    centres = random_unit(n_clusters, dim, rng)
    labels = rng.integers(0, n_clusters, size=n)
    x = centres[labels] + noise * rng.standard_normal((n, dim)) / np.sqrt(dim)
    return x / np.linalg.norm(x, axis=1, keepdims=True), labels


@dataclass
class PlantedCorpus:
    src: np.ndarray
    tgt: np.ndarray
    src_ids: list
    tgt_ids: list
    gold: set  # {(src_id, tgt_id)}


def planted_corpus(
    n_planted: int = 500,
    n_rows: int = 5000,
    dim: int = 1024,
    pair_cos: float = 0.95,
    background_cos: float = 0.3,
    seed: int = 0,
) -> PlantedCorpus:
    """Two n_rows-row stores sharing n_planted parallel pairs.

    Every vector is sqrt(b)*g + sqrt(1-b)*z with g a shared direction and z unit,
    orthogonal to g, so unrelated vectors meet at cosine ~b. Planted partners share
    their z up to a perturbation chosen to give cosine ~pair_cos.
    """
    rng = np.random.default_rng(seed)
    g = random_unit(1, dim, rng)[0]
    b = background_cos
    rho = (pair_cos - b) / (1.0 - b)
    zs = _orthogonal_to(rng.standard_normal((n_rows, dim)), g)
    zt = _orthogonal_to(rng.standard_normal((n_rows, dim)), g)
    src_rows = rng.permutation(n_rows)[:n_planted]
    tgt_rows = rng.permutation(n_rows)[:n_planted]
    w = _orthogonal_to(rng.standard_normal((n_planted, dim)), g)
    w = w - (np.einsum("ij,ij->i", w, zs[src_rows]))[:, None] * zs[src_rows]
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    zt[tgt_rows] = rho * zs[src_rows] + np.sqrt(1 - rho**2) * w
    src = np.sqrt(b) * g + np.sqrt(1 - b) * zs
    tgt = np.sqrt(b) * g + np.sqrt(1 - b) * zt
    src_ids = [f"s{i:05d}" for i in range(n_rows)]
    tgt_ids = [f"t{i:05d}" for i in range(n_rows)]
    gold = {(src_ids[s], tgt_ids[t]) for s, t in zip(src_rows, tgt_rows)}
    return PlantedCorpus(src.astype(np.float32), tgt.astype(np.float32), src_ids, tgt_ids, gold)


def text_store(vectors: np.ndarray, ids, lang: str) -> EmbeddingStore:
    meta = [SegmentRecord(id=i, lang=lang, modality="text", text=i) for i in ids]
    return join(meta, EmbeddingMatrix(vectors), list(ids))


def lid_dev_scores(
    langs, n_per_lang: int, mu_c=0.85, sd_c=0.07, mu_i=0.55, sd_i=0.12, prior=0.9, seed: int = 0
) -> list[tuple[str, float, bool]]:
    """(lang, score, is_correct) triples from a per-language two-Gaussian model, clipped to [0, 1]."""
    rng = np.random.default_rng(seed)
    out = []
    for lang in langs:
        correct = rng.random(n_per_lang) < prior
        scores = np.where(correct, rng.normal(mu_c, sd_c, n_per_lang), rng.normal(mu_i, sd_i, n_per_lang))
        out.extend((lang, float(s), bool(c)) for s, c in zip(np.clip(scores, 0.0, 1.0), correct))
    return out


def write_pipeline_fixture(root, seed: int = 0, n_files: int = 3, units_per_file: int = 10, dim: int = 256) -> Path:
    """Write a small self-consistent corpus covering every pipeline stage; returns the config path.

    Source side: English text records. Target side: French speech candidates cut
    from synthetic VAD units, so the resolve stage has overlapping segments to
    choose between. A quarter of the rows are planted translation pairs.
    """
    from .embedding_store import write_embeddings, write_id_order, write_segments
    from .miner import segment_corpus

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    units = []
    for f in range(n_files):
        t = 0
        for u in range(units_per_file):
            dur = int(rng.integers(600, 3000))
            units.append(
                SegmentRecord(
                    id=f"f{f}u{u}", lang="fra", modality="speech", audio_uri=f"audio/f{f}.wav",
                    start_ms=t, end_ms=t + dur, lid_score=float(rng.uniform(0.5, 1.0)),
                )
            )
            t += dur + int(rng.integers(100, 800))
    cands = segment_corpus(units, 3)
    n = len(cands)
    pc = planted_corpus(n_planted=n // 4, n_rows=n, dim=dim, seed=seed)
    tgt_ids = [c.id for c in cands]
    rename = dict(zip(pc.tgt_ids, tgt_ids))
    gold = sorted((s, rename[t]) for s, t in pc.gold)

    src_meta = [
        SegmentRecord(id=i, lang="eng", modality="text", text=f"sentence {i}", lid_score=float(rng.uniform(0.5, 1.0)))
        for i in pc.src_ids
    ]
    for side, meta, vecs, ids in (("src", src_meta, pc.src, pc.src_ids), ("tgt", cands, pc.tgt, tgt_ids)):
        write_embeddings(root / f"{side}.emb", EmbeddingMatrix(vecs))
        write_id_order(root / f"{side}.ids", ids)
        write_segments(root / f"{side}.jsonl", meta)
    write_segments(root / "vad_units.jsonl", units)

    dev = lid_dev_scores(["eng", "fra"], 400, seed=seed)
    (root / "lid_dev.tsv").write_text(
        "lang\tscore\tis_correct\n" + "".join(f"{l}\t{s!r}\t{int(c)}\n" for l, s, c in dev), encoding="utf-8"
    )

    feats = []
    for k, (s, t) in enumerate(gold):
        c = next(c for c in cands if c.id == t)
        dur = c.duration_s
        feats.append(
            {
                "pair_id": f"{s}|{t}", "stage": "pooled", "audio_duration_s": dur,
                "subword_count": int(dur * 3) if k % 5 else 400, "text": f"sentence {s}",
                "src_toxic_count": 0, "tgt_toxic_count": 2 if k % 7 == 3 else 0,
            }
        )
    (root / "pair_features.jsonl").write_text("".join(json.dumps(f, sort_keys=True) + "\n" for f in feats), encoding="utf-8")

    (root / "tox_eng.txt").write_text("# toy list\nidiot\nshut up\n", encoding="utf-8")
    (root / "tox_fra.txt").write_text("idiot\ntais-toi\n", encoding="utf-8")
    items = [("i0", "hello there", "bonjour idiot"), ("i1", "you idiot", "espèce d'idiot"), ("i2", "fine", "bien")]
    (root / "etox_items.tsv").write_text(
        "id\tsource\toutput\n" + "".join("\t".join(r) + "\n" for r in items), encoding="utf-8"
    )

    xs = random_unit(60, 32, rng)
    xt = xs + rng.normal(0, 0.25, xs.shape)
    perm = rng.permutation(60)
    shuffled = np.empty_like(xt)
    shuffled[perm] = xt
    write_embeddings(root / "xsim_src.emb", EmbeddingMatrix(xs))
    write_embeddings(root / "xsim_tgt.emb", EmbeddingMatrix(shuffled))
    write_id_order(root / "xsim_gold.txt", [str(int(p)) for p in perm])

    hyps = [("h0", "The cat sat on the mat.", "A cat was sitting on the mat."), ("h1", "Hello world", "Hello, world!")]
    (root / "chrf.tsv").write_text("id\thypothesis\treference\n" + "".join("\t".join(r) + "\n" for r in hyps), encoding="utf-8")
    scores = [("a1", "g1", 40.0), ("a2", "g1", 60.0), ("b1", "g2", 10.0)]
    (root / "robustness.tsv").write_text(
        "id\tgroup_key\tscore\n" + "".join(f"{a}\t{b}\t{c}\n" for a, b, c in scores), encoding="utf-8"
    )
    (root / "bias.tsv").write_text("name\tmasc\tfem\neng-X\t49.9\t45.0\nX-eng\t54.3\t52.4\n", encoding="utf-8")

    config = {
        "seed": seed,
        "workers": 1,
        "out_dir": "out",
        "corpus": {
            side: {"embeddings": f"{side}.emb", "ids": f"{side}.ids", "meta": f"{side}.jsonl"} for side in ("src", "tgt")
        },
        "stages": {
            "lid-fit": {"dev": "lid_dev.tsv"},
            "lid-apply": {},
            "segment": {"vad_units": "vad_units.jsonl", "max_merge": 3},
            "mine": {"k": 4, "threshold": 1.15, "index": "ivf", "n_cells": 4, "n_probe": 2},
            "resolve": {},
            "filter": {"pairs": "pair_features.jsonl"},
            "export": {},
            "etox": {"items": "etox_items.tsv", "src_lexicon": "tox_eng.txt", "out_lexicon": "tox_fra.txt"},
            "eval-xsim": {"src": "xsim_src.emb", "tgt": "xsim_tgt.emb", "gold": "xsim_gold.txt"},
            "eval-chrf": {"input": "chrf.tsv"},
            "eval-robustness": {"input": "robustness.tsv"},
            "eval-bias": {"input": "bias.tsv"},
        },
    }
    path = root / "config.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
