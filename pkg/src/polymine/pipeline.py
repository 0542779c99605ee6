"""Linear pipeline runner: configuration, stage execution, manifests.

Config is a single JSON document; see README.md for the full grammar. Relative
paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import corpus_filters, etox, lid_calibration, metrics, miner
from .embedding_store import (
    EmbeddingStore,
    load_embeddings,
    read_id_order,
    read_segments,
    write_segments,
    join,
)
from .errors import ConfigError, PolymineError
from .io import atomic_write_text, read_tsv, sha256_file, write_json

log = logging.getLogger(__name__)

STAGE_ORDER = (
    "lid-fit",
    "lid-apply",
    "segment",
    "mine",
    "resolve",
    "filter",
    "export",
    "etox",
    "eval-xsim",
    "eval-chrf",
    "eval-robustness",
    "eval-bias",
)
SIDES = ("src", "tgt")
WORKERS_ENV = "POLYMINE_WORKERS"

# config keys holding input file paths, per stage
_PATH_KEYS = {
    "lid-fit": ("dev",),
    "lid-apply": ("calibration",),
    "segment": ("vad_units",),
    "filter": ("pairs",),
    "etox": ("items", "src_lexicon", "out_lexicon"),
    "eval-xsim": ("src", "tgt", "gold"),
    "eval-chrf": ("input",),
    "eval-robustness": ("input",),
    "eval-bias": ("input",),
}
_SIDE_KEYS = ("embeddings", "ids", "meta")


def stage_seed(root: int, stage: str) -> int:
    """Independent per-stage seed derived from the root seed."""
    return int(np.random.SeedSequence([root, zlib.crc32(stage.encode())]).generate_state(1)[0])


def resolve_workers(cli: Optional[int], config: Optional[int]) -> int:
    if cli is not None:
        return max(1, cli)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    return max(1, int(config or 1))


@dataclass
class PipelineConfig:
    base_dir: Path
    out_dir: Path
    seed: int
    workers: int
    corpus: dict  # side -> {embeddings, ids, meta} as Paths
    stages: dict  # stage -> params, in STAGE_ORDER
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def load(cls, path, seed: Optional[int] = None, workers: Optional[int] = None, out: Optional[str] = None):
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
        base = path.resolve().parent
        return cls.from_dict(raw, base, seed=seed, workers=workers, out=out)

    @classmethod
    def from_dict(cls, raw: dict, base: Path, seed=None, workers=None, out=None):
        unknown = set(raw) - {"seed", "workers", "out_dir", "corpus", "stages"}
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        stages = raw.get("stages", {})
        bad = set(stages) - set(STAGE_ORDER)
        if bad:
            raise ConfigError(f"unknown stages {sorted(bad)}; valid stages are {list(STAGE_ORDER)}")

        def p(v):
            return None if v is None else (base / v)

        corpus = {}
        for side, side_cfg in raw.get("corpus", {}).items():
            if side not in SIDES:
                raise ConfigError(f"corpus side must be 'src' or 'tgt', got {side!r}")
            missing = [k for k in _SIDE_KEYS if k not in side_cfg]
            if missing:
                raise ConfigError(f"corpus.{side} lacks {missing}")
            corpus[side] = {k: p(side_cfg[k]) for k in _SIDE_KEYS}
        resolved = {}
        for name in STAGE_ORDER:
            if name not in stages:
                continue
            params = dict(stages[name] or {})
            for key in _PATH_KEYS.get(name, ()):
                if params.get(key) is not None:
                    params[key] = p(params[key])
            resolved[name] = params
        for name in ("mine", "resolve", "export", "lid-apply"):
            if name in resolved and set(corpus) != set(SIDES):
                raise ConfigError(f"stage {name} needs corpus.src and corpus.tgt")
        out_dir = Path(out) if out else p(raw.get("out_dir", "out"))
        return cls(
            base_dir=base,
            out_dir=out_dir,
            seed=int(raw.get("seed", 0) if seed is None else seed),
            workers=resolve_workers(workers, raw.get("workers")),
            corpus=corpus,
            stages=resolved,
            raw=raw,
        )

    def input_paths(self) -> list[Path]:
        paths = [v for side in self.corpus.values() for v in side.values()]
        for name, params in self.stages.items():
            for key in _PATH_KEYS.get(name, ()):
                if params.get(key) is not None:
                    paths.append(params[key])
        if "lid-apply" in self.stages and "lid-fit" not in self.stages and not self.stages["lid-apply"].get("calibration"):
            raise ConfigError("lid-apply needs a calibration file or a lid-fit stage")
        return paths

    def validate(self) -> None:
        missing = [str(p) for p in self.input_paths() if not p.exists()]
        # etox lexicon sidecars are optional; everything else must exist
        if missing:
            raise ConfigError(f"missing input files: {missing}")


class StageFailed(PolymineError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")

    def to_dict(self):
        return {"error": "StageFailed", "stage": self.stage, "cause": type(self.cause).__name__, "message": str(self.cause)}


class Runner:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = cfg.out_dir
        self.manifest_dir = self.out / "manifests"
        self.state: dict = {}

    # -- helpers -----------------------------------------------------------------

    def art(self, name: str) -> Path:
        return self.out / name

    def write_with(self, name: str, writer, *args) -> Path:
        path = self.art(name)
        tmp = path.with_name(path.name + ".tmp")
        writer(tmp, *args)
        os.replace(tmp, path)
        return path

    def load_side(self, side: str) -> EmbeddingStore:
        files = self.cfg.corpus[side]
        return join(read_segments(files["meta"]), load_embeddings(files["embeddings"]), read_id_order(files["ids"]))

    # -- stages ------------------------------------------------------------------

    def run_lid_fit(self, params, seed):
        dev = lid_calibration.read_dev_tsv(params["dev"])
        cal = lid_calibration.fit(dev)
        path = self.write_with("lid_calibration.json", lid_calibration.save_calibration, cal)
        self.state["calibration"] = cal
        fallbacks = sorted(c.lang for c in cal.values() if c.fallback)
        return {"lid_calibration": path}, {"languages": len(cal), "dev_items": len(dev), "fallbacks": fallbacks}, [params["dev"]]

    def run_lid_apply(self, params, seed):
        if "calibration" in self.state:
            cal = self.state["calibration"]
            inputs = []
        else:
            cal = lid_calibration.load_calibration(params["calibration"])
            inputs = [params["calibration"]]
        self.state["accepted"] = {}
        arts, counts = {}, {}
        for side in SIDES:
            recs = read_segments(self.cfg.corpus[side]["meta"])
            scored = [r for r in recs if r.lid_score is not None]
            # records without a score (e.g. text) are not subject to LID filtering
            acc, rej = lid_calibration.apply(scored, cal)
            unscored = [r for r in recs if r.lid_score is None]
            keep_ids = {r.id for r in acc} | {r.id for r in unscored}
            kept = [r for r in recs if r.id in keep_ids]
            self.state["accepted"][side] = kept
            arts[f"lid_accepted_{side}"] = self.write_with(f"lid_accepted.{side}.jsonl", write_segments, kept)
            counts[side] = {"accepted": len(acc), "rejected": len(rej), "unscored": len(unscored)}
            inputs.append(self.cfg.corpus[side]["meta"])
        return arts, counts, inputs

    def run_segment(self, params, seed):
        units = read_segments(params["vad_units"])
        cands = miner.segment_corpus(units, int(params.get("max_merge", 8)))
        path = self.write_with("candidates.jsonl", write_segments, cands)
        return {"candidates": path}, {"units": len(units), "candidates": len(cands)}, [params["vad_units"]]

    def run_mine(self, params, seed):
        stores = {}
        inputs = []
        for side in SIDES:
            store = self.load_side(side)
            if "accepted" in self.state:
                store = store.subset(r.id for r in self.state["accepted"][side])
            stores[side] = store
            inputs += list(self.cfg.corpus[side].values())
        cfg = miner.MiningConfig(
            k=int(params.get("k", 16)),
            threshold=float(params.get("threshold", 1.15)),
            margin_kind=params.get("margin_kind", "ratio"),
            max_alignments_per_segment=params.get("max_alignments_per_segment"),
            n_cells=params.get("n_cells"),
            n_probe=params.get("n_probe"),
        )
        if len(stores["src"]) == 0 or len(stores["tgt"]) == 0:
            pairs = []
        else:
            pairs = miner.mine(
                stores["src"].normalized(),
                stores["tgt"].normalized(),
                cfg,
                index_mode=params.get("index", "exact"),
                seed=seed,
                workers=self.cfg.workers,
            )
        self.state["pairs"] = pairs
        self.state["segments"] = {r.id: r for s in stores.values() for r in s.records}
        atomic_write_text(self.art("mined_pairs.tsv"), miner.format_pairs(pairs))
        counts = {"src_rows": len(stores["src"]), "tgt_rows": len(stores["tgt"]), "pairs": len(pairs)}
        return {"mined_pairs": self.art("mined_pairs.tsv")}, counts, inputs

    def _pairs_and_segments(self):
        if "pairs" in self.state:
            return self.state["pairs"], self.state["segments"]
        raise PolymineError("this stage needs the mine stage in the same run")

    def run_resolve(self, params, seed):
        pairs, segments = self._pairs_and_segments()
        resolved = miner.resolve_overlaps(pairs, segments)
        self.state["pairs"] = resolved
        atomic_write_text(self.art("resolved_pairs.tsv"), miner.format_pairs(resolved))
        return {"resolved_pairs": self.art("resolved_pairs.tsv")}, {"in": len(pairs), "out": len(resolved)}, []

    def run_filter(self, params, seed):
        fcfg = corpus_filters.FilterConfig.from_dict(params.get("config", {}))
        pairs = corpus_filters.read_pairs_jsonl(params["pairs"])
        verdicts = corpus_filters.filter_pairs(pairs, fcfg)
        self.state["rejected_pair_ids"] = {v.pair_id for v in verdicts if not v.kept}
        atomic_write_text(self.art("filter_verdicts.tsv"), corpus_filters.format_verdicts(verdicts))
        kept = sum(v.kept for v in verdicts)
        return {"filter_verdicts": self.art("filter_verdicts.tsv")}, {"pairs": len(verdicts), "kept": kept}, [params["pairs"]]

    def run_export(self, params, seed):
        pairs, segments = self._pairs_and_segments()
        rejected = self.state.get("rejected_pair_ids", set())
        lines = ["src_id\ttgt_id\tmargin\tsrc_lang\ttgt_lang\tsrc_ref\ttgt_ref"]
        n = 0
        for p in pairs:
            if pair_id(p.src_id, p.tgt_id) in rejected:
                continue
            s, t = segments[p.src_id], segments[p.tgt_id]
            lines.append(f"{p.src_id}\t{p.tgt_id}\t{p.margin!r}\t{s.lang}\t{t.lang}\t{_ref(s)}\t{_ref(t)}")
            n += 1
        atomic_write_text(self.art("export.tsv"), "\n".join(lines) + "\n")
        return {"export": self.art("export.tsv")}, {"pairs": n, "dropped_by_filter": len(pairs) - n}, []

    def run_etox(self, params, seed):
        items = [(r["id"], r["source"], r["output"]) for r in read_tsv(params["items"], ("id", "source", "output"))]
        lex_src = etox.load_lexicon(params["src_lexicon"])
        lex_out = etox.load_lexicon(params["out_lexicon"])
        if items:
            res = etox.corpus_rate(items, lex_src, lex_out)
            summary = {"flagged": res.flagged, "total": len(items), "rate": res.rate}
            per_item = res.per_item
        else:
            summary = {"flagged": 0, "total": 0, "rate": None}
            per_item = []
        atomic_write_text(
            self.art("etox_reports.jsonl"),
            "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in per_item),
        )
        write_json(self.art("etox_summary.json"), summary)
        arts = {"etox_reports": self.art("etox_reports.jsonl"), "etox_summary": self.art("etox_summary.json")}
        return arts, summary, [params["items"], params["src_lexicon"], params["out_lexicon"]]

    def run_eval_xsim(self, params, seed):
        src, tgt = load_embeddings(params["src"]), load_embeddings(params["tgt"])
        gold = None
        inputs = [params["src"], params["tgt"]]
        if params.get("gold"):
            gold = [int(x) for x in read_id_order(params["gold"])]
            inputs.append(params["gold"])
        mode = params.get("mode", "cosine")
        err = metrics.xsim(src, tgt, gold, mode=mode, k=int(params.get("k", 4)))
        result = {"xsim": err, "mode": mode, "count": src.count}
        write_json(self.art("eval_xsim.json"), result)
        return {"eval_xsim": self.art("eval_xsim.json")}, result, inputs

    def run_eval_chrf(self, params, seed):
        cfg = metrics.ChrfConfig(**{k: v for k, v in params.items() if k != "input"})
        rows = read_tsv(params["input"], ("id", "hypothesis", "reference"))
        result = chrf_report(rows, cfg)
        write_json(self.art("eval_chrf.json"), result)
        return {"eval_chrf": self.art("eval_chrf.json")}, {"items": len(rows)}, [params["input"]]

    def run_eval_robustness(self, params, seed):
        rows = read_tsv(params["input"], ("id", "group_key", "score"))
        result = robustness_report(rows, ddof=int(params.get("ddof", 1)))
        write_json(self.art("eval_robustness.json"), result)
        return {"eval_robustness": self.art("eval_robustness.json")}, {"items": len(rows)}, [params["input"]]

    def run_eval_bias(self, params, seed):
        if params.get("input"):
            rows = read_tsv(params["input"], ("name", "masc", "fem"))
            entries = [{"name": r["name"], "masc": float(r["masc"]), "fem": float(r["fem"])} for r in rows]
            inputs = [params["input"]]
        else:
            entries = params.get("entries", [])
            inputs = []
        result = bias_report(entries)
        write_json(self.art("eval_bias.json"), result)
        return {"eval_bias": self.art("eval_bias.json")}, {"entries": len(entries)}, inputs

    # -- driver ------------------------------------------------------------------

    def _mark_stale(self, after: str):
        later = STAGE_ORDER[STAGE_ORDER.index(after) :]
        for name in later:
            mpath = self.manifest_dir / f"{name}.json"
            if mpath.exists():
                doc = json.loads(mpath.read_text(encoding="utf-8"))
                if doc.get("status") == "ok":
                    doc["status"] = "stale"
                    write_json(mpath, doc)

    def run(self) -> dict:
        self.cfg.validate()
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest_dir.mkdir(parents=True, exist_ok=True)
        summary = {}
        for name, params in self.cfg.stages.items():
            seed = stage_seed(self.cfg.seed, name)
            fn = getattr(self, "run_" + name.replace("-", "_"))
            t0 = time.perf_counter()
            try:
                arts, counts, inputs = fn(params, seed)
            except Exception as e:  # noqa: BLE001 - every failure is reported with its stage
                self._mark_stale(name)
                write_json(
                    self.manifest_dir / f"{name}.json",
                    {"stage": name, "status": "failed", "error": type(e).__name__, "message": str(e), "config": params},
                )
                raise StageFailed(name, e) from e
            manifest = {
                "stage": name,
                "status": "ok",
                "seed": seed,
                "root_seed": self.cfg.seed,
                "workers": self.cfg.workers,
                "config": params,
                "inputs": {str(p): sha256_file(p) for p in inputs},
                "artifacts": {k: {"path": str(v), "sha256": sha256_file(v)} for k, v in arts.items()},
                "counts": counts,
                "wall_time_s": round(time.perf_counter() - t0, 6),
            }
            write_json(self.manifest_dir / f"{name}.json", manifest)
            summary[name] = counts
            log.info("stage %s ok: %s", name, counts)
        return summary


def pair_id(src_id: str, tgt_id: str) -> str:
    return f"{src_id}|{tgt_id}"


def _ref(rec) -> str:
    if rec.modality == "speech":
        span = f"@{rec.start_ms}-{rec.end_ms}" if rec.has_span else ""
        return f"{rec.audio_uri}{span}"
    return rec.text.replace("\t", " ").replace("\n", " ")


def chrf_report(rows, cfg: metrics.ChrfConfig) -> dict:
    items = [{"id": r["id"], "chrf": metrics.chrf(r["hypothesis"], r["reference"], cfg)} for r in rows]
    mean = math.fsum(i["chrf"] for i in items) / len(items) if items else None
    return {"config": cfg.__dict__, "signature": cfg.signature, "mean_sentence_chrf": mean, "items": items}


def robustness_report(rows, ddof: int = 1) -> dict:
    groups: dict[str, list] = {}
    for r in rows:
        groups.setdefault(r["group_key"], []).append(float(r["score"]))
    if not groups:
        return {"chrf_ms": None, "coefvar_ms": None, "n_groups": 0, "n_cv_groups": 0, "ddof": ddof}
    res = metrics.robustness([metrics.GroupScores(k, v) for k, v in sorted(groups.items())], ddof=ddof)
    return {**res, "ddof": ddof}


def bias_report(entries) -> dict:
    out = []
    for e in entries:
        d = metrics.gender_delta(float(e["masc"]), float(e["fem"]))
        out.append({**e, "delta": d, "delta_pct": 100.0 * d})
    return {"formula": "(M - F) / min(M, F)", "entries": out}


def run(config_path, seed=None, workers=None, out=None) -> dict:
    cfg = PipelineConfig.load(config_path, seed=seed, workers=workers, out=out)
    return Runner(cfg).run()
