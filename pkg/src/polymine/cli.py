"""Command-line entry point: one subcommand per pipeline operation, plus `run`.

Every subcommand accepts --config/--seed/--workers/--out. A --config JSON may hold
a section named after the subcommand whose keys become option defaults (keys use
the option's dest name, e.g. "src_emb"). Usage errors exit 2; data errors exit 1
with a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import blaser, corpus_filters, etox, lid_calibration, metrics, miner, pipeline
from .embedding_store import load_embeddings, load_store, read_id_order, read_segments, write_segments
from .errors import PolymineError
from .io import atomic_write_text, dumps, read_tsv


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config; for subcommands, a section named after the command supplies defaults")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None, help=f"worker threads (env {pipeline.WORKERS_ENV} also works)")
    p.add_argument("--out", help="output path (stdout when omitted)")


def _emit(args, text: str):
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


def _need(parser, args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        parser.error("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _workers(args) -> int:
    return pipeline.resolve_workers(args.workers, getattr(args, "config_workers", None))


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


# -- handlers ----------------------------------------------------------------------


def cmd_lid_fit(p, args):
    _need(p, args, "dev", "out")
    cal = lid_calibration.fit(lid_calibration.read_dev_tsv(args.dev))
    lid_calibration.save_calibration(args.out, cal)


def cmd_lid_apply(p, args):
    _need(p, args, "segments", "calibration", "out")
    cal = lid_calibration.load_calibration(args.calibration)
    acc, rej = lid_calibration.apply(read_segments(args.segments), cal)
    write_segments(args.out, acc)
    if args.rejected:
        write_segments(args.rejected, rej)
    sys.stdout.write(dumps({"accepted": len(acc), "rejected": len(rej)}))


def cmd_segment(p, args):
    _need(p, args, "vad_units")
    cands = miner.segment_corpus(read_segments(args.vad_units), args.max_merge)
    _emit(args, "".join(json.dumps(c.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for c in cands))


def cmd_mine(p, args):
    _need(p, args, "src_emb", "src_ids", "src_meta", "tgt_emb", "tgt_ids", "tgt_meta")
    src = load_store(args.src_emb, args.src_ids, args.src_meta).normalized()
    tgt = load_store(args.tgt_emb, args.tgt_ids, args.tgt_meta).normalized()
    cfg = miner.MiningConfig(
        k=args.k,
        threshold=args.threshold,
        margin_kind=args.margin_kind,
        max_alignments_per_segment=args.max_alignments,
        n_cells=args.n_cells,
        n_probe=args.n_probe,
    )
    seed = pipeline.stage_seed(_seed(args), "mine")
    pairs = miner.mine(src, tgt, cfg, index_mode=args.index, seed=seed, workers=_workers(args))
    _emit(args, miner.format_pairs(pairs))


def cmd_resolve(p, args):
    _need(p, args, "pairs", "segments")
    segs = {}
    for path in args.segments:
        segs.update({r.id: r for r in read_segments(path)})
    _emit(args, miner.format_pairs(miner.resolve_overlaps(miner.read_pairs(args.pairs), segs)))


def cmd_filter(p, args):
    _need(p, args, "pairs")
    names = {f.name for f in fields(corpus_filters.FilterConfig)}
    settings = {k: v for k, v in vars(args).items() if k in names and v is not None}
    cfg = corpus_filters.FilterConfig.from_dict(settings)
    verdicts = corpus_filters.filter_pairs(corpus_filters.read_pairs_jsonl(args.pairs), cfg)
    _emit(args, corpus_filters.format_verdicts(verdicts))


def cmd_etox(p, args):
    _need(p, args, "items", "src_lexicon", "out_lexicon")
    rows = read_tsv(args.items, ("id", "source", "output"))
    res = etox.corpus_rate(
        [(r["id"], r["source"], r["output"]) for r in rows],
        etox.load_lexicon(args.src_lexicon),
        etox.load_lexicon(args.out_lexicon),
    )
    _emit(args, "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in res.per_item))
    summary = dumps({"flagged": res.flagged, "total": len(rows), "rate": res.rate})
    if args.out:
        sys.stdout.write(summary)
    else:
        sys.stderr.write(summary)


def _blaser_inputs(args):
    src, mt = load_embeddings(args.src_emb).data, load_embeddings(args.mt_emb).data
    ref = load_embeddings(args.ref_emb).data if args.ref_emb else None
    unit = lambda x: x / np.linalg.norm(x.astype(np.float64), axis=1, keepdims=True)  # noqa: E731
    return unit(src), unit(mt), (unit(ref) if ref is not None else None)


def _blaser_features(p, args, src, mt, ref):
    if args.qe:
        return blaser.features_qe(src, mt)
    if ref is None:
        p.error("supervised BLASER needs --ref-emb (or pass --qe)")
    return blaser.features_supervised(src, mt, ref)


def cmd_blaser_score(p, args):
    _need(p, args, "src_emb", "mt_emb")
    src, mt, ref = _blaser_inputs(args)
    if args.model:
        model = blaser.load_model(args.model)
        model.clamp_output = args.clamp or model.clamp_output
        scores = model.predict(_blaser_features(p, args, src, mt, ref))
        kind = "qe" if args.qe else "supervised"
    else:
        if ref is None:
            p.error("unsupervised BLASER needs --ref-emb")
        scores = blaser.score_unsupervised(src, mt, ref)
        kind = "unsupervised"
    lines = [f"row\t{kind}"] + [f"{i}\t{float(s)!r}" for i, s in enumerate(np.atleast_1d(scores))]
    _emit(args, "\n".join(lines) + "\n")


def cmd_blaser_train(p, args):
    _need(p, args, "src_emb", "mt_emb", "labels", "out")
    src, mt, ref = _blaser_inputs(args)
    x = _blaser_features(p, args, src, mt, ref)
    y = np.array([float(v) for v in read_id_order(args.labels)])
    cfg = blaser.TrainConfig(
        hidden=tuple(int(h) for h in str(args.hidden).split(",")),
        dropout=args.dropout,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        lr=args.lr,
        seed=pipeline.stage_seed(_seed(args), "blaser-train"),
    )
    model, losses = blaser.train(x, y, cfg)
    model.metadata["root_seed"] = _seed(args)
    model.metadata["variant"] = "qe" if args.qe else "supervised"
    blaser.save_model(args.out, model)
    sys.stdout.write(dumps({"steps": len(losses), "first_loss": losses[0], "last_loss": losses[-1]}))


def cmd_eval_xsim(p, args):
    _need(p, args, "src_emb", "tgt_emb")
    gold = [int(x) for x in read_id_order(args.gold)] if args.gold else None
    err = metrics.xsim(load_embeddings(args.src_emb), load_embeddings(args.tgt_emb), gold, mode=args.mode, k=args.k)
    _emit(args, dumps({"xsim": err, "mode": args.mode, "k": args.k if args.mode == "margin" else None}))


def cmd_eval_chrf(p, args):
    _need(p, args, "input")
    cfg = metrics.ChrfConfig(
        char_order=args.char_order, word_order=args.word_order, beta=args.beta, lowercase=args.lowercase
    )
    _emit(args, dumps(pipeline.chrf_report(read_tsv(args.input, ("id", "hypothesis", "reference")), cfg)))


def cmd_eval_robustness(p, args):
    _need(p, args, "input")
    rows = read_tsv(args.input, ("id", "group_key", "score"))
    if not rows:
        raise PolymineError("no scores in input")
    _emit(args, dumps(pipeline.robustness_report(rows, ddof=args.ddof)))


def cmd_eval_bias(p, args):
    if args.input:
        rows = read_tsv(args.input, ("name", "masc", "fem"))
        entries = [{"name": r["name"], "masc": float(r["masc"]), "fem": float(r["fem"])} for r in rows]
    else:
        _need(p, args, "masc", "fem")
        entries = [{"name": "input", "masc": args.masc, "fem": args.fem}]
    _emit(args, dumps(pipeline.bias_report(entries)))


def cmd_run(p, args):
    _need(p, args, "config")
    summary = pipeline.run(args.config, seed=args.seed, workers=args.workers, out=args.out)
    sys.stdout.write(dumps({"status": "ok", "stages": summary}))


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polymine", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        _common(sp)
        sp.set_defaults(func=fn)
        return sp

    sp = add("lid-fit", cmd_lid_fit, "fit per-language LID thresholds from a dev TSV (lang, score, is_correct)")
    sp.add_argument("--dev")

    sp = add("lid-apply", cmd_lid_apply, "keep segments whose LID score reaches their language threshold")
    sp.add_argument("--segments")
    sp.add_argument("--calibration")
    sp.add_argument("--rejected", help="optional JSONL path for rejected segments")

    sp = add("segment", cmd_segment, "emit overlapping candidate segments from VAD units")
    sp.add_argument("--vad-units")
    sp.add_argument("--max-merge", type=int, default=8)

    sp = add("mine", cmd_mine, "margin-criterion mining between two embedding stores")
    for side in ("src", "tgt"):
        sp.add_argument(f"--{side}-emb")
        sp.add_argument(f"--{side}-ids")
        sp.add_argument(f"--{side}-meta")
    sp.add_argument("--k", type=int, default=16)
    sp.add_argument("--threshold", type=float, default=1.15)
    sp.add_argument("--margin-kind", choices=("ratio", "difference"), default="ratio")
    sp.add_argument("--index", choices=("exact", "ivf"), default="exact")
    sp.add_argument("--n-cells", type=int)
    sp.add_argument("--n-probe", type=int)
    sp.add_argument("--max-alignments", type=int)

    sp = add("resolve-overlaps", cmd_resolve, "pick the best non-overlapping split per audio segment group")
    sp.add_argument("--pairs")
    sp.add_argument("--segments", nargs="+")

    sp = add("filter", cmd_filter, "apply cleaning rules to pair features (JSONL)")
    sp.add_argument("--pairs")

    sp = add("etox", cmd_etox, "added toxicity over a TSV of (id, source, output)")
    sp.add_argument("--items")
    sp.add_argument("--src-lexicon")
    sp.add_argument("--out-lexicon")

    for name, fn, helptext in (
        ("blaser-score", cmd_blaser_score, "BLASER scores for row-aligned embedding files"),
        ("blaser-train", cmd_blaser_train, "train a supervised or QE BLASER model"),
    ):
        sp = add(name, fn, helptext)
        sp.add_argument("--src-emb")
        sp.add_argument("--mt-emb")
        sp.add_argument("--ref-emb")
        sp.add_argument("--qe", action="store_true", help="reference-free features")
        if name == "blaser-score":
            sp.add_argument("--model")
            sp.add_argument("--clamp", action="store_true", help="clamp supervised output to [1, 5]")
        else:
            sp.add_argument("--labels", help="one score per line, row-aligned")
            sp.add_argument("--hidden", default="3072,1536")
            sp.add_argument("--dropout", type=float, default=0.5)
            sp.add_argument("--weight-decay", type=float, default=0.1)
            sp.add_argument("--batch-size", type=int, default=1024)
            sp.add_argument("--epochs", type=int, default=50)
            sp.add_argument("--lr", type=float, default=0.1)

    sp = add("eval-xsim", cmd_eval_xsim, "xsim error rate between row-aligned embedding files")
    sp.add_argument("--src-emb")
    sp.add_argument("--tgt-emb")
    sp.add_argument("--gold", help="optional file, line i = target row of source row i")
    sp.add_argument("--mode", choices=("cosine", "margin"), default="cosine")
    sp.add_argument("--k", type=int, default=4)

    sp = add("eval-chrf", cmd_eval_chrf, "sentence chrF/chrF++ over a TSV of (id, hypothesis, reference)")
    sp.add_argument("--input")
    sp.add_argument("--char-order", type=int, default=6)
    sp.add_argument("--word-order", type=int, default=2)
    sp.add_argument("--beta", type=float, default=2.0)
    sp.add_argument("--lowercase", action="store_true")

    sp = add("eval-robustness", cmd_eval_robustness, "chrF_MS and CoefVar_MS over a TSV of (id, group_key, score)")
    sp.add_argument("--input")
    sp.add_argument("--ddof", type=int, default=1, help="1 = sample SD (default), 0 = population SD")

    sp = add("eval-bias", cmd_eval_bias, "relative masculine/feminine gap")
    sp.add_argument("--masc", type=float)
    sp.add_argument("--fem", type=float)
    sp.add_argument("--input", help="TSV with columns name, masc, fem")

    add("run", cmd_run, "run the configured pipeline stages in order")
    return parser


def _apply_config(parser, args, argv):
    """Re-parse with the config section as defaults so explicit flags still win."""
    if not args.config or args.command == "run":
        return args
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise PolymineError(f"cannot read config {args.config}: {e}") from None
    section = dict(doc.get(args.command, doc))
    base = Path(args.config).resolve().parent
    for k, v in list(section.items()):
        if isinstance(v, str) and (k.endswith(("_emb", "_ids", "_meta", "_lexicon")) or k in ("dev", "segments", "calibration", "vad_units", "pairs", "items", "labels", "model", "gold", "input")):
            section[k] = str(base / v)
        elif k == "segments" and isinstance(v, list):
            section[k] = [str(base / s) for s in v]
    config_workers = section.pop("workers", None)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**section)
    args = parser.parse_args(argv)
    args.config_workers = config_workers
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _apply_config(parser, args, argv)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        args.func(subparser, args)
    except (PolymineError, OSError, ValueError, KeyError) as e:
        doc = e.to_dict() if isinstance(e, PolymineError) else {"error": type(e).__name__, "message": str(e)}
        sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
