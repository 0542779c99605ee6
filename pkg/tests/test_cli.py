import json
import subprocess
import sys

import numpy as np
import pytest

from polymine.cli import main
from polymine.embedding_store import EmbeddingMatrix, SegmentRecord, write_embeddings, write_id_order, write_segments
from polymine.miner import MiningConfig, format_pairs, mine, read_pairs
from polymine.pipeline import stage_seed
from polymine.synthetic import planted_corpus, text_store


@pytest.fixture(scope="module")
def planted(tmp_path_factory):
    root = tmp_path_factory.mktemp("planted")
    pc = planted_corpus(n_planted=40, n_rows=400, dim=1024, seed=5)
    for side, vecs, ids, lang in (("src", pc.src, pc.src_ids, "eng"), ("tgt", pc.tgt, pc.tgt_ids, "fra")):
        write_embeddings(root / f"{side}.emb", EmbeddingMatrix(vecs))
        write_id_order(root / f"{side}.ids", ids)
        write_segments(root / f"{side}.jsonl", [SegmentRecord(id=i, lang=lang, modality="text", text=i) for i in ids])
    return root, pc


def mine_args(root, *extra):
    args = ["mine"]
    for side in ("src", "tgt"):
        args += [f"--{side}-emb", str(root / f"{side}.emb"), f"--{side}-ids", str(root / f"{side}.ids"),
                 f"--{side}-meta", str(root / f"{side}.jsonl")]
    return args + list(extra)


def test_mine_matches_library_and_oracle(planted, tmp_path):
    root, pc = planted
    out = tmp_path / "pairs.tsv"
    assert main(mine_args(root, "--k", "16", "--threshold", "1.15", "--out", str(out))) == 0
    lib = mine(
        text_store(pc.src, pc.src_ids, "eng").normalized(),
        text_store(pc.tgt, pc.tgt_ids, "fra").normalized(),
        MiningConfig(k=16, threshold=1.15),
        seed=stage_seed(0, "mine"),
    )
    assert out.read_text() == format_pairs(lib)
    got = {(p.src_id, p.tgt_id) for p in read_pairs(out)}
    assert len(got & pc.gold) >= 0.99 * len(pc.gold) and len(got - pc.gold) <= 0.01 * len(got)


def test_workers_do_not_change_output(planted, tmp_path):
    root, _ = planted
    for w in ("1", "8"):
        assert main(mine_args(root, "--index", "ivf", "--workers", w, "--out", str(tmp_path / f"w{w}.tsv"))) == 0
    assert (tmp_path / "w1.tsv").read_bytes() == (tmp_path / "w8.tsv").read_bytes()


def test_config_section_supplies_defaults(planted, tmp_path):
    root, _ = planted
    cfg = {"mine": {"src_emb": "src.emb", "src_ids": "src.ids", "src_meta": "src.jsonl",
                    "tgt_emb": "tgt.emb", "tgt_ids": "tgt.ids", "tgt_meta": "tgt.jsonl", "threshold": 1.3}}
    (root / "cli.json").write_text(json.dumps(cfg))
    assert main(["mine", "--config", str(root / "cli.json"), "--out", str(tmp_path / "a.tsv")]) == 0
    assert all(p.margin >= 1.3 for p in read_pairs(tmp_path / "a.tsv"))
    # explicit flags beat the config section
    assert main(["mine", "--config", str(root / "cli.json"), "--threshold", "inf", "--out", str(tmp_path / "b.tsv")]) == 0
    assert read_pairs(tmp_path / "b.tsv") == []


def test_eval_bias(capsys):
    assert main(["eval-bias", "--masc", "49.9", "--fem", "45.0"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert round(doc["entries"][0]["delta_pct"], 1) == 10.9


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["mine", "--k", "4"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_data_error_exits_1_with_json(tmp_path, capsys):
    bad = tmp_path / "bad.emb"
    bad.write_bytes(b"NOPE" + b"\0" * 12)
    assert main(["eval-xsim", "--src-emb", str(bad), "--tgt-emb", str(bad)]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "BadMagic"

    assert main(["eval-bias", "--masc", "1", "--fem", "0"]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "NonPositiveDenominator"


def test_segment_and_chrf(tmp_path, capsys):
    units = [SegmentRecord(id=f"u{i}", lang="en", modality="speech", audio_uri="a.wav", start_ms=1000 * i,
                           end_ms=1000 * i + 500) for i in range(9)]
    write_segments(tmp_path / "u.jsonl", units)
    assert main(["segment", "--vad-units", str(tmp_path / "u.jsonl"), "--max-merge", "2"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 17
    (tmp_path / "c.tsv").write_text("id\thypothesis\treference\nx\tsame text\tsame text\n")
    assert main(["eval-chrf", "--input", str(tmp_path / "c.tsv")]) == 0
    assert json.loads(capsys.readouterr().out)["items"][0]["chrf"] == 100.0


def test_blaser_train_and_score(tmp_path, capsys):
    rng = np.random.default_rng(0)
    src = rng.standard_normal((64, 8))
    mt = src + 0.5 * rng.standard_normal((64, 8))
    for name, x in (("s", src), ("m", mt), ("r", src)):
        write_embeddings(tmp_path / f"{name}.emb", EmbeddingMatrix(x))
    (tmp_path / "y.txt").write_text("".join(f"{v}\n" for v in rng.uniform(1, 5, 64)))
    common = ["--src-emb", str(tmp_path / "s.emb"), "--mt-emb", str(tmp_path / "m.emb"), "--qe"]
    assert main(["blaser-train", *common, "--labels", str(tmp_path / "y.txt"), "--hidden", "8,4",
                 "--batch-size", "16", "--epochs", "2", "--out", str(tmp_path / "model.json")]) == 0
    capsys.readouterr()
    assert main(["blaser-score", *common, "--model", str(tmp_path / "model.json")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "row\tqe" and len(lines) == 65
    assert main(["blaser-score", "--src-emb", str(tmp_path / "s.emb"), "--mt-emb", str(tmp_path / "m.emb"),
                 "--ref-emb", str(tmp_path / "r.emb")]) == 0
    assert capsys.readouterr().out.startswith("row\tunsupervised\n")


def test_run_subcommand_and_module_entry(tmp_path):
    from polymine.synthetic import write_pipeline_fixture

    cfg = write_pipeline_fixture(tmp_path / "fx")
    proc = subprocess.run([sys.executable, "-m", "polymine", "run", "--config", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["status"] == "ok"
    (tmp_path / "fx" / "src.emb").unlink()
    proc = subprocess.run([sys.executable, "-m", "polymine", "run", "--config", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 1 and json.loads(proc.stderr)["error"] == "ConfigError"
