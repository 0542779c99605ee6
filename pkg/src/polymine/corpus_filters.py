"""Cleaning rules for paired speech/text training data."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional, Sequence

import regex

from .errors import MissingField, PolymineError

DEFAULT_SPECIAL_TOKENS = ("<silence>", "<no-speech>")

_EMOJI = regex.compile(r"\p{Extended_Pictographic}")
_SPACES = regex.compile(r"\s+")

STAGES = ("human_labeled", "pooled", "t2u")
_REQUIRED = {
    "human_labeled": ("audio_duration_s", "subword_count"),
    "pooled": ("audio_duration_s", "subword_count", "text", "src_toxic_count", "tgt_toxic_count"),
    "t2u": ("audio_duration_s", "subword_count"),
}


@dataclass(frozen=True)
class FilterConfig:
    max_subwords_human: int = 100
    max_subwords_pooled: int = 250
    max_subwords_per_sec: float = 5.0
    min_utt_s: float = 0.1
    max_utt_s: float = 50.0
    max_emoji_frac: float = 0.20
    max_punct_frac: float = 0.50
    max_space_frac: float = 0.50
    toxicity_imbalance_max: int = 1
    t2u_max_sec_per_token: float = 0.5
    special_tokens: tuple = DEFAULT_SPECIAL_TOKENS

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "special_tokens":
                continue
            if f.name == "toxicity_imbalance_max":
                if v < 0:
                    raise PolymineError("toxicity_imbalance_max must be non-negative")
            elif not v > 0:
                raise PolymineError(f"{f.name} must be positive, got {v}")
            if f.name.endswith("_frac") and v > 1:
                raise PolymineError(f"{f.name} must lie in (0, 1], got {v}")
        object.__setattr__(self, "special_tokens", tuple(self.special_tokens))

    @classmethod
    def from_dict(cls, d: dict) -> "FilterConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise PolymineError(f"unknown filter settings {sorted(unknown)}")
        return cls(**d)


@dataclass
class PairFeatures:
    pair_id: str
    stage: str
    audio_duration_s: Optional[float] = None
    subword_count: Optional[int] = None
    text: Optional[str] = None
    src_toxic_count: Optional[int] = None
    tgt_toxic_count: Optional[int] = None

    @classmethod
    def from_dict(cls, d: dict) -> "PairFeatures":
        return cls(**d)


@dataclass
class FilterVerdict:
    pair_id: str
    kept: bool
    failed_rules: list = field(default_factory=list)


def strip_special_tokens(text: str, tokens: Sequence[str] = DEFAULT_SPECIAL_TOKENS) -> str:
    for tok in tokens:
        text = text.replace(tok, " ")
    return _SPACES.sub(" ", text).strip()


def char_class_fractions(text: str) -> tuple[float, float, float]:
    """(emoji, punctuation, whitespace) shares of the code points in `text`."""
    n = len(text)
    if n == 0:
        return 0.0, 0.0, 0.0
    emoji = punct = space = 0
    for ch in text:
        if _EMOJI.match(ch):
            emoji += 1
        if unicodedata.category(ch).startswith("P"):
            punct += 1
        if ch.isspace():
            space += 1
    return emoji / n, punct / n, space / n


def approx_subword_count(text: str) -> int:
    """Whitespace token count. Approximate stand-in for a real subword tokenizer; fixtures only."""
    return len(text.split())


def filter_pair(pair: PairFeatures, cfg: FilterConfig = FilterConfig()) -> FilterVerdict:
    if pair.stage not in STAGES:
        raise PolymineError(f"{pair.pair_id}: unknown stage {pair.stage!r}")
    missing = [f for f in _REQUIRED[pair.stage] if getattr(pair, f) is None]
    if missing:
        raise MissingField(f"{pair.pair_id}: stage {pair.stage} needs {missing}")
    dur = pair.audio_duration_s
    n_sub = pair.subword_count
    failed = []
    if pair.stage == "human_labeled":
        if n_sub > cfg.max_subwords_human:
            failed.append("max_subwords_human")
        if dur <= 0 or n_sub / dur > cfg.max_subwords_per_sec:
            failed.append("max_subwords_per_sec")
    elif pair.stage == "pooled":
        if dur < cfg.min_utt_s:
            failed.append("min_duration")
        if dur > cfg.max_utt_s:
            failed.append("max_duration")
        if n_sub > cfg.max_subwords_pooled:
            failed.append("max_subwords_pooled")
        emoji, punct, space = char_class_fractions(pair.text)
        if emoji > cfg.max_emoji_frac:
            failed.append("max_emoji_frac")
        if punct > cfg.max_punct_frac:
            failed.append("max_punct_frac")
        if space > cfg.max_space_frac:
            failed.append("max_space_frac")
        if abs(pair.src_toxic_count - pair.tgt_toxic_count) > cfg.toxicity_imbalance_max:
            failed.append("toxicity_imbalance")
    else:
        if n_sub <= 0 or dur / n_sub > cfg.t2u_max_sec_per_token:
            failed.append("t2u_sec_per_token")
    return FilterVerdict(pair.pair_id, not failed, failed)


def filter_pairs(pairs: Iterable[PairFeatures], cfg: FilterConfig = FilterConfig()) -> list[FilterVerdict]:
    return sorted((filter_pair(p, cfg) for p in pairs), key=lambda v: v.pair_id)


def read_pairs_jsonl(path) -> list[PairFeatures]:
    with open(path, encoding="utf-8") as fh:
        return [PairFeatures.from_dict(json.loads(line)) for line in fh if line.strip()]


def format_verdicts(verdicts: Iterable[FilterVerdict]) -> str:
    lines = ["pair_id\tkept\tfailed_rules"]
    for v in verdicts:
        lines.append(f"{v.pair_id}\t{str(v.kept).lower()}\t{','.join(v.failed_rules)}")
    return "\n".join(lines) + "\n"


def read_verdicts(path) -> list[FilterVerdict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            if line.strip():
                pid, kept, rules = line.rstrip("\n").split("\t")
                out.append(FilterVerdict(pid, kept == "true", rules.split(",") if rules else []))
    return out
