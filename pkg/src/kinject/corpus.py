"""Report corpora: tokenization, vocabulary, JSON-lines I/O, image features."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from kinject.errors import DataError, DuplicateIdError, MalformedLineError, UnknownIdError
from kinject.kift import read_kift

SPLITS = ("train", "val", "test")
PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)

_DEID = re.compile(r"x{3,}")
_PERIOD = re.compile(r"(?<!\d)\.|\.(?!\d)")
_NON_TOKEN = re.compile(r"[^a-z0-9. ]+")


@dataclass(frozen=True)
class TokenizerConfig:
    drop_deid: bool = True
    min_freq: int = 3
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    split_seed: int = 1234


def tokenize(text: str, config: TokenizerConfig | None = None) -> list[str]:
    """Lowercase word tokens; periods outside numbers become ``"."`` tokens.

    >>> tokenize("No pneumothorax.")
    ['no', 'pneumothorax', '.']
    """
    config = config or TokenizerConfig()
    text = _PERIOD.sub(" . ", text.lower())
    text = _NON_TOKEN.sub(" ", text)
    out: list[str] = []
    for tok in text.split():
        if config.drop_deid and _DEID.fullmatch(tok):
            continue
        if tok == "." and (not out or out[-1] == "."):
            continue
        out.append(tok)
    return out


class Vocab:
    """Token <-> index map with pad/bos/eos/unk fixed at 0..3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    pad_index = 0
    bos_index = 1
    eos_index = 2
    unk_index = 3

    @classmethod
    def build(cls, token_lists: Iterable[Iterable[str]], min_freq: int = 1) -> "Vocab":
        counts = Counter(t for toks in token_lists for t in toks)
        kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED),
                      key=lambda t: (-counts[t], t))
        return cls(kept)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, self.unk_index) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if i == self.eos_index:
                break
            if i in (self.pad_index, self.bos_index):
                continue
            out.append(self.itos[i] if 0 <= i < len(self.itos) else UNK)
        return out

    def to_json(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_json(cls, itos: list[str]) -> "Vocab":
        if list(itos[:4]) != list(RESERVED):
            raise DataError("vocab file does not start with the reserved tokens")
        return cls(itos[4:])


@dataclass(frozen=True)
class Report:
    id: str
    text: str
    tokens: tuple[str, ...]
    split: str
    feature_source: dict | list = field(default_factory=dict, compare=True, hash=False)

    def to_json(self) -> dict:
        return {"id": self.id, "text": self.text, "split": self.split,
                "feature_source": self.feature_source}


@dataclass(frozen=True)
class Corpus:
    reports: tuple[Report, ...]
    vocab: Vocab
    config: TokenizerConfig = TokenizerConfig()

    def __post_init__(self):
        index = {}
        for i, r in enumerate(self.reports):
            if r.id in index:
                raise DuplicateIdError(f"duplicate report id {r.id!r}")
            index[r.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.reports)

    def __iter__(self):
        return iter(self.reports)

    def __contains__(self, report_id) -> bool:
        return report_id in self._index

    def get(self, report_id: str) -> Report:
        try:
            return self.reports[self._index[report_id]]
        except KeyError:
            raise UnknownIdError(f"unknown report id {report_id!r}") from None

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.reports]

    def split(self, name: str) -> list[Report]:
        return [r for r in self.reports if r.split == name]

    def subset(self, split: str) -> "Corpus":
        return Corpus(tuple(self.split(split)), self.vocab, self.config)


def assign_splits(ids: list[str], ratios=(0.7, 0.1, 0.2), seed: int = 1234) -> dict[str, str]:
    """Shuffle ids with a fixed seed and cut them by ``ratios`` (train/val/test)."""
    order = sorted(ids)
    np.random.default_rng(seed).shuffle(order)
    total = sum(ratios)
    n_train = int(round(len(order) * ratios[0] / total))
    n_val = int(round(len(order) * ratios[1] / total))
    out = {}
    for i, rid in enumerate(order):
        out[rid] = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
    return out


def _check_feature_source(fs, path, lineno):
    items = fs if isinstance(fs, list) else [fs]
    if not items:
        raise MalformedLineError(path, lineno, "empty feature_source list")
    for item in items:
        if not isinstance(item, dict) or len(item) != 1 or not (
            isinstance(item.get("path"), str)
            or (isinstance(item.get("seed"), int) and not isinstance(item.get("seed"), bool))
        ):
            raise MalformedLineError(path, lineno, f"bad feature_source {item!r}")


def build_corpus(records: Iterable[dict], config: TokenizerConfig | None = None) -> Corpus:
    config = config or TokenizerConfig()
    records = list(records)
    if any("split" not in rec for rec in records):
        auto = assign_splits([rec["id"] for rec in records], config.split_ratios, config.split_seed)
    else:
        auto = {}
    reports = []
    for rec in records:
        split = rec.get("split") or auto[rec["id"]]
        reports.append(Report(rec["id"], rec["text"], tuple(tokenize(rec["text"], config)), split,
                              rec.get("feature_source", {})))
    vocab = Vocab.build((r.tokens for r in reports if r.split == "train"), config.min_freq)
    return Corpus(tuple(reports), vocab, config)


def load_corpus(path, config: TokenizerConfig | None = None) -> Corpus:
    """Read a JSON-lines corpus; the vocabulary comes from the train split."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    records = []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLineError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise MalformedLineError(path, lineno, "expected a JSON object")
            if not isinstance(rec.get("id"), str) or not isinstance(rec.get("text"), str):
                raise MalformedLineError(path, lineno, "fields 'id' and 'text' must be strings")
            if "split" in rec and rec["split"] not in SPLITS:
                raise MalformedLineError(path, lineno, f"split must be one of {SPLITS}")
            if "feature_source" in rec:
                _check_feature_source(rec["feature_source"], path, lineno)
            if rec["id"] in seen:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate report id {rec['id']!r}")
            seen.add(rec["id"])
            records.append(rec)
    return build_corpus(records, config)


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus.reports:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def synth_image_features(seed: int, n_patches: int, d: int) -> np.ndarray:
    """Deterministic stand-in for CNN patch features, uniform in [-1, 1]."""
    if n_patches < 1 or d < 1:
        raise ValueError("n_patches and d must be >= 1")
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n_patches, d))


def load_features(report: Report, n_patches: int, d: int, root=None) -> np.ndarray:
    """Image features for ``report``; multiple sources (views) are stacked by rows."""
    sources = report.feature_source if isinstance(report.feature_source, list) else [report.feature_source]
    mats = []
    for src in sources:
        if "seed" in src:
            mats.append(synth_image_features(src["seed"], n_patches, d))
        elif "path" in src:
            p = Path(src["path"])
            if root is not None and not p.is_absolute():
                p = Path(root) / p
            if not p.exists():
                raise DataError(f"feature file not found: {p}")
            mats.append(read_kift(p))
        else:
            raise DataError(f"report {report.id!r} has no feature source")
    feats = np.vstack(mats)
    if feats.shape[1] != d:
        raise DataError(f"report {report.id!r}: features have {feats.shape[1]} columns, expected {d}")
    return feats
