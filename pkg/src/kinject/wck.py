"""Weighted concept knowledge: TF-IDF word scores, per-concept weights, K_c."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable

import numpy as np

from kinject.corpus import Corpus, Report
from kinject.errors import DataError, ShapeError, UnknownIdError

CATEGORIES = ("noun", "adjective")


@dataclass(frozen=True)
class Concept:
    name: tuple[str, ...]
    category: str

    @property
    def text(self) -> str:
        return " ".join(self.name)


@dataclass(frozen=True)
class ConceptPackage:
    concepts: tuple[Concept, ...]

    def __post_init__(self):
        names = [c.name for c in self.concepts]
        if len(set(names)) != len(names):
            raise DataError("concept names must be unique")
        for c in self.concepts:
            if not c.name or c.category not in CATEGORIES:
                raise DataError(f"bad concept {c!r}")

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)

    def __len__(self):
        return len(self.concepts)

    def __iter__(self):
        return iter(self.concepts)

    @classmethod
    def from_json(cls, items: list[dict]) -> "ConceptPackage":
        try:
            return cls(tuple(Concept(tuple(it["name"].lower().split()), it["category"]) for it in items))
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataError(f"malformed concept package: {exc}") from None

    def to_json(self) -> list[dict]:
        return [{"name": c.text, "category": c.category} for c in self.concepts]


def load_concepts(path=None) -> ConceptPackage:
    """Read a concept package; ``None`` gives the bundled 76-term default."""
    if path is None:
        text = resources.files("kinject.data").joinpath("concepts.json").read_text()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except FileNotFoundError:
            raise DataError(f"concept package not found: {path}") from None
    return ConceptPackage.from_json(json.loads(text))


@dataclass
class TfIdfTable:
    scores: dict[str, dict[str, float]]
    df: dict[str, int]
    n_reports: int
    counts: dict[str, dict[str, int]] = field(default_factory=dict, repr=False)

    def score(self, word: str, report_id: str) -> float:
        try:
            return self.scores[report_id].get(word, 0.0)
        except KeyError:
            raise UnknownIdError(f"report {report_id!r} is not in the TF-IDF table") from None

    def to_json(self) -> dict:
        return {
            "n_reports": self.n_reports,
            "df": dict(sorted(self.df.items())),
            "scores": {rid: dict(sorted(s.items())) for rid, s in self.scores.items()},
        }


def compute_tfidf(reports: Corpus | Iterable[Report]) -> TfIdfTable:
    """score(w, r) = tf(w, r) * ln(|R| / (1 + df(w))), unclamped."""
    reports = list(reports)
    if not reports:
        raise DataError("cannot compute TF-IDF over an empty corpus")
    counts = {r.id: Counter(r.tokens) for r in reports}
    df = Counter()
    for c in counts.values():
        df.update(c.keys())
    n = len(reports)
    idf = {w: math.log(n / (1 + k)) for w, k in df.items()}
    scores = {}
    for rid, c in counts.items():
        total = sum(c.values())
        scores[rid] = {w: (k / total) * idf[w] for w, k in c.items()}
    return TfIdfTable(scores, dict(df), n, {rid: dict(c) for rid, c in counts.items()})


def _occurs(seq: tuple[str, ...], tokens: tuple[str, ...]) -> bool:
    k = len(seq)
    return any(tokens[i:i + k] == seq for i in range(len(tokens) - k + 1))


def concept_weights(report_id: str, table: TfIdfTable, pkg: ConceptPackage, corpus: Corpus,
                    clamp: bool = True) -> np.ndarray:
    """Weight vector S_c (length N_c) for one report.

    A concept present as a contiguous token run gets the mean TF-IDF score of
    its tokens; absent concepts get 0. Negative means become 0 when ``clamp``.
    """
    tokens = corpus.get(report_id).tokens
    row = table.scores.get(report_id)
    if row is None:
        raise UnknownIdError(f"report {report_id!r} is not in the TF-IDF table")
    s = np.zeros(len(pkg))
    for k, concept in enumerate(pkg):
        if _occurs(concept.name, tokens):
            s[k] = sum(row[w] for w in concept.name) / len(concept.name)
    if clamp:
        np.maximum(s, 0.0, out=s)
    return s


def merge_test_weights(topk_ids: list[str], table: TfIdfTable, pkg: ConceptPackage, corpus: Corpus,
                       clamp: bool = True) -> np.ndarray:
    """Mean of the (masked, clamped) weight vectors of retrieved training reports."""
    if not topk_ids:
        raise ValueError("merge_test_weights needs at least one retrieved id")
    for rid in topk_ids:
        if corpus.get(rid).split != "train":
            raise DataError(f"retrieved report {rid!r} is not in the train split")
    vecs = [concept_weights(rid, table, pkg, corpus, clamp) for rid in topk_ids]
    return np.mean(vecs, axis=0)


def weighted_concept_knowledge(concept_features, weights) -> np.ndarray:
    """K_c = F_c scaled row-wise by S_c."""
    F = np.asarray(concept_features, dtype=np.float64)
    s = np.asarray(weights, dtype=np.float64)
    if F.ndim != 2 or s.shape != (F.shape[0],):
        raise ShapeError(f"weighted_concept_knowledge: F_c {F.shape} vs S_c {s.shape}")
    return F * s[:, None]
