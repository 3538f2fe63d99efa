"""Embedding store, cosine top-k retrieval, and the synthetic encoders."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from kinject import kernels
from kinject.corpus import tokenize
from kinject.errors import DataError, FormatError, ShapeError, UnknownIdError
from kinject.kift import read_kift, write_kift

NORM_TOL = 1e-6


def _unit(v, what="vector"):
    v = np.asarray(v, dtype=np.float64)
    n = float(np.sqrt(np.dot(v, v)))
    if n == 0.0:
        raise ValueError(f"{what} has zero norm")
    return v / n


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"cosine: dimension mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine: zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class Hit:
    id: str
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    hits: tuple[Hit, ...]

    @property
    def ids(self) -> list[str]:
        return [h.id for h in self.hits]

    @property
    def scores(self) -> list[float]:
        return [h.score for h in self.hits]

    def __len__(self):
        return len(self.hits)


class EmbeddingStore:
    """Unit-normalized rows keyed by id.

    Rows are rounded to float32 precision after normalization so that a
    save/load cycle through the KIFT format is lossless.
    """

    def __init__(self, ids, matrix):
        ids = [str(i) for i in ids]
        mat = np.asarray(matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != len(ids):
            raise ShapeError(f"EmbeddingStore: {len(ids)} ids vs matrix {mat.shape}")
        if len(set(ids)) != len(ids):
            raise DataError("EmbeddingStore: duplicate ids")
        norms = np.linalg.norm(mat, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("EmbeddingStore: zero-norm row")
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            mat = mat / norms[:, None]
        mat = mat.astype(np.float32).astype(np.float64)
        self.ids = tuple(ids)
        self.matrix = np.ascontiguousarray(mat)
        self.matrix.setflags(write=False)
        self.norms = np.sqrt(kernels.row_dots(self.matrix * self.matrix, np.ones(self.matrix.shape[1])))
        self._index = {rid: i for i, rid in enumerate(self.ids)}
        self._id_rank = np.argsort(np.argsort(np.array(self.ids, dtype=object)))

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, rid):
        return rid in self._index

    def __eq__(self, other):
        return (isinstance(other, EmbeddingStore) and self.ids == other.ids
                and np.array_equal(self.matrix, other.matrix))

    def vector(self, rid: str) -> np.ndarray:
        try:
            return self.matrix[self._index[rid]]
        except KeyError:
            raise UnknownIdError(f"id {rid!r} not in embedding store") from None

    def subset(self, ids) -> "EmbeddingStore":
        ids = list(ids)
        return EmbeddingStore(ids, np.stack([self.vector(i) for i in ids]))


def topk(store: EmbeddingStore, query, k: int = 3, exclude: str | None = None) -> RetrievalResult:
    """Exact top-k by cosine; ties go to the smaller id."""
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != store.d:
        raise ShapeError(f"topk: query dim {q.shape[0]} vs store dim {store.d}")
    q = _unit(q, "query")
    # divide by the stored norms: rows are unit only to float32 precision
    scores = kernels.row_dots(store.matrix, q) / store.norms
    keep = np.ones(len(store), dtype=bool)
    if exclude is not None and exclude in store:
        keep[store._index[exclude]] = False
    available = int(keep.sum())
    if k < 1 or k > available:
        raise ValueError(f"topk: k={k} but only {available} entries available")
    idx = np.flatnonzero(keep)
    order = idx[np.lexsort((store._id_rank[idx], -scores[idx]))][:k]
    return RetrievalResult(tuple(Hit(store.ids[i], float(np.clip(scores[i], -1.0, 1.0))) for i in order))


@lru_cache(maxsize=65536)
def _token_vector(token: str, d: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(d)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def synth_text_encode(text: str, d: int) -> np.ndarray:
    """Unit mean of per-token hash vectors (SHA-256 seeded PCG64 normals)."""
    if d < 1:
        raise ValueError("d must be >= 1")
    toks = tokenize(text)
    if not toks:
        raise ValueError("cannot encode empty text")
    return _unit(np.mean([_token_vector(t, d) for t in toks], axis=0), "text embedding")


class SyntheticEncoder:
    """Deterministic text/image encoder used when no external embeddings are given.

    ``encode_image`` mean-pools patch features; ``encode_text`` hashes tokens.
    """

    def __init__(self, d: int):
        self.d = d

    def encode_text(self, text: str) -> np.ndarray:
        return synth_text_encode(text, self.d)

    def encode_texts(self, texts) -> np.ndarray:
        return np.stack([self.encode_text(t) for t in texts]) if texts else np.zeros((0, self.d))

    def encode_image(self, features) -> np.ndarray:
        return _unit(np.asarray(features, dtype=np.float64).mean(axis=0), "image embedding")


def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".ids.json")


def save_embeddings(store: EmbeddingStore, path) -> None:
    write_kift(path, store.matrix)
    _sidecar(path).write_text(json.dumps(list(store.ids)) + "\n")


def load_embeddings(path) -> EmbeddingStore:
    path = Path(path)
    if not path.exists():
        raise DataError(f"embedding file not found: {path}")
    mat = read_kift(path)
    side = _sidecar(path)
    if not side.exists():
        raise FormatError(f"missing id sidecar {side}")
    ids = json.loads(side.read_text())
    if not isinstance(ids, list) or len(ids) != mat.shape[0]:
        raise FormatError(f"{side}: id list does not match {mat.shape[0]} rows")
    return EmbeddingStore(ids, mat)
