"""Synthetic knowledge-planted benchmark.

Each sample has one finding class. The report states the finding, but the
sample's image features are drawn from a small pool of seeded matrices chosen
independently of the finding, so they neither reveal the class nor identify
the sample. The class is only visible in the retrieval embeddings, which
cluster by class. A model
can therefore name the finding only through the retrieved reports (triplet
knowledge) or the retrieved concept weights.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from kinject.corpus import assign_splits
from kinject.retrieval import EmbeddingStore, save_embeddings

FINDINGS = {
    "normal": "the lungs are clear .",
    "opacity": "there is opacity in the right lower lobe .",
    "effusion": "there is effusion in the left lung base .",
    "nodule": "there is a nodule in the right upper lobe .",
    "pneumothorax": "there is pneumothorax in the left apex .",
    "cardiomegaly": "the cardiac silhouette is enlarged .",
}

HEART = ("the heart size is normal .", "the cardiomediastinal silhouette is normal .")
BONES = ("no acute bony abnormality .", "the osseous structures are intact .")


def make_report(finding: str, rng) -> str:
    heart = "" if finding == "cardiomegaly" else HEART[rng.integers(len(HEART))]
    tail = "no pneumothorax ." if finding != "pneumothorax" else "no pleural effusion ."
    parts = [heart, FINDINGS[finding], tail, BONES[rng.integers(len(BONES))]]
    return " ".join(p for p in parts if p)


def make_benchmark(out_dir, n_samples: int = 120, seed: int = 0, emb_dim: int = 32,
                   emb_noise: float = 0.35, feature_pool: int = 8, findings=None) -> dict:
    """Write ``corpus.jsonl``, ``embeddings.kift`` (+ id sidecar) under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    findings = list(findings or FINDINGS)
    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((len(findings), emb_dim))
    ids = [f"s{i:04d}" for i in range(n_samples)]
    splits = assign_splits(ids, (0.7, 0.1, 0.2), seed)
    records, vecs = [], []
    for i, rid in enumerate(ids):
        cls = i % len(findings)
        records.append({"id": rid, "text": make_report(findings[cls], rng), "split": splits[rid],
                        "feature_source": {"seed": 100000 + seed * 100 + int(rng.integers(feature_pool))}})
        vecs.append(prototypes[cls] / np.linalg.norm(prototypes[cls])
                    + emb_noise * rng.standard_normal(emb_dim) / np.sqrt(emb_dim))
    with open(out_dir / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    save_embeddings(EmbeddingStore(ids, np.stack(vecs)), out_dir / "embeddings.kift")
    return {"corpus": str(out_dir / "corpus.jsonl"), "embeddings": str(out_dir / "embeddings.kift"),
            "n_samples": n_samples, "findings": findings}


TOY_REPORTS = [
    "the heart size is normal . the lungs are clear .",
    "no pneumothorax . the cardiac silhouette is enlarged .",
    "there is opacity in the right lower lobe .",
    "small left pleural effusion . no pneumothorax .",
    "the lungs are hyperexpanded . no focal consolidation .",
    "there is a nodule in the right upper lobe .",
    "the mediastinum is widened . the lungs are clear .",
    "no acute cardiopulmonary abnormality .",
]


def make_toy_corpus(path) -> list[dict]:
    """Eight distinct training reports with seeded features (overfitting checks)."""
    records = [{"id": f"t{i}", "text": text, "split": "train", "feature_source": {"seed": 500 + i}}
               for i, text in enumerate(TOY_REPORTS)]
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return records
