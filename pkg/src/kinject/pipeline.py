"""End-to-end pipeline: knowledge assembly per sample, training, generation,
and the five-variant ablation ladder."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from kinject import metrics
from kinject.corpus import Corpus, Report, TokenizerConfig, load_corpus, load_features
from kinject.errors import ConfigError, DataError
from kinject.model import (GenerationOutput, ModelConfig, Sample, TrainConfig, generate,
                           load_checkpoint, train)
from kinject.retrieval import EmbeddingStore, SyntheticEncoder, load_embeddings, topk
from kinject.triplet import encode_triplets, extract_triplets, load_lexicons, load_triplets
from kinject.wck import (compute_tfidf, concept_weights, load_concepts, merge_test_weights,
                         weighted_concept_knowledge)

log = logging.getLogger("kinject")

VARIANTS = {
    "Base": dict(use_concepts=False, use_weights=False, use_triplets=False),
    "+Concepts": dict(use_concepts=True, use_weights=False, use_triplets=False),
    "+We_Conp": dict(use_concepts=True, use_weights=True, use_triplets=False),
    "+Triplet": dict(use_concepts=False, use_weights=False, use_triplets=True),
    "Ours": dict(use_concepts=True, use_weights=True, use_triplets=True),
}


@dataclass(frozen=True)
class PipelineConfig:
    corpus: str = "corpus.jsonl"
    concepts: str | None = None
    lexicons: str | None = None
    embeddings: str | None = None
    triplets: str | None = None
    checkpoint: str = "runs/checkpoint"
    out_dir: str = "runs"
    k: int = 3
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2)
    n_patches: int = 8
    model_preset: str = "desk"
    model: dict = field(default_factory=dict)
    tokenizer: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    use_concepts: bool = True
    use_weights: bool = True
    use_triplets: bool = True
    clamp_weights: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.use_weights and not self.use_concepts:
            raise ConfigError("use_weights requires use_concepts")
        if self.n_patches < 1:
            raise ConfigError("n_patches must be >= 1")

    @property
    def base_dir(self) -> Path:
        return Path(getattr(self, "_base_dir", "."))

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def tokenizer_config(self) -> TokenizerConfig:
        kw = dict(self.tokenizer)
        if "split_ratios" in kw:
            kw["split_ratios"] = tuple(kw["split_ratios"])
        return TokenizerConfig(**kw)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": self.seed if seed is None else seed})

    def with_variant(self, name: str) -> "PipelineConfig":
        return self.updated(**VARIANTS[name])

    def updated(self, **changes) -> "PipelineConfig":
        new = replace(self, **changes)
        object.__setattr__(new, "_base_dir", self.base_dir)
        return new

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path=None, **overrides) -> PipelineConfig:
    """Read a YAML config; relative paths in it are resolved against its directory."""
    data = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        base = path.parent
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    if "seeds" in data:
        data["seeds"] = tuple(data["seeds"])
    try:
        cfg = PipelineConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    object.__setattr__(cfg, "_base_dir", base)
    return cfg


class KnowledgeBuilder:
    """Materializes F_I, K_c and K_t for any report of a corpus.

    Training reports weight concepts by their own TF-IDF scores and never
    retrieve themselves; other reports average the weights of their top-k
    retrieved training reports.
    """

    def __init__(self, corpus: Corpus, cfg: PipelineConfig, d_model: int, max_triplets: int = 32):
        self.corpus = corpus
        self.cfg = cfg
        self.d = d_model
        self.max_triplets = max_triplets
        self.train_reports = corpus.split("train")
        if not self.train_reports:
            raise DataError("corpus has no training reports")
        self.tfidf = compute_tfidf(self.train_reports)
        self.concepts = load_concepts(cfg.resolve(cfg.concepts))
        self.encoder = SyntheticEncoder(d_model)
        self.concept_features = self.encoder.encode_texts([c.text for c in self.concepts])
        self.lexicons = load_lexicons(cfg.resolve(cfg.lexicons))
        if cfg.triplets:
            path = cfg.resolve(cfg.triplets)
            if not path.exists():
                raise DataError(f"triplet file not found: {path}")
            imported = load_triplets(path)
            self.triplets = {r.id: imported.get(r.id, []) for r in self.train_reports}
        else:
            self.triplets = {r.id: extract_triplets(r, self.lexicons) for r in self.train_reports}
        self.query_store = self._retrieval_embeddings()
        self.database = self.query_store.subset([r.id for r in self.train_reports])
        if cfg.k > len(self.train_reports) - 1:
            raise ConfigError(f"k={cfg.k} needs at least {cfg.k + 1} training reports")

    def _retrieval_embeddings(self) -> EmbeddingStore:
        if self.cfg.embeddings:
            path = self.cfg.resolve(self.cfg.embeddings)
            store = load_embeddings(path)
            missing = [r.id for r in self.corpus if r.id not in store]
            if missing:
                raise DataError(f"{path}: no embedding for ids {missing[:5]}")
            return store
        vecs = [self.encoder.encode_image(self.features(r)) for r in self.corpus]
        return EmbeddingStore(self.corpus.ids, np.stack(vecs))

    def features(self, report: Report) -> np.ndarray:
        return load_features(report, self.cfg.n_patches, self.d, self.cfg.base_dir)

    def retrieve(self, report: Report):
        exclude = report.id if report.split == "train" else None
        return topk(self.database, self.query_store.vector(report.id), self.cfg.k, exclude=exclude)

    def concept_knowledge(self, report: Report, hits, cfg: PipelineConfig) -> np.ndarray:
        if not cfg.use_concepts:
            return np.zeros_like(self.concept_features)
        if not cfg.use_weights:
            weights = np.ones(len(self.concepts))
        elif report.split == "train":
            weights = concept_weights(report.id, self.tfidf, self.concepts, self.corpus, cfg.clamp_weights)
        else:
            weights = merge_test_weights(hits.ids, self.tfidf, self.concepts, self.corpus,
                                         cfg.clamp_weights)
        return weighted_concept_knowledge(self.concept_features, weights)

    def triplet_knowledge(self, hits, cfg: PipelineConfig):
        if not cfg.use_triplets:
            return np.zeros((1, self.d)), []
        return encode_triplets([self.triplets[i] for i in hits.ids], self.encoder, self.d,
                               self.max_triplets)

    def sample(self, report: Report, cfg: PipelineConfig | None = None) -> Sample:
        cfg = cfg or self.cfg
        hits = self.retrieve(report)
        K_t, prompts = self.triplet_knowledge(hits, cfg)
        return Sample(report.id, self.features(report), self.concept_knowledge(report, hits, cfg),
                      K_t, self.corpus.vocab.encode(report.tokens), prompts)


def model_config(cfg: PipelineConfig, corpus: Corpus) -> ModelConfig:
    overrides = dict(cfg.model)
    overrides.setdefault("n_concepts", len(load_concepts(cfg.resolve(cfg.concepts))))
    return ModelConfig.preset(cfg.model_preset, len(corpus.vocab), **overrides)


def load_pipeline_corpus(cfg: PipelineConfig) -> Corpus:
    return load_corpus(cfg.resolve(cfg.corpus), cfg.tokenizer_config())


def train_pipeline(cfg: PipelineConfig, out_dir=None, seed=None, corpus=None, timing=True):
    corpus = corpus or load_pipeline_corpus(cfg)
    mcfg = model_config(cfg, corpus)
    kb = KnowledgeBuilder(corpus, cfg, mcfg.d_model, mcfg.max_triplets)
    train_s = [kb.sample(r) for r in corpus.split("train")]
    val_s = [kb.sample(r) for r in corpus.split("val")]
    out_dir = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.checkpoint)
    result = train(train_s, val_s, mcfg, cfg.train_config(seed), out_dir=out_dir,
                   log=lambda row: log.info("epoch %(epoch)d train %(train_loss).4f val %(val_loss).4f", row),
                   timing=timing)
    return result, mcfg, kb


def run_pipeline(report: Report, cfg: PipelineConfig, params, mcfg: ModelConfig,
                 kb: KnowledgeBuilder) -> GenerationOutput:
    s = kb.sample(report, cfg)
    return generate(params, mcfg, s.features, s.K_c, s.K_t, kb.corpus.vocab)


def generate_split(cfg: PipelineConfig, checkpoint=None, split="test", out_path=None,
                   corpus=None, kb=None, params=None, mcfg=None):
    """Generate reports for a split; writes JSON-lines {id, text} when ``out_path``."""
    corpus = corpus or load_pipeline_corpus(cfg)
    if params is None:
        ckpt = Path(checkpoint) if checkpoint else cfg.resolve(cfg.checkpoint)
        if not ckpt.exists():
            raise DataError(f"checkpoint not found: {ckpt}")
        params, mcfg = load_checkpoint(ckpt, expect=model_config(cfg, corpus))
    kb = kb or KnowledgeBuilder(corpus, cfg, mcfg.d_model, mcfg.max_triplets)
    out = []
    for r in corpus.split(split):
        gen = run_pipeline(r, cfg, params, mcfg, kb)
        out.append({"id": r.id, "text": gen.text})
    if out_path is not None:
        write_jsonl(out, out_path)
    return out


def write_jsonl(rows, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_texts(path) -> dict[str, str]:
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    rec = json.loads(line)
                    out[rec["id"]] = rec["text"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    raise DataError(f"{path}:{lineno}: expected {{id, text}}") from None
    return out


def evaluate_files(gen_path, ref_path) -> metrics.MetricReport:
    gen = read_texts(gen_path)
    ref = read_texts(ref_path)
    missing = sorted(set(gen) ^ set(ref))
    if missing:
        raise DataError(f"generated and reference ids differ: {missing[:5]}")
    ids = sorted(ref)
    return metrics.evaluate([gen[i] for i in ids], [ref[i] for i in ids])


METRIC_FIELDS = ["bleu_1", "bleu_2", "bleu_3", "bleu_4", "meteor", "rouge_l", "cider"]


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


def ablate(cfg: PipelineConfig, out_dir=None, seeds=None, variants=None):
    """Train and evaluate each ablation variant for each seed.

    Writes ``ablation.csv`` (one row per variant and seed, then one ``mean``
    row per variant) and ``ablation_summary.csv`` (the mean rows only).
    Returns ``(rows, errors)``; a failing leg is reported, not fatal.
    """
    out_dir = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.out_dir) / "ablation"
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(seeds if seeds is not None else cfg.seeds)
    variants = list(variants or VARIANTS)
    corpus = load_pipeline_corpus(cfg)
    test = corpus.split("test")
    if not test:
        raise DataError("corpus has no test reports")
    refs = [" ".join(r.tokens) for r in test]
    rows, errors = [], []
    for name in variants:
        vcfg = cfg.with_variant(name)
        for seed in seeds:
            leg = out_dir / name.replace("+", "plus_") / f"seed{seed}"
            try:
                result, mcfg, kb = train_pipeline(vcfg, out_dir=leg, seed=seed, corpus=corpus,
                                                  timing=False)
                gens = generate_split(vcfg, corpus=corpus, kb=kb, params=result.params, mcfg=mcfg,
                                      out_path=leg / "generated.jsonl")
                rep = metrics.evaluate([g["text"] for g in gens], refs)
                rows.append({"variant": name, "seed": seed, **{k: rep.as_row()[k] for k in METRIC_FIELDS},
                             "best_epoch": result.best_epoch})
                log.info("%s seed %d: BLEU-4 %.4f", name, seed, rep.bleu[3])
            except Exception as exc:  # a failed leg leaves the rest of the table intact
                errors.append({"variant": name, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
                log.error("%s seed %d failed: %s", name, seed, exc)
    means = []
    for name in variants:
        vals = [r for r in rows if r["variant"] == name]
        if vals:
            means.append({"variant": name, "seed": "mean",
                          **{k: float(np.mean([r[k] for r in vals])) for k in METRIC_FIELDS},
                          "best_epoch": ""})
    header = ["variant", "seed", *METRIC_FIELDS, "best_epoch"]
    for path, table in ((out_dir / "ablation.csv", rows + means), (out_dir / "ablation_summary.csv", means)):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=header)
            w.writeheader()
            for row in table:
                w.writerow({k: _fmt(v) for k, v in row.items()})
    meta = {"config_hash": cfg.hash(), "seeds": seeds, "variants": variants, "errors": errors}
    (out_dir / "ablation_meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    return rows + means, errors
