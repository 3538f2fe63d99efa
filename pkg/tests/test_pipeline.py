import csv
import json

import numpy as np
import pytest

from kinject import pipeline
from kinject.errors import ConfigError, DataError
from kinject.model import forward, init_params, mok_fuse
from kinject.pipeline import (VARIANTS, KnowledgeBuilder, PipelineConfig, ablate, generate_split,
                              load_config, load_pipeline_corpus, model_config, train_pipeline)
from kinject.synth import make_benchmark, make_toy_corpus

FAST = dict(model_preset="micro", model={"max_len": 24}, tokenizer={"min_freq": 1},
            train={"epochs": 2, "lr": 1e-3, "batch_size": 8})


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    make_benchmark(root, n_samples=36, seed=0)
    cfg_path = root / "config.yaml"
    import yaml
    cfg_path.write_text(yaml.safe_dump({"corpus": "corpus.jsonl", "embeddings": "embeddings.kift",
                                        "out_dir": "runs", "checkpoint": "runs/ckpt", **FAST}))
    cfg = load_config(cfg_path)
    corpus = load_pipeline_corpus(cfg)
    kb = KnowledgeBuilder(corpus, cfg, model_config(cfg, corpus).d_model)
    return cfg, corpus, kb


class TestConfig:
    def test_defaults(self):
        cfg = PipelineConfig()
        assert cfg.k == 3 and cfg.seeds == (0, 1, 2)

    def test_k_positive(self):
        with pytest.raises(ConfigError):
            PipelineConfig(k=0)

    def test_weights_need_concepts(self):
        with pytest.raises(ConfigError):
            PipelineConfig(use_concepts=False, use_weights=True)

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.yaml").write_text("corpus: a.jsonl\nbogus: 1\n")
        with pytest.raises(ConfigError, match="bogus"):
            load_config(tmp_path / "c.yaml")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")

    def test_relative_paths_resolve_against_config(self, tmp_path):
        (tmp_path / "c.yaml").write_text("corpus: data/x.jsonl\n")
        cfg = load_config(tmp_path / "c.yaml")
        assert cfg.resolve(cfg.corpus) == tmp_path / "data" / "x.jsonl"
        assert cfg.updated(k=1).resolve(cfg.corpus) == tmp_path / "data" / "x.jsonl"

    def test_hash(self):
        a = PipelineConfig()
        assert a.hash() == PipelineConfig().hash() and a.hash() != PipelineConfig(k=2).hash()

    def test_variants_valid(self):
        for name in VARIANTS:
            PipelineConfig().with_variant(name)


class TestKnowledge:
    def test_base_has_zero_knowledge(self, bench):
        cfg, corpus, kb = bench
        r = corpus.split("test")[0]
        s = kb.sample(r, cfg.with_variant("Base"))
        assert not s.K_c.any() and not s.K_t.any() and s.K_t.shape == (1, kb.d)
        np.testing.assert_array_equal(mok_fuse(s.features, s.K_c, s.K_t).data, s.features)

    def test_concepts_unweighted(self, bench):
        cfg, corpus, kb = bench
        s = kb.sample(corpus.split("test")[0], cfg.with_variant("+Concepts"))
        np.testing.assert_array_equal(s.K_c, kb.concept_features)

    def test_flag_algebra(self, bench):
        cfg, corpus, kb = bench
        mcfg = model_config(cfg, corpus)
        params = init_params(mcfg, 0)
        r = corpus.split("test")[1]
        full = kb.sample(r, cfg)
        assert full.K_t.shape[0] >= 1 and full.K_c.any()
        prefix = [1] + full.target[:5]
        for name, zc, zt in (("+We_Conp", False, True), ("+Triplet", True, False), ("Base", True, True)):
            s = kb.sample(r, cfg.with_variant(name))
            K_c = np.zeros_like(full.K_c) if zc else full.K_c
            K_t = np.zeros_like(full.K_t) if zt else full.K_t
            a = forward(params, mcfg, s.features, s.K_c, s.K_t, prefix).data
            b = forward(params, mcfg, full.features, K_c, K_t, prefix).data
            np.testing.assert_array_equal(a, b)

    def test_train_queries_exclude_self(self, bench):
        cfg, corpus, kb = bench
        for r in corpus.split("train"):
            hits = kb.retrieve(r)
            assert r.id not in hits.ids and len(hits.ids) == cfg.k

    def test_test_queries_hit_train_only(self, bench):
        cfg, corpus, kb = bench
        train_ids = {r.id for r in corpus.split("train")}
        for r in corpus.split("test"):
            assert set(kb.retrieve(r).ids) <= train_ids

    def test_retrieval_finds_same_class(self, bench):
        # the synthetic embeddings cluster by finding, so neighbours share the finding sentence
        cfg, corpus, kb = bench
        r = corpus.split("test")[0]
        finding = set(r.tokens)
        for rid in kb.retrieve(r).ids:
            assert len(set(corpus.get(rid).tokens) & finding) > 0

    def test_missing_embeddings_named(self, bench, tmp_path):
        cfg, corpus, _ = bench
        bad = cfg.updated(embeddings=str(tmp_path / "missing.kift"))
        with pytest.raises(DataError, match="missing.kift"):
            KnowledgeBuilder(corpus, bad, 32)

    def test_k_too_large(self, bench):
        cfg, corpus, _ = bench
        with pytest.raises(ConfigError):
            KnowledgeBuilder(corpus, cfg.updated(k=10_000), 32)

    def test_imported_triplets(self, bench, tmp_path):
        cfg, corpus, _ = bench
        rid = corpus.split("train")[0].id
        path = tmp_path / "t.jsonl"
        path.write_text(json.dumps({"report_id": rid, "entity": "mass", "category": "noun",
                                    "position": None, "exist": "exist"}) + "\n")
        kb = KnowledgeBuilder(corpus, cfg.updated(triplets=str(path)), 32)
        assert [t.entity for t in kb.triplets[rid]] == [("mass",)]
        assert all(v == [] for k, v in kb.triplets.items() if k != rid)


class TestEndToEnd:
    def test_toy_overfit_reproduces_report(self, tmp_path):
        make_toy_corpus(tmp_path / "toy.jsonl")
        cfg = load_config(None, corpus=str(tmp_path / "toy.jsonl"), k=1, model_preset="micro",
                          tokenizer={"min_freq": 1},
                          train={"epochs": 150, "lr": 3e-3, "weight_decay": 0.0, "batch_size": 4})
        result, mcfg, kb = train_pipeline(cfg, out_dir=tmp_path / "ckpt", seed=0)
        rows = generate_split(cfg, split="train", corpus=kb.corpus, kb=kb, params=result.params, mcfg=mcfg)
        exact = sum(row["text"] == " ".join(kb.corpus.get(row["id"]).tokens) for row in rows)
        assert exact >= 7

    def test_generation_byte_identical(self, bench, tmp_path):
        cfg, _, _ = bench
        outs = []
        for run in ("a", "b"):
            train_pipeline(cfg, out_dir=tmp_path / run, seed=0, timing=False)
            generate_split(cfg, checkpoint=tmp_path / run, out_path=tmp_path / run / "gen.jsonl")
            outs.append((tmp_path / run / "gen.jsonl").read_bytes())
            outs.append((tmp_path / run / "train_log.csv").read_bytes())
        assert outs[0] == outs[2] and outs[1] == outs[3]

    def test_missing_checkpoint(self, bench, tmp_path):
        cfg, _, _ = bench
        with pytest.raises(DataError, match="nowhere"):
            generate_split(cfg, checkpoint=tmp_path / "nowhere")


class TestAblate:
    def test_table_structure(self, bench, tmp_path):
        cfg, _, _ = bench
        rows, errors = ablate(cfg.updated(train={**cfg.train, "epochs": 1}), out_dir=tmp_path, seeds=[0])
        assert errors == []
        per_seed = [r for r in rows if r["seed"] == 0]
        assert [r["variant"] for r in per_seed] == list(VARIANTS)
        with open(tmp_path / "ablation_summary.csv") as fh:
            summary = list(csv.DictReader(fh))
        assert [r["variant"] for r in summary] == list(VARIANTS)
        meta = json.loads((tmp_path / "ablation_meta.json").read_text())
        assert meta["config_hash"] == cfg.updated(train={**cfg.train, "epochs": 1}).hash()

    def test_failed_leg_is_reported(self, bench, tmp_path, monkeypatch):
        cfg, _, _ = bench
        real = pipeline.train_pipeline

        def flaky(vcfg, **kw):
            if not vcfg.use_concepts and vcfg.use_triplets:
                raise RuntimeError("boom")
            return real(vcfg, **kw)

        monkeypatch.setattr(pipeline, "train_pipeline", flaky)
        rows, errors = ablate(cfg.updated(train={**cfg.train, "epochs": 1}), out_dir=tmp_path, seeds=[0])
        assert [e["variant"] for e in errors] == ["+Triplet"] and "boom" in errors[0]["error"]
        assert {r["variant"] for r in rows} == set(VARIANTS) - {"+Triplet"}


def test_shipped_config_loads():
    from pathlib import Path
    cfg = load_config(Path(__file__).parent.parent / "configs" / "synthetic.yaml")
    assert cfg.k == 3 and cfg.model_preset == "desk" and cfg.train_config().lr == 1e-3
