"""Command-line interface.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure. Structured
output goes to stdout as JSON, tables to CSV files, logs to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from kinject import __version__, kernels
from kinject.errors import KinjectError
from kinject.pipeline import (METRIC_FIELDS, KnowledgeBuilder, ablate, evaluate_files,
                              generate_split, load_config, load_pipeline_corpus, model_config,
                              train_pipeline)

log = logging.getLogger("kinject")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _cfg(args, **extra):
    over = dict(extra)
    if getattr(args, "corpus", None):
        over["corpus"] = str(Path(args.corpus).resolve())
    if args.seed is not None:
        over["seed"] = args.seed
    return load_config(args.config, **over)


def _out(args, cfg) -> Path:
    out = Path(args.out) if args.out else cfg.resolve(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args):
    from kinject.synth import make_benchmark, make_toy_corpus

    out = Path(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    if args.toy:
        make_toy_corpus(out / "toy.jsonl")
        _emit({"corpus": str(out / "toy.jsonl"), "n_samples": 8})
    else:
        _emit(make_benchmark(out, n_samples=args.n, seed=args.seed or 0))


def cmd_ingest(args):
    cfg = _cfg(args)
    corpus = load_pipeline_corpus(cfg)
    summary = {"n_reports": len(corpus), "vocab_size": len(corpus.vocab),
               "splits": {s: len(corpus.split(s)) for s in ("train", "val", "test")},
               "config_hash": cfg.hash()}
    if args.out:
        out = _out(args, cfg)
        (out / "vocab.json").write_text(json.dumps(corpus.vocab.to_json()) + "\n")
        summary["vocab_file"] = str(out / "vocab.json")
    _emit(summary)


def cmd_tfidf(args):
    from kinject.wck import compute_tfidf, concept_weights, load_concepts

    cfg = _cfg(args)
    corpus = load_pipeline_corpus(cfg)
    reports = corpus.split(args.split) if args.split else list(corpus)
    table = compute_tfidf(reports)
    if args.report_id:
        pkg = load_concepts(cfg.resolve(cfg.concepts))
        s = concept_weights(args.report_id, table, pkg, corpus, cfg.clamp_weights)
        _emit({"report_id": args.report_id,
               "weights": {c.text: float(w) for c, w in zip(pkg, s) if w > 0}})
    if args.dump:
        _emit(table.to_json())
    elif not args.report_id:
        _emit({"n_reports": table.n_reports, "n_words": len(table.df)})


def cmd_index(args):
    from kinject.retrieval import load_embeddings, save_embeddings, topk

    cfg = _cfg(args)
    corpus = load_pipeline_corpus(cfg)
    if args.action == "build":
        mcfg = model_config(cfg, corpus)
        kb = KnowledgeBuilder(corpus, cfg, mcfg.d_model, mcfg.max_triplets)
        path = Path(args.index) if args.index else _out(args, cfg) / "index.kift"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_embeddings(kb.query_store, path)
        _emit({"index": str(path), "n": len(kb.query_store), "d": kb.query_store.d})
        return
    if not args.id:
        raise UsageError("index query needs --id")
    if args.index:
        store = load_embeddings(args.index)
    else:
        mcfg = model_config(cfg, corpus)
        store = KnowledgeBuilder(corpus, cfg, mcfg.d_model, mcfg.max_triplets).query_store
    report = corpus.get(args.id)
    db = store.subset([r.id for r in corpus.split("train")])
    res = topk(db, store.vector(args.id), args.k, exclude=args.id if report.split == "train" else None)
    _emit({"query": args.id, "hits": [{"id": h.id, "score": h.score} for h in res.hits]})


def cmd_extract(args):
    from kinject.triplet import extract_triplets, load_lexicons, render_prompt, template_of

    cfg = _cfg(args)
    corpus = load_pipeline_corpus(cfg)
    lex = load_lexicons(cfg.resolve(cfg.lexicons))
    ids = [args.report_id] if args.report_id else corpus.ids
    out = []
    for rid in ids:
        trips = extract_triplets(corpus.get(rid), lex)
        entry = {"report_id": rid, "triplets": [t.to_json() for t in trips]}
        if args.dump_prompts:
            entry["prompts"] = [{"prompt": render_prompt(t), "template": template_of(t),
                                 "fallback": template_of(t) == "fallback"} for t in trips]
        out.append(entry)
    _emit(out if len(out) != 1 else out[0])


def cmd_train(args):
    cfg = _cfg(args)
    out = Path(args.out) if args.out else cfg.resolve(cfg.checkpoint)
    result, mcfg, _ = train_pipeline(cfg, out_dir=out, seed=args.seed)
    (out / "run.json").write_text(json.dumps({"config_hash": cfg.hash(), "config": cfg.to_dict(),
                                              "best_epoch": result.best_epoch,
                                              "best_val_loss": result.best_val}, indent=1) + "\n")
    _emit({"checkpoint": str(out), "best_epoch": result.best_epoch, "best_val_loss": result.best_val,
           "config_hash": cfg.hash()})


def cmd_generate(args):
    cfg = _cfg(args)
    out = _out(args, cfg)
    path = Path(args.output) if args.output else out / f"generated_{args.split}.jsonl"
    rows = generate_split(cfg, checkpoint=args.checkpoint, split=args.split, out_path=path)
    (path.parent / (path.name + ".meta.json")).write_text(
        json.dumps({"config_hash": cfg.hash(), "split": args.split, "n": len(rows)}, indent=1) + "\n")
    _emit({"output": str(path), "n": len(rows), "config_hash": cfg.hash()})


def cmd_evaluate(args):
    rep = evaluate_files(args.gen, args.ref)
    row = rep.as_row()
    if args.csv:
        path = Path(args.csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=[*METRIC_FIELDS, "n_samples"])
            w.writeheader()
            w.writerow({k: (f"{row[k]:.6f}" if isinstance(row[k], float) else row[k])
                        for k in w.fieldnames})
    _emit(rep.to_json())


def cmd_ablate(args):
    cfg = _cfg(args)
    if args.seeds:
        cfg = cfg.updated(seeds=tuple(args.seeds))
    out = Path(args.out) if args.out else None
    rows, errors = ablate(cfg, out_dir=out)
    _emit({"rows": [r for r in rows if r["seed"] == "mean"], "errors": errors,
           "config_hash": cfg.hash()})
    if errors:
        raise KinjectError(f"{len(errors)} ablation legs failed")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML pipeline config")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="kinject", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__} (kernels: {kernels.BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic benchmark corpus")
    p.add_argument("--n", type=int, default=120)
    p.add_argument("--toy", action="store_true", help="8-report overfitting corpus instead")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="load and summarize a corpus")
    p.add_argument("--corpus")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("tfidf", parents=[common], help="TF-IDF table and concept weights")
    p.add_argument("--corpus")
    p.add_argument("--split", choices=["train", "val", "test"])
    p.add_argument("--dump", action="store_true", help="print the full table as JSON")
    p.add_argument("--report-id")
    p.set_defaults(func=cmd_tfidf)

    p = sub.add_parser("index", parents=[common], help="build or query the retrieval index")
    p.add_argument("action", choices=["build", "query"])
    p.add_argument("--corpus")
    p.add_argument("--index", help="KIFT embedding file")
    p.add_argument("--id")
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("extract", parents=[common], help="extract triplets from reports")
    p.add_argument("--corpus")
    p.add_argument("--report-id")
    p.add_argument("--dump-prompts", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--corpus")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="generate reports for a split")
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--output", help="JSON-lines output path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="score generated against reference text")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--csv", help="write the metric row here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="run the five-variant ablation ladder")
    p.add_argument("--corpus")
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"kinject: {exc}", file=sys.stderr)
        return 1
    except KinjectError as exc:
        print(f"kinject: {exc}", file=sys.stderr)
        return exc.exit_code
    except (KeyError, ValueError, OSError) as exc:
        print(f"kinject: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
