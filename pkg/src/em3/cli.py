"""Command-line entry point (``em3 <subcommand>``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .cache import OnlineEmbeddingCache, direct_embedder, fusion_fingerprint
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SynthConfig, generate, save
from .exceptions import EM3Error
from .experiment import DataContext, ExperimentConfig, run_experiment, run_suite
from .metrics import auc
from .training import predict

log = logging.getLogger("em3")


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=1))


def _context_from_checkpoint(meta: dict, dataset: str | None) -> DataContext:
    cfg = ExperimentConfig.from_dict(meta["experiment"])
    if dataset:
        cfg = replace(cfg, dataset=dataset)
    return DataContext.for_config(cfg)


def cmd_generate_data(args) -> int:
    raw = _read_json(args.config)
    cfg = SynthConfig.from_dict(raw.get("data", raw))
    path = save(generate(cfg), args.out)
    print(f"wrote dataset to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.dataset:
        cfg = replace(cfg, dataset=args.dataset)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = Path(args.out or cfg.output_dir or "runs") / f"{cfg.name}.seed{cfg.seed}"
    cfg = replace(cfg, output_dir=str(out))
    res = run_experiment(cfg)
    meta = {"experiment": cfg.to_dict(), "seq_len": res.trainer.seq_len if res.trainer else cfg.train.n_warm,
            "auc": res.report.auc, "status": res.report.status}
    optimizer = res.trainer.optimizer if res.trainer else None
    save_checkpoint(out / "model.ckpt", res.model, optimizer, meta)
    _emit({"checkpoint": str(out / "model.ckpt"), "auc": res.report.auc, "status": res.report.status})
    return 0 if res.report.status == "ok" else 1


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ctx = _context_from_checkpoint(ck.meta, args.dataset)
    ds = ctx.dataset
    scores = predict(ck.model, ds.test, ctx.features, int(ck.meta["seq_len"]))
    _emit({"checkpoint": str(args.checkpoint), "auc": auc(scores, ds.test.labels), "n_test": len(ds.test)})
    return 0


def cmd_ablate(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    result = run_suite(args.suite, output_dir=args.out, seeds=seeds)
    for name, s in result.summary().items():
        print(f"{name}: mean={s['mean']:.4f} min={s['min']:.4f} max={s['max']:.4f}")
    for c in result.checks:
        print(c.line())
    return 0 if result.passed else 1


def cmd_analyze(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ctx = _context_from_checkpoint(ck.meta, args.dataset)
    ds = ctx.dataset
    pool = np.flatnonzero(analysis.train_exposure(ds) > 0)
    if args.mode == "material":
        anchors = analysis.low_exposure_items(ds, args.fraction or 0.2)
        value = analysis.material_similarity(ck.model.ranking.item_emb.data,
                                             analysis.reference_content_space(ctx.features),
                                             anchors, args.top_k, pool)
    else:
        if not args.reference:
            raise EM3Error("behavioral mode needs --reference <baseline checkpoint>")
        ref = load_checkpoint(args.reference)
        anchors = analysis.popular_items(ds, args.fraction or 0.3)
        value = analysis.behavioral_similarity(ck.model.all_content(ctx.features),
                                               ref.model.ranking.item_emb.data, anchors, args.top_k, pool)
    _emit({"mode": args.mode, "mean_similarity": value, "n_anchors": int(len(anchors)), "top_k": args.top_k})
    return 0


def cmd_export_embeddings(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ctx = _context_from_checkpoint(ck.meta, args.dataset)
    model = ck.model
    cache = OnlineEmbeddingCache()
    fp = fusion_fingerprint(list(model.content_parameters()))
    gen = cache.refresh(fp, direct_embedder(model, ctx.features), range(ctx.dataset.n_items))
    cache.save(args.out)
    _emit({"out": str(args.out), "generation": gen.number, "items": len(gen.embeddings), "dim": gen.dim})
    return 0


def cmd_serve_cache(args) -> int:
    from .server import CacheServer

    server = CacheServer(args.cache, args.refresh_interval, args.host, args.port)
    host, port = server.address
    print(f"serving {args.cache} on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="em3", description="Multimodal ranking experiments on synthetic data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate-data", help="generate a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate_data)

    s = sub.add_parser("train", help="train one experiment config and write a checkpoint")
    s.add_argument("--config", required=True)
    s.add_argument("--dataset")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="test AUC of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="run an ablation suite; exits 1 if any check fails")
    s.add_argument("--suite", required=True)
    s.add_argument("--out")
    s.add_argument("--seeds", help="comma-separated seed override")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("analyze", help="top-k neighbour similarity analysis")
    s.add_argument("--mode", choices=("material", "behavioral"), required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--reference", help="baseline checkpoint whose ItemID table is the behavioural space")
    s.add_argument("--dataset")
    s.add_argument("--top-k", type=int, default=3)
    s.add_argument("--fraction", type=float,
                   help="anchor fraction: lowest-exposure for material (0.2), most exposed for behavioral (0.3)")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("export-embeddings", help="write an online embedding cache file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dataset")
    s.set_defaults(func=cmd_export_embeddings)

    s = sub.add_parser("serve-cache", help="serve a cache file over a local socket")
    s.add_argument("--cache", required=True)
    s.add_argument("--refresh-interval", type=float, required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=0)
    s.set_defaults(func=cmd_serve_cache)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (EM3Error, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
