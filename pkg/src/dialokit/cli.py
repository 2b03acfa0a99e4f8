"""Command-line entry point.

Subcommands: train, gradcheck, evaluate, ensemble, augment, serve, chat.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, sample_training_dialogue
from .corpus import (
    Dialogue,
    corpus_to_jsonl,
    gen_synth_corpus,
    parse_corpus,
    split_text,
    write_corpus,
)
from .ensemble import ensemble_select
from .evaluation import METRIC_NAMES, evaluate_corpus
from .metrics import EmbeddingTable, bleu, greedy_embed_score, meteor_lite
from .model import ModelConfig, grad_check, save_checkpoint, train
from .service import ServiceConfig, build_service, serve


def _metric_by_name(name: str, embeddings: EmbeddingTable | None = None):
    if name == "meteor":
        return meteor_lite
    if name == "bleu":
        return bleu
    if name == "embed":
        table = embeddings or EmbeddingTable.hash_seeded()
        return lambda hyp, ref: greedy_embed_score(hyp, ref, table)
    raise ValueError(f"unknown metric {name!r}")


def _load_corpus(args) -> list[Dialogue]:
    if args.corpus:
        return parse_corpus(args.corpus)
    return gen_synth_corpus(args.synthetic_seed, args.synthetic)


def cmd_train(args) -> int:
    corpus = _load_corpus(args)
    cfg = ModelConfig(
        vocab_size=args.vocab_cap,
        d_model=args.d_model,
        n_layers=args.n_layers,
        n_heads=args.n_heads,
        d_ff=args.d_ff,
        flow_layers=args.flow_layers,
        max_seq=args.max_seq,
        seed=args.seed,
    )
    augment = AugmentConfig(args.p_truncate, args.p_concat)
    model, history = train(
        corpus, cfg, augment, epochs=args.epochs, lr=args.lr, seed=args.seed,
        progress=lambda s: print(
            f"epoch {s.epoch:>3}: total={s.total:.2f} flow={s.flow:.4f} "
            f"gen={s.gen:.2f} bow={s.bow:.2f} ({s.dialogues} dialogues)"
        ),
    )
    save_checkpoint(args.out, model.cfg, model.vocab, model.params)
    print(f"checkpoint written to {args.out}")
    if args.history:
        Path(args.history).write_text(json.dumps(
            [s.__dict__ for s in history], indent=2))
        print(f"loss history written to {args.history}")
    return 0


def cmd_gradcheck(args) -> int:
    report = grad_check(eps=args.eps, samples_per_tensor=args.samples, seed=args.seed)
    print(report.format())
    return 0 if report.ok(args.tol) else 1


def cmd_evaluate(args) -> int:
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    embeddings = EmbeddingTable.load(args.embeddings) if args.embeddings else None
    report = evaluate_corpus(args.predictions, args.references, metrics, embeddings)
    print(report.table())
    if args.json:
        Path(args.json).write_text(report.to_json())
        print(f"report written to {args.json}")
    return 0


def cmd_ensemble(args) -> int:
    metric = _metric_by_name(
        args.metric, EmbeddingTable.load(args.embeddings) if args.embeddings else None
    )
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        with open(args.input, encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                cands = obj.get("candidates")
                if not isinstance(cands, list) or not cands:
                    raise ValueError(f"line {i}: 'candidates' must be a non-empty list")
                result = ensemble_select([split_text(c) for c in cands], metric)
                out.write(json.dumps(
                    {"selected": cands[result.selected_index],
                     "scores": list(result.scores)}, ensure_ascii=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_augment(args) -> int:
    corpus = _load_corpus(args)
    cfg = AugmentConfig(args.p_truncate, args.p_concat)
    rng = np.random.default_rng(args.seed)
    n = args.n if args.n is not None else len(corpus)
    drawn = [sample_training_dialogue(corpus, cfg, rng) for _ in range(n)]
    if args.out:
        write_corpus(drawn, args.out)
        print(f"{n} dialogues written to {args.out}")
    else:
        sys.stdout.write(corpus_to_jsonl(drawn))
    return 0


def _service_config(args) -> ServiceConfig:
    return ServiceConfig.from_sources(
        args.config,
        host=args.host,
        port=args.port,
        checkpoint=args.checkpoint,
        log_path=args.log,
        n_candidates=args.n_candidates,
        top_p=args.top_p,
        max_len=args.max_len,
        seed=args.seed,
        abusive_lexicon=args.abusive_lexicon,
        fallbacks=args.fallbacks,
        casing_lexicon=args.casing_lexicon,
        exclusive_predicates=args.exclusive_predicates,
        ui_dir=args.ui_dir,
    )


def cmd_serve(args) -> int:
    serve(_service_config(args))
    return 0


def cmd_chat(args) -> int:
    service = build_service(_service_config(args))
    store, pipeline = service.store, service.pipeline
    session = store.create_session()
    print(f"session {session.id} (model_loaded={service.model_loaded}); "
          "empty line or Ctrl-D exits")
    while True:
        try:
            text = input("you> ").strip()
        except EOFError:
            print()
            break
        if not text:
            break
        status, obj = service.handle(
            "POST", f"/api/sessions/{session.id}/messages",
            json.dumps({"text": text}).encode(),
        )
        if status != 200:
            print(f"error: {obj.get('error')}", file=sys.stderr)
            continue
        print(f"bot> {obj['reply']}")
    store.close()
    return 0


def _add_corpus_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", help="corpus JSONL path (default: synthetic)")
    p.add_argument("--synthetic", type=int, default=500,
                   help="synthetic corpus size when no --corpus is given")
    p.add_argument("--synthetic-seed", type=int, default=1)


def _add_service_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--log", default=None, help="session event log path")
    p.add_argument("--n-candidates", type=int, default=None)
    p.add_argument("--top-p", type=float, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--abusive-lexicon", default=None)
    p.add_argument("--fallbacks", default=None)
    p.add_argument("--casing-lexicon", default=None)
    p.add_argument("--exclusive-predicates", default=None)
    p.add_argument("--ui-dir", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialokit",
        description="Knowledge-grounded dialogue pipeline: train, evaluate, "
                    "select responses, and serve an interactive chat API.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the flow-planning language model")
    _add_corpus_args(p)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-cap", type=int, default=256)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--n-heads", type=int, default=2)
    p.add_argument("--d-ff", type=int, default=128)
    p.add_argument("--flow-layers", type=int, default=1)
    p.add_argument("--max-seq", type=int, default=256)
    p.add_argument("--p-truncate", type=float, default=0.2)
    p.add_argument("--p-concat", type=float, default=0.1)
    p.add_argument("--out", default="model.ckpt")
    p.add_argument("--history", help="write per-epoch losses as JSON")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("evaluate", help="metric report over aligned text files")
    p.add_argument("--predictions", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--metrics", default=",".join(METRIC_NAMES))
    p.add_argument("--embeddings", help="optional word-vector file")
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ensemble", help="consensus selection over candidate files")
    p.add_argument("--input", required=True,
                   help='JSONL of {"candidates": [str, ...]}')
    p.add_argument("--output", help="output JSONL (default stdout)")
    p.add_argument("--metric", default="meteor", choices=("meteor", "bleu", "embed"))
    p.add_argument("--embeddings", help="optional word-vector file")
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("augment", help="draw augmented training dialogues")
    _add_corpus_args(p)
    p.add_argument("--p-truncate", type=float, default=0.2)
    p.add_argument("--p-concat", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, help="number of draws (default: corpus size)")
    p.add_argument("--out", help="output JSONL (default stdout)")
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("serve", help="run the HTTP chat service")
    _add_service_args(p)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("chat", help="terminal chat using the service pipeline")
    _add_service_args(p)
    p.set_defaults(fn=cmd_chat)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
