"""Single entry point: data generation, vocab, training, decoding, benchmarks,
precompute, and the TCP service.

Every command writes a manifest next to its outputs recording the resolved
configuration, so any run can be reproduced bit-exactly (timings aside) by
replaying the recorded arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, bench as bench_mod, serve as serve_mod
from .corpus import (
    SyntheticSpec,
    Vocabulary,
    build_vocab,
    encode_corpus,
    generate_synthetic,
    load_vocab,
    read_lines,
    read_pairs,
    save_vocab,
    write_lines,
    write_pairs,
)
from .decode import BeamConfig, beam_search
from .model import ModelConfig, Parameters, load_params, save_params
from .training import TrainHyper, train
from .trie import KeywordTrie, build_trie, format_layer_stats, layer_stats, write_layer_stats_csv

NEG_INF = float("-inf")


def _write_manifest(path: Path, command: str, config: dict, inputs: list, outputs: list, seed=None) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "created": datetime.now(timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _load_keyword_trie(keywords_path: str, vocab: Vocabulary) -> tuple[KeywordTrie, list[str]]:
    texts = read_lines(keywords_path)
    encoded = []
    for text in texts:
        ids = vocab.text_to_ids(text)
        if any(i < 3 for i in ids):
            raise ValueError(f"keyword {text!r} contains out-of-vocabulary tokens")
        encoded.append(ids)
    return build_trie(encoded), texts


def _beam_config_from_args(args, trie: KeywordTrie) -> BeamConfig:
    max_steps = args.max_steps if args.max_steps else bench_mod.default_max_steps(trie)
    threshold = NEG_INF if args.threshold is None else args.threshold
    return BeamConfig(
        beam_size=args.beam,
        score_threshold=threshold,
        use_trie=not args.no_trie,
        use_self_norm=not args.no_self_norm,
        use_drop_otf=not args.no_drop_otf,
        max_steps=max_steps,
    )


def _add_beam_flags(parser: argparse.ArgumentParser, default_beam: int = 10) -> None:
    parser.add_argument("--beam", type=int, default=default_beam, help="beam size B")
    parser.add_argument("--threshold", type=float, default=None,
                        help="log-space score threshold s_min (default -inf)")
    parser.add_argument("--no-trie", action="store_true", help="disable prefix-tree pruning")
    parser.add_argument("--no-self-norm", action="store_true",
                        help="use exact softmax instead of self-normalized scores")
    parser.add_argument("--no-drop-otf", action="store_true",
                        help="do not drop below-threshold hypotheses during search")
    parser.add_argument("--max-steps", type=int, default=0,
                        help="decode step cap (default: 2 * trie depth + 2)")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        seed=args.seed,
        num_pairs=args.pairs,
        keyword_count=args.keywords,
        template_count=args.templates,
        overlap_fraction=args.overlap,
    )
    pairs, keywords = generate_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_path = out / "corpus.tsv"
    keywords_path = out / "keywords.txt"
    queries_path = out / "queries.txt"
    write_pairs(corpus_path, pairs)
    write_lines(keywords_path, keywords)
    write_lines(queries_path, [q for q, _ in pairs])
    _write_manifest(
        out / "manifest.json", "gen-data",
        {"pairs": args.pairs, "keywords": args.keywords, "templates": args.templates,
         "overlap": args.overlap},
        [], [corpus_path, keywords_path, queries_path], seed=args.seed,
    )
    print(f"wrote {len(pairs)} pairs and {len(keywords)} keywords to {out}")
    return 0


def cmd_build_vocab(args) -> int:
    pairs = read_pairs(args.corpus)
    vocab = build_vocab(pairs, args.max_size)
    save_vocab(vocab, args.out)
    _write_manifest(
        Path(args.out + ".manifest.json"), "build-vocab",
        {"max_size": args.max_size}, [args.corpus], [args.out],
    )
    print(f"vocabulary of {vocab.size} tokens written to {args.out}")
    return 0


def cmd_train(args) -> int:
    vocab = load_vocab(args.vocab)
    pairs = encode_corpus(vocab, read_pairs(args.corpus))
    if not pairs:
        raise ValueError("corpus is empty after encoding")
    layers_max = max(args.enc_layers, args.dec_layers)
    if args.residual == "auto":
        residual = layers_max >= 2
    else:
        residual = args.residual == "on"
    config = ModelConfig(
        cell_type=args.cell,
        encoder_layers=args.enc_layers,
        decoder_layers=args.dec_layers,
        residual=residual,
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        attention_kind=args.attention,
        vocab_size=vocab.size,
    )
    hyper = TrainHyper(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        beta=args.beta,
        epochs=args.epochs,
        lr_decay=args.lr_decay,
        seed=args.seed,
        holdout_fraction=args.holdout,
    )
    params, metrics = train(pairs, config, hyper)
    save_params(params, args.out_params)
    outputs = [args.out_params]
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as f:
            for row in metrics:
                f.write(json.dumps(row) + "\n")
        outputs.append(args.metrics)
    _write_manifest(
        Path(args.out_params + ".manifest.json"), "train",
        {"cell": args.cell, "enc_layers": args.enc_layers, "dec_layers": args.dec_layers,
         "residual": residual, "embed_dim": args.embed_dim, "hidden_dim": args.hidden_dim,
         "attention": args.attention, "lr": args.lr, "batch_size": args.batch_size,
         "beta": args.beta, "epochs": args.epochs, "holdout": args.holdout},
        [args.corpus, args.vocab], outputs, seed=args.seed,
    )
    if metrics:
        last = metrics[-1]
        print(f"epoch {last['epoch']}: loss {last['loss']:.4f}, "
              f"mean |log Z| {last['mean_abs_logZ']:.4f}")
    print(f"parameters written to {args.out_params}")
    return 0


def cmd_trie_stats(args) -> int:
    vocab = load_vocab(args.vocab)
    trie, _ = _load_keyword_trie(args.keywords, vocab)
    stats = layer_stats(trie)
    sys.stdout.write(format_layer_stats(stats))
    if args.out:
        write_layer_stats_csv(stats, args.out)
        _write_manifest(Path(args.out + ".manifest.json"), "trie-stats", {},
                        [args.keywords, args.vocab], [args.out])
    return 0


def _decode_one(params, vocab, trie, config, query: str) -> list[dict]:
    ids = vocab.text_to_ids(query)
    if not ids:
        return []
    results = beam_search(params, ids, trie if config.use_trie else None, config)
    return [
        {"keyword": vocab.ids_to_text(r.keyword), "score": r.score, "rank": r.rank}
        for r in results
    ]


def cmd_decode(args) -> int:
    vocab = load_vocab(args.vocab)
    params = load_params(args.params)
    if params.config.vocab_size != vocab.size:
        raise ValueError("parameter file and vocabulary disagree on vocab size")
    trie, _ = _load_keyword_trie(args.keywords, vocab)
    config = _beam_config_from_args(args, trie)
    if args.float32:
        params = params.astype(np.float32)
    if args.query is not None:
        payload = _decode_one(params, vocab, trie, config, args.query)
    else:
        queries = read_lines(args.queries)
        payload = [
            {"query": q, "results": _decode_one(params, vocab, trie, config, q)}
            for q in queries
        ]
    text = json.dumps(payload, indent=2, ensure_ascii=False)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        _write_manifest(
            Path(args.out + ".manifest.json"), "decode",
            {"beam": args.beam, "threshold": args.threshold, "no_trie": args.no_trie,
             "no_self_norm": args.no_self_norm, "no_drop_otf": args.no_drop_otf,
             "max_steps": config.max_steps, "query": args.query, "float32": args.float32},
            [args.params, args.vocab, args.keywords] + ([args.queries] if args.queries else []),
            [args.out],
        )
    else:
        print(text)
    return 0


def cmd_bench(args) -> int:
    vocab = load_vocab(args.vocab)
    params = load_params(args.params)
    trie, _ = _load_keyword_trie(args.keywords, vocab)
    queries = [vocab.text_to_ids(q) for q in read_lines(args.queries)]
    queries = [q for q in queries if q]
    beams = [int(b) for b in args.beams.split(",") if b]
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = bench_mod.run_timing(
        params, trie, queries, beams, strategies,
        score_threshold=args.threshold,
        repetitions=args.repetitions,
        warmup=args.warmup,
        max_steps=args.max_steps or None,
    )
    timing_csv = out / "timing.csv"
    timing_json = out / "timing.json"
    report.write_csv(timing_csv)
    report.write_json(timing_json)
    outputs = [timing_csv, timing_json]
    if args.validity_beams:
        vbeams = [int(b) for b in args.validity_beams.split(",") if b]
        curve = bench_mod.run_validity(params, trie, queries, vbeams,
                                       max_steps=args.max_steps or None)
        validity_csv = out / "validity.csv"
        bench_mod.write_validity_csv(curve, validity_csv)
        outputs.append(validity_csv)
    _write_manifest(
        out / "manifest.json", "bench",
        {"beams": beams, "strategies": strategies, "threshold": args.threshold,
         "repetitions": args.repetitions, "warmup": args.warmup,
         "validity_beams": args.validity_beams, "max_steps": args.max_steps},
        [args.params, args.vocab, args.keywords, args.queries], outputs,
    )
    for row in report.rows:
        print(f"{row['strategy']:>14} beam {row['beam_size']:>4}: "
              f"{row['mean_decode_ms']:9.3f} ms/query over {row['query_count']} queries")
    return 0


def cmd_bench_backends(args) -> int:
    from . import kernels

    vocab = load_vocab(args.vocab)
    params = load_params(args.params)
    trie, _ = _load_keyword_trie(args.keywords, vocab)
    queries = [vocab.text_to_ids(q) for q in read_lines(args.queries)]
    queries = [q for q in queries if q][: args.limit]
    rows = bench_mod.compare_backends(
        params, trie, queries,
        beam_size=args.beam,
        strategy=args.strategy,
        score_threshold=NEG_INF if args.threshold is None else args.threshold,
        repetitions=args.repetitions,
    )
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    for row in rows:
        print(f"{row['backend']:>6}: {row['mean_decode_ms']:9.3f} ms/query "
              f"({row['strategy']}, beam {row['beam_size']})")
    if len(rows) < 2:
        print("numba backend unavailable; only the numpy path was timed", file=sys.stderr)
    return 0


def cmd_precompute(args) -> int:
    vocab = load_vocab(args.vocab)
    params = load_params(args.params)
    trie, _ = _load_keyword_trie(args.keywords, vocab)
    log = read_lines(args.query_log)
    table = serve_mod.build_frequency_table(log)
    if args.head_volume is not None:
        threshold = serve_mod.resolve_threshold(table, args.head_volume)
    else:
        threshold = args.threshold
    frequent = serve_mod.frequent_queries(table, threshold)
    config = BeamConfig(
        beam_size=args.beam,
        score_threshold=NEG_INF if args.decode_threshold is None else args.decode_threshold,
        use_trie=True,
        use_self_norm=not args.no_self_norm,
        use_drop_otf=not args.no_drop_otf,
        max_steps=args.max_steps or bench_mod.default_max_steps(trie),
    )
    store, skipped = serve_mod.precompute(frequent, params, vocab, trie, config,
                                          model_tag=args.model_tag)
    serve_mod.save_store(store, args.out_store)
    outputs = [args.out_store]
    if args.out_freq:
        serve_mod.save_frequency_table(table, args.out_freq)
        outputs.append(args.out_freq)
    for query, reason in skipped:
        print(f"skipped {query!r}: {reason}", file=sys.stderr)
    _write_manifest(
        Path(args.out_store + ".manifest.json"), "precompute",
        {"threshold": threshold, "head_volume": args.head_volume, "beam": args.beam,
         "model_tag": args.model_tag, "frequent_count": len(frequent),
         "skipped": len(skipped)},
        [args.query_log, args.params, args.vocab, args.keywords], outputs,
    )
    print(f"precomputed {len(frequent)} frequent queries (count >= {threshold}) "
          f"into {args.out_store}")
    return 0


def cmd_serve(args) -> int:
    vocab = load_vocab(args.vocab)
    params = load_params(args.params)
    trie, _ = _load_keyword_trie(args.keywords, vocab)
    store = serve_mod.load_store(args.store) if args.store else serve_mod.PrecomputedStore()
    config = BeamConfig(
        beam_size=args.beam,
        score_threshold=NEG_INF if args.threshold is None else args.threshold,
        use_trie=True,
        use_self_norm=not args.no_self_norm,
        use_drop_otf=not args.no_drop_otf,
        max_steps=args.max_steps or bench_mod.default_max_steps(trie),
    )
    service = serve_mod.KeywordService(store, params, vocab, trie, config)
    server = serve_mod.KeywordServer(("127.0.0.1", args.port), service)
    print(f"serving on 127.0.0.1:{server.port} "
          f"({len(store.entries)} precomputed queries); Ctrl-C to stop", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kwgen",
        description="generative keyword retrieval with trie-constrained decoding",
    )
    parser.add_argument("--version", action="version", version=f"kwgen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic click log and keyword set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=2000)
    p.add_argument("--keywords", type=int, default=200)
    p.add_argument("--templates", type=int, default=8)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-vocab", help="build a vocabulary from a pair corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--max-size", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train the encoder-decoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out-params", required=True)
    p.add_argument("--metrics", default=None, help="JSON-lines per-epoch metrics path")
    p.add_argument("--cell", choices=["gru", "lstm"], default="gru")
    p.add_argument("--enc-layers", type=int, default=1)
    p.add_argument("--dec-layers", type=int, default=1)
    p.add_argument("--residual", choices=["auto", "on", "off"], default="auto")
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--attention", choices=["additive", "dot"], default="additive")
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--lr-decay", type=float, default=1.0,
                   help="multiply the learning rate by this each epoch")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--holdout", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("trie-stats", help="layer statistics of the keyword prefix tree")
    p.add_argument("--keywords", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", default=None, help="also write the CSV here")
    p.set_defaults(func=cmd_trie_stats)

    p = sub.add_parser("decode", help="decode a query into ranked keywords")
    p.add_argument("--params", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--keywords", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--query", default=None)
    group.add_argument("--queries", default=None, help="file with one query per line")
    _add_beam_flags(p)
    p.add_argument("--float32", action="store_true", help="decode with float32 parameters")
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("bench", help="decode-time matrix across strategies and beams")
    p.add_argument("--params", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--keywords", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--beams", default="40,60,80,100")
    p.add_argument("--strategies", default="baseline,SN+TP,SN+TP+DropOTF")
    p.add_argument("--threshold", type=float, default=-6.0,
                   help="s_min used by DropOTF strategies")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--max-steps", type=int, default=0)
    p.add_argument("--validity-beams", default="",
                   help="also measure the no-trie validity curve at these beams")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("bench-backends", help="compare numba and numpy kernel backends")
    p.add_argument("--params", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--keywords", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--beam", type=int, default=20)
    p.add_argument("--strategy", default="SN+TP", choices=sorted(bench_mod.STRATEGIES))
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--limit", type=int, default=50, help="cap on number of queries")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench_backends)

    p = sub.add_parser("precompute", help="decode frequent queries into a store")
    p.add_argument("--query-log", required=True)
    p.add_argument("--threshold", type=int, default=2,
                   help="absolute count for a query to be frequent")
    p.add_argument("--head-volume", type=float, default=None,
                   help="instead: cover this share of query volume")
    p.add_argument("--params", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--keywords", required=True)
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--decode-threshold", type=float, default=None)
    p.add_argument("--no-self-norm", action="store_true")
    p.add_argument("--no-drop-otf", action="store_true")
    p.add_argument("--max-steps", type=int, default=0)
    p.add_argument("--model-tag", default="offline")
    p.add_argument("--out-store", required=True)
    p.add_argument("--out-freq", default=None)
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("serve", help="line-JSON TCP service mixing cache and live decode")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--store", default=None)
    p.add_argument("--params", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--keywords", required=True)
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--no-self-norm", action="store_true")
    p.add_argument("--no-drop-otf", action="store_true")
    p.add_argument("--max-steps", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"kwgen {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
