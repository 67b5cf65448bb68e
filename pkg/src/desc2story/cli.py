"""Command-line entry point `d2s`: corpus statistics, vocabulary building,
training, generation, evaluation, and language-model tooling in one tool.

Only standard-library imports happen at module load; the numeric stack is
imported inside the subcommand handlers so that thread-count environment
variables set from the command line take effect before numpy starts.

Exit codes: 0 success, 1 domain errors (bad data, missing files), 2 usage
errors (argparse). Progress and diagnostics go to stderr; data goes to stdout
or to output files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

CONFIG_COMMENT_CHARS = ("#", ";")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="d2s",
        description="Story-generation workbench: train and run a description-to-story model.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    subparsers = {}

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", metavar="PATH", help="key = value config file; flags override it")
        p.add_argument("--seed", type=int, default=0, help="random seed")
        p.add_argument("--deterministic", action="store_true", help="single-threaded reproducible mode")
        p.add_argument("--threads", type=int, default=None, help="numeric thread cap (default: library choice)")
        subparsers[name] = p
        return p

    p = add("stats", "corpus statistics table")
    p.add_argument("--corpus", required=True, help="JSONL corpus file")
    p.add_argument("--stopwords", default=None, help="stopword file, one per line (default: packaged list)")

    p = add("build-vocab", "build the joint token vocabulary")
    p.add_argument("--corpus", required=True, help="JSONL corpus file")
    p.add_argument("--output", required=True, help="vocabulary TSV to write")
    p.add_argument("--min-count", type=int, default=2, help="minimum token count")
    p.add_argument("--max-size", type=int, default=30000, help="maximum vocabulary size")

    p = add("train", "train a model, logging loss and validation BLEU")
    p.add_argument("--corpus", required=True, help="training JSONL corpus")
    p.add_argument("--val", default=None, help="validation JSONL corpus")
    p.add_argument("--vocab", required=True, help="vocabulary TSV from build-vocab")
    p.add_argument("--checkpoint", required=True, help="checkpoint file to write")
    p.add_argument("--log", required=True, help="training log CSV to write")
    p.add_argument("--dim", type=int, choices=(50, 128, 256), default=256,
                   help="embedding and hidden size preset")
    p.add_argument("--embed-dim", type=int, default=None, help="override embedding size (default: --dim)")
    p.add_argument("--hidden-dim", type=int, default=None, help="override hidden size (default: --dim)")
    p.add_argument("--dropout", type=float, default=0.2, help="dropout probability")
    p.add_argument("--batch-size", type=int, default=32, help="examples per iteration")
    p.add_argument("--iterations", type=int, default=1000, help="number of batches to train on")
    p.add_argument("--eval-every", type=int, default=100, help="iterations between validation evaluations")
    p.add_argument("--clip", type=float, default=5.0, help="global gradient-norm clip")
    p.add_argument("--lr", type=float, default=0.001, help="Adam learning rate")

    p = add("generate", "decode stories for a JSONL input file")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--vocab", required=True, help="vocabulary TSV used at training time")
    p.add_argument("--input", required=True, help="JSONL file with description lists")
    p.add_argument("--output", default=None, help="write stories here, one per line (default: stdout)")
    p.add_argument("--beam", type=int, default=5, help="beam width")
    p.add_argument("--greedy", action="store_true", help="greedy decoding instead of beam search")
    p.add_argument("--max-len", type=int, default=None, help="decode length cap (default: checkpoint value)")
    p.add_argument("--suppress-unk", action="store_true", help="never emit the unknown-word token")

    p = add("evaluate", "score a hypothesis file against a reference file")
    p.add_argument("--hyp", required=True, help="hypothesis text file, one story per line")
    p.add_argument("--ref", required=True, help="reference text file, line-aligned with --hyp")
    p.add_argument("--smoothing", action="store_true", help="add-one BLEU smoothing for zero-match orders")

    p = add("lm-train", "fit the n-gram language model on a story text file")
    p.add_argument("--corpus", required=True, help="text file, one story per line")
    p.add_argument("--output", required=True, help="model file to write")
    p.add_argument("--order", type=int, default=5, help="n-gram order")
    p.add_argument("--discount", type=float, default=0.75, help="absolute discount D")

    p = add("lm-score", "perplexity of a text file under a trained language model")
    p.add_argument("--model", required=True, help="model file from lm-train")
    p.add_argument("--input", required=True, help="text file to score, one story per line")

    return parser, subparsers


def _flag_value(argv, name):
    for i, token in enumerate(argv):
        if token == name:
            if i + 1 < len(argv):
                return argv[i + 1]
        elif token.startswith(name + "="):
            return token.split("=", 1)[1]
    return None


def _load_config_file(path):
    pairs = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith(CONFIG_COMMENT_CHARS):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value.strip()
    return pairs


def _apply_config(subparser, pairs, path):
    actions = {a.dest: a for a in subparser._actions}
    for key, raw in pairs.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("help", "config"):
            raise ValueError(f"{path}: unknown config key {key!r}")
        action = actions[dest]
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                value = action.type(raw)
            except ValueError:
                raise ValueError(f"{path}: bad value {raw!r} for key {key!r}") from None
        else:
            value = raw
        if action.choices is not None and value not in action.choices:
            raise ValueError(f"{path}: value {value!r} for key {key!r} not in {sorted(action.choices)}")
        subparser.set_defaults(**{dest: value})


def _set_thread_env(argv):
    """Pin BLAS/OpenMP thread counts before numpy is imported."""
    threads = _flag_value(argv, "--threads")
    if threads is None and "--deterministic" in argv:
        threads = "1"
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def _progress(record, elapsed):
    bleu = "" if record.val_bleu4 is None else f"  val_bleu4={record.val_bleu4:.2f}"
    print(f"iteration {record.iteration}  loss={record.loss:.4f}{bleu}  [{elapsed:.0f}s]", file=sys.stderr)


def cmd_stats(args):
    from .corpus import compute_stats, load_examples, load_stopwords

    examples = load_examples(args.corpus)
    stats = compute_stats(examples, load_stopwords(args.stopwords))
    rows = [
        ("documents", f"{stats.doc_count}"),
        ("avg sentences per caption set", f"{stats.avg_sentences_caption:.2f}"),
        ("avg sentences per story", f"{stats.avg_sentences_story:.2f}"),
        ("avg words per caption set", f"{stats.avg_words_caption:.2f}"),
        ("avg words per story", f"{stats.avg_words_story:.2f}"),
        ("avg story words absent from captions", f"{stats.avg_nonoverlap_words:.2f}"),
        ("unseen non-stop story token fraction", f"{stats.unseen_nonstop_fraction:.4f}"),
    ]
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        print(f"{key:<{width}}  {value}")
    print(json.dumps(stats.as_dict(), sort_keys=True))
    return 0


def cmd_build_vocab(args):
    from .corpus import build_vocab, load_examples

    examples = load_examples(args.corpus)
    vocab = build_vocab(examples, min_count=args.min_count, max_size=args.max_size)
    vocab.save(args.output)
    print(f"wrote {len(vocab)} tokens to {args.output}", file=sys.stderr)
    return 0


def cmd_train(args):
    from .corpus import Vocab, load_examples
    from .model import Hyperparams
    from .training import TrainConfig, train

    vocab = Vocab.load(args.vocab)
    train_examples = load_examples(args.corpus)
    val_examples = load_examples(args.val) if args.val else None
    hp = Hyperparams(
        vocab_size=len(vocab),
        embed_dim=args.embed_dim if args.embed_dim is not None else args.dim,
        hidden_dim=args.hidden_dim if args.hidden_dim is not None else args.dim,
        dropout=args.dropout,
    )
    config = TrainConfig(
        hyperparams=hp,
        max_iterations=args.iterations,
        batch_size=args.batch_size,
        eval_every=args.eval_every,
        clip_norm=args.clip,
        lr=args.lr,
        seed=args.seed,
        checkpoint_path=args.checkpoint,
        log_path=args.log,
    )
    result = train(config, vocab, train_examples, val_examples, progress=_progress)
    if result.best_val_bleu is not None:
        print(f"best validation BLEU-4: {result.best_val_bleu:.2f}", file=sys.stderr)
    print(f"checkpoint: {args.checkpoint}  log: {args.log}", file=sys.stderr)
    return 0


def cmd_generate(args):
    from .corpus import Vocab, encode_source, load_examples
    from .decoding import generate_ids
    from .model import load_checkpoint

    if args.beam < 1:
        raise ValueError("beam width must be >= 1")
    model = load_checkpoint(args.checkpoint)
    vocab = Vocab.load(args.vocab)
    if len(vocab) != model.hp.vocab_size:
        raise ValueError(
            f"vocabulary size {len(vocab)} does not match checkpoint vocab_size {model.hp.vocab_size}"
        )
    examples = load_examples(args.input, require_story=False)
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for ex in examples:
            ids = generate_ids(
                model,
                encode_source(ex.descriptions, vocab),
                mode="greedy" if args.greedy else "beam",
                beam_width=args.beam,
                max_len=args.max_len,
                suppress_unk=args.suppress_unk,
            )
            out.write(" ".join(vocab.decode_ids(ids)) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_evaluate(args):
    from .metrics import evaluate_files

    report = evaluate_files(args.hyp, args.ref, smoothing=args.smoothing)
    print(report.render())
    print(report.to_json())
    return 0


def cmd_lm_train(args):
    from .corpus import tokenize
    from .ngram import train_lm

    with open(args.corpus, encoding="utf-8") as f:
        stories = [tokenize(line) for line in f.read().splitlines() if line.strip()]
    model = train_lm(stories, order=args.order, discount=args.discount)
    model.save(args.output)
    print(f"wrote order-{model.order} model over {model.vocab_size} types to {args.output}", file=sys.stderr)
    return 0


def cmd_lm_score(args):
    from .corpus import tokenize
    from .ngram import KNModel, corpus_perplexity

    model = KNModel.load(args.model)
    with open(args.input, encoding="utf-8") as f:
        stories = [tokenize(line) for line in f.read().splitlines() if line.strip()]
    ppl = corpus_perplexity(model, stories)
    print(f"perplexity  {ppl:.4f}")
    print(json.dumps({"perplexity": ppl}, sort_keys=True))
    return 0


_HANDLERS = {
    "stats": cmd_stats,
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "lm-train": cmd_lm_train,
    "lm-score": cmd_lm_score,
}


def run(argv):
    """Parse arguments and dispatch; returns the process exit code."""
    parser, subparsers = _build_parser()
    command = argv[0] if argv and not argv[0].startswith("-") else None
    config_path = _flag_value(argv, "--config")
    if command in subparsers and config_path is not None:
        try:
            _apply_config(subparsers[command], _load_config_file(config_path), config_path)
        except (OSError, ValueError) as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse has already printed usage or help
        return 0 if e.code is None else int(e.code)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _HANDLERS[args.command](args)
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry_point():
    _set_thread_env(sys.argv[1:])
    sys.exit(run(sys.argv[1:]))
