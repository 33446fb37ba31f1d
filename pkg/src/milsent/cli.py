"""Command-line interface: train / eval / extract / gradcheck / synth.

Machine-readable output is JSON on files or stdout; progress goes to
stderr. Every artifact-producing command writes a manifest alongside
its primary output so a run can be reproduced bit for bit. Exit codes:
0 success, 1 validation/usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys

from . import __version__, evaluation, models, polarity, training
from .data import build_vocab, encode_corpus, generate_synthetic, load_corpus, load_embeddings, save_corpus
from .errors import ValidationError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract is exit 1
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(primary_output: str, command: str, args: argparse.Namespace,
                    corpus_paths, outputs, checkpoint=None) -> None:
    manifest = {
        "tool": "milsent",
        "version": __version__,
        "command": command,
        "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "seed": getattr(args, "seed", None),
        "corpus_hashes": {str(p): _sha256(p) for p in corpus_paths},
        "checkpoint": checkpoint,
        "outputs": [str(o) for o in outputs],
    }
    with open(f"{primary_output}.manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _parse_windows(text: str) -> tuple[int, ...]:
    try:
        windows = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ValidationError(f"bad window list {text!r}; expected e.g. 3,4,5") from None
    if not windows:
        raise ValidationError("window list is empty")
    return windows


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    docs = generate_synthetic(args.num_docs, num_classes=args.classes, seed=args.seed)
    save_corpus(docs, args.out)
    _write_manifest(args.out, "synth", args, corpus_paths=[], outputs=[args.out])
    _log(f"wrote {len(docs)} synthetic documents to {args.out}")
    return 0


def _cmd_train(args) -> int:
    # segcnn learns 3 segment polarity classes; document labels keep the
    # corpus' own range and are not consumed by that model
    num_classes = 3 if args.model == "segcnn" else args.classes
    docs = load_corpus(args.corpus, args.classes)
    vocab = build_vocab(docs, min_count=args.min_count)
    encode_corpus(docs, vocab)
    embedding_matrix = None
    embedding_dim = args.embedding_dim
    if args.embeddings:
        table = load_embeddings(args.embeddings, vocab)
        embedding_matrix = table.matrix
        embedding_dim = table.matrix.shape[1]
    config = models.ModelConfig(
        kind=args.model,
        attention_mode="average" if args.attention == "avg" else "attention",
        num_classes=num_classes,
        vocab_size=len(vocab),
        embedding_dim=embedding_dim,
        windows=_parse_windows(args.windows),
        feature_maps=args.feature_maps,
        gru_hidden=args.gru_hidden,
        attention_dim=args.attention_dim,
        dropout=args.dropout,
        recurrent_dropout=args.recurrent_dropout,
        seed=args.seed,
    )
    train_config = training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        weight_decay=args.weight_decay,
        val_fraction=args.val_fraction,
        seed=args.seed,
    )
    _log(f"training {args.model} on {len(docs)} documents ({len(vocab)} vocabulary entries)")
    metrics_path = args.metrics or f"{args.out}.metrics.jsonl"
    result = training.train(config, train_config, docs,
                            embedding_matrix=embedding_matrix, metrics_path=metrics_path)
    models.save_checkpoint(args.out, result.best_params, vocab=vocab)
    _write_manifest(args.out, "train", args, corpus_paths=[args.corpus],
                    outputs=[args.out, metrics_path], checkpoint=str(args.out))
    last = result.history[-1]
    _log(f"epoch {last['epoch']}: train loss {last['train_loss']:.4f}; "
         f"best epoch {result.best_epoch}; checkpoint {args.out}")
    return 0


def _load_model(args):
    params, vocab = models.load_checkpoint(args.ckpt)
    if vocab is None:
        raise ValidationError(f"{args.ckpt}: checkpoint has no vocabulary; cannot encode text")
    # a segcnn ignores document labels, so only its segment classes are bounded
    bound = params.config.num_classes if params.config.kind != "segcnn" else 2**31
    docs = load_corpus(args.corpus, bound)
    encode_corpus(docs, vocab)
    return params, docs


def _cmd_eval(args) -> int:
    params, docs = _load_model(args)
    report = evaluation.evaluate_variant(
        params, docs, source=args.source, gated=args.gated == "on",
        folds=args.folds, grid_step=args.grid, seed=args.seed,
    )
    payload = report.to_json()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
        _write_manifest(args.report, "eval", args, corpus_paths=[args.corpus],
                        outputs=[args.report], checkpoint=str(args.ckpt))
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
    _log(f"mean macro-F1 {report.macro_f1:.4f} over {args.folds} folds")
    return 0


def _cmd_extract(args) -> int:
    params, docs = _load_model(args)
    if args.source == "segment" and params.config.kind != "milnet":
        raise ValidationError(f"{params.config.kind} supports only --source document")
    weights = polarity.class_weights(params.config.num_classes)
    gated = args.gated == "on"
    with open(args.out, "w", encoding="utf-8") as handle:
        for scored in models.batch_outputs(params, docs):
            verdicts = polarity.segment_verdicts(
                scored.doc_probs, scored.attention, weights,
                segment_probs=scored.segment_probs, source=args.source,
            )
            summary = polarity.extract_summary(scored.doc, verdicts, args.rate, use_gated=gated)
            row = {"id": scored.doc.id, **summary.to_json()}
            handle.write(json.dumps(row) + "\n")
    _write_manifest(args.out, "extract", args, corpus_paths=[args.corpus],
                    outputs=[args.out], checkpoint=str(args.ckpt))
    _log(f"wrote summaries for {len(docs)} documents to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    worst = 0.0
    for kind in models.MODEL_KINDS:
        error = models.gradient_check(kind, seed=args.seed)
        worst = max(worst, error)
        _log(f"{kind}: max relative gradient error {error:.3e}")
    print(f"max relative error {worst:.3e}")
    if worst >= 1e-4:
        _log("gradient check FAILED (tolerance 1e-4)")
        return 2
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="milsent", description=__doc__)
    parser.add_argument("--version", action="version", version=f"milsent {__version__}")
    parser.add_argument("--threads", type=int, default=1,
                        help="reserved; execution is single-threaded per model")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    synth.add_argument("--num-docs", type=int, required=True)
    synth.add_argument("--classes", type=int, default=5)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=_cmd_synth)

    tr = sub.add_parser("train", help="train a model on a JSONL corpus")
    tr.add_argument("--corpus", required=True)
    tr.add_argument("--model", choices=models.MODEL_KINDS, default="milnet")
    tr.add_argument("--attention", choices=("on", "avg"), default="on")
    tr.add_argument("--classes", type=int, default=5)
    tr.add_argument("--epochs", type=int, default=25)
    tr.add_argument("--batch-size", type=int, default=200)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--embeddings", default=None, help="word2vec text-format file")
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--metrics", default=None, help="metrics JSONL path (default <out>.metrics.jsonl)")
    tr.add_argument("--min-count", type=int, default=2)
    tr.add_argument("--embedding-dim", type=int, default=300)
    tr.add_argument("--windows", default="3,4,5")
    tr.add_argument("--feature-maps", type=int, default=100)
    tr.add_argument("--gru-hidden", type=int, default=50)
    tr.add_argument("--attention-dim", type=int, default=100)
    tr.add_argument("--dropout", type=float, default=0.2)
    tr.add_argument("--recurrent-dropout", type=float, default=0.1)
    tr.add_argument("--weight-decay", type=float, default=1e-5)
    tr.add_argument("--val-fraction", type=float, default=0.1)
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="cross-validated segment classification scores")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--source", choices=("segment", "document"), default="segment")
    ev.add_argument("--gated", choices=("on", "off"), default="on")
    ev.add_argument("--folds", type=int, default=10)
    ev.add_argument("--grid", type=float, default=0.05)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--report", default=None, help="report JSON path (default: stdout)")
    ev.set_defaults(func=_cmd_eval)

    ex = sub.add_parser("extract", help="polarity-ranked opinion summaries")
    ex.add_argument("--ckpt", required=True)
    ex.add_argument("--corpus", required=True)
    ex.add_argument("--rate", type=float, default=0.3)
    ex.add_argument("--gated", choices=("on", "off"), default="on")
    ex.add_argument("--source", choices=("segment", "document"), default="segment")
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=_cmd_extract)

    gc = sub.add_parser("gradcheck", help="finite-difference check on all model kinds")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits 2
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
