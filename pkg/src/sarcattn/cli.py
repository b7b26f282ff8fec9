"""Command-line entry point.

Subcommands: train, eval, explain, ablate, gen-synthetic. Exit codes:
0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import DEFAULTS, UsageError, resolve
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .interpret import (FORMATS, FormatError, aggregate, export_model_view,
                        render_report)
from .metrics import evaluate
from .model import ConfigError, ModelConfig, extract_records, forward
from .synthetic import DEFAULT_CUE, generate_synthetic, write_jsonl
from .text import (TextError, build_vocab, encode, load_embeddings,
                   load_jsonl_dataset, prepare, strip_stopwords, tokenize)
from .training import DivergenceError, predict_scores, train

_MODEL_KEYS = ("layers", "heads", "embed_dim", "gru_hidden", "dropout",
               "max_len", "seed", "scale_full_dim", "no_residual")
_TRAIN_KEYS = _MODEL_KEYS + ("epochs", "lr", "batch_size", "min_count",
                             "strip_stopwords")


def _add_model_flags(p):
    p.add_argument("--config", help="INI config file (flags override it)")
    p.add_argument("--layers", type=int, help="attention layer count #L")
    p.add_argument("--heads", type=int, help="heads per layer #H")
    p.add_argument("--embed-dim", dest="embed_dim", type=int,
                   help="embedding width D (ignored with --embeddings)")
    p.add_argument("--gru-hidden", dest="gru_hidden", type=int,
                   help="bidirectional GRU output width d")
    p.add_argument("--dropout", type=float)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scale-full-dim", dest="scale_full_dim",
                   action="store_const", const=True,
                   help="scale scores by sqrt(D) instead of sqrt(D/#H)")
    p.add_argument("--no-residual", dest="no_residual",
                   action="store_const", const=True,
                   help="drop residual + layernorm in attention layers")


def _add_train_flags(p):
    _add_model_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--min-count", dest="min_count", type=int,
                   help="vocabulary frequency threshold")
    p.add_argument("--strip-stopwords", dest="strip_stopwords",
                   action="store_const", const=True)
    p.add_argument("--embeddings", help="static word-vector file "
                   "(word v1 .. vD per line)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sarcattn",
        description="Interpretable sarcasm detection: stacked multi-head "
                    "self-attention into a bidirectional GRU.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and report on the test split")
    p.add_argument("--train", required=True, help="JSON-lines dataset")
    p.add_argument("--test", help="separate JSON-lines test set (otherwise "
                   "the dataset's split field, or a seeded 80/20 split)")
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--config", help="INI config file (for --threshold)")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="word-level attention reports")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text", help="one sentence")
    src.add_argument("--file", help="batch input: .jsonl dataset or one "
                     "sentence per line")
    p.add_argument("--format", default="ansi", choices=list(FORMATS))
    p.add_argument("--out", help="output directory (required with --file)")
    p.add_argument("--model-view", action="store_true",
                   help="also write the layer-by-head heatmap grid")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("ablate", help="sweep one architecture axis")
    p.add_argument("--train", required=True)
    p.add_argument("--test", help="separate test set (see train)")
    p.add_argument("--out", required=True)
    p.add_argument("--sweep-layers", help="comma-separated #L values")
    p.add_argument("--sweep-heads", help="comma-separated #H values")
    p.add_argument("--sweep-embeddings",
                   help="comma-separated embedding files, or 'random'")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-synthetic", help="write the synthetic cue-word corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cue", default=DEFAULT_CUE)
    p.set_defaults(func=cmd_gen_synthetic)
    return parser


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_split(args, opts):
    """Load train/test sample lists according to --train/--test."""
    _require_file(args.train, "train file")
    examples = load_jsonl_dataset(args.train)
    if args.test:
        _require_file(args.test, "test file")
        train_ex = [e for e in examples if e.split != "test"]
        test_ex = load_jsonl_dataset(args.test)
    elif any(e.split for e in examples):
        train_ex = [e for e in examples if e.split == "train"]
        test_ex = [e for e in examples if e.split == "test"]
    else:
        order = np.random.default_rng(opts["seed"]).permutation(len(examples))
        cut = int(round(len(examples) * 0.8))
        train_ex = [examples[i] for i in order[:cut]]
        test_ex = [examples[i] for i in order[cut:]]
    if not train_ex:
        raise UsageError(f"no training examples in {args.train}")
    return train_ex, test_ex


def _tokens_for_vocab(examples, opts):
    for ex in examples:
        tokens = tokenize(ex.text)
        if opts["strip_stopwords"]:
            tokens = strip_stopwords(tokens)
        yield tokens


def _build_model_inputs(args, opts):
    """Shared train/ablate setup: vocabulary, samples, embeddings, config."""
    train_ex, test_ex = _load_split(args, opts)
    vocab = build_vocab(_tokens_for_vocab(train_ex, opts), opts["min_count"])

    table = None
    embed_dim = opts["embed_dim"]
    if getattr(args, "embeddings", None):
        _require_file(args.embeddings, "embedding file")
        table, coverage = load_embeddings(args.embeddings, vocab, opts["seed"])
        embed_dim = table.dim
        print(f"embedding file covers {coverage:.1%} of the vocabulary")

    cfg = ModelConfig(
        num_layers=opts["layers"], num_heads=opts["heads"],
        embed_dim=embed_dim, gru_hidden=opts["gru_hidden"],
        dropout_rate=opts["dropout"], max_len=opts["max_len"],
        vocab_size=vocab.size, seed=opts["seed"],
        scale_full_dim=opts["scale_full_dim"],
        no_residual=opts["no_residual"]).validate()

    train_samples = prepare(train_ex, vocab, cfg.max_len,
                            opts["strip_stopwords"])
    test_samples = (prepare(test_ex, vocab, cfg.max_len,
                            opts["strip_stopwords"]) if test_ex else [])
    return vocab, table, cfg, train_samples, test_samples


def cmd_train(args) -> int:
    opts = resolve(args, _TRAIN_KEYS)
    vocab, table, cfg, train_samples, test_samples = _build_model_inputs(args, opts)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "model.ckpt")
    result = train(
        cfg, train_samples, test_samples, epochs=opts["epochs"],
        lr=opts["lr"], batch_size=opts["batch_size"], embedding_table=table,
        vocab=vocab, checkpoint_path=ckpt_path,
        metrics_path=os.path.join(args.out, "metrics.jsonl"), log=print)

    eval_samples = test_samples or train_samples
    scores, labels = predict_scores(result.params, cfg, eval_samples,
                                    opts["batch_size"])
    report = evaluate(scores, labels)
    report_path = os.path.join(args.out, "test_report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(f"best epoch {result.best_epoch} (held-out F1 {result.best_f1:.4f})")
    print(f"test {report.summary()}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_eval(args) -> int:
    opts = resolve(args, ("threshold",))
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.data, "data file")
    ckpt = load_checkpoint(args.checkpoint)
    examples = load_jsonl_dataset(args.data)
    samples = prepare(examples, ckpt.vocab, ckpt.config.max_len)
    scores, labels = predict_scores(ckpt.params, ckpt.config, samples)
    report = evaluate(scores, labels, threshold=opts["threshold"])
    print(report.summary())
    print(report.to_json())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    return 0


_EXTENSIONS = {"ansi": "txt", "html": "html", "json": "json"}


def _explain_sentences(args):
    if args.text is not None:
        if not tokenize(args.text):
            raise UsageError("input text tokenizes to nothing")
        return [args.text]
    _require_file(args.file, "input file")
    sentences = []
    if args.file.endswith(".jsonl"):
        sentences = [e.text for e in load_jsonl_dataset(args.file)]
    else:
        with open(args.file, "r", encoding="utf-8") as fh:
            sentences = [line.strip() for line in fh if line.strip()]
    if not sentences:
        raise UsageError(f"no sentences in {args.file}")
    return sentences


def cmd_explain(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    ckpt = load_checkpoint(args.checkpoint)
    sentences = _explain_sentences(args)
    batch_mode = args.file is not None
    if batch_mode and not args.out:
        raise UsageError("--file needs --out DIRECTORY")
    if args.out:
        os.makedirs(args.out, exist_ok=True)

    index_rows = []
    for i, sentence in enumerate(sentences):
        tokens = tokenize(sentence)[:ckpt.config.max_len]
        if not tokens:
            raise UsageError(f"sentence {i} tokenizes to nothing: {sentence!r}")
        seq = encode(ckpt.vocab, tokens)
        score_t, record = forward(seq, ckpt.params, ckpt.config)
        score = float(score_t.data)
        attributions = aggregate(record, seq.words)
        doc = render_report(seq, attributions, score, args.format)
        if args.out:
            name = f"report_{i:03d}.{_EXTENSIONS[args.format]}"
            with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
                fh.write(doc if doc.endswith("\n") else doc + "\n")
            index_rows.append((name, sentence, score))
        else:
            print(doc)
        if args.model_view:
            view = export_model_view(record, seq.words)
            if args.out:
                vname = f"modelview_{i:03d}.html"
                with open(os.path.join(args.out, vname), "w",
                          encoding="utf-8") as fh:
                    fh.write(view)
            else:
                print(view)

    if batch_mode:
        _write_explain_index(args.out, index_rows)
        print(f"wrote {len(index_rows)} reports to {args.out}")
    return 0


def _write_explain_index(out_dir, rows):
    import html as _h
    items = "\n".join(
        f'<li><a href="{name}">{name}</a> (score {score:.4f}): '
        f"{_h.escape(sentence)}</li>"
        for name, sentence, score in rows)
    doc = ("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
           "<title>attention reports</title></head><body>\n"
           f"<ul>\n{items}\n</ul>\n</body></html>\n")
    with open(os.path.join(out_dir, "index.html"), "w", encoding="utf-8") as fh:
        fh.write(doc)


def _sweep_axis(args):
    axes = [(name, getattr(args, attr)) for name, attr in
            (("layers", "sweep_layers"), ("heads", "sweep_heads"),
             ("embeddings", "sweep_embeddings"))
            if getattr(args, attr)]
    if len(axes) != 1:
        raise UsageError("ablate sweeps exactly one axis: pass one of "
                         "--sweep-layers, --sweep-heads, --sweep-embeddings")
    name, raw = axes[0]
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if not values:
        raise UsageError(f"--sweep-{name}: no values given")
    if name in ("layers", "heads"):
        try:
            values = [int(v) for v in values]
        except ValueError:
            raise UsageError(f"--sweep-{name}: expected integers, got {raw!r}")
    return name, values


def _row_label(axis, value):
    if axis == "layers":
        return "0 (GRU only)" if value == 0 else \
            f"{value} Layer" + ("s" if value != 1 else "")
    if axis == "heads":
        return f"{value} Head" + ("s" if value != 1 else "")
    return str(value)


def cmd_ablate(args) -> int:
    axis, values = _sweep_axis(args)
    opts = resolve(args, _TRAIN_KEYS)
    os.makedirs(args.out, exist_ok=True)

    rows = []
    for value in values:
        run_opts = dict(opts)
        run_args = args
        if axis in ("layers", "heads"):
            run_opts[axis] = value
        else:
            run_args = argparse.Namespace(**vars(args))
            run_args.embeddings = None if value == "random" else value
        vocab, table, cfg, train_samples, test_samples = \
            _build_model_inputs(run_args, run_opts)
        print(f"[{axis}={value}] training ...")
        result = train(cfg, train_samples, test_samples,
                       epochs=run_opts["epochs"], lr=run_opts["lr"],
                       batch_size=run_opts["batch_size"],
                       embedding_table=table, vocab=vocab)
        scores, labels = predict_scores(
            result.params, cfg, test_samples or train_samples,
            run_opts["batch_size"])
        report = evaluate(scores, labels)
        rows.append({"axis": axis, "value": value,
                     "label": _row_label(axis, value),
                     "precision": report.precision, "recall": report.recall,
                     "f1": report.f1})
        print(f"[{axis}={value}] {report.summary()}")

    md = _ablation_markdown(axis, rows)
    with open(os.path.join(args.out, "ablation.md"), "w", encoding="utf-8") as fh:
        fh.write(md)
    with open(os.path.join(args.out, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump({"axis": axis, "rows": rows}, fh, indent=2)
        fh.write("\n")
    print(md)
    return 0


_AXIS_TITLE = {"layers": "#L - Layers", "heads": "#H - Heads",
               "embeddings": "Embeddings"}


def _ablation_markdown(axis, rows) -> str:
    out = [f"| {_AXIS_TITLE[axis]} | Precision | Recall | F1 |",
           "|---|---|---|---|"]
    for r in rows:
        out.append(f"| {r['label']} | {r['precision']:.4f} "
                   f"| {r['recall']:.4f} | {r['f1']:.4f} |")
    return "\n".join(out) + "\n"


def cmd_gen_synthetic(args) -> int:
    try:
        rows = generate_synthetic(args.n, args.vocab_size, args.seed, args.cue)
    except ValueError as exc:
        raise UsageError(str(exc))
    write_jsonl(rows, args.out)
    n_pos = sum(r["label"] for r in rows)
    n_train = sum(1 for r in rows if r["split"] == "train")
    print(f"wrote {len(rows)} examples to {args.out} "
          f"({n_pos} positive, {n_train} train / {len(rows) - n_train} test)")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TextError, CheckpointError, DivergenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
