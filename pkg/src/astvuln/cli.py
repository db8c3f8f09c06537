"""Command line entry points.

Every option can come from a flag, from a JSON config file (``--config``,
keys are the option names with underscores) or from the built-in default,
in that order of precedence. The effective configuration is printed to
stderr before the command runs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

logger = logging.getLogger("astvuln")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_ints(text):
    return [int(x) for x in str(text).split(",") if x]


def _csv_floats(text):
    return [float(x) for x in str(text).split(",") if x]


def _csv(text):
    return [x for x in str(text).split(",") if x]


# name -> (default, type, help); None default means "required"
_SPLIT_OPTS = {
    "split_ratios": ("0.6,0.2,0.2", _csv_floats, "train,validation,test ratios"),
    "split_unit": ("advisory", str, "split unit: advisory or sample"),
    "seed": (0, int, "random seed"),
}

COMMANDS = {
    "build-dataset": {
        "help": "mine function-level samples from an advisory dump and fix patches",
        "opts": {
            "dump": (None, str, "advisory dump (JSON lines)"),
            "patch_dir": (None, str, "directory with <commit>.diff files and pre-images"),
            "languages": (None, _csv, "comma-separated target languages"),
            "output": (None, str, "output dataset (JSON lines)"),
            "stats": ("", str, "length statistics report path (default: <output>.stats.txt)"),
            "label_all_pre": (False, bool, "label every pre-fix function of a patched file vulnerable"),
            "fetch": (False, bool, "download missing patches from GitHub"),
            "min_interval": (1.0, float, "seconds between download requests"),
        },
    },
    "train-tokenizer": {
        "help": "learn a byte-level BPE vocabulary from a dataset",
        "opts": {
            "dataset": (None, str, "dataset (JSON lines)"),
            "vocab_size": (8192, int, "vocabulary size including bytes and special tokens"),
            "output": (None, str, "vocabulary file to write"),
            "n_jobs": (1, int, "processes used for pre-token counting"),
        },
    },
    "train": {
        "help": "train the classifier",
        "opts": {
            "dataset": (None, str, "dataset (JSON lines)"),
            "vocab": (None, str, "vocabulary file"),
            "output": (None, str, "checkpoint file to write"),
            "metrics_log": ("", str, "per-epoch metrics (default: <output>.metrics.jsonl)"),
            "layers": (4, int, "encoder layers"),
            "heads": (4, int, "attention heads"),
            "model_dim": (256, int, "hidden size"),
            "ffn_dim": (1024, int, "feed-forward size"),
            "window": (64, int, "attention window (even)"),
            "dilation": ("1", _csv_ints, "dilation, one value or one per layer"),
            "max_positions": (1024, int, "maximum tokens per sample"),
            "dropout": (0.1, float, "dropout rate"),
            "epochs": (10, int, "training epochs"),
            "batch_size": (8, int, "batch size"),
            "max_steps": (0, int, "stop after this many steps (0 = no limit)"),
            "lr": (1e-4, float, "learning rate"),
            "warmup": (0.1, float, "warmup fraction of all steps"),
            "alpha": (0.25, float, "focal loss weight of the positive class"),
            "gamma": (2.0, float, "focal loss focusing exponent"),
            "ast_mode": ("literal", str, "AST path sum: literal or dedup"),
            "no_ast": (False, bool, "drop the AST-path embedding"),
            "self_attention": (False, bool, "use full self-attention instead of windows"),
            "loss": ("focal", str, "focal or cross-entropy"),
            "language": ("c", str, "default language for samples without one"),
            **_SPLIT_OPTS,
        },
    },
    "evaluate": {
        "help": "rank a dataset split and report hits@k, recall and F1",
        "opts": {
            "checkpoint": (None, str, "checkpoint file"),
            "vocab": (None, str, "vocabulary file"),
            "dataset": (None, str, "dataset (JSON lines)"),
            "split": ("test", str, "train, validation, test or all"),
            "ks": ("50,100,200,500", _csv_ints, "comma-separated k values"),
            "threshold": (0.5, float, "probability threshold for recall/F1"),
            "json": ("", str, "also write the report as JSON to this path"),
            **_SPLIT_OPTS,
        },
    },
    "explain": {
        "help": "export per-token attention of one sample for plotting",
        "opts": {
            "checkpoint": (None, str, "checkpoint file"),
            "vocab": (None, str, "vocabulary file"),
            "sample": (None, str, "source file of one function"),
            "language": ("", str, "language tag (default: the checkpoint's)"),
            "layer": (-1, int, "encoder layer (negative counts from the end)"),
            "head": (0, int, "attention head"),
            "output": (None, str, "heatmap data file (TSV)"),
        },
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="astvuln", description="AST-aware vulnerability detection pipeline")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, spec in COMMANDS.items():
        p = sub.add_parser(name, help=spec["help"], description=spec["help"])
        p.add_argument("--config", default=None, help="JSON file with option values")
        for opt, (default, typ, text) in spec["opts"].items():
            flag = "--" + opt.replace("_", "-")
            shown = "required" if default is None else f"default: {default!r}"
            if typ is bool:
                p.add_argument(flag, dest=opt, action="store_const", const=True,
                               default=argparse.SUPPRESS, help=f"{text} ({shown})")
            else:
                p.add_argument(flag, dest=opt, default=argparse.SUPPRESS, help=f"{text} ({shown})")
    return parser


def resolve_options(command: str, flags: dict, config_path: str | None) -> dict:
    """Merge defaults, config file and flags; convert and validate types."""
    spec = COMMANDS[command]["opts"]
    raw = {k: v[0] for k, v in spec.items()}
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"invalid config {config_path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(cfg) - set(spec))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        raw.update(cfg)
    raw.update({k: v for k, v in flags.items() if k in spec})
    out = {}
    for key, value in raw.items():
        default, typ, _ = spec[key]
        if value is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")
        try:
            if typ is bool:
                out[key] = bool(value)
            elif isinstance(value, list) and typ in (_csv, _csv_ints, _csv_floats):
                out[key] = typ(",".join(map(str, value)))
            else:
                out[key] = typ(value)
        except (TypeError, ValueError):
            raise UsageError(f"bad value for {key}: {value!r}") from None
    return out


def _split_spec(opts):
    from .dataset import SplitSpec

    ratios = opts["split_ratios"]
    if len(ratios) != 3:
        raise UsageError("--split-ratios needs three values")
    return SplitSpec(tuple(ratios), opts["seed"], opts["split_unit"])


def cmd_build_dataset(opts) -> int:
    from .dataset import CommitFetcher, build_dataset, format_length_table, length_stats, write_dataset

    if not opts["languages"]:
        raise UsageError("--languages must name at least one language")
    fetcher = CommitFetcher(opts["min_interval"]) if opts["fetch"] else None
    samples, report = build_dataset(
        opts["dump"], opts["patch_dir"], opts["languages"], fetcher, opts["label_all_pre"]
    )
    write_dataset(samples, opts["output"])
    table = format_length_table(length_stats(samples))
    stats_path = opts["stats"] or opts["output"] + ".stats.txt"
    text = "\n".join(report.lines()) + "\n\n" + table
    Path(stats_path).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_train_tokenizer(opts) -> int:
    from .dataset import read_dataset
    from .tokenizer import BPETokenizer

    samples = read_dataset(opts["dataset"])
    if not samples:
        raise ValueError("dataset is empty")
    tok = BPETokenizer(opts["vocab_size"], n_jobs=opts["n_jobs"])
    try:
        tok.fit([s.source for s in samples])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    tok.vocabulary_.save(opts["output"])
    vocab = tok.vocabulary_
    print(f"merges: {len(vocab.merges)}  vocab_size: {vocab.vocab_size}  sha256: {vocab.content_hash()}")
    return EXIT_OK


def _model_config(opts):
    from .model import ModelConfig

    loss = opts["loss"].replace("-", "_")
    if loss not in ("focal", "cross_entropy"):
        raise UsageError("--loss must be focal or cross-entropy")
    dil = opts["dilation"]
    return ModelConfig(
        layers=opts["layers"],
        heads=opts["heads"],
        model_dim=opts["model_dim"],
        ffn_dim=opts["ffn_dim"],
        window=opts["window"],
        dilation=dil[0] if len(dil) == 1 else dil,
        max_positions=opts["max_positions"],
        dropout=opts["dropout"],
        use_ast=not opts["no_ast"],
        long_attention=not opts["self_attention"],
        loss=loss,
        alpha=opts["alpha"],
        gamma=opts["gamma"],
        ast_mode=opts["ast_mode"],
        lr=opts["lr"],
        warmup=opts["warmup"],
        epochs=opts["epochs"],
        batch_size=opts["batch_size"],
        max_steps=opts["max_steps"] or None,
        language=opts["language"],
        seed=opts["seed"],
    )


def cmd_train(opts) -> int:
    import torch

    from .dataset import read_dataset, split
    from .model import count_parameters, load_model, train
    from .tokenizer import Vocabulary

    try:
        config = _model_config(opts)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    vocab = Vocabulary.load(opts["vocab"])
    samples = read_dataset(opts["dataset"])
    train_part, val_part, _ = split(samples, _split_spec(opts))
    torch.manual_seed(config.seed)
    checkpoint, log = train(
        [(s.source, s.target, s.language) for s in train_part],
        [(s.source, s.target, s.language) for s in val_part],
        config,
        vocab,
    )
    checkpoint.save(opts["output"])
    log_path = opts["metrics_log"] or opts["output"] + ".metrics.jsonl"
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    final = log[-1]
    print(f"parameters: {count_parameters(load_model(checkpoint, vocab))}")
    print(f"steps: {final['step']}  final train accuracy: {final['train']['accuracy']:.4f}")
    if "validation" in final:
        print(f"final validation f1: {final['validation']['f1']:.4f}")
    print(f"best checkpoint step: {checkpoint.step}")
    return EXIT_OK


def cmd_evaluate(opts) -> int:
    from .dataset import read_dataset, split
    from .evaluation import RankedPredictions, report
    from .model import Checkpoint, predict_proba
    from .tokenizer import Vocabulary

    checkpoint = Checkpoint.load(opts["checkpoint"])
    vocab = Vocabulary.load(opts["vocab"])
    samples = read_dataset(opts["dataset"])
    names = {"train": 0, "validation": 1, "test": 2}
    if opts["split"] == "all":
        chosen = samples
    elif opts["split"] in names:
        chosen = split(samples, _split_spec(opts))[names[opts["split"]]]
    else:
        raise UsageError("--split must be train, validation, test or all")
    if not chosen:
        raise ValueError("selected split is empty")
    probs = predict_proba(checkpoint, vocab, [s.source for s in chosen], [s.language for s in chosen])
    ranked = RankedPredictions.from_scores([s.id for s in chosen], probs, [s.target for s in chosen])
    rep = report(ranked, opts["ks"], opts["threshold"])
    sys.stdout.write(rep.table(Path(opts["checkpoint"]).stem))
    if opts["json"]:
        Path(opts["json"]).write_text(rep.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_explain(opts) -> int:
    import torch

    from .evaluation import export_heatmap
    from .model import Checkpoint, collate, featurize, load_model
    from .tokenizer import Vocabulary

    checkpoint = Checkpoint.load(opts["checkpoint"])
    vocab = Vocabulary.load(opts["vocab"])
    model = load_model(checkpoint, vocab)
    source = Path(opts["sample"]).read_bytes()
    feats = featurize(source, vocab, checkpoint.kind_vocab, checkpoint.config, opts["language"] or None)
    batch = collate([feats], vocab.pad_id, len(checkpoint.kind_vocab))
    with torch.no_grad():
        logit, weights = model(batch, need_weights=True)
    layers = len(weights)
    layer = opts["layer"]
    if not -layers <= layer < layers:
        raise UsageError(f"--layer must lie in [{-layers}, {layers})")
    if not 0 <= opts["head"] < checkpoint.config.heads:
        raise UsageError(f"--head must lie in [0, {checkpoint.config.heads})")
    triples = weights[layer].triples(0, opts["head"])
    tokens = [vocab.token_str(i) for i in feats.ids.tolist()]
    export_heatmap(triples, tokens, opts["output"])
    print(f"probability: {float(torch.sigmoid(logit)[0]):.6f}  tokens: {len(tokens)}")
    return EXIT_OK


HANDLERS = {
    "build-dataset": cmd_build_dataset,
    "train-tokenizer": cmd_train_tokenizer,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error already reported
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}

    from .exceptions import (
        DumpParseError,
        IncompatibleArtifactError,
        InvalidDatasetError,
        InvalidSplitError,
        UnreconstructableError,
        UnsupportedLanguageError,
    )

    data_errors = (
        OSError,
        DumpParseError,
        IncompatibleArtifactError,
        InvalidDatasetError,
        InvalidSplitError,
        UnreconstructableError,
        UnsupportedLanguageError,
        json.JSONDecodeError,
        ValueError,
    )
    try:
        opts = resolve_options(args.command, flags, args.config)
        print("effective config: " + json.dumps({"command": args.command, **opts}, sort_keys=True),
              file=sys.stderr)
        return HANDLERS[args.command](opts)
    except UsageError as exc:
        print(f"astvuln {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except data_errors as exc:
        print(f"astvuln {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"astvuln {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
