"""Command-line entry point: ``sandhiseg {gen,vocab,train,segment,eval}``.

Settings come from three layers, later ones winning: built-in defaults, a flat
``key = value`` file given with ``--config``, and command-line flags. The
effective settings for the chosen command are echoed to stderr before it runs.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .corpus import hash_split, parse_corpus, read_corpus, write_corpus
from .evaluation import evaluate_corpus, format_report, per_length_csv
from .sandhi import default_lexicon, default_rules, generate_corpus, load_lexicon, load_rules
from .seq2seq import (
    ModelConfig,
    load_checkpoint,
    parameter_shapes,
    parse_setting,
    render_setting,
    save_checkpoint,
    segment_batch,
    train,
)
from .subword import learn_vocab, load_vocab, realized_ids, save_vocab

MODEL_KEYS = [f.name for f in dataclasses.fields(ModelConfig) if not f.name.endswith("_vocab_size")]
_MODEL_TYPES = {f.name: f.type for f in dataclasses.fields(ModelConfig)}

# key -> (type name, default); None means "no default"
RUN_SETTINGS: dict[str, tuple[str, object]] = {
    # gen
    "n": ("int", None),
    "rules": ("str", None),
    "lexicon": ("str", None),
    "apply_probability": ("float", 0.9),
    "min_words": ("int", 2),
    "max_words": ("int", 6),
    "out": ("str", None),
    "test_out": ("str", None),
    "test_fraction": ("float", 0.1),
    "train_fraction": ("float", None),
    "exclude": ("str", None),
    "from_corpus": ("str", None),
    # vocab / train / segment
    "corpus": ("str", None),
    "vocab": ("str", None),
    "vocab_size": ("int", 8000),
    "checkpoint": ("str", None),
    "resume": ("str", None),
    "save_every": ("int", 0),
    "loss_out": ("str", None),
    "input": ("str", "-"),
    "output": ("str", "-"),
    "tsv": ("bool", False),
    # eval
    "predictions": ("str", None),
    "gold": ("str", None),
    "report": ("str", None),
    "csv": ("str", None),
}
for _k in MODEL_KEYS:
    RUN_SETTINGS[_k] = (_MODEL_TYPES[_k] if isinstance(_MODEL_TYPES[_k], str) else _MODEL_TYPES[_k].__name__,
                        getattr(ModelConfig(), _k))

COMMAND_KEYS = {
    "gen": ["seed", "n", "rules", "lexicon", "apply_probability", "min_words", "max_words", "out",
            "test_out", "test_fraction", "train_fraction", "exclude", "from_corpus"],
    "vocab": ["corpus", "vocab", "vocab_size"],
    "train": ["corpus", "vocab", "checkpoint", "resume", "save_every", "loss_out", *MODEL_KEYS],
    "segment": ["checkpoint", "vocab", "input", "output", "tsv"],
    "eval": ["predictions", "gold", "report", "csv"],
}


class CliError(Exception):
    """A user-facing failure; reported as one line on stderr."""


def parse_config_file(path) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        if key not in RUN_SETTINGS:
            raise CliError(f"{path}:{lineno}: unknown setting {key!r}")
        values[key] = value.strip()
    return values


def resolve(command: str, file_values: dict[str, str], flags: dict[str, object]) -> dict[str, object]:
    """Merge defaults, config file and flags for ``command``'s keys."""
    out = {}
    for key in COMMAND_KEYS[command]:
        typ, value = RUN_SETTINGS[key]
        if key in file_values:
            try:
                value = parse_setting(file_values[key], typ)
            except ValueError:
                raise CliError(f"config: bad value for {key}: {file_values[key]!r}") from None
        if flags.get(key) is not None:
            value = flags[key]
        out[key] = value
    return out


def echo(settings: dict[str, object], command: str) -> None:
    print(f"# sandhiseg {command}", file=sys.stderr)
    for key, value in settings.items():
        print(f"{key} = {'' if value is None else render_setting(value)}", file=sys.stderr)


def _need(settings, *keys):
    for key in keys:
        if settings.get(key) in (None, ""):
            raise CliError(f"missing required setting '{key}' (flag --{key.replace('_', '-')})")


def _model_config(settings) -> ModelConfig:
    return ModelConfig(**{k: settings[k] for k in MODEL_KEYS}).validate()


def cmd_gen(s) -> int:
    _need(s, "out")
    if s["from_corpus"]:
        corpus = read_corpus(s["from_corpus"])
    else:
        _need(s, "n")
        if s["n"] <= 0:
            raise CliError(f"--n must be positive, got {s['n']}")
        rules = load_rules(s["rules"], s["apply_probability"]) if s["rules"] else default_rules(s["apply_probability"])
        lexicon = load_lexicon(s["lexicon"]) if s["lexicon"] else default_lexicon()
        corpus = generate_corpus(lexicon, s["n"], (s["min_words"], s["max_words"]), rules, s["seed"])
    if s["test_out"]:
        exclude = list(read_corpus(s["exclude"])) if s["exclude"] else None
        train_part, test_part = hash_split(corpus, s["test_fraction"], s["seed"], s["train_fraction"], exclude)
        write_corpus(train_part, s["out"])
        write_corpus(test_part, s["test_out"])
        print(f"wrote {len(train_part)} train pairs to {s['out']}")
        print(f"wrote {len(test_part)} test pairs to {s['test_out']}")
    else:
        write_corpus(corpus, s["out"])
        print(f"wrote {len(corpus)} pairs to {s['out']}")
    return 0


def cmd_vocab(s) -> int:
    _need(s, "corpus", "vocab")
    corpus = read_corpus(s["corpus"])
    vocab = learn_vocab(corpus.lines(), s["vocab_size"])
    save_vocab(vocab, s["vocab"])
    print(f"vocabulary size\t{len(vocab)}")
    print(f"encoder vocabulary\t{len(realized_ids(corpus.sources, vocab))}")
    print(f"decoder vocabulary\t{len(realized_ids(corpus.targets, vocab))}")
    return 0


def cmd_train(s) -> int:
    _need(s, "corpus", "vocab", "checkpoint")
    corpus = read_corpus(s["corpus"])
    vocab = load_vocab(s["vocab"])
    config = _model_config(s)
    start = load_checkpoint(s["resume"], vocab) if s["resume"] else None
    if start is not None:
        merged = dataclasses.replace(
            config,
            encoder_vocab_size=start.config.encoder_vocab_size,
            decoder_vocab_size=start.config.decoder_vocab_size,
        )
        if parameter_shapes(merged) != parameter_shapes(start.config):
            raise CliError(f"{s['resume']}: architecture differs from the requested settings")
        start.config = merged
    curve_lines = []

    def on_epoch(epoch, mean, ckpt):
        line = f"{epoch}\t{mean!r}"
        curve_lines.append(line)
        print(line, flush=True)
        if s["save_every"] > 0 and epoch % s["save_every"] == 0:
            save_checkpoint(ckpt, s["checkpoint"])

    print("epoch\tmean_loss")
    result = train(corpus, vocab, config, checkpoint=start, on_epoch=on_epoch)
    save_checkpoint(result.checkpoint, s["checkpoint"])
    if s["loss_out"]:
        Path(s["loss_out"]).write_text("epoch\tmean_loss\n" + "".join(l + "\n" for l in curve_lines), encoding="utf-8")
    return 0


def _read_input(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def cmd_segment(s) -> int:
    _need(s, "checkpoint", "vocab")
    vocab = load_vocab(s["vocab"])
    ckpt = load_checkpoint(s["checkpoint"], vocab)
    text = _read_input(s["input"])
    if s["tsv"]:
        texts = parse_corpus(text, s["input"]).sources
    else:
        texts = text.splitlines()
    out = "".join(" ".join(words) + "\n" for words in segment_batch(texts, ckpt, vocab))
    if s["output"] == "-":
        sys.stdout.write(out)
    else:
        Path(s["output"]).write_bytes(out.encode("utf-8"))
    return 0


def cmd_eval(s) -> int:
    _need(s, "predictions", "gold")
    predictions = [line.split() for line in Path(s["predictions"]).read_text(encoding="utf-8").splitlines()]
    gold = read_corpus(s["gold"])
    if len(predictions) != len(gold):
        raise CliError(f"{len(predictions)} prediction lines but {len(gold)} gold pairs")
    report = evaluate_corpus(predictions, gold)
    text = format_report(report)
    sys.stdout.write(text)
    if s["report"]:
        Path(s["report"]).write_bytes(text.encode("utf-8"))
    if s["csv"]:
        Path(s["csv"]).write_bytes(per_length_csv(report).encode("utf-8"))
    return 0


COMMANDS = {"gen": cmd_gen, "vocab": cmd_vocab, "train": cmd_train, "segment": cmd_segment, "eval": cmd_eval}

HELP = {
    "gen": "generate a synthetic sandhi corpus, optionally split into train/test",
    "vocab": "learn a subword vocabulary over both corpus columns",
    "train": "train the encoder-decoder and write a checkpoint",
    "segment": "split sandhied lines into words",
    "eval": "score predictions against a gold corpus",
}


def _bool(raw: str) -> bool:
    try:
        return parse_setting(raw, "bool")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


_ARG_TYPES = {"int": int, "float": float, "str": str, "bool": _bool}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value settings file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="sandhiseg", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
        for key in COMMAND_KEYS[name]:
            if key == "seed":
                continue
            typ, default = RUN_SETTINGS[key]
            hint = f" (default: {render_setting(default)})" if default is not None else ""
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=_ARG_TYPES[typ], default=None,
                           help=f"{typ}{hint}")
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    try:
        file_values = parse_config_file(args.pop("config")) if "config" in args else {}
        settings = resolve(command, file_values, args)
        echo(settings, command)
        return COMMANDS[command](settings)
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        msg = str(exc) if not isinstance(exc, OSError) or not exc.filename else f"{exc.filename}: {exc.strerror}"
        print(f"sandhiseg: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
