"""Command-line entry point: ``slotalign <command> [options]``.

Exit codes: 0 success, 2 configuration or validation error, 3 I/O error,
4 parse error. Every artifact written carries a config hash.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from . import checkpoint, config
from .aligner import AlignerModel, train
from .bench import AlignerRunner, bench_latency, bench_offline, bench_table
from .errors import FormatError, InvalidInputError, ParseError, SlotAlignError, UnmatchedIdError
from .metrics import aas_corpus, compare_table
from .postproc import emit_jsonl, parse_jsonl
from .protocol import parse_output, strip_chat_framing
from .recipes import align_utterances
from .synthdata import Manifest, Utterance, gen_corpus
from . import tensorfile

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_PARSE = 0, 2, 3, 4


class UsageError(InvalidInputError):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _slots(text: str):
    return None if text == "all" else _int_list(text)


def run_config(args) -> config.RunConfig:
    overrides: dict[str, object] = {}
    if args.preset is not None:
        overrides["preset"] = args.preset
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None and args.command == "train":
        overrides["train.batch_size"] = args.batch_size
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides.update(config.parse_text(f"{key}={value}"))
    return config.load(args.config, overrides)


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_ckpt(path: str) -> checkpoint.Checkpoint:
    ckpt = checkpoint.load(path)
    ckpt.model.freeze()
    return ckpt


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    run = run_config(args)
    n = run.n_train if args.n is None else args.n
    if args.out is None:
        raise UsageError("gen needs --out DIR")
    manifest = gen_corpus(run.synth, n, args.out, start=args.start)
    print(Path(args.out) / "manifest.jsonl")
    print(f"{len(manifest)} utterances, manifest sha256 {manifest.digest()}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    run = run_config(args)
    if args.out is None:
        raise UsageError("train needs --out CHECKPOINT")
    corpus = Manifest.load(args.manifest).utterances()
    held = Manifest.load(args.eval_manifest).utterances() if args.eval_manifest else None
    if args.resume:
        ckpt = checkpoint.load(args.resume)
        if checkpoint.config_hash(ckpt.model.cfg) != checkpoint.config_hash(run.aligner):
            raise UsageError("checkpoint was trained with a different model config")
        model, optimizer, start = ckpt.model, ckpt.optimizer, ckpt.epoch
        log = list(ckpt.extra.get("log", []))
    else:
        model, optimizer, start, log = AlignerModel(run.aligner, seed=run.seed), None, 0, []

    def evaluate(m):
        results = align_utterances(m, held, None, args.batch_size or 32)
        return aas_corpus(results, held).aas_ms

    def report(entry):
        print(json.dumps(entry), file=sys.stderr, flush=True)

    res = train(model, corpus, run.train, optimizer=optimizer, start_epoch=start,
                eval_fn=evaluate if held else None, on_epoch=report, stop_epoch=args.stop_after)
    epoch = start + len(res.log)
    extra = {"run_config": run.to_dict(), "run_config_hash": run.config_hash(), "log": log + res.log}
    checkpoint.save(args.out, checkpoint.Checkpoint(res.model, epoch, res.optimizer, extra))
    print(args.out)
    return EXIT_OK


def cmd_align(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    if args.manifest:
        utts = Manifest.load(args.manifest).utterances()
    elif args.features and args.words:
        utts = [Utterance(Path(args.features).stem, tensorfile.read_matrix(args.features),
                          [(w, 0, 0) for w in args.words])]
    else:
        raise UsageError("align needs --manifest, or --features with --words")
    results = align_utterances(ckpt.model, utts, args.slots, args.batch_size or 32)
    for r in results:
        r.validate()
    _write(emit_jsonl(results, ckpt.extra.get("run_config_hash", ckpt.config_hash)), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    refs = Manifest.load(args.ref)
    names = args.names.split(",") if args.names else [Path(p).stem for p in args.predictions]
    if len(names) != len(args.predictions):
        raise UsageError("--names needs one name per prediction file")
    reports = {}
    for name, path in zip(names, args.predictions):
        results = parse_jsonl(Path(path).read_text(encoding="utf-8"))
        reports[name] = aas_corpus(results, refs, args.granularity)
    if args.table:
        sys.stderr.write(compare_table(reports))
    doc = {"config_hash": refs.config_hash, "granularity": args.granularity,
           "systems": {k: v.to_obj() for k, v in reports.items()}}
    _write(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    utts = Manifest.load(args.manifest).utterances()
    runner = AlignerRunner(ckpt.model)
    if args.mode == "offline":
        reports = bench_offline(runner, utts, args.batch_size or [1, 8])
    else:
        reports = [bench_latency(runner, utts, c, args.requests) for c in args.concurrency]
    if args.table:
        sys.stderr.write(bench_table(reports))
    doc = {"config_hash": ckpt.extra.get("run_config_hash", ckpt.config_hash),
           "reports": [r.to_obj(with_samples=args.samples) for r in reports]}
    _write(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_parse(args) -> int:
    if args.file:
        raw = Path(args.file).read_bytes()
    elif args.text is not None and args.text != "-":
        raw = args.text.encode("utf-8")
    else:
        raw = sys.stdin.buffer.read()
    if args.chat:
        try:
            raw = strip_chat_framing(raw.decode("utf-8")).encode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("invalid UTF-8", exc.start) from None
    out = parse_output(raw)
    _write(json.dumps({"language": out.language, "text": out.text}, ensure_ascii=False) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--preset", choices=config.PRESETS, help="model scale preset (default desk)")
    common.add_argument("--seed", type=int, help="master seed for data, init and training order")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--out", help="output path (stdout when omitted, where allowed)")

    p = argparse.ArgumentParser(prog="slotalign", description="Slot-filling forced aligner toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="render a synthetic corpus")
    g.add_argument("--n", type=int, help="number of utterances (default n_train)")
    g.add_argument("--start", type=int, default=0, help="index of the first utterance")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train an aligner on a manifest")
    t.add_argument("manifest")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--eval-manifest", help="held-out manifest scored after every epoch")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--stop-after", type=int, metavar="EPOCH", help="stop after this epoch, keeping the schedule")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("align", parents=[common], help="predict word timestamps")
    a.add_argument("checkpoint")
    a.add_argument("--manifest")
    a.add_argument("--features", help="single utterance feature file")
    a.add_argument("--words", type=_int_list, help="token ids of the single utterance")
    a.add_argument("--slots", type=_slots, default=None, help="word indices, e.g. 0,2, or 'all'")
    a.add_argument("--batch-size", type=int)
    a.set_defaults(func=cmd_align)

    e = sub.add_parser("eval", parents=[common], help="score alignments against a reference manifest")
    e.add_argument("predictions", nargs="+")
    e.add_argument("--ref", required=True, help="reference manifest")
    e.add_argument("--names", help="comma-separated system names")
    e.add_argument("--granularity", choices=("both", "start", "end"), default="both")
    e.add_argument("--table", action="store_true", help="print a comparison table to stderr")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common], help="measure RTF, throughput and latency")
    b.add_argument("checkpoint")
    b.add_argument("--manifest", required=True)
    b.add_argument("--mode", choices=("offline", "latency"), default="latency")
    b.add_argument("--concurrency", type=_int_list, default=[1])
    b.add_argument("--batch-size", type=_int_list, help="offline batch sizes")
    b.add_argument("--requests", type=int, help="requests per concurrency level")
    b.add_argument("--samples", action="store_true", help="include raw latency samples")
    b.add_argument("--table", action="store_true")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("parse", parents=[common], help="parse an ASR output string")
    r.add_argument("text", nargs="?", help="string to parse; '-' or omitted reads stdin")
    r.add_argument("--file")
    r.add_argument("--chat", action="store_true", help="strip assistant chat framing first")
    r.set_defaults(func=cmd_parse)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except UnmatchedIdError as exc:
        print(f"unmatched ids: {' '.join(exc.ids)}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SlotAlignError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
