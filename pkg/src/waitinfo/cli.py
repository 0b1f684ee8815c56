"""Command-line entry point: ``waitinfo <command> [flags]``.

Exit status is 0 on success, 1 on a usage error and 2 when the command
itself fails (missing files, bad config, incompatible checkpoint, ...).
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np
import yaml

from . import tensor as T
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import TASKS, generate_corpus, read_corpus, write_corpus
from .latency import LatencyReport
from .policy import CatchUp, Schedule, WaitInfo, WaitK, write_traces
from .train import TrainConfig, evaluate_policy, load_config, parse_k_list, sweep, sweep_csv, train
from .vocab import BOS, EOS

USAGE_ERROR, RUNTIME_ERROR = 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _override(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), yaml.safe_load(value)


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_train(args) -> None:
    overrides = dict(args.set or [])
    for key in ("steps", "seed", "task"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    config = load_config(args.config, overrides) if args.config else TrainConfig.from_dict(overrides)
    model, records = train(config, log_path=args.log)
    train_keys = {k: v for k, v in config.to_dict().items() if k != "model"}
    save_checkpoint(model, args.out, extra={"train": train_keys})
    last = records[-1]
    print(f"step={last['step']}\tce={last['ce']:.4f}\tsum={last['sum']:.4f}\tcheckpoint={args.out}")


def _policy(args):
    if args.policy == "wait-info":
        return WaitInfo(args.K, include_current=not args.exclude_current)
    if args.policy == "wait-k":
        return WaitK(int(args.K))
    return CatchUp(int(args.K), args.c)


def cmd_simulate(args) -> None:
    model = load_checkpoint(args.ckpt)
    pairs = read_corpus(args.corpus)
    score, report, traces = evaluate_policy(model, pairs, _policy(args))
    if args.trace:
        write_traces(args.trace, traces)
    if args.hyp:
        lines = [" ".join(str(a.token) for a in t.actions if a.kind == "W" and a.token != EOS) for t in traces]
        _write_text(args.hyp, "\n".join(lines) + "\n")
    print(f"BLEU={score:.2f}\t{_report_fields(report)}")


def cmd_sweep(args) -> None:
    model = load_checkpoint(args.ckpt)
    pairs = read_corpus(args.corpus)
    rows = sweep(model, pairs, parse_k_list(args.K_list), include_current=not args.exclude_current)
    _write_text(args.csv, sweep_csv(rows))


def _report_fields(r: LatencyReport) -> str:
    return f"AL={r.al:.2f}\tCW={r.cw:.2f}\tAP={r.ap:.2f}\tDAL={r.dal:.2f}\tearly_stop={int(r.early_stop)}"


def cmd_metrics(args) -> None:
    with open(args.schedule) as fh:
        text = fh.read()
    try:
        g = [int(tok) for tok in text.split()]
    except ValueError:
        raise ValueError(f"{args.schedule}: schedule must contain integers only") from None
    if not g:
        raise ValueError(f"{args.schedule}: empty schedule")
    n = args.n if args.n is not None else max(g)
    report = LatencyReport.from_schedule(Schedule(g, n))
    print(f"n={n}\tm={len(g)}\t{_report_fields(report)}")


def cmd_inspect_info(args) -> None:
    model = load_checkpoint(args.ckpt)
    out = []
    for p in read_corpus(args.corpus):
        ids = p.src + [EOS] if args.side == "src" else [BOS] + p.tgt
        arr = np.asarray([ids], dtype=np.int64)
        with T.no_grad():
            emb = T.embedding(model.params[f"{args.side}_emb"], arr)
            info = model.infos(args.side, arr, emb).data[0]
        out.extend(f"{tok}\t{val:.4f}" for tok, val in zip(ids, info))
    _write_text(args.out, "\n".join(out) + "\n")


def cmd_gen_corpus(args) -> None:
    if args.count < 1:
        raise UsageError("--count must be positive")
    pairs = generate_corpus(args.task, args.count, args.seed, args.min_len, args.max_len)
    if args.out in (None, "-"):
        for p in pairs:
            print(p.to_json())
    else:
        write_corpus(args.out, pairs)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="waitinfo", description="Info-aware simultaneous translation on synthetic corpora.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", help="YAML file of training keys (model keys may sit at top level)")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--log", help="JSONL training log path")
    p.add_argument("--steps", type=int, help="override the number of optimiser steps")
    p.add_argument("--seed", type=int, help="override the model and sampling seed")
    p.add_argument("--task", choices=TASKS, help="override the synthetic task")
    p.add_argument("--set", action="append", type=_override, metavar="KEY=VALUE",
                   help="override any config key (repeatable); wins over the config file")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("simulate", cmd_simulate, "run one policy over a corpus"),
                                 ("sweep", cmd_sweep, "wait-info sweep over a list of K values")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt", required=True, help="checkpoint to load")
        p.add_argument("--corpus", required=True, help="JSONL corpus to translate")
        p.add_argument("--exclude-current", action="store_true",
                       help="compare against the target info before the current step")
        if name == "simulate":
            p.add_argument("--K", type=float, required=True,
                           help="lagging info for wait-info, or k for wait-k/catch-up")
            p.add_argument("--policy", choices=("wait-info", "wait-k", "catchup"), default="wait-info",
                           help="read/write policy (default wait-info)")
            p.add_argument("--c", type=float, default=2.0, help="catch-up interval for --policy catchup")
            p.add_argument("--trace", help="write READ/WRITE traces here")
            p.add_argument("--hyp", help="write hypotheses (one sentence per line) here; '-' for stdout")
        else:
            p.add_argument("--K-list", dest="K_list", default="1..15",
                           help="K values, e.g. '1..15' or '1,2,full' (default 1..15)")
            p.add_argument("--csv", help="CSV output path (default stdout)")
        p.set_defaults(func=func)

    p = sub.add_parser("metrics", help="latency metrics of one schedule")
    p.add_argument("--schedule", required=True, help="file of g values, whitespace separated")
    p.add_argument("--n", type=int, help="source length (default: the largest g)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("inspect-info", help="dump per-token info, one 'token<TAB>info' line per token")
    p.add_argument("--ckpt", required=True, help="checkpoint to load")
    p.add_argument("--corpus", required=True, help="JSONL corpus")
    p.add_argument("--side", choices=("src", "tgt"), default="src",
                   help="source tokens (with EOS) or target decoder inputs (with BOS)")
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=cmd_inspect_info)

    p = sub.add_parser("gen-corpus", help="write a deterministic synthetic corpus")
    p.add_argument("--task", choices=TASKS, required=True, help="synthetic task")
    p.add_argument("--count", type=int, required=True, help="number of sentence pairs")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--min-len", type=int, default=4, help="shortest content length (default 4)")
    p.add_argument("--max-len", type=int, default=16, help="longest sentence length (default 16)")
    p.add_argument("--out", help="JSONL output path (default stdout)")
    p.set_defaults(func=cmd_gen_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"waitinfo: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (OSError, ValueError, RuntimeError, CheckpointError, yaml.YAMLError) as exc:
        print(f"waitinfo: error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
