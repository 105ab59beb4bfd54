"""``maskdiff`` command-line entry point.

Exit codes: 0 success, 2 a checked property failed, 1 usage or input error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from . import experiments as ex
from .config import load_config
from .errors import MaskDiffError

EXIT_OK, EXIT_USAGE, EXIT_ASSERT = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, default=None, help="overrides run.seed")
    common.add_argument("--out", default=None, help="output directory (overrides run.out)")
    common.add_argument("--deterministic", action="store_true", help="single-threaded numerics")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="maskdiff", description="Masked discrete diffusion toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("gen-corpus", parents=[common], help="write a synthetic corpus and its manifest")

    s = sub.add_parser("train", parents=[common], help="train a context-bag denoiser")
    s.add_argument("--corpus", required=True, help="corpus directory from gen-corpus")

    s = sub.add_parser("eval", parents=[common], help="NELBO / perplexity of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)

    s = sub.add_parser("zero-shot", parents=[common], help="evaluate one checkpoint on several corpora")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpora", nargs="*", default=[])

    s = sub.add_parser("sample", parents=[common], help="generate sequences and judge them")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True, help="corpus directory whose generator acts as judge")
    s.add_argument("--mode", choices=["plain", "semi_ar"], default=None)

    s = sub.add_parser("bench-caching", parents=[common], help="cached vs uncached sampler")
    s.add_argument("--checkpoint", required=True)

    s = sub.add_parser("ablate", parents=[common], help="ablation sweeps")
    s.add_argument("--kind", required=True, choices=["schedules", "T", "time_conditioning", "objective_ladder"])
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--corpus", default=None)

    s = sub.add_parser("score-check", parents=[common], help="score-entropy vs MDLM integrand equivalence")
    s.add_argument("--cases", type=int, default=1000)

    sub.add_parser("verify", parents=[common], help="run the tiny-instance oracle suite")

    s = sub.add_parser("expected-tokens", parents=[common], help="tokens that receive a training signal")
    s.add_argument("--steps", type=float, required=True)
    s.add_argument("--batch", type=float, required=True)
    s.add_argument("--ctx", type=float, required=True)
    s.add_argument("--schedule", default="log_linear")
    return p


def _thread_limit(args):
    n = 1 if args.deterministic else os.environ.get("MASKDIFF_THREADS")
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def run(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg["run"]["seed"]
    out = Path(args.out or cfg["run"]["out"])
    cmd = args.command
    if cmd == "gen-corpus":
        rep = ex.cmd_gen_corpus(cfg, seed, out)
    elif cmd == "train":
        rep = ex.cmd_train(cfg, args.corpus, seed, out)
    elif cmd == "eval":
        rep = ex.cmd_eval(cfg, args.checkpoint, args.corpus, seed)
    elif cmd == "zero-shot":
        rep = ex.cmd_zero_shot(cfg, args.checkpoint, args.corpora, seed)
    elif cmd == "sample":
        if args.mode:
            cfg.set("sample", "mode", args.mode)
        rep = ex.cmd_sample(cfg, args.checkpoint, args.corpus, seed, out)
    elif cmd == "bench-caching":
        rep = ex.cmd_bench_caching(cfg, args.checkpoint, seed)
    elif cmd == "ablate":
        rep = ex.cmd_ablate(cfg, args.kind, seed, args.checkpoint, args.corpus)
    elif cmd == "score-check":
        rep = ex.cmd_score_check(cfg, seed, args.cases)
    elif cmd == "verify":
        rep = ex.cmd_verify(cfg, seed)
    else:
        rep = ex.cmd_expected_tokens(cfg, args.steps, args.batch, args.ctx, args.schedule)
        print(int(rep.metrics["expected_tokens"]))
    path = rep.write(out / f"{cmd}.report.json")
    status = "passed" if rep.passed else "FAILED"
    print(f"{cmd}: {status}; report written to {path}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_ASSERT


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with _thread_limit(args):
            return run(args)
    except AssertionError as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except (MaskDiffError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
