"""Command-line entry point: ``flowpalm <command> [options]``.

Exit status: 0 on success, 2 for usage/config/path errors, 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from . import pipeline
from .config import CONFIG_ENV, ConfigError, apply_override, load_config


def _common(p: argparse.ArgumentParser, out_default: str | None = None) -> None:
    p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV}, else built-in defaults)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--workers", type=int, help="worker threads")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set sampler.T=100 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowpalm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="render a synthetic palm-like pair corpus")
    _common(p, "corpus")
    p.add_argument("--force", action="store_true", help="replace a non-empty output directory")

    p = sub.add_parser("build-library", help="estimate, filter and store deformation fields")
    _common(p, "library")
    p.add_argument("--corpus", required=True, help="corpus directory or manifest.json")

    p = sub.add_parser("sample", help="generate deformed images with the three-stage sampler")
    _common(p, "samples")
    p.add_argument("--library", required=True, help="library directory or .fplib file")
    p.add_argument("--identities", type=int)
    p.add_argument("--count", type=int, help="samples per identity")
    p.add_argument("--trace", action="store_true", help="also write intermediate states")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("evaluate", help="Frechet and class distances between two image trees")
    _common(p)
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)

    p = sub.add_parser("demo", help="corpus, library, samples and metrics in one run")
    _common(p, "flowpalm_demo")
    p.add_argument("--force", action="store_true")
    p.add_argument("--no-trace", dest="trace", action="store_false")
    return ap


def _config(args):
    config = load_config(args.config)
    for item in args.set:
        config = apply_override(config, item)
    if args.seed is not None:
        config = apply_override(config, f"seed={args.seed}")
    if args.workers is not None:
        config = apply_override(config, f"workers={args.workers}")
    if args.out is not None:
        config = apply_override(config, f"out={json.dumps(args.out)}")
    return config


def run(args) -> dict:
    config = _config(args)
    out = config.out
    if args.command == "gen-corpus":
        m = pipeline.cmd_gen_corpus(config, out, force=args.force)
        return {"entries": len(m["entries"]), "out": out}
    if args.command == "build-library":
        s = pipeline.cmd_build_library(config, args.corpus, out)
        return {"kept": s["kept"], "rejected": s["rejected"], "out": out}
    if args.command == "sample":
        m = pipeline.cmd_sample(config, args.library, out, args.identities, args.count,
                                trace=args.trace, force=args.force)
        return {"samples": len(m["samples"]), "out": out}
    if args.command == "evaluate":
        return pipeline.cmd_evaluate(config, args.generated, args.reference, args.out)
    return pipeline.cmd_demo(config, out, force=args.force, trace=args.trace)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    start = time.perf_counter()
    try:
        result = run(args)
    except (pipeline.UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"flowpalm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    result = dict(result, seconds=round(time.perf_counter() - start, 2))
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
