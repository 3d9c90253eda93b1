"""Command-line entry point: ``ados-score <verb> [options]``.

Verbs: fit, score, fuse, evaluate, explain, synth. Exit status is 0 on
success, 1 when some sessions failed inside an otherwise completed stage,
and 2 on a typed pipeline error or bad usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import PipelineConfig
from .errors import AdosError, ConfigError
from .fusion import FusionStrategy
from .pipeline import Pipeline, RunManifest, StageResult
from .synth import generate, profile_from_json, write_corpus

VERBS = ("fit", "score", "fuse", "evaluate", "explain", "synth")


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=d, help="pipeline config JSON")
    p.add_argument("--run-dir", type=Path, default=d, help="run directory (default runs/<timestamp>-s<seed>)")
    p.add_argument("--seed", type=int, default=d, help="override the config seed")
    p.add_argument(
        "--replay", nargs="?", const="auto", default=d, metavar="SOURCE",
        help="serve LLM calls from a fixture corpus or recorded raw_llm/ directory instead of the network",
    )
    p.add_argument("--force", action="store_true", default=d, help="rerun stages that are already complete")
    p.add_argument("--jobs", type=int, default=d, help="worker threads for per-session work")
    p.add_argument("-v", "--verbose", action="store_true", default=d)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ados-score", description="Score ADOS-2 Module 3 language items.")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="verb", required=True)

    def verb(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        _add_globals(p, suppress=True)
        return p

    verb("fit", "fit rule thresholds on the labeled corpus")
    p = verb("score", "produce per-session item scores")
    p.add_argument("--source", choices=("rule", "llm", "both"), default="rule")
    p = verb("fuse", "fuse LLM and rule scores with MAE-derived weights")
    p.add_argument("--strategy", help="v1, v2, v3 or v4 (default from config)")
    verb("evaluate", "compute metrics and print the results table")
    p = verb("explain", "run the evidence-extraction pass for one session")
    p.add_argument("--session", required=True)
    p.add_argument("--item", action="append", help="item id (repeatable; default all eight)")
    p = verb("synth", "generate a seeded synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--profile", type=Path, help="generator profile JSON")
    p.add_argument("--n", type=int, help="number of sessions")
    p.add_argument("--mix", help="class mix as n_td,n_asd,n_autism")
    p.add_argument("--fixture-error-rate", type=float)
    return parser


def _pipeline(args) -> Pipeline:
    if args.config is None:
        raise ConfigError(f"{args.verb} needs --config")
    cfg = PipelineConfig.load(args.config)
    if getattr(args, "strategy", None):
        try:
            cfg = replace(cfg, strategy=FusionStrategy.parse(args.strategy))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if args.jobs is not None and args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    return Pipeline(cfg, args.run_dir, seed=args.seed, jobs=args.jobs, force=bool(args.force), replay=args.replay)


def _report(result: StageResult, out) -> int:
    if result.skipped:
        print(f"{result.stage}: already complete (use --force to rerun)", file=sys.stderr)
    if result.output:
        print(result.output, file=out, end="" if result.output.endswith("\n") else "\n")
    for sid, msg in sorted(result.failures.items()):
        print(f"{result.stage}: {sid} failed: {msg}", file=sys.stderr)
    return 0 if result.ok else 1


def _synth(args, out) -> int:
    data = json.loads(args.profile.read_text(encoding="utf-8")) if args.profile else {}
    if args.n is not None:
        data["n_sessions"] = args.n
    if args.mix:
        try:
            data["class_mix"] = [int(x) for x in args.mix.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --mix {args.mix!r}") from exc
    if args.fixture_error_rate is not None:
        data["fixture_error_rate"] = args.fixture_error_rate
    if args.seed is not None:
        data["seed"] = args.seed
    profile = profile_from_json(data)
    corpus = generate(profile)
    write_corpus(corpus, args.out)
    if args.run_dir is not None:
        args.run_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest.load_or_new(args.run_dir, profile.seed, "")
        manifest.record("synth", "", [], corpus_dir=str(args.out.resolve()), n_sessions=profile.n_sessions)
        manifest.save(args.run_dir)
    print(f"wrote {profile.n_sessions} synthetic sessions to {args.out}", file=out)
    return 0


def run(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "synth":
            return _synth(args, out)
        pipe = _pipeline(args)
        if args.verb == "fit":
            return _report(pipe.fit(), out)
        if args.verb == "score":
            sources = ("rule", "llm") if args.source == "both" else (args.source,)
            code = 0
            for src in sources:
                result = pipe.score_rule() if src == "rule" else pipe.score_llm()
                code = max(code, _report(result, out))
            return code
        if args.verb == "fuse":
            return _report(pipe.fuse(), out)
        if args.verb == "evaluate":
            return _report(pipe.evaluate(), out)
        return _report(pipe.explain(args.session, args.item), out)
    except AdosError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
