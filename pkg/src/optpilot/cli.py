"""Command-line entry point: ``optpilot run | parse-report | render-prompt | summarize | demo``."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from . import _proc
from ._proc import ExecutableNotFound
from .config import (
    PROMPT_IDS,
    ConfigError,
    PromptContext,
    apply_overrides,
    load_config,
    render_prompt,
)
from .llm import LLMError
from .optreport import CompilerTimeout, format_diagnostic, parse_report
from .orchestrator import BaselineError, run_many
from .reporting import aggregate, load_runs, write_summary
from .source import SourceError, SourceFile, make_version

log = logging.getLogger("optpilot")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BASELINE = 3
EXIT_PROVIDER = 4
EXIT_IO = 5

# Checked in order; the first matching class decides the exit status.
EXIT_CODES: tuple[tuple[type[BaseException], int], ...] = (
    (ConfigError, EXIT_CONFIG),
    (SourceError, EXIT_CONFIG),
    (ExecutableNotFound, EXIT_CONFIG),
    (BaselineError, EXIT_BASELINE),
    (LLMError, EXIT_PROVIDER),
    (CompilerTimeout, EXIT_IO),
    (OSError, EXIT_IO),
)


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    raise exc


def cmd_run(args: argparse.Namespace) -> int:
    cfg = apply_overrides(
        load_config(args.config),
        iterations=args.iterations,
        runs=args.runs,
        provider_kind=args.provider,
        replay_file=args.replay,
        out_dir=args.out,
    )
    runs = run_many(cfg, jobs=args.jobs)
    summary = aggregate(runs)
    json_path, md_path = write_summary(summary, runs, cfg.out_dir)
    print("| Max. | Avg. | Num. |")
    print(summary.table_row)
    print(f"wrote {json_path} and {md_path}")
    return EXIT_OK


def cmd_parse_report(args: argparse.Namespace) -> int:
    data = Path(args.input).read_bytes()
    parsed = parse_report(data.decode("utf-8", errors="replace"), args.dialect)
    for d in parsed.diagnostics:
        print(format_diagnostic(d))
    print(f"parsed {len(parsed.diagnostics)} diagnostics, discarded {parsed.discarded} lines")
    return EXIT_OK


def _parse_vars(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--var expects NAME=VALUE, got {pair!r}")
        if value.startswith("@"):
            value = Path(value[1:]).read_text(encoding="utf-8")
        out[name] = value
    return out


def cmd_render_prompt(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    values = _parse_vars(args.var)
    unknown = set(values) - {"code", "report", "scoreint", "compilerfamily"}
    if unknown:
        raise ConfigError(f"unknown prompt variables: {', '.join(sorted(unknown))}")
    if "code" not in values:
        version = make_version(SourceFile.read(cfg.target.source_path).text, cfg.target.region)
        values["code"] = version.snippet
    values.setdefault("compilerfamily", cfg.compiler.family.display_name)
    try:
        score = int(values["scoreint"]) if "scoreint" in values else None
    except ValueError:
        raise ConfigError("scoreint must be an integer") from None
    ctx = PromptContext(
        code=values["code"],
        report=values.get("report"),
        scoreint=score,
        compilerfamily=values["compilerfamily"],
    )
    print(render_prompt(cfg.prompts.get(args.kind), ctx))
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    runs = load_runs(args.out)
    if not runs:
        print(f"no run*/record.json files under {args.out}", file=sys.stderr)
        return EXIT_IO
    summary = aggregate(runs)
    write_summary(summary, runs, args.out)
    print("| Max. | Avg. | Num. |")
    print(summary.table_row)
    return EXIT_OK


def cmd_demo(args: argparse.Namespace) -> int:
    dest = Path(args.dir)
    dest.mkdir(parents=True, exist_ok=True)
    demo = resources.files("optpilot.demo")
    for entry in demo.iterdir():
        if entry.is_file() and not entry.name.startswith(("__", ".")):
            target = dest / entry.name
            target.write_bytes(entry.read_bytes())
            if entry.name.endswith(".sh"):
                target.chmod(0o755)
    print(f"demo target written to {dest}; try: optpilot run --config {dest / 'config.yaml'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optpilot",
        description="Drive a chat model with compiler optimization reports to speed up a code region.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="baseline plus iterative optimization runs")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--iterations", type=int)
    run.add_argument("--runs", type=int)
    run.add_argument("--provider", help="openai_compatible, anthropic_compatible or replay")
    run.add_argument("--replay", help="replay script (responses separated by ---8<--- lines)")
    run.add_argument("--jobs", type=int, default=1,
                     help="concurrent runs (default 1; >1 makes timings noisy)")
    run.set_defaults(func=cmd_run)

    pr = sub.add_parser("parse-report", aliases=["parse_report"],
                        help="parse a saved compiler report and print the diagnostics")
    pr.add_argument("input")
    pr.add_argument("--dialect", choices=["clang", "gcc", "clang_rpass", "gcc_optinfo"],
                    default="clang")
    pr.set_defaults(func=cmd_parse_report)

    rp = sub.add_parser("render-prompt", aliases=["render_prompt"],
                        help="print a rendered prompt for checking templates")
    rp.add_argument("--config", required=True)
    rp.add_argument("--kind", required=True, choices=PROMPT_IDS)
    rp.add_argument("--var", action="append", default=[], metavar="NAME=VALUE",
                    help="prompt variable (VALUE may be @file)")
    rp.set_defaults(func=cmd_render_prompt)

    sm = sub.add_parser("summarize", help="recompute summary.json/summary.md from run records")
    sm.add_argument("--out", required=True)
    sm.set_defaults(func=cmd_summarize)

    dm = sub.add_parser("demo", help="copy the bundled matmul demo target into a directory")
    dm.add_argument("dir")
    dm.set_defaults(func=cmd_demo)
    return parser


def _on_term(signum, frame):
    _proc.kill_all()
    raise SystemExit(128 + signum)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "dialect", None) in ("clang", "gcc"):
        args.dialect = {"clang": "clang_rpass", "gcc": "gcc_optinfo"}[args.dialect]
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("optpilot: --jobs must be ≥ 1", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    previous = None
    try:
        previous = signal.signal(signal.SIGTERM, _on_term)
    except ValueError:
        pass  # not the main thread
    try:
        return args.func(args)
    except KeyboardInterrupt:
        _proc.kill_all()
        return 130
    except Exception as exc:  # noqa: BLE001
        code = exit_code_for(exc)
        print(f"optpilot: {exc}", file=sys.stderr)
        return code
    finally:
        if previous is not None:
            signal.signal(signal.SIGTERM, previous)


if __name__ == "__main__":
    sys.exit(main())
