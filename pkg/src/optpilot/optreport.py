"""Optimization-report acquisition, parsing, filtering and packing."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path, PurePath
from typing import TYPE_CHECKING, NamedTuple, Optional, Sequence

from . import _proc
from ._proc import ExecutableNotFound
from .source import split_lines

if TYPE_CHECKING:
    from .config import CompilerSpec

__all__ = [
    "CompilerRun",
    "CompilerTimeout",
    "Diagnostic",
    "ExecutableNotFound",
    "ParsedReport",
    "ReportDialect",
    "dialect_for",
    "filter_by_region",
    "format_diagnostic",
    "pack_report",
    "parse_report",
    "run_compiler",
]

DEFAULT_COMPILER_TIMEOUT = 300.0


class CompilerTimeout(Exception):
    def __init__(self, limit: float):
        super().__init__(f"compiler timed out after {limit:g} seconds")
        self.limit = limit


class ReportDialect(str, Enum):
    CLANG_RPASS = "clang_rpass"
    GCC_OPTINFO = "gcc_optinfo"


def dialect_for(family: str) -> ReportDialect:
    return ReportDialect.GCC_OPTINFO if family == "gcc" else ReportDialect.CLANG_RPASS


@dataclass(frozen=True)
class Diagnostic:
    file: str
    line: int
    column: int
    severity: str
    message: str
    pass_name: Optional[str] = None
    context_lines: tuple[str, ...] = field(default=(), compare=True)


class ParsedReport(NamedTuple):
    diagnostics: list[Diagnostic]
    discarded: int


@dataclass(frozen=True)
class CompilerRun:
    exit_status: int
    stdout: str
    stderr: str
    command_line: tuple[str, ...]

    @property
    def output(self) -> str:
        return self.stderr + self.stdout


_LOC = r"(?P<file>.+?):(?P<line>\d+):(?:(?P<col>\d+):)? "
_CLANG_RE = re.compile(
    _LOC
    + r"(?P<sev>remark|warning|error|fatal error|note): (?P<msg>.*?)"
    + r"(?: \[-R(?P<flag>pass|pass-missed|pass-analysis)=(?P<pass>[^\]\s]+)\])?\s*$"
)
_GCC_RE = re.compile(_LOC + r"(?P<sev>missed|note): (?P<msg>.*?)\s*$")
_ECHO_RE = re.compile(r"^\s*\d+\s+\|")
_GUTTER_RE = re.compile(r"^\s*\|")
_CARET_RE = re.compile(r"^[\s~]*\^[\s~^]*$")


def _is_context(lines: list[str], i: int) -> bool:
    line = lines[i]
    if _ECHO_RE.match(line) or _GUTTER_RE.match(line) or _CARET_RE.match(line):
        return True
    # older clang echoes the source line bare, followed by a caret line
    return i + 1 < len(lines) and bool(_CARET_RE.match(lines[i + 1])) and line.strip() != ""


def _severity(sev: str, flag: Optional[str]) -> str:
    if flag == "pass-missed":
        return "missed"
    if sev == "fatal error":
        return "error"
    return sev


def parse_report(text: str, dialect: ReportDialect | str) -> ParsedReport:
    """Parse compiler output into diagnostics. Never raises.

    Source-echo and caret lines attach to the diagnostic they follow; any
    other unmatched line is dropped and counted in ``discarded``.
    """
    dialect = ReportDialect(dialect)
    pattern = _GCC_RE if dialect is ReportDialect.GCC_OPTINFO else _CLANG_RE
    lines, _ = split_lines(text.replace("\r\n", "\n"))
    diags: list[Diagnostic] = []
    context: Optional[list[str]] = None
    discarded = 0

    def close() -> None:
        if context is not None and context:
            last = diags[-1]
            diags[-1] = Diagnostic(
                last.file, last.line, last.column, last.severity,
                last.message, last.pass_name, tuple(context),
            )

    for i, line in enumerate(lines):
        m = pattern.match(line)
        if m:
            ln, col = int(m["line"]), int(m["col"] or 1)
            msg = m["msg"].strip()
            if ln >= 1 and col >= 1 and msg:
                close()
                flag = m.groupdict().get("flag")
                diags.append(
                    Diagnostic(
                        file=m["file"],
                        line=ln,
                        column=col,
                        severity=_severity(m["sev"], flag),
                        message=msg,
                        pass_name=m.groupdict().get("pass"),
                    )
                )
                context = []
                continue
        if context is not None and _is_context(lines, i):
            context.append(line)
            continue
        close()
        context = None
        discarded += 1
    close()
    return ParsedReport(diags, discarded)


def _path_suffix_match(a: str, b: str) -> bool:
    pa, pb = PurePath(a).parts, PurePath(b).parts
    if not pa or not pb:
        return False
    k = min(len(pa), len(pb))
    return pa[-k:] == pb[-k:]


def filter_by_region(
    diags: Sequence[Diagnostic], region_lines: tuple[int, int], target_file: str
) -> list[Diagnostic]:
    start, end = region_lines
    return [
        d
        for d in diags
        if start <= d.line <= end and _path_suffix_match(d.file, target_file)
    ]


def format_diagnostic(d: Diagnostic) -> str:
    text = f"{d.file}:{d.line}:{d.column}: {d.severity}: {d.message}"
    return f"{text} [{d.pass_name}]" if d.pass_name else text


def pack_report(diags: Sequence[Diagnostic], budget_chars: int) -> str:
    """Render a budget-bounded prefix of ``diags``, one line each."""
    out: list[str] = []
    used = 0
    for d in diags:
        line = format_diagnostic(d) + "\n"
        if used + len(line) > budget_chars:
            break
        out.append(line)
        used += len(line)
    omitted = len(diags) - len(out)
    if omitted:
        out.append(f"... ({omitted} more diagnostics omitted)\n")
    return "".join(out)


def run_compiler(
    spec: "CompilerSpec",
    source: str | Path,
    mode: str,
    *,
    cwd: str | Path | None = None,
    output: str | Path | None = None,
    timeout: float = DEFAULT_COMPILER_TIMEOUT,
) -> CompilerRun:
    """Invoke the configured compiler on ``source``.

    ``mode`` is ``report`` (optimized compile to a discarded object with the
    report flags), ``syntax_check``, or ``build`` (optimized compile to
    ``output``). A nonzero exit status is returned, not raised.
    """
    source = str(source)
    if mode == "report":
        argv = [spec.compile_command, *spec.opt_flags, *spec.report_flags,
                "-c", source, "-o", os.devnull]
    elif mode == "syntax_check":
        argv = [spec.compile_command, *spec.syntax_check_flags, source]
    elif mode == "build":
        if output is None:
            raise ValueError("build mode needs an output path")
        argv = [spec.compile_command, *spec.opt_flags, "-c", source, "-o", str(output)]
    else:
        raise ValueError(f"unknown compiler mode: {mode!r}")
    done = _proc.run(argv, cwd=cwd, timeout=timeout)
    if done.timed_out:
        raise CompilerTimeout(timeout)
    return CompilerRun(done.returncode, done.stdout, done.stderr, done.argv)
