"""Judge a candidate: compile check, optimized build, harness run, score."""

from __future__ import annotations

import re
import shlex
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Optional, Union

from . import _proc
from .optreport import run_compiler

if TYPE_CHECKING:
    from .config import CompilerSpec

NO_SCORE_MESSAGE = "harness passed but emitted no SCORE line"

_SCORE_RE = re.compile(r"^SCORE:[ \t]*(\d+(?:\.\d*)?)[ \t]*$", re.MULTILINE)


@dataclass(frozen=True)
class HarnessSpec:
    command: tuple[str, ...]
    timeout_seconds: float = 600.0

    def problems(self) -> list[str]:
        out = []
        if not self.command:
            out.append("harness.command must be non-empty")
        if self.timeout_seconds <= 0:
            out.append("harness.timeout_seconds must be positive")
        return out


@dataclass(frozen=True)
class CompileFailed:
    messages: str
    outcome = "compile_failed"


@dataclass(frozen=True)
class TestsFailed:
    messages: str
    outcome = "tests_failed"
    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class Passed:
    score_ms: int
    outcome = "passed"


EvalResult = Union[CompileFailed, TestsFailed, Passed]


def parse_score(stdout: str) -> Optional[int]:
    """Last ``SCORE: <number>`` line, truncated toward zero."""
    matches = _SCORE_RE.findall(stdout)
    if not matches:
        return None
    return int(float(matches[-1]))


def _silent(status: int) -> str:
    return f"harness exited with status {status} and produced no output"


def classify(
    *,
    compile_ok: bool,
    compile_messages: str = "",
    exit_status: int = 0,
    output: str = "",
    stdout: Optional[str] = None,
    timed_out: bool = False,
    timeout_seconds: float = 0.0,
) -> EvalResult:
    """Map raw stage outcomes onto exactly one :data:`EvalResult` variant.

    ``output`` is the combined harness stdout+stderr forwarded to the model;
    the score is read from ``stdout`` (defaults to ``output``).
    """
    if not compile_ok:
        return CompileFailed(compile_messages.strip() or "compilation failed with no diagnostics")
    if timed_out:
        return TestsFailed(f"harness timed out after {timeout_seconds:g} seconds")
    text = output.strip()
    if exit_status != 0:
        return TestsFailed(text or _silent(exit_status))
    score = parse_score(output if stdout is None else stdout)
    if score is None:
        return TestsFailed(f"{NO_SCORE_MESSAGE}\n{text}" if text else NO_SCORE_MESSAGE)
    return Passed(score)


def compile_check(
    compiler: "CompilerSpec", source: str | Path, *, cwd: str | Path | None = None
) -> Optional[CompileFailed]:
    """None when ``source`` passes the syntax check, else CompileFailed."""
    run = run_compiler(compiler, source, "syntax_check", cwd=cwd)
    if run.exit_status == 0:
        return None
    return classify(compile_ok=False, compile_messages=run.output)


def build(
    compiler: "CompilerSpec",
    source: str | Path,
    output: str | Path,
    *,
    cwd: str | Path | None = None,
) -> Optional[CompileFailed]:
    run = run_compiler(compiler, source, "build", cwd=cwd, output=output)
    if run.exit_status == 0:
        return None
    return classify(compile_ok=False, compile_messages=run.output)


def run_harness(
    spec: HarnessSpec, workdir: str | Path, env: Optional[Mapping[str, str]] = None
) -> EvalResult:
    done = _proc.run(spec.command, cwd=workdir, timeout=spec.timeout_seconds, env=env)
    return classify(
        compile_ok=True,
        exit_status=done.returncode,
        output=done.stdout + done.stderr,
        stdout=done.stdout,
        timed_out=done.timed_out,
        timeout_seconds=spec.timeout_seconds,
    )


def harness_env(compiler: "CompilerSpec", source: Path, obj: Path) -> dict[str, str]:
    """Variables telling the harness how the candidate was built."""
    return {
        "OPTPILOT_COMPILER": compiler.compile_command,
        "OPTPILOT_OPT_FLAGS": shlex.join(compiler.opt_flags),
        "OPTPILOT_SOURCE": str(source),
        "OPTPILOT_OBJECT": str(obj),
    }


def evaluate(
    compiler: "CompilerSpec", harness: HarnessSpec, workdir: str | Path, source_name: str
) -> EvalResult:
    """Full judgement of the source already written to ``workdir/source_name``.

    The harness is never started for a candidate that fails to compile.
    """
    workdir = Path(workdir)
    failed = compile_check(compiler, source_name, cwd=workdir)
    if failed is not None:
        return failed
    obj = Path(source_name).with_suffix(".o").name
    failed = build(compiler, source_name, obj, cwd=workdir)
    if failed is not None:
        return failed
    env = harness_env(compiler, workdir / source_name, workdir / obj)
    return run_harness(harness, workdir, env)


def tail(text: str, budget: int) -> str:
    """Keep the last ``budget`` characters; the decisive error is usually last."""
    if len(text) <= budget:
        return text
    marker = "[... truncated ...]\n"
    return marker + text[len(text) - budget + len(marker):]


def describe(result: EvalResult) -> str:
    if isinstance(result, Passed):
        return f"passed: {result.score_ms} ms"
    return f"{result.outcome.replace('_', ' ')}:\n{result.messages}"
