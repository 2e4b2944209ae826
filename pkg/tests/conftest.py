import shutil
import stat
import subprocess
import sys
import textwrap
from dataclasses import dataclass
from pathlib import Path

import pytest

from optpilot.config import CompilerFamily, CompilerSpec, Config, LoopSpec, MissingCodePolicy, TargetSpec
from optpilot.evaluator import HarnessSpec
from optpilot.llm import ProviderKind, ProviderSpec
from optpilot.source import Region, RegionMode

# Clang 18 -Rpass-missed output for the naive SimpleMatrix product.
CLANG_REMARKS = """\
simplematrix.cc:19:18: remark: failed to move load with loop-invariant address because the loop may invalidate its value [-Rpass-missed=licm]
   19 |         res(i,j) += lhs(i, k) * rhs(k, j);
      |                  ^
simplematrix.cc:19:18: remark: failed to hoist load with loop-invariant address because load is conditionally executed [-Rpass-missed=licm]
simplematrix.cc:19:18: remark: failed to move load with loop-invariant address because the loop may invalidate its value [-Rpass-missed=licm]
simplematrix.cc:18:7: remark: loop not vectorized [-Rpass-missed=loop-vectorize]
   18 |       for (int k = 0; k < lhs.columns(); ++k)
      |       ^
simplematrix.cc:14:5: remark: 1 reloads 1.249999e+02 total reloads cost 4 folded reloads 8.124992e+02 total folded reloads cost 4 virtual registers copies 5.312495e+02 total copies cost generated in loop [-Rpass-missed=regalloc]
   14 |     for (int j = 0; j < res.columns(); ++j)
      |     ^
"""


# --- stub toolchain ----------------------------------------------------------
#
# fake_cc.py mimics the three compiler modes the driver uses:
#   syntax check: fails with "error:" when a line contains SYNTAX_ERROR
#   report:       one clang-style remark per "for (" line, plus header noise
#   build:        copies the source to the object path
# harness.py reads the built object and reacts to markers in the code:
#   WRONG_TYPE  -> datatype failure, exit 1
#   NO_SCORE    -> exit 0 without a SCORE line
#   // score: N -> prints SCORE: N
# and leaves a harness_ran sentinel in its working directory.

FAKE_CC = """\
import pathlib, sys
args = sys.argv[1:]
src = next(a for a in args if a.endswith(".cc"))
text = pathlib.Path(src).read_text()
if "-fsyntax-only" in args:
    for n, line in enumerate(text.split("\\n"), 1):
        if "SYNTAX_ERROR" in line:
            sys.stderr.write(f"{src}:{n}:1: error: expected expression\\n{line}\\n^\\n")
            sys.exit(1)
    sys.exit(0)
if "-Rpass-missed=." in args:
    sys.stderr.write("stub.h:3:1: remark: header noise [-Rpass-missed=inline]\\n")
    for n, line in enumerate(text.split("\\n"), 1):
        if "for (" in line:
            col = line.index("for (") + 1
            sys.stderr.write(f"{src}:{n}:{col}: remark: loop not vectorized [-Rpass-missed=loop-vectorize]\\n")
            sys.stderr.write(f"{n:5d} | {line}\\n")
out = args[args.index("-o") + 1]
if out != "/dev/null":
    pathlib.Path(out).write_text(text)
"""

FAKE_HARNESS = """\
import os, pathlib, re, sys
pathlib.Path("harness_ran").write_text("yes")
text = pathlib.Path(os.environ.get("OPTPILOT_OBJECT", "kernel.o")).read_text()
if "WRONG_TYPE" in text:
    print("datatype too short; use SimpleMatrix::value_type")
    sys.exit(1)
if "NO_SCORE" in text:
    sys.exit(0)
m = re.search(r"// score: (\\d+)", text)
print("all tests ok")
print(f"SCORE: {m.group(1)}")
"""

KERNEL = """\
#include "stub.h"

// OPT-BEGIN
int kernel(int* a, int n) {
  int s = 0;
  for (int i = 0; i < n; ++i)
    s += a[i];
  return s; // score: 100
}
// OPT-END
"""


def _script(path: Path, body: str) -> Path:
    path.write_text(f"#!{sys.executable}\n{body}")
    path.chmod(path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return path


@dataclass
class StubProject:
    root: Path
    source: Path
    compiler: CompilerSpec
    harness: HarnessSpec

    def config(self, responses=None, *, iterations=3, runs=1, policy="fail_iteration",
               budget=6000, out=None, region=None) -> Config:
        replay = self.root.parent / "replay.txt"
        if responses is not None:
            replay.write_text("\n---8<---\n".join(responses) + "\n")
        return Config(
            compiler=self.compiler,
            target=TargetSpec(self.source, region or Region(RegionMode.MARKERS, begin_marker="OPT-BEGIN",
                                                            end_marker="OPT-END")),
            harness=self.harness,
            provider=ProviderSpec(kind=ProviderKind.REPLAY, replay_file=replay,
                                  price_per_million_input=2.5, price_per_million_output=10.0),
            loop=LoopSpec(iterations=iterations, runs=runs, report_char_budget=budget,
                          on_missing_code_block=MissingCodePolicy(policy)),
            out_dir=out or (self.root.parent / "out"),
        ).validate()


@pytest.fixture
def stub_project(tmp_path) -> StubProject:
    root = tmp_path / "project"
    root.mkdir()
    (root / "stub.h").write_text("#pragma once\n")
    source = root / "kernel.cc"
    source.write_text(KERNEL)
    cc = _script(root / "fake_cc.py", FAKE_CC)
    _script(root / "harness.py", FAKE_HARNESS)
    compiler = CompilerSpec(
        family=CompilerFamily.CLANG,
        compile_command=str(cc),
        opt_flags=("-O3",),
        report_flags=("-Rpass-missed=.",),
        syntax_check_flags=("-fsyntax-only",),
    )
    harness = HarnessSpec(command=(sys.executable, "harness.py"), timeout_seconds=30)
    return StubProject(root, source, compiler, harness)


def code_response(body: str, chatter: str = "Here is the improved code.") -> str:
    return f"{chatter}\n```cpp\n{body}\n```"


def kernel_body(score: int, extra: str = "") -> str:
    return textwrap.dedent(f"""\
        int kernel(int* a, int n) {{
          int s = 0;{extra}
          for (int i = 0; i < n; ++i)
            s += a[i];
          return s; // score: {score}
        }}""")


# --- real toolchain discovery ------------------------------------------------


def compiler_version(cmd: str) -> tuple[int, ...] | None:
    exe = shutil.which(cmd)
    if exe is None:
        return None
    try:
        out = subprocess.run([exe, "-dumpversion"], capture_output=True, text=True, timeout=30).stdout
    except (OSError, subprocess.SubprocessError):
        return None
    parts = []
    for p in out.strip().split("."):
        if not p.isdigit():
            break
        parts.append(int(p))
    return tuple(parts) or None


# --- acceptance reporting ----------------------------------------------------

_acceptance: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _acceptance.append((name, "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"))
    elif report.when == "setup" and report.skipped:
        _acceptance.append((name, "SKIP"))
    elif report.when == "setup" and report.failed:
        _acceptance.append((name, "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"{outcome:4}  {name}")
