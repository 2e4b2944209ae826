"""Child-process plumbing shared by the compiler and harness stages.

Every child runs in its own process group so that a timeout (or a signal
delivered to the driver) takes down grandchildren too; shell-script
harnesses routinely spawn the real benchmark binary as a grandchild.
"""

from __future__ import annotations

import os
import signal
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

_live: set[subprocess.Popen] = set()
_live_lock = threading.Lock()


class ExecutableNotFound(Exception):
    def __init__(self, executable: str):
        super().__init__(f"executable not found: {executable}")
        self.executable = executable


@dataclass(frozen=True)
class Completed:
    argv: tuple[str, ...]
    returncode: int
    stdout: str
    stderr: str
    timed_out: bool = False


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def run(
    argv: Sequence[str],
    *,
    cwd: str | Path | None = None,
    timeout: float | None = None,
    env: Mapping[str, str] | None = None,
) -> Completed:
    """Run ``argv`` to completion, capturing text output.

    Nonzero exit is data, not an exception. On timeout the whole process
    group is killed and ``timed_out`` is set.
    """
    argv = tuple(str(a) for a in argv)
    full_env = None
    if env is not None:
        full_env = dict(os.environ)
        full_env.update(env)
    try:
        proc = subprocess.Popen(
            argv,
            cwd=cwd,
            env=full_env,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
        )
    except FileNotFoundError as exc:
        raise ExecutableNotFound(argv[0]) from exc
    except PermissionError as exc:
        raise ExecutableNotFound(argv[0]) from exc
    with _live_lock:
        _live.add(proc)
    try:
        try:
            out, err = proc.communicate(timeout=timeout)
            timed_out = False
        except subprocess.TimeoutExpired:
            _kill_group(proc)
            out, err = proc.communicate()
            timed_out = True
    finally:
        with _live_lock:
            _live.discard(proc)
    return Completed(
        argv=argv,
        returncode=proc.returncode,
        stdout=out.decode("utf-8", errors="replace"),
        stderr=err.decode("utf-8", errors="replace"),
        timed_out=timed_out,
    )


def kill_all() -> None:
    """Kill every child process group still running (signal handlers)."""
    with _live_lock:
        procs = list(_live)
    for proc in procs:
        _kill_group(proc)
