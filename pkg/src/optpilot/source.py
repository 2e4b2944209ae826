"""Region extraction, splicing, and code-block extraction.

Text is handled as a list of ``\\n``-separated lines plus an optional final
terminator, so that splicing never disturbs bytes outside the region.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

Interval = tuple[int, int]


class SourceError(Exception):
    pass


class MarkerNotFound(SourceError):
    def __init__(self, which: str, marker: str):
        super().__init__(f"{which} marker not found: {marker!r}")
        self.which = which
        self.marker = marker


class EmptyRegion(SourceError):
    pass


class IntervalOutOfBounds(SourceError):
    def __init__(self, interval: Interval, line_count: int):
        super().__init__(f"interval {list(interval)} outside file of {line_count} lines")
        self.interval = interval
        self.line_count = line_count


class RegionMode(str, Enum):
    WHOLE_FILE = "whole_file"
    LINES = "lines"
    MARKERS = "markers"


@dataclass(frozen=True)
class Region:
    mode: RegionMode = RegionMode.WHOLE_FILE
    start_line: Optional[int] = None
    end_line: Optional[int] = None
    begin_marker: Optional[str] = None
    end_marker: Optional[str] = None

    def problems(self) -> list[str]:
        out = []
        if self.mode is RegionMode.LINES:
            if self.start_line is None or self.end_line is None:
                out.append("lines region needs start_line and end_line")
            elif not 1 <= self.start_line <= self.end_line:
                out.append("lines region needs 1 ≤ start_line ≤ end_line")
        elif self.mode is RegionMode.MARKERS:
            if not self.begin_marker or not self.end_marker:
                out.append("markers region needs non-empty begin_marker and end_marker")
            elif self.begin_marker == self.end_marker:
                out.append("begin_marker and end_marker must differ")
        return out


@dataclass(frozen=True)
class SourceVersion:
    iteration_index: int
    full_text: str
    snippet: str
    region_lines: Interval


def split_lines(text: str) -> tuple[list[str], str]:
    """Split into lines and the trailing terminator ("" or "\\n")."""
    if text == "":
        return [], ""
    if text.endswith("\n"):
        return text[:-1].split("\n"), "\n"
    return text.split("\n"), ""


def join_lines(lines: list[str], terminator: str) -> str:
    if not lines:
        return ""
    return "\n".join(lines) + terminator


def locate_region(full_text: str, region: Region) -> Interval:
    lines, _ = split_lines(full_text)
    n = len(lines)
    if region.mode is RegionMode.WHOLE_FILE:
        if n == 0:
            raise EmptyRegion("file is empty")
        return (1, n)
    if region.mode is RegionMode.LINES:
        start, end = region.start_line, min(region.end_line, n)
        if start > end:
            raise EmptyRegion(f"line region starts at {start} past end of {n}-line file")
        return (start, end)
    begin = next((i for i, ln in enumerate(lines) if region.begin_marker in ln), None)
    if begin is None:
        raise MarkerNotFound("begin", region.begin_marker)
    end = next(
        (i for i in range(begin + 1, n) if region.end_marker in lines[i]), None
    )
    if end is None:
        raise MarkerNotFound("end", region.end_marker)
    if end == begin + 1:
        raise EmptyRegion("begin and end markers are on adjacent lines")
    # 0-based marker indices -> 1-based interior interval
    return (begin + 2, end)


def extract_snippet(full_text: str, interval: Interval) -> str:
    lines, _ = split_lines(full_text)
    start, end = interval
    if start < 1 or end > len(lines) or start > end:
        raise IntervalOutOfBounds(interval, len(lines))
    return "\n".join(lines[start - 1 : end])


def make_version(full_text: str, region: Region, iteration_index: int = 0) -> SourceVersion:
    interval = locate_region(full_text, region)
    return SourceVersion(iteration_index, full_text, extract_snippet(full_text, interval), interval)


def splice_snippet(
    prev: SourceVersion, new_snippet: str, iteration_index: Optional[int] = None
) -> SourceVersion:
    """Replace ``prev.region_lines`` with ``new_snippet``.

    An empty snippet is one blank line, which keeps extract/splice an exact
    inverse pair; callers reject empty model output before getting here.
    """
    lines, term = split_lines(prev.full_text)
    start, end = prev.region_lines
    new_lines = new_snippet.split("\n")
    merged = lines[: start - 1] + new_lines + lines[end:]
    if merged[-1] == "" and term == "":
        term = "\n"  # otherwise a trailing blank line would vanish
    text = join_lines(merged, term)
    idx = prev.iteration_index + 1 if iteration_index is None else iteration_index
    return SourceVersion(idx, text, new_snippet, (start, start + len(new_lines) - 1))


def _is_fence(line: str) -> bool:
    return line.lstrip().startswith("```")


def extract_code_block(response: str, which: str = "last") -> Optional[str]:
    """Contents of the last (or first) complete fenced block, or None."""
    blocks: list[str] = []
    current: Optional[list[str]] = None
    for line in response.replace("\r\n", "\n").split("\n"):
        if _is_fence(line):
            if current is None:
                current = []
            else:
                blocks.append("\n".join(current))
                current = None
        elif current is not None:
            current.append(line)
    if not blocks:
        return None
    return blocks[0] if which == "first" else blocks[-1]


@dataclass(frozen=True)
class SourceFile:
    """Target file contents with ``\\n`` endings, plus its original style."""

    text: str
    newline: str = "\n"

    @classmethod
    def read(cls, path: str | Path) -> "SourceFile":
        raw = Path(path).read_bytes().decode("utf-8", errors="surrogateescape")
        crlf = raw.count("\r\n")
        uniform = crlf > 0 and crlf == raw.count("\n")
        return cls(raw.replace("\r\n", "\n"), "\r\n" if uniform else "\n")

    def write(self, path: str | Path, text: Optional[str] = None) -> None:
        body = self.text if text is None else text
        if self.newline != "\n":
            body = body.replace("\n", self.newline)
        Path(path).write_bytes(body.encode("utf-8", errors="surrogateescape"))
