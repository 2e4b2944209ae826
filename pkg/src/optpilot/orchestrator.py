"""The optimization loop: baseline, then prompt -> complete -> splice -> evaluate.

A run never raises because a candidate is bad; compile errors, test
failures and missing code blocks are recorded and fed back to the model.
Only infrastructure problems (baseline, provider, I/O) abort a run.
"""

from __future__ import annotations

import json
import logging
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, NamedTuple, Optional

from .config import Config, MissingCodePolicy, PromptContext, render_prompt
from .evaluator import (
    CompileFailed,
    EvalResult,
    Passed,
    TestsFailed,
    describe,
    evaluate,
    tail,
)
from .llm import ChatClient, Conversation, Message, Usage, cost_usd, make_client
from .optreport import (
    CompilerTimeout,
    dialect_for,
    filter_by_region,
    pack_report,
    parse_report,
    run_compiler,
)
from .source import SourceFile, SourceVersion, extract_code_block, make_version, splice_snippet

log = logging.getLogger(__name__)

MISSING_CODE_SENTENCE = (
    "Your previous response contained no code block. "
    "Return the entire code in a single code block."
)
EMPTY_REPORT_TEXT = "(no missed-optimization remarks for this code region)"


class BaselineError(Exception):
    def __init__(self, messages: str):
        super().__init__(f"{self.what}:\n{messages}")
        self.messages = messages


class BaselineCompileFailed(BaselineError):
    what = "original source does not compile"


class BaselineTestsFailed(BaselineError):
    what = "original source fails the harness"


class PromptKind(str, Enum):
    FIRST = "first"
    SUCCESS = "success"
    COMPILE_ERROR = "compile_error"
    TEST_FAILURE = "test_failure"
    MISSING_CODE = "missing_code"


def eval_to_dict(result: Optional[EvalResult]) -> Optional[dict]:
    if result is None:
        return None
    if isinstance(result, Passed):
        return {"outcome": result.outcome, "score_ms": result.score_ms}
    return {"outcome": result.outcome, "messages": result.messages}


def eval_from_dict(data: Optional[dict]) -> Optional[EvalResult]:
    if data is None:
        return None
    outcome = data["outcome"]
    if outcome == "passed":
        return Passed(int(data["score_ms"]))
    if outcome == "compile_failed":
        return CompileFailed(data["messages"])
    return TestsFailed(data["messages"])


@dataclass
class IterationRecord:
    index: int
    prompt_kind: PromptKind
    prompt_text: str
    response_text: str
    extracted_code: Optional[str]
    eval: Optional[EvalResult]
    report_packed: Optional[str]
    usage: Usage
    cost_usd: float = 0.0
    code_slot: Optional[str] = None
    candidate_source: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "prompt_kind": self.prompt_kind.value,
            "prompt_text": self.prompt_text,
            "response_text": self.response_text,
            "extracted_code": self.extracted_code,
            "eval": eval_to_dict(self.eval),
            "report_packed": self.report_packed,
            "usage": {"input_tokens": self.usage.input_tokens,
                      "output_tokens": self.usage.output_tokens},
            "cost_usd": self.cost_usd,
            "code_slot": self.code_slot,
            "candidate_source": self.candidate_source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        return cls(
            index=d["index"],
            prompt_kind=PromptKind(d["prompt_kind"]),
            prompt_text=d["prompt_text"],
            response_text=d["response_text"],
            extracted_code=d.get("extracted_code"),
            eval=eval_from_dict(d.get("eval")),
            report_packed=d.get("report_packed"),
            usage=Usage(**d.get("usage", {})),
            cost_usd=d.get("cost_usd", 0.0),
            code_slot=d.get("code_slot"),
            candidate_source=d.get("candidate_source"),
        )


class Best(NamedTuple):
    iteration: int  # 0 = baseline
    score_ms: int
    source: str


@dataclass
class RunRecord:
    run_index: int
    baseline_score_ms: int
    original_source: str
    iterations: list[IterationRecord] = field(default_factory=list)
    best_iteration: int = 0
    best_score_ms: int = 0
    total_cost_usd: float = 0.0
    wall_time_seconds: float = 0.0
    concurrent: bool = False
    source_suffix: str = ""
    # in-memory only; conversation.md is the on-disk transcript
    conversation: Optional[Conversation] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "run_index": self.run_index,
            "baseline_score_ms": self.baseline_score_ms,
            "best_iteration": self.best_iteration,
            "best_score_ms": self.best_score_ms,
            "total_cost_usd": self.total_cost_usd,
            "wall_time_seconds": self.wall_time_seconds,
            "concurrent": self.concurrent,
            "source_suffix": self.source_suffix,
            "original_source": self.original_source,
            "iterations": [it.to_dict() for it in self.iterations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            run_index=d["run_index"],
            baseline_score_ms=d["baseline_score_ms"],
            original_source=d.get("original_source", ""),
            iterations=[IterationRecord.from_dict(it) for it in d.get("iterations", [])],
            best_iteration=d.get("best_iteration", 0),
            best_score_ms=d.get("best_score_ms", d["baseline_score_ms"]),
            total_cost_usd=d.get("total_cost_usd", 0.0),
            wall_time_seconds=d.get("wall_time_seconds", 0.0),
            concurrent=d.get("concurrent", False),
            source_suffix=d.get("source_suffix", ""),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunRecord":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def select_best(run: RunRecord) -> Best:
    """Fastest passing version; ties go to the earliest (baseline first)."""
    best = Best(0, run.baseline_score_ms, run.original_source)
    for it in run.iterations:
        if isinstance(it.eval, Passed) and it.eval.score_ms < best.score_ms:
            best = Best(it.index, it.eval.score_ms, it.candidate_source or "")
    return best


def choose_prompt(
    prev_eval: Optional[EvalResult],
    prev_code_extracted: bool,
    iteration_index: int,
    policy: MissingCodePolicy = MissingCodePolicy.FAIL_ITERATION,
) -> PromptKind:
    """Pick the next prompt kind.

    ``prev_eval`` is the most recent evaluation (None if nothing has been
    evaluated yet, in which case the passing baseline stands in).
    """
    if iteration_index < 1:
        raise ValueError("iteration_index starts at 1")
    if iteration_index == 1:
        return PromptKind.FIRST
    if not prev_code_extracted and policy is MissingCodePolicy.REPROMPT:
        return PromptKind.MISSING_CODE
    if isinstance(prev_eval, CompileFailed):
        return PromptKind.COMPILE_ERROR
    if isinstance(prev_eval, TestsFailed):
        return PromptKind.TEST_FAILURE
    return PromptKind.SUCCESS


def prepare_workdir(config: Config, dest: Path) -> Path:
    """Copy the target's directory to ``dest`` so runs never share files."""
    src_dir = config.target.source_path.parent
    out_dir = config.out_dir.resolve()

    def ignore(directory: str, names: list[str]) -> list[str]:
        skipped = []
        for name in names:
            p = (Path(directory) / name).resolve()
            if p == out_dir or name in (".git", "__pycache__"):
                skipped.append(name)
        return skipped

    if dest.exists():
        shutil.rmtree(dest)
    shutil.copytree(src_dir, dest, ignore=ignore, symlinks=True)
    return dest


def _evaluate(config: Config, workdir: Path, name: str) -> EvalResult:
    try:
        return evaluate(config.compiler, config.harness, workdir, name)
    except CompilerTimeout as exc:
        return CompileFailed(str(exc))


def establish_baseline(config: Config, workdir: Optional[Path] = None) -> int:
    """Score of the unmodified source; raises before any model traffic."""
    if workdir is None:
        workdir = prepare_workdir(config, config.out_dir / "baseline" / "work")
    result = _evaluate(config, workdir, config.target.source_path.name)
    if isinstance(result, CompileFailed):
        raise BaselineCompileFailed(result.messages)
    if isinstance(result, TestsFailed):
        raise BaselineTestsFailed(result.messages)
    log.info("baseline score: %d ms", result.score_ms)
    return result.score_ms


@dataclass
class LoopState:
    """What the prompt builder needs to know about the run so far."""

    config: Config
    workdir: Path
    source_file: SourceFile
    good: SourceVersion
    latest_score: int
    last_eval: Optional[EvalResult] = None

    @property
    def source_name(self) -> str:
        return self.config.target.source_path.name

    def write(self, text: str) -> None:
        self.source_file.write(self.workdir / self.source_name, text)

    def packed_report(self) -> str:
        cfg = self.config
        if not cfg.compiler.report_flags:
            return ""
        self.write(self.good.full_text)
        run = run_compiler(cfg.compiler, self.source_name, "report", cwd=self.workdir)
        parsed = parse_report(run.output, dialect_for(cfg.compiler.family.value))
        kept = filter_by_region(parsed.diagnostics, self.good.region_lines, self.source_name)
        return pack_report(kept, cfg.loop.report_char_budget)


class BuiltPrompt(NamedTuple):
    text: str
    context: PromptContext
    report_packed: Optional[str]
    code_slot: Optional[str]


def build_prompt(kind: PromptKind, state: LoopState) -> BuiltPrompt:
    cfg = state.config
    family = cfg.compiler.family.display_name
    if kind in (PromptKind.COMPILE_ERROR, PromptKind.TEST_FAILURE):
        assert state.last_eval is not None and not isinstance(state.last_eval, Passed)
        ctx = PromptContext(
            code=state.good.snippet,
            report=tail(state.last_eval.messages, cfg.loop.report_char_budget),
            scoreint=state.latest_score,
            compilerfamily=family,
        )
        text = render_prompt(cfg.prompts.get(kind.value), ctx)
        code_slot = state.good.snippet if "code" in cfg.prompts.get(kind.value).placeholders() else None
        return BuiltPrompt(text, ctx, None, code_slot)

    packed = state.packed_report()
    ctx = PromptContext(
        code=state.good.snippet,
        report=packed or EMPTY_REPORT_TEXT,
        scoreint=state.latest_score,
        compilerfamily=family,
    )
    template = cfg.prompts.first if kind is PromptKind.FIRST else cfg.prompts.success
    text = render_prompt(template, ctx)
    if kind is PromptKind.MISSING_CODE:
        text = f"{MISSING_CODE_SENTENCE}\n\n{text}"
    return BuiltPrompt(text, ctx, packed, state.good.snippet)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def render_conversation(conv: Conversation, run_index: int) -> str:
    parts = [f"# Run {run_index} conversation\n"]
    for m in conv.messages:
        parts.append(f"## {m.role}\n\n{m.content}\n")
    return "\n".join(parts)


def run_once(
    config: Config,
    run_index: int,
    *,
    baseline: Optional[int] = None,
    client: Optional[ChatClient] = None,
    concurrent: bool = False,
) -> RunRecord:
    started = time.monotonic()
    run_dir = config.out_dir / f"run{run_index}"
    workdir = prepare_workdir(config, run_dir / "work")
    if baseline is None:
        baseline = establish_baseline(config, workdir)
    if client is None:
        client = make_client(config.provider)
    client.preflight()

    source_file = SourceFile.read(config.target.source_path)
    suffix = config.target.source_path.suffix
    original = make_version(source_file.text, config.target.region)
    state = LoopState(config, workdir, source_file, original, baseline)
    record = RunRecord(run_index, baseline, source_file.text, concurrent=concurrent,
                       source_suffix=suffix)
    conv = Conversation()
    prev_extracted = True
    policy = config.loop.on_missing_code_block

    for i in range(1, config.loop.iterations + 1):
        kind = choose_prompt(state.last_eval, prev_extracted, i, policy)
        built = build_prompt(kind, state)
        if i == 1:
            conv.append(Message("system", render_prompt(config.prompts.context, built.context)))
        conv.append(Message("user", built.text))
        reply, usage = client.complete(conv)
        conv.append(reply)
        call_cost = cost_usd(usage, config.provider)
        record.total_cost_usd += call_cost

        code = extract_code_block(reply.content)
        if code is not None and not code.strip():
            code = None
        result = None
        candidate_text = None
        if code is not None:
            candidate = splice_snippet(state.good, code, iteration_index=i)
            candidate_text = candidate.full_text
            state.write(candidate_text)
            result = _evaluate(config, workdir, state.source_name)
            state.last_eval = result
            if isinstance(result, Passed):
                state.good = candidate
                state.latest_score = result.score_ms
        prev_extracted = code is not None
        log.info("run %d iteration %d (%s): %s", run_index, i, kind.value,
                 describe(result).splitlines()[0] if result else "no code block")

        it = IterationRecord(
            index=i,
            prompt_kind=kind,
            prompt_text=built.text,
            response_text=reply.content,
            extracted_code=code,
            eval=result,
            report_packed=built.report_packed,
            usage=usage,
            cost_usd=call_cost,
            code_slot=built.code_slot,
            candidate_source=candidate_text,
        )
        record.iterations.append(it)
        it_dir = run_dir / f"iter{i}"
        _write(it_dir / "prompt.md", built.text + "\n")
        _write(it_dir / "response.md", reply.content + "\n")
        if candidate_text is not None:
            source_file.write(_ensure_dir(it_dir) / f"source{suffix}", candidate_text)
        _write(it_dir / "eval.txt",
               (describe(result) if result else "no code block in response") + "\n")

    best = select_best(record)
    record.best_iteration, record.best_score_ms = best.iteration, best.score_ms
    record.wall_time_seconds = time.monotonic() - started
    record.conversation = conv
    source_file.write(_ensure_dir(run_dir) / f"best{suffix}", best.source)
    _write(run_dir / "conversation.md", render_conversation(conv, run_index))
    _write(run_dir / "record.json", json.dumps(record.to_dict(), indent=2) + "\n")
    return record


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_many(
    config: Config,
    *,
    jobs: int = 1,
    client_factory: Callable[[], ChatClient] | None = None,
) -> list[RunRecord]:
    """All configured runs, each with a fresh conversation and client."""
    factory = client_factory or (lambda: make_client(config.provider))
    factory().preflight()
    baseline = establish_baseline(config)
    concurrent = jobs > 1 and config.loop.runs > 1
    if concurrent:
        log.warning("running %d runs concurrently; timing scores may be noisy", jobs)

    def one(r: int) -> RunRecord:
        return run_once(config, r, baseline=baseline, client=factory(), concurrent=concurrent)

    indices = range(1, config.loop.runs + 1)
    if not concurrent:
        return [one(r) for r in indices]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, indices))
