"""Driver configuration: loading, validation, serialization, prompt rendering.

The file is YAML. Relative paths are resolved against the directory that
holds the config file. Prompt values may be inline text or ``@path``.
"""

from __future__ import annotations

import dataclasses
import re
import shlex
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .evaluator import HarnessSpec
from .llm import ProviderKind, ProviderSpec
from .source import Region, RegionMode

PLACEHOLDERS = ("code", "report", "scoreint", "compilerfamily")
PROMPT_IDS = ("context", "first", "success", "compile_error", "test_failure")
DEFAULT_OPT_FLAGS = ("-O3", "-march=native", "-DNDEBUG=1")
DEFAULT_REPORT_FLAGS = {
    "clang": ("-Rpass-missed=.",),
    "gcc": ("-fopt-info-missed", "-fopt-info-vec-missed"),
    "other": (),
}

_TOKEN_RE = re.compile(r"\{\{|\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(Exception):
    pass


class ParseError(ConfigError):
    def __init__(self, line: Optional[int], reason: str):
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{reason}")
        self.line = line
        self.reason = reason


class ValidationError(ConfigError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(violations))
        self.violations = list(violations)


class UnknownPlaceholder(ValidationError):
    def __init__(self, name: str, template_id: str, violations: Optional[list[str]] = None):
        msg = f"unknown placeholder {{{name}}} in prompt {template_id!r}"
        super().__init__(violations or [msg])
        self.name = name
        self.template_id = template_id


class MissingVariable(ConfigError):
    def __init__(self, name: str):
        super().__init__(f"prompt variable {{{name}}} has no value")
        self.name = name


class CompilerFamily(str, Enum):
    CLANG = "clang"
    GCC = "gcc"
    OTHER = "other"

    @property
    def display_name(self) -> str:
        return {"clang": "Clang", "gcc": "GCC"}.get(self.value, "the compiler")


class MissingCodePolicy(str, Enum):
    FAIL_ITERATION = "fail_iteration"
    REPROMPT = "reprompt"


@dataclass(frozen=True)
class CompilerSpec:
    family: CompilerFamily = CompilerFamily.CLANG
    compile_command: str = "clang++"
    opt_flags: tuple[str, ...] = DEFAULT_OPT_FLAGS
    report_flags: tuple[str, ...] = DEFAULT_REPORT_FLAGS["clang"]
    syntax_check_flags: tuple[str, ...] = ("-fsyntax-only",)

    def problems(self) -> list[str]:
        out = []
        if not self.compile_command:
            out.append("compiler.command must be non-empty")
        if self.family is not CompilerFamily.OTHER and not self.report_flags:
            out.append(f"compiler.report_flags must be non-empty for {self.family.value}")
        return out


@dataclass(frozen=True)
class TargetSpec:
    source_path: Path
    region: Region = Region()

    def problems(self) -> list[str]:
        out = list(self.region.problems())
        try:
            with open(self.source_path, "rb"):
                pass
        except OSError:
            out.append(f"target.source is not a readable file: {self.source_path}")
        return out


@dataclass(frozen=True)
class LoopSpec:
    iterations: int = 6
    runs: int = 5
    report_char_budget: int = 6000
    on_missing_code_block: MissingCodePolicy = MissingCodePolicy.FAIL_ITERATION

    def problems(self) -> list[str]:
        out = []
        if self.iterations < 1:
            out.append("iterations ≥ 1")
        if self.runs < 1:
            out.append("runs ≥ 1")
        if self.report_char_budget < 256:
            out.append("report_char_budget ≥ 256")
        return out


def placeholders(text: str) -> list[str]:
    """Placeholder names in ``text`` in order of appearance (escapes skipped)."""
    return [m.group(1) for m in _TOKEN_RE.finditer(text) if m.group(1)]


def escape(text: str) -> str:
    """Quote ``text`` so that it renders back to itself."""
    return text.replace("{", "{{").replace("}", "}}")


@dataclass(frozen=True)
class PromptTemplate:
    text: str

    def placeholders(self) -> list[str]:
        return placeholders(self.text)

    def unknown(self) -> list[str]:
        return [p for p in self.placeholders() if p not in PLACEHOLDERS]


def _default_prompt(name: str) -> PromptTemplate:
    text = resources.files("optpilot.prompts").joinpath(f"{name}.txt").read_text("utf-8")
    return PromptTemplate(text[:-1] if text.endswith("\n") else text)


@dataclass(frozen=True)
class PromptSet:
    context: PromptTemplate = field(default_factory=lambda: _default_prompt("context"))
    first: PromptTemplate = field(default_factory=lambda: _default_prompt("first"))
    success: PromptTemplate = field(default_factory=lambda: _default_prompt("success"))
    compile_error: PromptTemplate = field(default_factory=lambda: _default_prompt("compile_error"))
    test_failure: PromptTemplate = field(default_factory=lambda: _default_prompt("test_failure"))

    def get(self, name: str) -> PromptTemplate:
        return getattr(self, name)

    def problems(self) -> list[str]:
        out = []
        for pid in PROMPT_IDS:
            for name in self.get(pid).unknown():
                out.append(f"unknown placeholder {{{name}}} in prompt {pid!r}")
        for pid in ("compile_error", "test_failure"):
            if "report" not in self.get(pid).placeholders():
                out.append(f"prompt {pid!r} must contain {{report}}")
        return out


@dataclass(frozen=True)
class PromptContext:
    code: Optional[str] = None
    report: Optional[str] = None
    scoreint: Optional[int] = None
    compilerfamily: Optional[str] = None

    def __post_init__(self):
        if self.scoreint is not None and self.scoreint < 0:
            raise ValueError("scoreint must be non-negative")


def render_prompt(template: PromptTemplate, ctx: PromptContext) -> str:
    """Substitute placeholders in one pass; values are never re-scanned."""

    def sub(m: re.Match) -> str:
        tok = m.group(0)
        if tok == "{{":
            return "{"
        if tok == "}}":
            return "}"
        name = m.group(1)
        if name not in PLACEHOLDERS:
            raise UnknownPlaceholder(name, "<inline>")
        value = getattr(ctx, name)
        if value is None:
            raise MissingVariable(name)
        return str(value)

    return _TOKEN_RE.sub(sub, template.text)


@dataclass(frozen=True)
class Config:
    compiler: CompilerSpec
    target: TargetSpec
    harness: HarnessSpec
    provider: ProviderSpec
    loop: LoopSpec = LoopSpec()
    prompts: PromptSet = field(default_factory=PromptSet)
    out_dir: Path = Path("optpilot-out")

    def problems(self) -> list[str]:
        out: list[str] = []
        for part in (self.compiler, self.target, self.harness, self.provider, self.loop, self.prompts):
            out.extend(part.problems())
        return out

    def validate(self) -> "Config":
        problems = self.problems()
        if problems:
            for pid in PROMPT_IDS:
                unknown = self.prompts.get(pid).unknown()
                if unknown:
                    raise UnknownPlaceholder(unknown[0], pid, problems)
            raise ValidationError(problems)
        return self


# --- dict <-> Config -------------------------------------------------------


class _Reader:
    """Typed access into the raw mapping that collects every violation."""

    def __init__(self, base_dir: Path):
        self.base_dir = base_dir
        self.violations: list[str] = []

    def section(self, data: dict, key: str, required: bool, allowed: set[str]) -> dict:
        value = data.get(key)
        if value is None:
            if required:
                self.violations.append(f"missing required section {key!r}")
            return {}
        if not isinstance(value, dict):
            self.violations.append(f"{key} must be a mapping")
            return {}
        for k in value:
            if k not in allowed:
                self.violations.append(f"unknown key {key}.{k}")
        return value

    def get(self, data: dict, path: str, kind: type | tuple, default: Any = None, required=False):
        key = path.rsplit(".", 1)[-1]
        if data.get(key) is None:
            if required:
                self.violations.append(f"missing required key {path}")
            return default
        value = data[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if isinstance(value, bool) and kind is not bool:
            self.violations.append(f"{path} has wrong type bool")
            return default
        if not isinstance(value, kind):
            self.violations.append(f"{path} has wrong type {type(value).__name__}")
            return default
        return value

    def flags(self, data: dict, path: str, default: tuple[str, ...]) -> tuple[str, ...]:
        value = self.get(data, path, (list, str), None)
        if value is None:
            return default
        if isinstance(value, str):
            return tuple(shlex.split(value))
        if not all(isinstance(v, str) for v in value):
            self.violations.append(f"{path} must be a list of strings")
            return default
        return tuple(value)

    def enum(self, data: dict, path: str, enum_type, default):
        value = self.get(data, path, str, None)
        if value is None:
            return default
        try:
            return enum_type(value.replace("-", "_"))
        except ValueError:
            choices = ", ".join(e.value for e in enum_type)
            self.violations.append(f"{path}={value!r} is not one of {choices}")
            return default

    def path(self, value: Optional[str]) -> Optional[Path]:
        if value is None:
            return None
        p = Path(value).expanduser()
        return p if p.is_absolute() else (self.base_dir / p).resolve()


def config_from_dict(data: dict, base_dir: str | Path = ".") -> Config:
    r = _Reader(Path(base_dir).resolve())
    if not isinstance(data, dict):
        raise ValidationError(["config root must be a mapping"])
    for k in data:
        if k not in {"compiler", "target", "harness", "provider", "loop", "prompts", "out_dir"}:
            r.violations.append(f"unknown key {k}")

    c = r.section(data, "compiler", True, {"family", "command", "opt_flags", "report_flags", "syntax_check_flags"})
    family = r.enum(c, "compiler.family", CompilerFamily, CompilerFamily.CLANG)
    compiler = CompilerSpec(
        family=family,
        compile_command=r.get(c, "compiler.command", str, "", required=True),
        opt_flags=r.flags(c, "compiler.opt_flags", DEFAULT_OPT_FLAGS),
        report_flags=r.flags(c, "compiler.report_flags", DEFAULT_REPORT_FLAGS[family.value]),
        syntax_check_flags=r.flags(c, "compiler.syntax_check_flags", ("-fsyntax-only",)),
    )

    t = r.section(data, "target", True, {"source", "region"})
    reg = r.section(t, "region", False, {"mode", "start_line", "end_line", "begin_marker", "end_marker"})
    region = Region(
        mode=r.enum(reg, "target.region.mode", RegionMode, RegionMode.WHOLE_FILE),
        start_line=r.get(reg, "target.region.start_line", int),
        end_line=r.get(reg, "target.region.end_line", int),
        begin_marker=r.get(reg, "target.region.begin_marker", str),
        end_marker=r.get(reg, "target.region.end_marker", str),
    )
    source = r.path(r.get(t, "target.source", str, required=True))
    target = TargetSpec(source_path=source or Path(""), region=region)

    h = r.section(data, "harness", True, {"command", "timeout_seconds"})
    harness = HarnessSpec(
        command=r.flags(h, "harness.command", ()),
        timeout_seconds=r.get(h, "harness.timeout_seconds", float, 600.0),
    )

    p = r.section(data, "provider", True, {
        "kind", "endpoint", "model", "api_key_env", "temperature", "max_tokens",
        "replay_file", "price_per_million_input", "price_per_million_output",
    })
    provider = ProviderSpec(
        kind=r.enum(p, "provider.kind", ProviderKind, ProviderKind.REPLAY),
        endpoint=r.get(p, "provider.endpoint", str),
        model=r.get(p, "provider.model", str),
        api_key_env=r.get(p, "provider.api_key_env", str),
        temperature=r.get(p, "provider.temperature", float, 0.2),
        max_tokens=r.get(p, "provider.max_tokens", int, 4096),
        replay_file=r.path(r.get(p, "provider.replay_file", str)),
        price_per_million_input=r.get(p, "provider.price_per_million_input", float, 0.0),
        price_per_million_output=r.get(p, "provider.price_per_million_output", float, 0.0),
    )

    lp = r.section(data, "loop", False, {"iterations", "runs", "report_char_budget", "on_missing_code_block"})
    loop = LoopSpec(
        iterations=r.get(lp, "loop.iterations", int, 6),
        runs=r.get(lp, "loop.runs", int, 5),
        report_char_budget=r.get(lp, "loop.report_char_budget", int, 6000),
        on_missing_code_block=r.enum(lp, "loop.on_missing_code_block", MissingCodePolicy,
                                     MissingCodePolicy.FAIL_ITERATION),
    )

    pr = r.section(data, "prompts", False, set(PROMPT_IDS))
    templates = {}
    for pid in PROMPT_IDS:
        raw = r.get(pr, f"prompts.{pid}", str)
        if raw is None:
            continue
        if raw.startswith("@"):
            fp = r.path(raw[1:])
            try:
                raw = fp.read_text(encoding="utf-8")
            except OSError as exc:
                r.violations.append(f"prompts.{pid}: cannot read {fp}: {exc.strerror}")
                continue
            if raw.endswith("\n"):
                raw = raw[:-1]
        templates[pid] = PromptTemplate(raw)
    prompts = PromptSet(**templates)

    out_dir = r.path(r.get(data, "out_dir", str)) or (r.base_dir / "optpilot-out")
    cfg = Config(compiler, target, harness, provider, loop, prompts, out_dir)

    violations = r.violations + [v for v in cfg.problems() if v not in r.violations]
    if violations:
        for pid in PROMPT_IDS:
            unknown = prompts.get(pid).unknown()
            if unknown:
                raise UnknownPlaceholder(unknown[0], pid, violations)
        raise ValidationError(violations)
    return cfg


def load_config(path: str | Path) -> Config:
    path = Path(path)
    text = path.read_text(encoding="utf-8")  # FileNotFoundError propagates
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        reason = getattr(exc, "problem", None) or str(exc)
        raise ParseError(line, reason) from exc
    if data is None:
        data = {}
    return config_from_dict(data, path.parent)


def config_to_dict(cfg: Config) -> dict:
    r = cfg.target.region
    region: dict[str, Any] = {"mode": r.mode.value.replace("_", "-")}
    for name in ("start_line", "end_line", "begin_marker", "end_marker"):
        if getattr(r, name) is not None:
            region[name] = getattr(r, name)
    p = cfg.provider
    provider: dict[str, Any] = {
        "kind": p.kind.value,
        "temperature": p.temperature,
        "max_tokens": p.max_tokens,
        "price_per_million_input": p.price_per_million_input,
        "price_per_million_output": p.price_per_million_output,
    }
    for name in ("endpoint", "model", "api_key_env"):
        if getattr(p, name) is not None:
            provider[name] = getattr(p, name)
    if p.replay_file is not None:
        provider["replay_file"] = str(p.replay_file)
    return {
        "compiler": {
            "family": cfg.compiler.family.value,
            "command": cfg.compiler.compile_command,
            "opt_flags": list(cfg.compiler.opt_flags),
            "report_flags": list(cfg.compiler.report_flags),
            "syntax_check_flags": list(cfg.compiler.syntax_check_flags),
        },
        "target": {"source": str(cfg.target.source_path), "region": region},
        "harness": {
            "command": list(cfg.harness.command),
            "timeout_seconds": cfg.harness.timeout_seconds,
        },
        "provider": provider,
        "loop": {
            "iterations": cfg.loop.iterations,
            "runs": cfg.loop.runs,
            "report_char_budget": cfg.loop.report_char_budget,
            "on_missing_code_block": cfg.loop.on_missing_code_block.value,
        },
        "prompts": {pid: cfg.prompts.get(pid).text for pid in PROMPT_IDS},
        "out_dir": str(cfg.out_dir),
    }


def dump_config(cfg: Config, path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(config_to_dict(cfg), sort_keys=False, allow_unicode=True),
        encoding="utf-8",
    )


def apply_overrides(
    cfg: Config,
    *,
    iterations: Optional[int] = None,
    runs: Optional[int] = None,
    provider_kind: Optional[str] = None,
    replay_file: Optional[str | Path] = None,
    out_dir: Optional[str | Path] = None,
) -> Config:
    """Command-line values win over the file; the result is re-validated."""
    loop = cfg.loop
    if iterations is not None:
        loop = dataclasses.replace(loop, iterations=iterations)
    if runs is not None:
        loop = dataclasses.replace(loop, runs=runs)
    provider = cfg.provider
    if provider_kind is not None:
        try:
            provider = dataclasses.replace(provider, kind=ProviderKind(provider_kind.replace("-", "_")))
        except ValueError:
            raise ValidationError([f"unknown provider kind {provider_kind!r}"]) from None
    if replay_file is not None:
        provider = dataclasses.replace(provider, replay_file=Path(replay_file).resolve())
    new = dataclasses.replace(
        cfg,
        loop=loop,
        provider=provider,
        out_dir=Path(out_dir).resolve() if out_dir is not None else cfg.out_dir,
    )
    return new.validate()
