import textwrap
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from optpilot.config import (
    PROMPT_IDS,
    CompilerFamily,
    MissingVariable,
    ParseError,
    PromptContext,
    PromptSet,
    PromptTemplate,
    UnknownPlaceholder,
    ValidationError,
    apply_overrides,
    config_to_dict,
    dump_config,
    escape,
    load_config,
    placeholders,
    render_prompt,
)
from optpilot.llm import ProviderKind
from optpilot.source import RegionMode


def write_config(tmp_path: Path, body: str) -> Path:
    (tmp_path / "k.cc").write_text("int main() { return 0; }\n")
    p = tmp_path / "cfg.yaml"
    p.write_text(textwrap.dedent(body))
    return p


MINIMAL = """\
compiler:
  family: clang
  command: clang++
target:
  source: k.cc
harness:
  command: [sh, run.sh]
provider:
  kind: replay
  replay_file: replay.txt
"""


def test_minimal_config_defaults(tmp_path):
    cfg = load_config(write_config(tmp_path, MINIMAL))
    assert cfg.loop.iterations == 6
    assert cfg.loop.runs == 5
    assert cfg.compiler.family is CompilerFamily.CLANG
    assert cfg.compiler.opt_flags == ("-O3", "-march=native", "-DNDEBUG=1")
    assert cfg.compiler.report_flags == ("-Rpass-missed=.",)
    assert cfg.target.source_path == (tmp_path / "k.cc").resolve()
    assert cfg.target.region.mode is RegionMode.WHOLE_FILE
    assert cfg.out_dir == tmp_path.resolve() / "optpilot-out"


def test_gcc_default_report_flags(tmp_path):
    cfg = load_config(write_config(tmp_path, MINIMAL.replace("family: clang", "family: gcc")))
    assert cfg.compiler.report_flags == ("-fopt-info-missed", "-fopt-info-vec-missed")


def test_unknown_placeholder_in_first(tmp_path):
    body = MINIMAL + 'prompts:\n  first: "Make it fast: {speed}"\n'
    with pytest.raises(UnknownPlaceholder) as exc:
        load_config(write_config(tmp_path, body))
    assert exc.value.name == "speed"
    assert exc.value.template_id == "first"


def test_iterations_zero(tmp_path):
    with pytest.raises(ValidationError) as exc:
        load_config(write_config(tmp_path, MINIMAL + "loop:\n  iterations: 0\n"))
    assert "iterations ≥ 1" in exc.value.violations


def test_all_violations_listed(tmp_path):
    body = MINIMAL + "loop:\n  iterations: 0\n  runs: 0\n  bogus: 1\n"
    with pytest.raises(ValidationError) as exc:
        load_config(write_config(tmp_path, body))
    v = exc.value.violations
    assert "iterations ≥ 1" in v and "runs ≥ 1" in v
    assert any("bogus" in x for x in v)


def test_wrong_type_reported(tmp_path):
    with pytest.raises(ValidationError) as exc:
        load_config(write_config(tmp_path, MINIMAL + "loop:\n  iterations: many\n"))
    assert any("loop.iterations" in x for x in exc.value.violations)


def test_missing_source_file(tmp_path):
    with pytest.raises(ValidationError) as exc:
        load_config(write_config(tmp_path, MINIMAL.replace("k.cc", "nope.cc")))
    assert any("nope.cc" in x for x in exc.value.violations)


def test_parse_error_has_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("compiler:\n  family: clang\n  command: [unterminated\n")
    with pytest.raises(ParseError) as exc:
        load_config(p)
    assert exc.value.line is not None and exc.value.line >= 3


def test_config_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.yaml")


def test_prompt_from_file(tmp_path):
    (tmp_path / "first.txt").write_text("Optimize {code} for {compilerfamily}\n")
    cfg = load_config(write_config(tmp_path, MINIMAL + "prompts:\n  first: '@first.txt'\n"))
    assert cfg.prompts.first.text == "Optimize {code} for {compilerfamily}"


def test_markers_region_with_dash_mode(tmp_path):
    body = MINIMAL.replace("  source: k.cc\n", "  source: k.cc\n  region:\n    mode: whole-file\n")
    assert load_config(write_config(tmp_path, body)).target.region.mode is RegionMode.WHOLE_FILE


def test_error_prompt_needs_report(tmp_path):
    body = MINIMAL + 'prompts:\n  compile_error: "It broke. Try again."\n'
    with pytest.raises(ValidationError) as exc:
        load_config(write_config(tmp_path, body))
    assert any("compile_error" in x and "{report}" in x for x in exc.value.violations)


def test_dump_roundtrip(tmp_path):
    cfg = load_config(write_config(tmp_path, MINIMAL))
    out = tmp_path / "again.yaml"
    dump_config(cfg, out)
    assert load_config(out) == cfg


def test_apply_overrides(tmp_path):
    cfg = load_config(write_config(tmp_path, MINIMAL))
    new = apply_overrides(cfg, iterations=1, runs=2, out_dir=tmp_path / "o")
    assert (new.loop.iterations, new.loop.runs) == (1, 2)
    assert new.out_dir == tmp_path / "o"
    assert cfg.loop.iterations == 6
    with pytest.raises(ValidationError):
        apply_overrides(cfg, iterations=0)


def test_apply_provider_override(tmp_path):
    cfg = load_config(write_config(tmp_path, MINIMAL))
    new = apply_overrides(cfg, provider_kind="replay", replay_file=tmp_path / "r.txt")
    assert new.provider.kind is ProviderKind.REPLAY
    assert new.provider.replay_file == tmp_path / "r.txt"


# --- rendering ---------------------------------------------------------------


def test_render_score():
    out = render_prompt(PromptTemplate("time is {scoreint} ms"), PromptContext(scoreint=417))
    assert out == "time is 417 ms"


def test_render_without_placeholders_is_identity():
    assert render_prompt(PromptTemplate("no variables here"), PromptContext()) == "no variables here"


def test_render_escaped_braces():
    out = render_prompt(PromptTemplate("struct S {{ int {code}; }}"), PromptContext(code="x"))
    assert out == "struct S { int x; }"


def test_render_missing_variable():
    with pytest.raises(MissingVariable) as exc:
        render_prompt(PromptTemplate("{report}"), PromptContext(code="x"))
    assert exc.value.name == "report"


def test_default_first_prompt_renders_all_four():
    ctx = PromptContext(code="int k();", report="k.cc:1:1: missed: x [licm]",
                        scoreint=417, compilerfamily="Clang")
    out = render_prompt(PromptSet().first, ctx)
    for value in ("int k();", "k.cc:1:1: missed: x [licm]", "417", "Clang"):
        assert value in out
    assert "{" not in out.replace("int k();", "")


def test_default_prompts_are_valid():
    prompts = PromptSet()
    assert prompts.problems() == []
    for pid in PROMPT_IDS:
        assert not prompts.get(pid).text.endswith("\n")
    assert prompts.context.placeholders() == []


def test_placeholders_skip_escapes():
    assert placeholders("{{code}} {report} {{") == ["report"]


code_st = st.text(max_size=80)


@given(code_st, code_st)
def test_render_is_single_pass(code, report):
    # values that look like placeholders are inserted literally
    ctx = PromptContext(code=code + "{report}", report=report)
    out = render_prompt(PromptTemplate("A{code}B{report}C"), ctx)
    assert out == f"A{code}{{report}}B{report}C"


@given(code_st)
def test_render_escape_roundtrip(text):
    assert render_prompt(PromptTemplate(escape(text)), PromptContext()) == text


@given(code_st, st.integers(0, 10**6))
def test_render_idempotent_once_resolved(code, score):
    ctx = PromptContext(code=code, scoreint=score, report="r", compilerfamily="GCC")
    out = render_prompt(PromptTemplate("{scoreint} {compilerfamily}"), ctx)
    # rendering a placeholder-free result is the identity
    assert render_prompt(PromptTemplate(out), ctx) == out


def test_config_dict_is_plain(tmp_path):
    cfg = load_config(write_config(tmp_path, MINIMAL))
    d = config_to_dict(cfg)
    assert d["target"]["region"]["mode"] == "whole-file"
    assert d["loop"]["iterations"] == 6
