import pytest
from hypothesis import given
from hypothesis import strategies as st

from optpilot.evaluator import Passed, TestsFailed
from optpilot.llm import Usage
from optpilot.orchestrator import IterationRecord, PromptKind, RunRecord
from optpilot.reporting import (
    RunSpeedup,
    SummaryError,
    ZeroScore,
    aggregate,
    load_runs,
    load_summary,
    render_markdown,
    speedup,
    summarize_speedups,
    write_summary,
)


def run_with(index, baseline, *scores):
    its = [IterationRecord(i, PromptKind.SUCCESS, "p", "r", "c",
                           Passed(s) if s is not None else TestsFailed("bad"), None, Usage(),
                           cost_usd=0.01, candidate_source=f"v{i}")
           for i, s in enumerate(scores, 1)]
    return RunRecord(index, baseline, "orig", its, total_cost_usd=0.01 * len(its))


def rs(i, s):
    return RunSpeedup(i, s, s > 1.0)


def test_speedup_display():
    assert f"{speedup(417, 134):.1f}" == "3.1"
    assert speedup(100, 100) == 1.0


def test_zero_score():
    with pytest.raises(ZeroScore):
        speedup(417, 0)
    with pytest.raises(ZeroScore):
        speedup(0, 5)


def test_table_row_example():
    s = summarize_speedups([rs(1, 1.4)] + [rs(i, 1.0) for i in range(2, 6)])
    assert s.avg_speedup == pytest.approx(1.08, abs=0.005)
    assert s.table_row == "| 1.4 | 1.08 | 1 |"


def test_all_unimproved():
    s = summarize_speedups([rs(i, 1.0) for i in range(1, 6)])
    assert s.table_row == "| 1.0 | 1.00 | 0 |"


def test_single_run():
    s = summarize_speedups([rs(1, 6.5)])
    assert s.table_row == "| 6.5 | 6.50 | 1 |"


def test_speedup_below_one_rejected():
    with pytest.raises(SummaryError):
        summarize_speedups([rs(1, 0.9)])


def test_empty_rejected():
    with pytest.raises(ValueError):
        summarize_speedups([])


def test_aggregate_from_records():
    runs = [run_with(1, 417, 300, None, 134), run_with(2, 417, 500), run_with(3, 417)]
    s = aggregate(runs)
    assert [r.best_ms for r in s.per_run] == [134, 417, 417]
    assert s.num_improved == 1
    assert f"{s.max_speedup:.1f}" == "3.1"
    assert s.total_cost_usd == pytest.approx(0.04)


def test_summary_files_roundtrip(tmp_path):
    runs = [run_with(1, 417, 300, None, 134), run_with(2, 417, 500)]
    s = aggregate(runs)
    json_path, md_path = write_summary(s, runs, tmp_path)
    assert load_summary(json_path) == s
    md = md_path.read_text()
    assert s.table_row in md
    assert "1:success→300 ms, 2:success→tests failed, 3:success→134 ms" in md


def test_markdown_flags_concurrency():
    run = run_with(1, 100, 50)
    run.concurrent = True
    assert "timings may be noisy" in render_markdown(aggregate([run]), [run])


def test_load_runs_numeric_order(tmp_path):
    import json
    for i in (10, 2, 1):
        d = tmp_path / f"run{i}"
        d.mkdir()
        (d / "record.json").write_text(json.dumps(run_with(i, 100, 90).to_dict()))
    assert [r.run_index for r in load_runs(tmp_path)] == [1, 2, 10]


speedups = st.lists(st.floats(1.0, 50.0, allow_nan=False), min_size=1, max_size=20)


@given(speedups)
def test_summary_bounds(values):
    s = summarize_speedups([rs(i, v) for i, v in enumerate(values, 1)])
    assert min(values) <= s.avg_speedup <= s.max_speedup
    assert s.max_speedup == max(values)
    assert 0 <= s.num_improved <= len(values)
    assert s.num_improved == sum(v > 1.0 for v in values)


@given(st.integers(1, 10**6), st.lists(st.integers(1, 10**6), max_size=8))
def test_aggregate_never_below_one(baseline, scores):
    s = aggregate([run_with(1, baseline, *scores)])
    assert s.max_speedup >= 1.0
    assert s.per_run[0].best_ms == min([baseline, *scores])
