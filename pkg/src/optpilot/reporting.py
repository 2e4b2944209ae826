"""Per-run speedups and the cross-run summary (max / avg / number improved)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from statistics import fmean
from typing import Sequence

from .evaluator import Passed
from .orchestrator import RunRecord, select_best


class ZeroScore(ValueError):
    """A zero-millisecond score; almost certainly a broken harness."""


class SummaryError(AssertionError):
    pass


def speedup(baseline_ms: int, best_ms: int) -> float:
    if best_ms <= 0 or baseline_ms <= 0:
        raise ZeroScore(f"cannot form a speedup from scores {baseline_ms} / {best_ms}")
    return baseline_ms / best_ms


@dataclass(frozen=True)
class RunSpeedup:
    run_index: int
    speedup: float
    improved: bool
    baseline_ms: int = 0
    best_ms: int = 0


@dataclass(frozen=True)
class RunSummary:
    per_run: tuple[RunSpeedup, ...]
    max_speedup: float
    avg_speedup: float
    num_improved: int
    total_cost_usd: float = 0.0

    @property
    def table_row(self) -> str:
        return f"| {self.max_speedup:.1f} | {self.avg_speedup:.2f} | {self.num_improved} |"


def summarize_speedups(per_run: Sequence[RunSpeedup], total_cost_usd: float = 0.0) -> RunSummary:
    if not per_run:
        raise ValueError("need at least one run")
    for r in per_run:
        if r.speedup < 1.0:
            raise SummaryError(f"run {r.run_index} has speedup {r.speedup} < 1.0")
    values = [r.speedup for r in per_run]
    hi, lo = max(values), min(values)
    return RunSummary(
        per_run=tuple(per_run),
        max_speedup=hi,
        # rounding in the mean may step outside [min, max]
        avg_speedup=min(hi, max(lo, fmean(values))),
        num_improved=sum(r.improved for r in per_run),
        total_cost_usd=total_cost_usd,
    )


def aggregate(runs: Sequence[RunRecord]) -> RunSummary:
    per_run = []
    for run in runs:
        best = select_best(run)
        per_run.append(
            RunSpeedup(
                run_index=run.run_index,
                speedup=speedup(run.baseline_score_ms, best.score_ms),
                improved=best.score_ms < run.baseline_score_ms,
                baseline_ms=run.baseline_score_ms,
                best_ms=best.score_ms,
            )
        )
    return summarize_speedups(per_run, sum(r.total_cost_usd for r in runs))


def _iteration_entries(run: RunRecord) -> list[dict]:
    out = []
    for it in run.iterations:
        entry = {
            "index": it.index,
            "prompt_kind": it.prompt_kind.value,
            "outcome": it.eval.outcome if it.eval is not None else "no_code",
        }
        if isinstance(it.eval, Passed):
            entry["score_ms"] = it.eval.score_ms
        out.append(entry)
    return out


def summary_to_dict(summary: RunSummary, runs: Sequence[RunRecord] = ()) -> dict:
    by_index = {r.run_index: r for r in runs}
    run_entries = []
    for s in summary.per_run:
        entry = asdict(s)
        run = by_index.get(s.run_index)
        entry["iterations"] = _iteration_entries(run) if run else []
        entry["cost_usd"] = run.total_cost_usd if run else 0.0
        run_entries.append(entry)
    return {
        "max_speedup": summary.max_speedup,
        "avg_speedup": summary.avg_speedup,
        "num_improved": summary.num_improved,
        "total_cost_usd": summary.total_cost_usd,
        "runs": run_entries,
    }


def summary_from_dict(data: dict) -> RunSummary:
    return RunSummary(
        per_run=tuple(
            RunSpeedup(
                run_index=r["run_index"],
                speedup=r["speedup"],
                improved=r["improved"],
                baseline_ms=r.get("baseline_ms", 0),
                best_ms=r.get("best_ms", 0),
            )
            for r in data["runs"]
        ),
        max_speedup=data["max_speedup"],
        avg_speedup=data["avg_speedup"],
        num_improved=data["num_improved"],
        total_cost_usd=data.get("total_cost_usd", 0.0),
    )


def _history(run: RunRecord) -> str:
    steps = []
    for it in run.iterations:
        if it.eval is None:
            outcome = "no code"
        elif isinstance(it.eval, Passed):
            outcome = f"{it.eval.score_ms} ms"
        else:
            outcome = it.eval.outcome.replace("_", " ")
        steps.append(f"{it.index}:{it.prompt_kind.value}→{outcome}")
    return ", ".join(steps) if steps else "(no iterations)"


def render_markdown(summary: RunSummary, runs: Sequence[RunRecord] = ()) -> str:
    lines = [
        "# Speedup summary",
        "",
        "| Max. | Avg. | Num. |",
        "|------|------|------|",
        summary.table_row,
        "",
        f"Runs: {len(summary.per_run)}, total cost: {summary.total_cost_usd:.4f} USD",
        "",
    ]
    by_index = {r.run_index: r for r in runs}
    for s in summary.per_run:
        line = (f"- run {s.run_index}: baseline {s.baseline_ms} ms, best {s.best_ms} ms, "
                f"speedup {s.speedup:.2f}")
        run = by_index.get(s.run_index)
        if run is not None:
            line += f" | {_history(run)}"
            if run.concurrent:
                line += " (concurrent run: timings may be noisy)"
        lines.append(line)
    return "\n".join(lines) + "\n"


def write_summary(summary: RunSummary, runs: Sequence[RunRecord], out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "summary.json"
    md_path = out_dir / "summary.md"
    json_path.write_text(json.dumps(summary_to_dict(summary, runs), indent=2) + "\n", encoding="utf-8")
    md_path.write_text(render_markdown(summary, runs), encoding="utf-8")
    return json_path, md_path


def load_summary(path: str | Path) -> RunSummary:
    return summary_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_runs(out_dir: str | Path) -> list[RunRecord]:
    paths = sorted(Path(out_dir).glob("run*/record.json"),
                   key=lambda p: int(p.parent.name[3:]) if p.parent.name[3:].isdigit() else 0)
    return [RunRecord.load(p) for p in paths]
