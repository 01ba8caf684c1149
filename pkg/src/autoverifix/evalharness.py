"""Benchmark runner and metrics engine: pass@k, FPR, and stage-1 quality metrics.

Passing the stage-1 testbench and being functionally correct against the
golden testbench are deliberately distinct judgments; their gap is what the
false positive rate measures. Sweeps persist every (problem, sample) cell
to an append-only journal and resume from it.
"""

from __future__ import annotations

import csv
import io
import json
import shutil
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

from .core import (
    DesignKind,
    PipelineOutcome,
    PipelineStatus,
    ProblemSpec,
    SimTrace,
    canonical_json,
    format_bitvec,
    trace_from_json,
    trace_to_json,
    coverage_to_json,
    coverage_from_json,
)
from .pipeline import assemble_outcome, reference_failure_outcome
from .stage1 import Stage1Controller, Stage1Result, Stage1Status
from .stage2 import Stage2Controller
from .testbench import synthesize_testbench
from .toolchain import HdlToolchain, SimCrashError, SimTimeoutError, Verdict, parse_sim_output

REPORT_KS = (1, 5, 10)


class EvalError(Exception):
    pass


class GoldenBenchInvalid(EvalError):
    """The benchmark-supplied golden testbench itself does not compile."""


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimator 1 - C(n-c, k)/C(n, k), in stable product form."""
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c} n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k} n={n}")
    if n - c < k:
        return 1.0
    prod = 1.0
    for j in range(k):
        prod *= (n - c - j) / (n - j)
    return 1.0 - prod


@dataclass(frozen=True)
class SampleJudgment:
    sample_index: int
    status: str
    tb_pass: bool
    golden_correct: bool
    outcome_digest: str
    error_note: str = ""


@dataclass
class ProblemResult:
    problem_id: str
    samples: list[SampleJudgment] = field(default_factory=list)
    stage1_status: str = ""
    stage1_coverage: float | None = None
    stage1_functional: bool | None = None
    excluded_note: str = ""

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def c(self) -> int:
        return sum(1 for s in self.samples if s.golden_correct)

    @property
    def c_tb(self) -> int:
        return sum(1 for s in self.samples if s.tb_pass)

    @property
    def c_both(self) -> int:
        return sum(1 for s in self.samples if s.tb_pass and s.golden_correct)


def fpr(results: list[ProblemResult]) -> float | None:
    """1 - (testbench-passing and golden-correct)/(testbench-passing); None when nothing passed."""
    total_tb = sum(r.c_tb for r in results)
    if total_tb == 0:
        return None
    total_both = sum(r.c_both for r in results)
    return 1.0 - total_both / total_tb


def judge_sample(
    outcome: PipelineOutcome, spec: ProblemSpec, toolchain: HdlToolchain, workdir: str | Path
) -> tuple[bool, bool]:
    """Returns (golden_correct, tb_pass).

    tb_pass comes from the pipeline's own final verdict. golden_correct is
    decided by compiling and simulating the final Verilog against the
    benchmark's golden testbench; syntax-level failures short-circuit.
    """
    tb_pass = outcome.final_verdict_pass
    if spec.golden_testbench is None:
        raise EvalError(f"problem {spec.id} has no golden testbench")
    if outcome.status in (PipelineStatus.FAIL_SYNTAX, PipelineStatus.FAIL_REFERENCE):
        return False, tb_pass
    if not outcome.verilog_source.strip():
        return False, tb_pass
    workdir = Path(workdir)
    result = toolchain.compile(
        [("dut.v", outcome.verilog_source), ("golden_tb.v", spec.golden_testbench)], workdir
    )
    if not result.ok:
        golden_files = {d.file for d in result.diagnostics if d.severity.value == "error"}
        if golden_files and all("golden_tb" in f for f in golden_files if f):
            raise GoldenBenchInvalid(f"golden testbench for {spec.id} does not compile")
        return False, tb_pass
    try:
        stdout = toolchain.simulate(result.artifact)
    except (SimTimeoutError, SimCrashError):
        return False, tb_pass
    sim = parse_sim_output(stdout, spec)
    return sim.verdict is Verdict.PASS, tb_pass


def render_trace_playback(spec: ProblemSpec, trace: SimTrace) -> str:
    """A Verilog module that replays the reference trace, for judging stage-1
    functional correctness against the golden testbench.

    Combinational traces become an input-keyed lookup (x outside the traced
    points); sequential traces become a cycle-indexed playback that assumes
    the golden bench applies the recorded stimulus.
    """
    lines: list[str] = []
    decls = []
    for p in spec.ports:
        rng = f"[{p.width - 1}:0] " if p.width > 1 else ""
        if p.direction.value == "input":
            decls.append(f"input {rng}{p.name}")
        else:
            decls.append(f"output reg {rng}{p.name}")
    lines.append(f"module {spec.module_name}({', '.join(decls)});")
    out_names = sorted(p.name for p in spec.output_ports)
    if spec.kind is DesignKind.COMBINATIONAL:
        in_names = sorted(p.name for p in spec.data_input_ports)
        key = "{" + ", ".join(in_names) + "}" if len(in_names) > 1 else in_names[0]
        lines.append("  always @(*) begin")
        lines.append(f"    case ({key})")
        seen = set()
        for rec in trace.cycles:
            label_parts = [
                f"{spec.port(n).width}'h{format_bitvec(rec.inputs[n])}" for n in in_names
            ]
            label = "{" + ", ".join(label_parts) + "}" if len(label_parts) > 1 else label_parts[0]
            if label in seen:
                continue
            seen.add(label)
            assigns = " ".join(
                f"{n} = {spec.port(n).width}'h{format_bitvec(rec.outputs[n])};" for n in out_names
            )
            lines.append(f"      {label}: begin {assigns} end")
        poison = " ".join(f"{n} = {{{spec.port(n).width}{{1'bx}}}};" for n in out_names)
        lines.append(f"      default: begin {poison} end")
        lines.append("    endcase")
        lines.append("  end")
    else:
        clk = spec.clock_port.name
        rst = spec.reset_port.name if spec.reset_port else None
        lines.append("  reg [31:0] cycle_q;")
        lines.append("  initial cycle_q = 0;")
        lines.append(f"  always @(posedge {clk}) begin")
        if rst:
            lines.append(f"    if ({rst}) cycle_q <= 0;")
            lines.append("    else cycle_q <= cycle_q + 1;")
        else:
            lines.append("    cycle_q <= cycle_q + 1;")
        lines.append("  end")
        lines.append("  always @(*) begin")
        lines.append("    case (cycle_q)")
        for rec in trace.cycles:
            assigns = " ".join(
                f"{n} = {spec.port(n).width}'h{format_bitvec(rec.outputs[n])};" for n in out_names
            )
            lines.append(f"      {rec.cycle_index + 1}: begin {assigns} end")
        poison = " ".join(f"{n} = {{{spec.port(n).width}{{1'bx}}}};" for n in out_names)
        lines.append(f"      default: begin {poison} end")
        lines.append("    endcase")
        lines.append("  end")
    lines.append("endmodule")
    return "\n".join(lines) + "\n"


# -- benchmark sweep ----------------------------------------------------------


class PipelineFactory(Protocol):
    """Builds fresh controllers per cell; lets the CLI wire real or scripted parts."""

    def make_stage1(self, problem_id: str) -> Stage1Controller: ...

    def make_stage2(self, problem_id: str, sample_index: int) -> Stage2Controller: ...

    def make_toolchain(self) -> HdlToolchain: ...


@dataclass
class BenchmarkReport:
    per_problem: list[ProblemResult]
    aggregates: dict[str, Any]
    config_snapshot: dict[str, Any]
    config_digest: str
    wall_clock_s: float

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "per_problem": [
                {
                    "problem_id": r.problem_id,
                    "n": r.n,
                    "c": r.c,
                    "c_tb": r.c_tb,
                    "c_both": r.c_both,
                    "stage1_status": r.stage1_status,
                    "stage1_coverage": r.stage1_coverage,
                    "stage1_functional": r.stage1_functional,
                    "excluded_note": r.excluded_note,
                    "samples": [
                        {
                            "sample_index": s.sample_index,
                            "status": s.status,
                            "tb_pass": s.tb_pass,
                            "golden_correct": s.golden_correct,
                            "outcome_digest": s.outcome_digest,
                            "error_note": s.error_note,
                        }
                        for s in r.samples
                    ],
                }
                for r in self.per_problem
            ],
            "aggregates": self.aggregates,
            "config": self.config_snapshot,
            "config_digest": self.config_digest,
            "wall_clock_s": self.wall_clock_s,
        }


def compute_aggregates(results: list[ProblemResult]) -> dict[str, Any]:
    included = [r for r in results if not r.excluded_note]
    agg: dict[str, Any] = {"problems": len(results), "excluded": len(results) - len(included)}
    pass_at: dict[str, float | None] = {}
    scored = [r for r in included if r.n > 0]
    for k in REPORT_KS:
        if scored and all(r.n >= k for r in scored):
            pass_at[str(k)] = sum(pass_at_k(r.n, r.c, k) for r in scored) / len(scored)
        else:
            pass_at[str(k)] = None
    agg["pass_at"] = pass_at
    agg["fpr"] = fpr(included)
    if included:
        ok = sum(1 for r in included if r.stage1_status in ("ok", "budget_exhausted_coverage"))
        agg["stage1_syntactic_pct"] = 100.0 * ok / len(included)
        judged = [r for r in included if r.stage1_functional is not None]
        agg["stage1_functional_pct"] = (
            100.0 * sum(1 for r in judged if r.stage1_functional) / len(judged) if judged else None
        )
        covs = [r.stage1_coverage for r in included if r.stage1_coverage is not None]
        agg["mean_line_coverage"] = sum(covs) / len(covs) if covs else None
    else:
        agg["stage1_syntactic_pct"] = None
        agg["stage1_functional_pct"] = None
        agg["mean_line_coverage"] = None
    return agg


class Journal:
    """Append-only JSONL store of completed stage-1 runs and sample cells."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self, config_digest: str) -> tuple[dict[str, dict], dict[tuple[str, int], dict]]:
        stage1: dict[str, dict] = {}
        samples: dict[tuple[str, int], dict] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                entry = json.loads(line)
                if entry.get("config_digest") != config_digest:
                    continue
                if entry["kind"] == "stage1":
                    stage1.setdefault(entry["problem_id"], entry)
                elif entry["kind"] == "sample":
                    samples.setdefault((entry["problem_id"], entry["sample_index"]), entry)
        return stage1, samples

    def append(self, entry: dict[str, Any]) -> None:
        with self._lock:
            with self.path.open("a") as fh:
                fh.write(canonical_json(entry) + "\n")


def _stage1_to_json(result: Stage1Result, spec: ProblemSpec) -> dict[str, Any]:
    return {
        "status": result.status.value,
        "model_source": result.model_source,
        "test_vectors": [dict(v) for v in result.test_vectors],
        "trace": trace_to_json(result.trace),
        "coverage": coverage_to_json(result.coverage),
        "syntax_iterations": result.syntax_iterations,
        "coverage_iterations": result.coverage_iterations,
        "failure_reason": result.failure_reason,
    }


def _stage1_from_json(d: dict[str, Any], spec: ProblemSpec) -> Stage1Result:
    widths = {p.name: p.width for p in spec.ports if p.role.value == "data"}
    return Stage1Result(
        model_source=d["model_source"],
        test_vectors=tuple(dict(v) for v in d["test_vectors"]),
        trace=trace_from_json(d["trace"], widths),
        coverage=coverage_from_json(d["coverage"]),
        syntax_iterations=d["syntax_iterations"],
        coverage_iterations=d["coverage_iterations"],
        status=Stage1Status(d["status"]),
        iteration_log=(),
        failure_reason=d.get("failure_reason", ""),
    )


def run_benchmark(
    problems: list[ProblemSpec],
    factory: PipelineFactory,
    out_dir: str | Path,
    config_snapshot: dict[str, Any],
    config_digest: str,
    n_samples: int = 10,
    jobs: int = 1,
    progress: Callable[[str], None] | None = None,
) -> BenchmarkReport:
    """Run stage 1 once per problem and stage 2 n times, judging each sample.

    Completed cells found in the journal (same config digest) are skipped, so
    an interrupted sweep resumes to the identical report. A crashed sample is
    recorded as incorrect with a note; it never aborts the sweep.
    """
    from concurrent.futures import ThreadPoolExecutor

    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    journal = Journal(out_dir / "journal.jsonl")
    done_stage1, done_samples = journal.load(config_digest)
    started = time.monotonic()
    say = progress or (lambda _msg: None)

    spec_by_id = {p.id: p for p in problems}
    stage1_results: dict[str, Stage1Result] = {}

    def run_stage1_cell(spec: ProblemSpec) -> None:
        if spec.id in done_stage1:
            stage1_results[spec.id] = _stage1_from_json(done_stage1[spec.id]["result"], spec)
            return
        say(f"stage1 {spec.id}")
        try:
            result = factory.make_stage1(spec.id).run(spec)
        except Exception as e:
            result = Stage1Result(
                model_source="",
                test_vectors=(),
                trace=None,
                coverage=None,
                syntax_iterations=0,
                coverage_iterations=0,
                status=Stage1Status.FAIL_REFERENCE,
                iteration_log=(),
                failure_reason=f"stage1 crashed: {e}",
            )
        stage1_results[spec.id] = result
        journal.append(
            {
                "kind": "stage1",
                "problem_id": spec.id,
                "config_digest": config_digest,
                "result": _stage1_to_json(result, spec),
            }
        )

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        list(pool.map(run_stage1_cell, problems))

    def run_sample_cell(cell: tuple[str, int]) -> None:
        problem_id, idx = cell
        if cell in done_samples:
            return
        spec = spec_by_id[problem_id]
        s1 = stage1_results[problem_id]
        say(f"sample {problem_id}#{idx}")
        entry: dict[str, Any] = {
            "kind": "sample",
            "problem_id": problem_id,
            "sample_index": idx,
            "config_digest": config_digest,
        }
        workdir = Path(tempfile.mkdtemp(prefix=f"autoverifix_eval_{problem_id}_{idx}_"))
        try:
            if s1.status is Stage1Status.FAIL_REFERENCE or s1.trace is None:
                outcome = reference_failure_outcome(spec, s1)
                tb_pass = golden = False
                note = s1.failure_reason or "no reference model"
            else:
                testbench = synthesize_testbench(spec, s1.trace)
                s2 = factory.make_stage2(problem_id, idx).run(spec, testbench, s1.trace)
                outcome = assemble_outcome(spec, s1, testbench.source, s2)
                golden, tb_pass = judge_sample(
                    outcome, spec, factory.make_toolchain(), workdir / "judge"
                )
                note = ""
            entry["outcome_digest"] = outcome.digest()
            entry["status"] = outcome.status.value
            entry["tb_pass"] = tb_pass
            entry["golden_correct"] = golden
            entry["error_note"] = note
        except GoldenBenchInvalid as e:
            entry.update(
                outcome_digest="",
                status="error",
                tb_pass=False,
                golden_correct=False,
                error_note=f"golden_invalid: {e}",
            )
        except Exception as e:
            entry.update(
                outcome_digest="",
                status="error",
                tb_pass=False,
                golden_correct=False,
                error_note=f"sample crashed: {e}",
            )
        finally:
            shutil.rmtree(workdir, ignore_errors=True)
        journal.append(entry)

    cells = [(p.id, i) for p in problems for i in range(n_samples)]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        list(pool.map(run_sample_cell, cells))

    # the journal is the single source of truth for the report
    done_stage1, done_samples = journal.load(config_digest)
    results = []
    for spec in problems:
        r = ProblemResult(problem_id=spec.id)
        s1_entry = done_stage1.get(spec.id)
        if s1_entry:
            r.stage1_status = s1_entry["result"]["status"]
            cov = s1_entry["result"]["coverage"]
            r.stage1_coverage = cov["ratio"] if cov else None
            r.stage1_functional = _judge_stage1_functional(spec, s1_entry["result"], factory)
        for idx in range(n_samples):
            cell = done_samples.get((spec.id, idx))
            if cell is None:
                continue
            r.samples.append(
                SampleJudgment(
                    sample_index=idx,
                    status=cell["status"],
                    tb_pass=cell["tb_pass"],
                    golden_correct=cell["golden_correct"],
                    outcome_digest=cell.get("outcome_digest", ""),
                    error_note=cell.get("error_note", ""),
                )
            )
        golden_invalid = [s for s in r.samples if s.error_note.startswith("golden_invalid")]
        if golden_invalid and len(golden_invalid) == len(r.samples):
            r.excluded_note = golden_invalid[0].error_note
        results.append(r)

    report = BenchmarkReport(
        per_problem=results,
        aggregates=compute_aggregates(results),
        config_snapshot=config_snapshot,
        config_digest=config_digest,
        wall_clock_s=time.monotonic() - started,
    )
    write_report_files(report, out_dir)
    return report


def _judge_stage1_functional(spec: ProblemSpec, s1_json: dict, factory: PipelineFactory) -> bool | None:
    if spec.golden_testbench is None or s1_json.get("trace") is None:
        return None
    widths = {p.name: p.width for p in spec.ports if p.role.value == "data"}
    trace = trace_from_json(s1_json["trace"], widths)
    if trace is None or len(trace) == 0:
        return None
    playback = render_trace_playback(spec, trace)
    workdir = Path(tempfile.mkdtemp(prefix="autoverifix_s1judge_"))
    try:
        toolchain = factory.make_toolchain()
        result = toolchain.compile(
            [("dut.v", playback), ("golden_tb.v", spec.golden_testbench)], workdir
        )
        if not result.ok:
            return False
        try:
            stdout = toolchain.simulate(result.artifact)
        except (SimTimeoutError, SimCrashError):
            return False
        return parse_sim_output(stdout, spec).verdict is Verdict.PASS
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


def write_report_files(report: BenchmarkReport, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    (out_dir / "report.json").write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["problem_id", "n", "c", "c_tb", "c_both", "stage1_status", "stage1_coverage", "stage1_functional", "excluded_note"]
    )
    for r in report.per_problem:
        writer.writerow(
            [r.problem_id, r.n, r.c, r.c_tb, r.c_both, r.stage1_status, r.stage1_coverage, r.stage1_functional, r.excluded_note]
        )
    (out_dir / "report.csv").write_text(buf.getvalue())
    (out_dir / "report.txt").write_text(format_report_table(report))


def format_report_table(report: BenchmarkReport) -> str:
    lines = []
    header = f"{'problem':<24} {'n':>3} {'c':>3} {'c_tb':>4} {'stage1':<26} {'coverage':>8}"
    lines.append(header)
    lines.append("-" * len(header))
    for r in report.per_problem:
        cov = f"{r.stage1_coverage:.2f}" if r.stage1_coverage is not None else "-"
        lines.append(
            f"{r.problem_id:<24} {r.n:>3} {r.c:>3} {r.c_tb:>4} {r.stage1_status:<26} {cov:>8}"
        )
    lines.append("")
    agg = report.aggregates
    for k in REPORT_KS:
        v = agg["pass_at"][str(k)]
        lines.append(f"pass@{k}: {v:.4f}" if v is not None else f"pass@{k}: n/a")
    lines.append(f"FPR: {agg['fpr']:.4f}" if agg["fpr"] is not None else "FPR: n/a (no testbench passes)")
    if agg.get("stage1_syntactic_pct") is not None:
        lines.append(f"stage-1 syntactic correctness: {agg['stage1_syntactic_pct']:.1f}%")
    if agg.get("stage1_functional_pct") is not None:
        lines.append(f"stage-1 functional correctness: {agg['stage1_functional_pct']:.1f}%")
    if agg.get("mean_line_coverage") is not None:
        lines.append(f"mean line coverage: {agg['mean_line_coverage']:.4f}")
    lines.append(f"wall clock: {report.wall_clock_s:.1f}s")
    return "\n".join(lines) + "\n"
