"""Composes stage 1 and stage 2 into one PipelineOutcome per problem."""

from __future__ import annotations

from .core import PipelineOutcome, PipelineStatus, ProblemSpec
from .stage1 import Stage1Controller, Stage1Result, Stage1Status
from .stage2 import Stage2Controller, Stage2Result, Stage2Status
from .testbench import synthesize_testbench

_STATUS_MAP = {
    Stage2Status.PASS: PipelineStatus.PASS,
    Stage2Status.FAIL_SYNTAX: PipelineStatus.FAIL_SYNTAX,
    Stage2Status.FAIL_FUNCTION: PipelineStatus.FAIL_FUNCTION,
    Stage2Status.BUDGET_EXHAUSTED: PipelineStatus.BUDGET_EXHAUSTED,
}


def reference_failure_outcome(spec: ProblemSpec, s1: Stage1Result) -> PipelineOutcome:
    return PipelineOutcome(
        problem_id=spec.id,
        status=PipelineStatus.FAIL_REFERENCE,
        reference_source=s1.model_source,
        test_vectors=s1.test_vectors,
        testbench_source="",
        verilog_source="",
        coverage=s1.coverage,
        iteration_log=s1.iteration_log,
        final_verdict_pass=False,
        final_discrepancy_count=0,
    )


def assemble_outcome(
    spec: ProblemSpec, s1: Stage1Result, testbench_source: str, s2: Stage2Result
) -> PipelineOutcome:
    coverage_exhausted = s1.status is Stage1Status.BUDGET_EXHAUSTED_COVERAGE
    status = _STATUS_MAP[s2.status]
    if s2.status is Stage2Status.PASS and coverage_exhausted:
        # the bench that vouched for this design never met the coverage bar;
        # surface that as a distinct, flagged terminal state
        status = PipelineStatus.BUDGET_EXHAUSTED
    return PipelineOutcome(
        problem_id=spec.id,
        status=status,
        reference_source=s1.model_source,
        test_vectors=s1.test_vectors,
        testbench_source=testbench_source,
        verilog_source=s2.verilog_source,
        coverage=s1.coverage,
        iteration_log=s1.iteration_log + s2.iteration_log,
        final_verdict_pass=s2.status is Stage2Status.PASS,
        final_discrepancy_count=len(s2.final_discrepancies),
        coverage_budget_exhausted=coverage_exhausted,
    )


def run_problem(
    spec: ProblemSpec, stage1: Stage1Controller, stage2: Stage2Controller
) -> PipelineOutcome:
    s1 = stage1.run(spec)
    if s1.status is Stage1Status.FAIL_REFERENCE:
        return reference_failure_outcome(spec, s1)
    assert s1.trace is not None
    testbench = synthesize_testbench(spec, s1.trace)
    s2 = stage2.run(spec, testbench, s1.trace)
    return assemble_outcome(spec, s1, testbench.source, s2)
