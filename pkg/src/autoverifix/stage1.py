"""Stage 1: reference-model generation with syntax repair, then coverage-driven test refinement.

The loop terminates when line coverage reaches the configured threshold or
the refinement budget is spent; the highest-coverage attempt is always the
one retained.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from enum import Enum

from .core import (
    CoverageReport,
    Diagnostic,
    IterationEvent,
    ProblemSpec,
    RunBudget,
    Severity,
    SimTrace,
    ValidationError,
    sha256_text,
)
from .gateway import ChatGateway, NoCodeBlockError, extract_code_blocks
from .harness_client import HarnessResult, HarnessRunner, HarnessStatus, build_job
from .prompts import PromptForge


class Stage1Status(str, Enum):
    OK = "ok"
    FAIL_REFERENCE = "fail_reference"
    BUDGET_EXHAUSTED_COVERAGE = "budget_exhausted_coverage"


class ResponseFormatError(Exception):
    """The LLM reply lacked the required code blocks or vector literal."""


@dataclass(frozen=True)
class Stage1Result:
    model_source: str
    test_vectors: tuple[dict[str, int], ...]
    trace: SimTrace | None
    coverage: CoverageReport | None
    syntax_iterations: int
    coverage_iterations: int
    status: Stage1Status
    iteration_log: tuple[IterationEvent, ...]
    failure_reason: str = ""


def parse_vector_literal(text: str, spec: ProblemSpec) -> list[dict[str, int]]:
    """Parse a test-vector list literal from a fenced block.

    Accepts a list of {port: value} dicts, or a plain integer list when the
    design has exactly one data input port.
    """
    try:
        value = ast.literal_eval(text.strip())
    except (ValueError, SyntaxError) as e:
        raise ResponseFormatError(f"test vectors are not a Python literal: {e}") from None
    if not isinstance(value, list) or not value:
        raise ResponseFormatError("test vectors must be a nonempty list")
    inputs = [p.name for p in spec.data_input_ports]
    vectors: list[dict[str, int]] = []
    if all(isinstance(v, int) for v in value):
        if len(inputs) != 1:
            raise ResponseFormatError(
                f"integer-list vectors require exactly one data input, design has {len(inputs)}"
            )
        vectors = [{inputs[0]: v} for v in value]
    elif all(isinstance(v, dict) for v in value):
        vectors = [{str(k): int(x) for k, x in v.items()} for v in value]
    else:
        raise ResponseFormatError("test vectors must be all ints or all dicts")
    return vectors


def parse_model_response(content: str, spec: ProblemSpec) -> tuple[str, list[dict[str, int]]]:
    """Split a generation reply into (model source, initial vectors)."""
    blocks = extract_code_blocks(content, "python")
    if not blocks:
        raise NoCodeBlockError("no python code block in response")
    if len(blocks) < 2:
        raise ResponseFormatError("expected two python blocks: model class and test inputs")
    return blocks[0], parse_vector_literal(blocks[1], spec)


class Stage1Controller:
    def __init__(
        self,
        gateway: ChatGateway,
        harness: HarnessRunner,
        forge: PromptForge,
        budget: RunBudget,
        coverage_feedback: bool = True,
    ):
        self.gateway = gateway
        self.harness = harness
        self.forge = forge
        self.budget = budget
        self.coverage_feedback = coverage_feedback

    def run(self, spec: ProblemSpec) -> Stage1Result:
        events: list[IterationEvent] = []

        def complete(request, kind: str, summary_fn) -> str:
            response = self.gateway.complete(request)
            prompt_text = "\n".join(m.content for m in request.messages)
            events.append(
                IterationEvent(
                    stage="stage1",
                    kind=kind,
                    prompt_digest=sha256_text(prompt_text),
                    response_digest=sha256_text(response.content),
                    result_summary=summary_fn(response.content),
                )
            )
            return response.content

        model_source = ""
        vectors: list[dict[str, int]] = []
        result: HarnessResult | None = None
        syntax_iters = 0
        error_text = ""

        content = complete(self.forge.render_ref_model_prompt(spec), "ref_model_gen", lambda c: "generated")
        while True:
            parse_error = ""
            try:
                model_source, vectors = parse_model_response(content, spec)
                result = self._execute(spec, model_source, vectors)
                if result.status is HarnessStatus.OK:
                    break
                error_text = result.error_text
            except (NoCodeBlockError, ResponseFormatError, ValidationError) as e:
                parse_error = str(e)
                error_text = parse_error
            if syntax_iters >= self.budget.max_python_syntax_iters:
                return Stage1Result(
                    model_source=model_source,
                    test_vectors=tuple(vectors),
                    trace=None,
                    coverage=None,
                    syntax_iterations=syntax_iters,
                    coverage_iterations=0,
                    status=Stage1Status.FAIL_REFERENCE,
                    iteration_log=tuple(events),
                    failure_reason=error_text,
                )
            syntax_iters += 1
            if parse_error and not model_source:
                # nothing usable came back: re-issue the generation prompt
                request = self.forge.render_ref_model_prompt(spec)
            else:
                diag = Diagnostic(
                    severity=Severity.ERROR, file="<model>", line=None, message=error_text, raw=error_text
                )
                request = self.forge.render_syntax_fix_prompt("python", model_source or content, [diag])
            content = complete(request, "syntax_fix", lambda c: f"repair attempt {syntax_iters}")

        assert result is not None and result.trace is not None and result.coverage is not None
        best_vectors, best_trace, best_coverage = vectors, result.trace, result.coverage
        last_report = result.coverage
        coverage_iters = 0

        while (
            self.coverage_feedback
            and best_coverage.ratio < self.budget.coverage_threshold
            and coverage_iters < self.budget.max_coverage_iters
        ):
            request = self.forge.render_coverage_refine_prompt(
                model_source, repr(vectors), last_report, self.budget.coverage_threshold
            )
            coverage_iters += 1
            content = complete(request, "coverage_refine", lambda c: f"refinement {coverage_iters}")
            try:
                blocks = extract_code_blocks(content, "python")
                if not blocks:
                    raise NoCodeBlockError("no python code block in refinement reply")
                new_vectors = parse_vector_literal(blocks[-1], spec)
                attempt = self._execute(spec, model_source, new_vectors)
            except (NoCodeBlockError, ResponseFormatError, ValidationError) as e:
                events[-1] = _amend_summary(events[-1], f"refinement discarded: {e}")
                continue
            if attempt.status is not HarnessStatus.OK:
                events[-1] = _amend_summary(events[-1], f"refinement discarded: {attempt.error_text}")
                continue
            assert attempt.trace is not None and attempt.coverage is not None
            vectors = new_vectors
            last_report = attempt.coverage
            if attempt.coverage.ratio > best_coverage.ratio:
                best_vectors, best_trace, best_coverage = new_vectors, attempt.trace, attempt.coverage

        status = (
            Stage1Status.OK
            if best_coverage.ratio >= self.budget.coverage_threshold
            else Stage1Status.BUDGET_EXHAUSTED_COVERAGE
        )
        return Stage1Result(
            model_source=model_source,
            test_vectors=tuple(best_vectors),
            trace=best_trace,
            coverage=best_coverage,
            syntax_iterations=syntax_iters,
            coverage_iterations=coverage_iters,
            status=status,
            iteration_log=tuple(events),
        )

    def _execute(self, spec: ProblemSpec, model_source: str, vectors: list[dict[str, int]]) -> HarnessResult:
        job = build_job(spec, model_source, vectors, self.budget.sim_timeout_s)
        result = self.harness.run(job)
        if result.status is HarnessStatus.OK and result.trace is not None:
            result.trace.validate_against(spec)
        return result


def _amend_summary(event: IterationEvent, summary: str) -> IterationEvent:
    return IterationEvent(
        stage=event.stage,
        kind=event.kind,
        prompt_digest=event.prompt_digest,
        response_digest=event.response_digest,
        result_summary=summary,
    )
