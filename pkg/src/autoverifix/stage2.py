"""Stage 2: Verilog generation, compiler-driven syntax repair, and simulation-driven function repair.

Each functionally revised candidate re-enters compilation with a fresh
syntax budget; the function-repair counter is global. A design whose
simulation verdict is pass is returned unchanged.
"""

from __future__ import annotations

import shutil
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .core import (
    Diagnostic,
    Discrepancy,
    IterationEvent,
    ProblemSpec,
    RunBudget,
    Severity,
    SimTrace,
    sha256_text,
)
from .gateway import ChatGateway, NoCodeBlockError, extract_code_block
from .prompts import PromptForge
from .testbench import TestbenchSource
from .toolchain import (
    HdlToolchain,
    SimCrashError,
    SimTimeoutError,
    Verdict,
    parse_sim_output,
)


class Stage2Status(str, Enum):
    PASS = "pass"
    FAIL_SYNTAX = "fail_syntax"
    FAIL_FUNCTION = "fail_function"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class Stage2Result:
    verilog_source: str
    status: Stage2Status
    syntax_iterations: int
    function_iterations: int
    final_discrepancies: tuple[Discrepancy, ...]
    iteration_log: tuple[IterationEvent, ...]
    failure_reason: str = ""


class Stage2Controller:
    def __init__(
        self,
        gateway: ChatGateway,
        toolchain: HdlToolchain,
        forge: PromptForge,
        budget: RunBudget,
        workdir: str | Path | None = None,
    ):
        self.gateway = gateway
        self.toolchain = toolchain
        self.forge = forge
        self.budget = budget
        self._workdir = Path(workdir) if workdir else None

    def run(self, spec: ProblemSpec, testbench: TestbenchSource, ref_trace: SimTrace | None) -> Stage2Result:
        events: list[IterationEvent] = []
        total_syntax = 0
        function_iters = 0

        def complete(request, kind: str, summary: str) -> str:
            response = self.gateway.complete(request)
            prompt_text = "\n".join(m.content for m in request.messages)
            events.append(
                IterationEvent(
                    stage="stage2",
                    kind=kind,
                    prompt_digest=sha256_text(prompt_text),
                    response_digest=sha256_text(response.content),
                    result_summary=summary,
                )
            )
            return response.content

        def extract(content: str) -> str | None:
            try:
                return extract_code_block(content, "verilog")
            except NoCodeBlockError:
                return None

        content = complete(self.forge.render_verilog_gen_prompt(spec), "verilog_gen", "generated")
        design = extract(content)

        workroot = self._workdir or Path(tempfile.mkdtemp(prefix="autoverifix_s2_"))
        workroot.mkdir(parents=True, exist_ok=True)
        build_index = 0
        try:
            while True:
                # syntax loop: fresh budget for every functional revision
                syntax_this_candidate = 0
                while True:
                    if design is None:
                        compile_result = None
                        diagnostics = [_no_block_diagnostic()]
                    else:
                        build_index += 1
                        compile_result = self.toolchain.compile(
                            [("dut.v", design), ("tb_main.v", testbench.source)],
                            workroot / f"build_{build_index:03d}",
                        )
                        if compile_result.ok:
                            break
                        diagnostics = [
                            d for d in compile_result.diagnostics if d.severity is Severity.ERROR
                        ] or list(compile_result.diagnostics)
                    if syntax_this_candidate >= self.budget.max_verilog_syntax_iters:
                        return Stage2Result(
                            verilog_source=design or "",
                            status=Stage2Status.FAIL_SYNTAX,
                            syntax_iterations=total_syntax,
                            function_iterations=function_iters,
                            final_discrepancies=(),
                            iteration_log=tuple(events),
                            failure_reason=diagnostics[0].raw if diagnostics else "no code block",
                        )
                    syntax_this_candidate += 1
                    total_syntax += 1
                    if design is None:
                        request = self.forge.render_verilog_gen_prompt(spec)
                        kind = "verilog_gen"
                    else:
                        request = self.forge.render_syntax_fix_prompt("verilog", design, diagnostics)
                        kind = "syntax_fix"
                    content = complete(request, kind, f"syntax repair {total_syntax}")
                    design = extract(content)

                assert compile_result is not None and compile_result.artifact is not None
                discrepancies: list[Discrepancy] = []
                failure_note = ""
                try:
                    stdout = self.toolchain.simulate(compile_result.artifact, self.budget.sim_timeout_s)
                    sim = parse_sim_output(stdout, spec)
                except SimTimeoutError:
                    sim = None
                    failure_note = "simulation did not terminate within the time limit"
                except SimCrashError as e:
                    sim = None
                    failure_note = f"simulation crashed (exit {e.returncode})"
                if sim is not None:
                    if sim.verdict is Verdict.PASS:
                        return Stage2Result(
                            verilog_source=design,
                            status=Stage2Status.PASS,
                            syntax_iterations=total_syntax,
                            function_iterations=function_iters,
                            final_discrepancies=(),
                            iteration_log=tuple(events),
                        )
                    if sim.verdict is Verdict.FAIL:
                        discrepancies = list(sim.discrepancies)
                    else:
                        failure_note = f"simulation output malformed: {sim.note}"

                if function_iters >= self.budget.max_function_iters:
                    return Stage2Result(
                        verilog_source=design,
                        status=Stage2Status.FAIL_FUNCTION,
                        syntax_iterations=total_syntax,
                        function_iterations=function_iters,
                        final_discrepancies=tuple(discrepancies),
                        iteration_log=tuple(events),
                        failure_reason=failure_note or f"{len(discrepancies)} mismatches remain",
                    )
                function_iters += 1
                request = self.forge.render_function_fix_prompt(
                    design,
                    discrepancies,
                    ref_trace,
                    self.budget.max_reported_discrepancies,
                    failure_note=failure_note or None,
                )
                content = complete(request, "function_fix", f"function repair {function_iters}")
                design = extract(content)
        finally:
            if self._workdir is None:
                shutil.rmtree(workroot, ignore_errors=True)


def _no_block_diagnostic() -> Diagnostic:
    text = "response contained no verilog code block"
    return Diagnostic(severity=Severity.ERROR, file="", line=None, message=text, raw=text)
