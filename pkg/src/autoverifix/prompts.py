"""Prompt rendering for the five feedback-loop prompt families.

Templates live as text assets with {{name}} placeholders; rendering is
total and deterministic — a missing binding or a leftover placeholder is
an error, never a silent empty substitution.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .core import (
    CoverageReport,
    DesignKind,
    Diagnostic,
    Discrepancy,
    PortRole,
    ProblemSpec,
    Severity,
    SimTrace,
    XValue,
    format_bitvec,
)
from .gateway import ChatMessage, ChatRequest, Role

_PLACEHOLDER_RE = re.compile(r"\{\{([A-Za-z0-9_]+)\}\}")


class RenderError(Exception):
    pass


class MissingFieldError(RenderError):
    pass


class PreconditionError(RenderError):
    pass


def render_template(template: str, bindings: dict[str, str]) -> str:
    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise MissingFieldError(f"unbound placeholder {{{{{name}}}}}")
        return bindings[name]

    rendered = _PLACEHOLDER_RE.sub(sub, template)
    if "{{" in rendered:
        raise RenderError("rendered prompt still contains a placeholder delimiter")
    return rendered


@dataclass(frozen=True)
class PromptSettings:
    model: str = "default-model"
    temperature: float = 0.8
    max_tokens: int = 4096
    seed: int | None = None


class PromptForge:
    """Loads template assets (optionally from an override directory) and renders requests."""

    def __init__(self, settings: PromptSettings | None = None, template_dir: str | Path | None = None):
        self.settings = settings or PromptSettings()
        self._dir = Path(template_dir) if template_dir else None

    def _load(self, name: str) -> str:
        if self._dir is not None:
            override = self._dir / name
            if override.exists():
                return override.read_text()
        return resources.files("autoverifix.templates").joinpath(name).read_text()

    def _request(self, system: str, user: str) -> ChatRequest:
        return ChatRequest(
            model=self.settings.model,
            messages=(ChatMessage(Role.SYSTEM, system), ChatMessage(Role.USER, user)),
            temperature=self.settings.temperature,
            max_tokens=self.settings.max_tokens,
            seed=self.settings.seed,
        )

    # -- stage 1 ------------------------------------------------------------

    def render_ref_model_prompt(self, spec: ProblemSpec) -> ChatRequest:
        if not spec.description.strip():
            raise MissingFieldError("problem description is empty")
        sequential = spec.kind is DesignKind.SEQUENTIAL
        clocking = ""
        step_note = ""
        if sequential:
            clocking = (
                "- The clock and reset are implicit: do not model them as step() inputs. "
                "One step() call is one clock cycle; reset() models a synchronous, "
                "active-high reset.\n"
            )
            step_note = " (for this sequential design: the values after that cycle's active clock edge, so update internal state first and derive outputs from the updated state)"
        user = render_template(
            self._load("ref_model_gen.user.txt"),
            {
                "module_name": spec.module_name,
                "kind": spec.kind.value,
                "ports_block": ports_block(spec),
                "description": spec.description,
                "clocking_note": clocking,
                "step_timing_note": step_note,
            },
        )
        return self._request(self._load("ref_model_gen.system.txt"), user)

    def render_coverage_refine_prompt(
        self, model_source: str, current_tests: str, report: CoverageReport, threshold: float
    ) -> ChatRequest:
        if report.ratio >= threshold:
            raise PreconditionError(
                f"coverage {report.ratio:.4f} already meets the {threshold:.2f} threshold"
            )
        user = render_template(
            self._load("coverage_refine.user.txt"),
            {
                "coverage_pct": format_pct(report.ratio),
                "uncovered_line_count": str(len(report.uncovered_lines)),
                "uncovered_branch_count": str(report.uncovered_branch_count),
                "uncovered_lines": ", ".join(str(n) for n in report.uncovered_lines) or "(none)",
                "model_source_block": fence("python", model_source),
                "current_tests_block": fence("python", current_tests),
            },
        )
        return self._request(self._load("coverage_refine.system.txt"), user)

    # -- stage 2 ------------------------------------------------------------

    def render_verilog_gen_prompt(self, spec: ProblemSpec) -> ChatRequest:
        if not spec.description.strip():
            raise MissingFieldError("problem description is empty")
        if spec.kind is DesignKind.SEQUENTIAL:
            clk = spec.clock_port.name  # sequential specs always declare a clock
            rst = spec.reset_port.name if spec.reset_port else None
            clocking = f"Clocking: all state updates on the positive edge of '{clk}'."
            if rst:
                clocking += f" Reset: '{rst}' is a synchronous, active-high reset that returns the module to its power-on state."
        else:
            clocking = (
                "This is a combinational design: outputs are pure functions of the current "
                "inputs. Do not use clocks, edge-sensitive always blocks, or state."
            )
        user = render_template(
            self._load("verilog_gen.user.txt"),
            {
                "module_name": spec.module_name,
                "kind": spec.kind.value,
                "ports_block": ports_block(spec),
                "description": spec.description,
                "clocking_block": clocking,
            },
        )
        return self._request(self._load("verilog_gen.system.txt"), user)

    def render_syntax_fix_prompt(
        self, language: str, source: str, diagnostics: list[Diagnostic]
    ) -> ChatRequest:
        if not diagnostics:
            raise PreconditionError("syntax-fix prompt needs at least one diagnostic")
        if not any(d.severity is Severity.ERROR for d in diagnostics):
            raise PreconditionError("syntax-fix prompt needs at least one error-severity diagnostic")
        diag_block = "\n".join(d.raw for d in diagnostics)
        bindings = {
            "language": language,
            "numbered_source": numbered(source),
            "diagnostics_block": diag_block,
        }
        system = render_template(self._load("syntax_fix.system.txt"), {"language": language})
        user = render_template(self._load("syntax_fix.user.txt"), bindings)
        return self._request(system, user)

    def render_function_fix_prompt(
        self,
        verilog_source: str,
        discrepancies: list[Discrepancy],
        stimulus: SimTrace | None,
        max_reported: int,
        failure_note: str | None = None,
    ) -> ChatRequest:
        if not discrepancies and not failure_note:
            raise PreconditionError("function-fix prompt needs discrepancies or a failure note")
        shown = discrepancies[:max_reported]
        lines = []
        for d in shown:
            inputs = ""
            if stimulus is not None and d.cycle < len(stimulus):
                rec = stimulus.cycles[d.cycle]
                inputs = ", ".join(f"{k}={v.value}" for k, v in sorted(rec.inputs.items()))
                inputs = f" inputs applied: {inputs};" if inputs else ""
            observed = "x" if isinstance(d.observed, XValue) else format_bitvec(d.observed)
            lines.append(
                f"- cycle {d.cycle}:{inputs} expected {d.signal}={format_bitvec(d.expected)}, "
                f"observed {d.signal}={observed}"
            )
        if failure_note:
            lines.append(f"- {failure_note}")
        if len(discrepancies) > len(shown):
            header = (
                f"Simulation reported {len(discrepancies)} mismatches; "
                f"the first {len(shown)} are listed (values in hex):"
            )
        elif discrepancies:
            header = f"Simulation reported {len(discrepancies)} mismatch(es) (values in hex):"
        else:
            header = "Simulation failed without producing mismatch details:"
        user = render_template(
            self._load("function_fix.user.txt"),
            {
                "verilog_block": fence("verilog", verilog_source),
                "mismatch_header": header,
                "mismatch_block": "\n".join(lines),
            },
        )
        return self._request(self._load("function_fix.system.txt"), user)


def ports_block(spec: ProblemSpec) -> str:
    rows = []
    for p in spec.ports:
        role = f", {p.role.value}" if p.role is not PortRole.DATA else ""
        rows.append(f"- {p.direction.value} {p.name}: {p.width} bit{'s' if p.width != 1 else ''}{role}")
    return "\n".join(rows)


def format_pct(ratio: float) -> str:
    return f"{ratio * 100:g}"


def fence(tag: str, body: str) -> str:
    return f"```{tag}\n{body.rstrip()}\n```"


def numbered(source: str) -> str:
    lines = source.rstrip("\n").split("\n")
    width = len(str(len(lines)))
    return "\n".join(f"{i:>{width}} | {line}" for i, line in enumerate(lines, start=1))
