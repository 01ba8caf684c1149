"""Runs one untrusted reference model against a stimulus set, with statement tracing.

The model source is syntax-checked, executed under a restricted builtins
namespace (import allowlist, no filesystem, no exec/eval) with a hard
wall-clock limit, and traced at statement level to produce a per-cycle
trace plus a line-coverage report.
"""

from __future__ import annotations

import ast
import builtins
import importlib
import signal
import sys
import traceback
from dataclasses import dataclass
from typing import Any

MODEL_FILENAME = "<model>"

ALLOWED_IMPORTS = {"math", "typing", "dataclasses", "enum", "collections"}

_REMOVED_BUILTINS = {
    "open",
    "input",
    "exec",
    "eval",
    "compile",
    "breakpoint",
    "exit",
    "quit",
    "help",
    "copyright",
    "credits",
    "license",
    "globals",
    "locals",
    "vars",
}

_STATE_REPR_LIMIT = 200


class ImportViolation(Exception):
    """Raised when the model imports outside the allowlist."""


class _Timeout(Exception):
    pass


@dataclass
class JobSpec:
    model_source: str
    test_vectors: list[dict[str, int]]
    port_widths: dict[str, int]
    kind: str
    time_limit_s: float

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "JobSpec":
        return cls(
            model_source=raw["model_source"],
            test_vectors=[{str(k): int(v) for k, v in vec.items()} for vec in raw["test_vectors"]],
            port_widths={str(k): int(v) for k, v in raw["port_widths"].items()},
            kind=raw["kind"],
            time_limit_s=float(raw["time_limit_s"]),
        )


def check_syntax(model_source: str) -> str | None:
    """Compile without executing. Returns None when clean, else the
    interpreter-formatted error text (with line number)."""
    try:
        compile(model_source, MODEL_FILENAME, "exec")
        return None
    except SyntaxError as e:
        return "".join(traceback.format_exception_only(type(e), e)).rstrip()


def executable_lines(model_source: str) -> tuple[set[int], list[int]]:
    """Statement line numbers (docstrings excluded) and branch-arm head lines.

    A branch arm is the first statement of an if/elif body, an explicit
    else, a loop body, a loop else, or a match case.
    """
    tree = ast.parse(model_source)
    docstring_lines: set[int] = set()
    for node in ast.walk(tree):
        if isinstance(node, (ast.Module, ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            body = node.body
            if body and isinstance(body[0], ast.Expr) and isinstance(body[0].value, ast.Constant):
                if isinstance(body[0].value.value, str):
                    docstring_lines.add(body[0].lineno)
    lines: set[int] = set()
    arms: list[int] = []
    for node in ast.walk(tree):
        if isinstance(node, ast.stmt) and node.lineno not in docstring_lines:
            lines.add(node.lineno)
        if isinstance(node, (ast.If, ast.While, ast.For)):
            arms.append(node.body[0].lineno)
            if node.orelse:
                arms.append(node.orelse[0].lineno)
        elif isinstance(node, ast.Match):
            for case in node.cases:
                arms.append(case.body[0].lineno)
    return lines, arms


def _sandbox_builtins() -> dict[str, Any]:
    ns = {k: v for k, v in vars(builtins).items() if k not in _REMOVED_BUILTINS}

    def guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
        root = name.split(".")[0]
        if level != 0 or root not in ALLOWED_IMPORTS:
            raise ImportViolation(f"import of {name!r} is not allowed (allowed: {sorted(ALLOWED_IMPORTS)})")
        return importlib.__import__(name, globals, locals, fromlist, level)

    def stderr_print(*args, **kwargs):
        kwargs.pop("file", None)
        print(*args, file=sys.stderr, **kwargs)

    ns["__import__"] = guarded_import
    ns["print"] = stderr_print
    return ns


def _find_model_class(namespace: dict[str, Any]) -> tuple[type | None, str]:
    candidates = [
        v
        for v in namespace.values()
        if isinstance(v, type)
        and getattr(v, "__module__", "") == namespace.get("__name__")
        and callable(getattr(v, "step", None))
    ]
    if not candidates:
        return None, "no model class with a step(inputs) method was defined"
    if len(candidates) > 1:
        names = ", ".join(sorted(c.__name__ for c in candidates))
        return None, f"ambiguous model: multiple classes define step ({names})"
    return candidates[0], ""


def _snapshot_state(instance: Any) -> dict[str, str]:
    state = {}
    try:
        attrs = vars(instance)
    except TypeError:
        return state
    for key in sorted(attrs):
        if key.startswith("_"):
            continue
        text = repr(attrs[key])
        if len(text) > _STATE_REPR_LIMIT:
            text = text[:_STATE_REPR_LIMIT] + "…"
        state[key] = text
    return state


def _model_traceback(exc: BaseException) -> str:
    lines = traceback.format_exception(type(exc), exc, exc.__traceback__)
    kept = [ln for ln in lines if MODEL_FILENAME in ln or not ln.startswith("  File")]
    return "".join(kept).rstrip()


def execute_job(job: JobSpec) -> dict[str, Any]:
    """Run the model against every vector. Returns the HarnessResult dict."""
    syntax_error = check_syntax(job.model_source)
    if syntax_error is not None:
        return _result("syntax_error", syntax_error)

    output_ports = {
        name: width for name, width in job.port_widths.items()
        if not job.test_vectors or name not in job.test_vectors[0]
    }
    for vec in job.test_vectors:
        for name in vec:
            if name not in job.port_widths:
                return _result("contract_violation", f"test vector binds unknown port {name!r}")

    total_lines, branch_arms = executable_lines(job.model_source)
    executed: set[int] = set()

    def global_tracer(frame, event, arg):
        if frame.f_code.co_filename != MODEL_FILENAME:
            return None
        return local_tracer

    def local_tracer(frame, event, arg):
        if event == "line":
            executed.add(frame.f_lineno)
        return local_tracer

    def on_alarm(signum, frame):
        raise _Timeout()

    namespace: dict[str, Any] = {
        "__builtins__": _sandbox_builtins(),
        "__name__": "refmodel",
    }
    code = compile(job.model_source, MODEL_FILENAME, "exec")
    trace_out: list[dict[str, Any]] = []

    old_alarm = signal.signal(signal.SIGALRM, on_alarm)
    signal.setitimer(signal.ITIMER_REAL, job.time_limit_s)
    sys.settrace(global_tracer)
    try:
        try:
            exec(code, namespace)
        except ImportViolation as e:
            return _result("contract_violation", str(e))
        except _Timeout:
            return _result("timeout", f"model exceeded the {job.time_limit_s:g}s time limit")
        except Exception as e:
            return _result("runtime_error", _model_traceback(e))

        model_cls, err = _find_model_class(namespace)
        if model_cls is None:
            return _result("contract_violation", err)

        try:
            instance = model_cls()
            if callable(getattr(instance, "reset", None)):
                instance.reset()
            for index, vec in enumerate(job.test_vectors):
                outputs = instance.step(dict(vec))
                problem = _validate_outputs(outputs, output_ports, index)
                if problem:
                    return _result("contract_violation", problem)
                trace_out.append(
                    {
                        "cycle_index": index,
                        "inputs": dict(vec),
                        "outputs": {name: int(outputs[name]) for name in output_ports},
                        "state": _snapshot_state(instance),
                    }
                )
        except ImportViolation as e:
            return _result("contract_violation", str(e))
        except _Timeout:
            return _result("timeout", f"model exceeded the {job.time_limit_s:g}s time limit")
        except Exception as e:
            return _result("runtime_error", _model_traceback(e))
    finally:
        sys.settrace(None)
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, old_alarm)

    covered = executed & total_lines
    uncovered = sorted(total_lines - covered)
    untaken_arms = sum(1 for line in branch_arms if line not in executed)
    total = len(total_lines)
    coverage = {
        "total_lines": total,
        "covered_lines": len(covered),
        "ratio": (len(covered) / total) if total else 1.0,
        "uncovered_lines": uncovered,
        "uncovered_branch_count": untaken_arms,
    }
    return {"status": "ok", "error_text": "", "trace": trace_out, "coverage": coverage}


def _validate_outputs(outputs: Any, output_ports: dict[str, int], index: int) -> str:
    if not isinstance(outputs, dict):
        return f"step returned {type(outputs).__name__} at cycle {index}; a dict of outputs is required"
    for name, width in output_ports.items():
        if name not in outputs:
            return f"step output at cycle {index} is missing declared output {name!r}"
        value = outputs[name]
        if not isinstance(value, int):
            return f"output {name!r} at cycle {index} is {type(value).__name__}, not an integer"
        value = int(value)
        if not (0 <= value < (1 << width)):
            return f"output {name!r}={value} at cycle {index} does not fit in {width} bits"
    return ""


def _result(status: str, error_text: str) -> dict[str, Any]:
    return {"status": status, "error_text": error_text, "trace": None, "coverage": None}


def run_job_dict(raw: dict[str, Any]) -> dict[str, Any]:
    return execute_job(JobSpec.from_dict(raw))
