"""Shared data model: problem specs, bit vectors, traces, diagnostics, budgets."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

MAX_PORT_WIDTH = 64

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class CoreError(Exception):
    """Base class for data-model violations."""


class ValidationError(CoreError):
    """A domain object failed its invariants. `field` names the offender."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


class BitVecParseError(CoreError):
    pass


class BitVecOverflowError(BitVecParseError):
    pass


class TraceMismatchError(CoreError):
    """Two traces cannot be compared (port sets or lengths disagree)."""


class Direction(str, Enum):
    INPUT = "input"
    OUTPUT = "output"


class PortRole(str, Enum):
    DATA = "data"
    CLOCK = "clock"
    RESET = "reset"


class DesignKind(str, Enum):
    COMBINATIONAL = "combinational"
    SEQUENTIAL = "sequential"


@dataclass(frozen=True)
class PortDecl:
    name: str
    direction: Direction
    width: int
    role: PortRole = PortRole.DATA

    def __post_init__(self):
        if not _IDENT_RE.match(self.name):
            raise ValidationError(f"port name {self.name!r} is not an identifier", "ports.name")
        if self.width < 1:
            raise ValidationError(f"port {self.name}: width must be >= 1", "ports.width")
        if self.role in (PortRole.CLOCK, PortRole.RESET):
            if self.direction is not Direction.INPUT:
                raise ValidationError(f"port {self.name}: {self.role.value} must be an input", "ports.role")
            if self.width != 1:
                raise ValidationError(f"port {self.name}: {self.role.value} must be 1 bit wide", "ports.width")


@dataclass(frozen=True)
class ProblemSpec:
    """One hardware-design task: prose description plus a declared interface."""

    id: str
    description: str
    module_name: str
    ports: tuple[PortDecl, ...]
    kind: DesignKind
    golden_testbench: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("problem id must be nonempty", "id")
        if not _IDENT_RE.match(self.module_name):
            raise ValidationError(f"module_name {self.module_name!r} is not an identifier", "module_name")
        names = [p.name for p in self.ports]
        if len(set(names)) != len(names):
            raise ValidationError("port names must be unique", "ports")
        for p in self.ports:
            if p.width > MAX_PORT_WIDTH:
                raise ValidationError(
                    f"port {p.name}: width {p.width} exceeds the {MAX_PORT_WIDTH}-bit cap", "ports.width"
                )
        clocks = [p for p in self.ports if p.role is PortRole.CLOCK]
        resets = [p for p in self.ports if p.role is PortRole.RESET]
        if self.kind is DesignKind.SEQUENTIAL:
            if len(clocks) != 1:
                raise ValidationError("sequential design must declare exactly one clock port", "ports")
            if len(resets) > 1:
                raise ValidationError("sequential design may declare at most one reset port", "ports")
        else:
            if clocks or resets:
                raise ValidationError("combinational design must not declare clock/reset ports", "ports")

    @property
    def input_ports(self) -> tuple[PortDecl, ...]:
        return tuple(p for p in self.ports if p.direction is Direction.INPUT)

    @property
    def output_ports(self) -> tuple[PortDecl, ...]:
        return tuple(p for p in self.ports if p.direction is Direction.OUTPUT)

    @property
    def data_input_ports(self) -> tuple[PortDecl, ...]:
        return tuple(p for p in self.input_ports if p.role is PortRole.DATA)

    @property
    def clock_port(self) -> PortDecl | None:
        for p in self.ports:
            if p.role is PortRole.CLOCK:
                return p
        return None

    @property
    def reset_port(self) -> PortDecl | None:
        for p in self.ports:
            if p.role is PortRole.RESET:
                return p
        return None

    def port(self, name: str) -> PortDecl:
        for p in self.ports:
            if p.name == name:
                return p
        raise KeyError(name)


class XValue:
    """Distinguished marker for simulator x/z (unknown) values.

    Never equal to any BitVec: an unknown against any expected value is
    a functional mismatch, not a match.
    """

    _instance: "XValue | None" = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "X"

    def __eq__(self, other):
        return isinstance(other, XValue)

    def __hash__(self):
        return hash("XValue")


X = XValue()


@dataclass(frozen=True)
class BitVec:
    width: int
    value: int

    def __post_init__(self):
        if self.width < 1:
            raise ValidationError("BitVec width must be >= 1", "width")
        if not (0 <= self.value < (1 << self.width)):
            raise ValidationError(
                f"value {self.value} does not fit in {self.width} bits", "value"
            )

    def __str__(self):
        return format_bitvec(self)


def format_bitvec(bv: BitVec | XValue) -> str:
    """Render as bare lowercase hex, zero-padded to the port width (simulator %h style)."""
    if isinstance(bv, XValue):
        return "x"
    digits = (bv.width + 3) // 4
    return format(bv.value, f"0{digits}x")


def parse_bitvec(text: str, width: int) -> BitVec | XValue:
    """Parse simulator-emitted text into a BitVec.

    Accepts "0b…" binary, "0x…" hex, and bare hex as printed by %h
    (so bare "20" is 0x20, per the simulator convention). Any x/z digit
    means the value is unknown and yields the X marker.
    """
    token = text.strip()
    if not token:
        raise BitVecParseError("empty bit-vector text")
    body = token
    base = 16
    if token[:2].lower() == "0b":
        body, base = token[2:], 2
    elif token[:2].lower() == "0x":
        body, base = token[2:], 16
    if not body:
        raise BitVecParseError(f"malformed bit-vector text {text!r}")
    if any(c in "xXzZ" for c in body):
        return X
    try:
        value = int(body, base)
    except ValueError:
        raise BitVecParseError(f"malformed bit-vector text {text!r}") from None
    if value >= (1 << width):
        raise BitVecOverflowError(f"value {value} (from {text!r}) does not fit in {width} bits")
    return BitVec(width, value)


@dataclass(frozen=True)
class CycleRecord:
    cycle_index: int
    inputs: dict[str, BitVec]
    outputs: dict[str, BitVec | XValue]
    state: dict[str, str] | None = None


@dataclass(frozen=True)
class SimTrace:
    cycles: tuple[CycleRecord, ...]

    def __post_init__(self):
        for i, rec in enumerate(self.cycles):
            if rec.cycle_index != i:
                raise ValidationError(
                    f"cycle_index {rec.cycle_index} at position {i}: indices must run 0,1,2,…", "cycles"
                )

    def __len__(self):
        return len(self.cycles)

    def output_names(self) -> frozenset[str]:
        if not self.cycles:
            return frozenset()
        return frozenset(self.cycles[0].outputs)

    def validate_against(self, spec: ProblemSpec) -> None:
        """Every record must bind exactly the spec's data inputs and outputs."""
        want_in = {p.name for p in spec.data_input_ports}
        want_out = {p.name for p in spec.output_ports}
        for rec in self.cycles:
            if set(rec.inputs) != want_in:
                raise ValidationError(
                    f"cycle {rec.cycle_index}: inputs bind {sorted(rec.inputs)}, expected {sorted(want_in)}",
                    "cycles.inputs",
                )
            if set(rec.outputs) != want_out:
                raise ValidationError(
                    f"cycle {rec.cycle_index}: outputs bind {sorted(rec.outputs)}, expected {sorted(want_out)}",
                    "cycles.outputs",
                )


@dataclass(frozen=True)
class CoverageReport:
    total_lines: int
    covered_lines: int
    ratio: float
    uncovered_lines: tuple[int, ...]
    uncovered_branch_count: int

    def __post_init__(self):
        if self.covered_lines > self.total_lines:
            raise ValidationError("covered_lines exceeds total_lines", "covered_lines")
        if len(self.uncovered_lines) != self.total_lines - self.covered_lines:
            raise ValidationError("uncovered_lines length inconsistent with counts", "uncovered_lines")
        if self.total_lines > 0:
            expect = self.covered_lines / self.total_lines
            if abs(self.ratio - expect) > 1e-9:
                raise ValidationError("ratio inconsistent with line counts", "ratio")
        if self.uncovered_branch_count < 0:
            raise ValidationError("uncovered_branch_count must be >= 0", "uncovered_branch_count")

    @classmethod
    def from_counts(
        cls, total_lines: int, covered_lines: int, uncovered_lines: Iterable[int], uncovered_branch_count: int
    ) -> "CoverageReport":
        ratio = covered_lines / total_lines if total_lines else 1.0
        return cls(total_lines, covered_lines, ratio, tuple(uncovered_lines), uncovered_branch_count)


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    file: str
    line: int | None
    message: str
    raw: str

    def __post_init__(self):
        if not self.raw:
            raise ValidationError("diagnostic raw text must be nonempty", "raw")


@dataclass(frozen=True)
class Discrepancy:
    cycle: int
    signal: str
    expected: BitVec
    observed: BitVec | XValue

    def __post_init__(self):
        if self.expected == self.observed:
            raise ValidationError("a discrepancy must describe a mismatch", "observed")


@dataclass(frozen=True)
class RunBudget:
    """Iteration caps and thresholds for the feedback loops.

    The caps are operational knobs, not tuned constants; defaults of 5
    keep every loop visibly bounded. The coverage threshold gates the
    test-refinement loop at 85% line coverage.
    """

    max_python_syntax_iters: int = 5
    max_coverage_iters: int = 5
    max_verilog_syntax_iters: int = 5
    max_function_iters: int = 5
    coverage_threshold: float = 0.85
    sim_timeout_s: float = 10.0
    max_reported_discrepancies: int = 10

    def __post_init__(self):
        for name in (
            "max_python_syntax_iters",
            "max_coverage_iters",
            "max_verilog_syntax_iters",
            "max_function_iters",
            "max_reported_discrepancies",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1", name)
        if not (0.0 <= self.coverage_threshold <= 1.0):
            raise ValidationError("coverage_threshold must be in [0,1]", "coverage_threshold")
        if self.sim_timeout_s <= 0:
            raise ValidationError("sim_timeout_s must be positive", "sim_timeout_s")


class PipelineStatus(str, Enum):
    PASS = "pass"
    FAIL_SYNTAX = "fail_syntax"
    FAIL_FUNCTION = "fail_function"
    FAIL_REFERENCE = "fail_reference"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class IterationEvent:
    stage: str
    kind: str
    prompt_digest: str
    response_digest: str
    result_summary: str


@dataclass(frozen=True)
class PipelineOutcome:
    """Final artifacts plus the full iteration log for one problem run."""

    problem_id: str
    status: PipelineStatus
    reference_source: str
    test_vectors: tuple[dict[str, int], ...]
    testbench_source: str
    verilog_source: str
    coverage: CoverageReport | None
    iteration_log: tuple[IterationEvent, ...]
    final_verdict_pass: bool
    final_discrepancy_count: int
    coverage_budget_exhausted: bool = False

    def __post_init__(self):
        if self.status is PipelineStatus.PASS and self.final_discrepancy_count != 0:
            raise ValidationError("status=pass requires zero final discrepancies", "status")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "status": self.status.value,
            "reference_source": self.reference_source,
            "test_vectors": [dict(v) for v in self.test_vectors],
            "testbench_source": self.testbench_source,
            "verilog_source": self.verilog_source,
            "coverage": coverage_to_json(self.coverage),
            "iteration_log": [
                {
                    "stage": e.stage,
                    "kind": e.kind,
                    "prompt_digest": e.prompt_digest,
                    "response_digest": e.response_digest,
                    "result_summary": e.result_summary,
                }
                for e in self.iteration_log
            ],
            "final_verdict_pass": self.final_verdict_pass,
            "final_discrepancy_count": self.final_discrepancy_count,
            "coverage_budget_exhausted": self.coverage_budget_exhausted,
        }

    @classmethod
    def from_json_dict(cls, d: dict[str, Any]) -> "PipelineOutcome":
        return cls(
            problem_id=d["problem_id"],
            status=PipelineStatus(d["status"]),
            reference_source=d["reference_source"],
            test_vectors=tuple(dict(v) for v in d["test_vectors"]),
            testbench_source=d["testbench_source"],
            verilog_source=d["verilog_source"],
            coverage=coverage_from_json(d["coverage"]),
            iteration_log=tuple(
                IterationEvent(
                    stage=e["stage"],
                    kind=e["kind"],
                    prompt_digest=e["prompt_digest"],
                    response_digest=e["response_digest"],
                    result_summary=e["result_summary"],
                )
                for e in d["iteration_log"]
            ),
            final_verdict_pass=d["final_verdict_pass"],
            final_discrepancy_count=d["final_discrepancy_count"],
            coverage_budget_exhausted=d.get("coverage_budget_exhausted", False),
        )

    def digest(self) -> str:
        return sha256_text(canonical_json(self.to_json_dict()))


def coverage_to_json(cov: CoverageReport | None) -> dict[str, Any] | None:
    if cov is None:
        return None
    return {
        "total_lines": cov.total_lines,
        "covered_lines": cov.covered_lines,
        "ratio": cov.ratio,
        "uncovered_lines": list(cov.uncovered_lines),
        "uncovered_branch_count": cov.uncovered_branch_count,
    }


def coverage_from_json(d: dict[str, Any] | None) -> CoverageReport | None:
    if d is None:
        return None
    return CoverageReport(
        total_lines=d["total_lines"],
        covered_lines=d["covered_lines"],
        ratio=d["ratio"],
        uncovered_lines=tuple(d["uncovered_lines"]),
        uncovered_branch_count=d["uncovered_branch_count"],
    )


def trace_to_json(trace: SimTrace | None) -> list[dict[str, Any]] | None:
    if trace is None:
        return None
    return [
        {
            "cycle_index": rec.cycle_index,
            "inputs": {k: v.value for k, v in rec.inputs.items()},
            "outputs": {k: v.value for k, v in rec.outputs.items() if isinstance(v, BitVec)},
            "state": dict(rec.state) if rec.state is not None else None,
        }
        for rec in trace.cycles
    ]


def trace_from_json(data: list[dict[str, Any]] | None, port_widths: dict[str, int]) -> SimTrace | None:
    if data is None:
        return None
    cycles = []
    for rec in data:
        cycles.append(
            CycleRecord(
                cycle_index=rec["cycle_index"],
                inputs={k: BitVec(port_widths[k], v) for k, v in rec["inputs"].items()},
                outputs={k: BitVec(port_widths[k], v) for k, v in rec["outputs"].items()},
                state={k: str(v) for k, v in rec["state"].items()} if rec.get("state") else None,
            )
        )
    return SimTrace(tuple(cycles))


def compare_traces(expected: SimTrace, observed: SimTrace) -> list[Discrepancy]:
    """One Discrepancy per (cycle, output) where values differ, ordered by cycle then name.

    Reference-model `state` is never consulted; only declared outputs are
    contractual. An X on the observed side mismatches everything.
    """
    exp_ports = expected.output_names()
    obs_ports = observed.output_names()
    if exp_ports != obs_ports:
        raise TraceMismatchError(
            f"output port sets differ: expected {sorted(exp_ports)}, observed {sorted(obs_ports)}"
        )
    if len(observed) < len(expected):
        raise TraceMismatchError(
            f"observed trace has {len(observed)} cycles, expected at least {len(expected)}"
        )
    out = []
    for rec in expected.cycles:
        obs_rec = observed.cycles[rec.cycle_index]
        for name in sorted(exp_ports):
            e = rec.outputs[name]
            o = obs_rec.outputs[name]
            if isinstance(e, XValue):
                raise TraceMismatchError(f"expected trace carries X at cycle {rec.cycle_index} signal {name}")
            if isinstance(o, XValue) or o.value != e.value:
                out.append(Discrepancy(cycle=rec.cycle_index, signal=name, expected=e, observed=o))
    return out


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_problems(path: str | Path) -> list[ProblemSpec]:
    """Load a line-delimited JSON problem set.

    Each line is one object with the ProblemSpec fields; `golden_testbench`
    may instead be given as `golden_testbench_path`, resolved relative to
    the problems file.
    """
    path = Path(path)
    problems: list[ProblemSpec] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}:{lineno}: invalid JSON: {e}", "json") from None
        spec = problem_from_json(raw, base_dir=path.parent, where=f"{path}:{lineno}")
        if spec.id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate problem id {spec.id!r}", "id")
        seen.add(spec.id)
        problems.append(spec)
    return problems


def problem_from_json(raw: dict[str, Any], base_dir: Path | None = None, where: str = "") -> ProblemSpec:
    prefix = f"{where}: " if where else ""

    def need(key: str) -> Any:
        if key not in raw:
            raise ValidationError(f"{prefix}missing field {key!r}", key)
        return raw[key]

    ports = []
    for i, p in enumerate(need("ports")):
        for key in ("name", "direction", "width"):
            if key not in p:
                raise ValidationError(f"{prefix}ports[{i}] missing field {key!r}", f"ports.{key}")
        try:
            ports.append(
                PortDecl(
                    name=p["name"],
                    direction=Direction(p["direction"]),
                    width=int(p["width"]),
                    role=PortRole(p.get("role", "data")),
                )
            )
        except ValueError as e:
            raise ValidationError(f"{prefix}ports[{i}]: {e}", "ports") from None
    golden = raw.get("golden_testbench")
    golden_path = raw.get("golden_testbench_path")
    if golden is None and golden_path is not None:
        gp = Path(golden_path)
        if base_dir is not None and not gp.is_absolute():
            gp = base_dir / gp
        golden = gp.read_text()
    try:
        kind = DesignKind(need("kind"))
    except ValueError:
        raise ValidationError(f"{prefix}kind must be combinational or sequential", "kind") from None
    try:
        return ProblemSpec(
            id=need("id"),
            description=need("description"),
            module_name=need("module_name"),
            ports=tuple(ports),
            kind=kind,
            golden_testbench=golden,
        )
    except ValidationError as e:
        raise ValidationError(f"{prefix}{e}", e.field) from None
