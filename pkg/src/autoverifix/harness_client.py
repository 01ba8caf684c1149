"""Client side of the reference-model harness protocol.

The harness is a separate executable: one HarnessJob JSON object on stdin,
one HarnessResult JSON object on stdout. This module builds jobs, invokes
the executable (or serves recorded results, so the pipeline and its tests
run without any interpreter harness present), and converts results into
core trace/coverage types.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

from .core import (
    BitVec,
    CoverageReport,
    CycleRecord,
    DesignKind,
    ProblemSpec,
    SimTrace,
    ValidationError,
    canonical_json,
    coverage_from_json,
    sha256_text,
)

SUBPROCESS_GRACE_S = 5.0


class HarnessError(Exception):
    pass


class HarnessProtocolError(HarnessError):
    """The harness process misbehaved (bad exit, unparseable output)."""


class RecordedResultMissError(HarnessError):
    def __init__(self, digest: str):
        super().__init__(f"no recorded harness result for job digest {digest}")
        self.digest = digest


class HarnessStatus(str, Enum):
    OK = "ok"
    SYNTAX_ERROR = "syntax_error"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"
    CONTRACT_VIOLATION = "contract_violation"


@dataclass(frozen=True)
class HarnessJob:
    model_source: str
    test_vectors: tuple[dict[str, int], ...]
    port_widths: dict[str, int]
    kind: DesignKind
    time_limit_s: float

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "model_source": self.model_source,
            "test_vectors": [dict(v) for v in self.test_vectors],
            "port_widths": dict(self.port_widths),
            "kind": self.kind.value,
            "time_limit_s": self.time_limit_s,
        }

    def digest(self) -> str:
        return sha256_text(canonical_json(self.to_json_dict()))


@dataclass(frozen=True)
class HarnessResult:
    status: HarnessStatus
    error_text: str
    trace: SimTrace | None
    coverage: CoverageReport | None


def build_job(
    spec: ProblemSpec, model_source: str, vectors: list[dict[str, int]], time_limit_s: float
) -> HarnessJob:
    """Assemble a job for the spec's data ports; clock/reset stay implicit."""
    widths = {p.name: p.width for p in spec.ports if p.role.value == "data"}
    inputs = {p.name for p in spec.data_input_ports}
    for i, vec in enumerate(vectors):
        if set(vec) != inputs:
            raise ValidationError(
                f"test vector {i} binds {sorted(vec)}, expected {sorted(inputs)}", "test_vectors"
            )
        for name, value in vec.items():
            if not (0 <= value < (1 << widths[name])):
                raise ValidationError(
                    f"test vector {i}: {name}={value} does not fit in {widths[name]} bits",
                    "test_vectors",
                )
    return HarnessJob(
        model_source=model_source,
        test_vectors=tuple(dict(v) for v in vectors),
        port_widths=widths,
        kind=spec.kind,
        time_limit_s=time_limit_s,
    )


def result_from_json(data: dict[str, Any], port_widths: dict[str, int]) -> HarnessResult:
    status = HarnessStatus(data["status"])
    trace = None
    if data.get("trace") is not None:
        cycles = []
        for rec in data["trace"]:
            cycles.append(
                CycleRecord(
                    cycle_index=rec["cycle_index"],
                    inputs={k: BitVec(port_widths[k], v) for k, v in rec["inputs"].items()},
                    outputs={k: BitVec(port_widths[k], v) for k, v in rec["outputs"].items()},
                    state={k: str(v) for k, v in rec["state"].items()} if rec.get("state") else None,
                )
            )
        trace = SimTrace(tuple(cycles))
    coverage = coverage_from_json(data.get("coverage"))
    return HarnessResult(
        status=status,
        error_text=data.get("error_text") or "",
        trace=trace,
        coverage=coverage,
    )


class HarnessRunner(Protocol):
    def run(self, job: HarnessJob) -> HarnessResult: ...


class SubprocessHarness:
    """Runs the real harness executable; one process per job."""

    def __init__(self, command: list[str]):
        if not command:
            raise ValueError("harness command must be nonempty")
        self.command = list(command)

    def run_raw(self, job: HarnessJob) -> dict[str, Any]:
        try:
            proc = subprocess.run(
                self.command,
                input=canonical_json(job.to_json_dict()),
                capture_output=True,
                text=True,
                timeout=job.time_limit_s + SUBPROCESS_GRACE_S,
            )
        except FileNotFoundError as e:
            raise HarnessError(f"harness executable not found: {self.command[0]}") from e
        except subprocess.TimeoutExpired:
            # the harness enforces its own limit; this trips only if it wedged
            return {
                "status": "timeout",
                "error_text": "harness process exceeded its wall-clock limit and was killed",
                "trace": None,
                "coverage": None,
            }
        if proc.returncode != 0:
            raise HarnessProtocolError(
                f"harness exited {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        try:
            return json.loads(proc.stdout)
        except json.JSONDecodeError as e:
            raise HarnessProtocolError(f"harness emitted invalid JSON: {e}") from None

    def run(self, job: HarnessJob) -> HarnessResult:
        return result_from_json(self.run_raw(job), job.port_widths)


class RecordedHarness:
    """Serves frozen result JSON keyed by job digest — no interpreter needed."""

    def __init__(self, path: str | Path):
        self._entries: dict[str, dict[str, Any]] = {}
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            self._entries.setdefault(entry["job_digest"], entry["result"])

    def run(self, job: HarnessJob) -> HarnessResult:
        digest = job.digest()
        if digest not in self._entries:
            raise RecordedResultMissError(digest)
        return result_from_json(self._entries[digest], job.port_widths)


class RecordingHarness:
    """Proxies a SubprocessHarness and freezes raw result JSON per job digest."""

    def __init__(self, inner: SubprocessHarness, path: str | Path):
        self._inner = inner
        self._path = Path(path)

    def run(self, job: HarnessJob) -> HarnessResult:
        raw = self._inner.run_raw(job)
        record_result(self._path, job, raw)
        return result_from_json(raw, job.port_widths)


class ScriptedHarness:
    """Test double that pops pre-built results in call order."""

    def __init__(self, results: list[HarnessResult] | None = None):
        self._results = list(results or [])
        self.jobs: list[HarnessJob] = []

    def push(self, result: HarnessResult) -> None:
        self._results.append(result)

    def run(self, job: HarnessJob) -> HarnessResult:
        self.jobs.append(job)
        if not self._results:
            raise HarnessError("scripted harness exhausted")
        return self._results.pop(0)


def record_result(path: str | Path, job: HarnessJob, result_json: dict[str, Any]) -> None:
    """Append one {job_digest, result} line for RecordedHarness to serve later."""
    line = canonical_json({"job_digest": job.digest(), "result": result_json})
    with Path(path).open("a") as fh:
        fh.write(line + "\n")
