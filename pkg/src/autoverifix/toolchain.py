"""Adapter over an external Verilog compiler/simulator pair.

The tool pair is configured as two command templates, so any compiler and
runtime can be plugged in. Diagnostics and the testbench mismatch grammar
are parsed into structured records here.
"""

from __future__ import annotations

import os
import re
import shutil
import subprocess
import sys
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .core import (
    BitVec,
    Diagnostic,
    Discrepancy,
    ProblemSpec,
    Severity,
    ValidationError,
    XValue,
    format_bitvec,
    parse_bitvec,
)

DEFAULT_SIM_TIMEOUT_S = 30.0


class ToolchainError(Exception):
    pass


class ToolchainMissingError(ToolchainError):
    pass


class SimTimeoutError(ToolchainError):
    def __init__(self, partial_output: str, timeout_s: float):
        super().__init__(f"simulation did not terminate within {timeout_s:g}s")
        self.partial_output = partial_output
        self.timeout_s = timeout_s


class SimCrashError(ToolchainError):
    def __init__(self, output: str, returncode: int):
        super().__init__(f"simulator exited with status {returncode}")
        self.output = output
        self.returncode = returncode


@dataclass(frozen=True)
class ToolchainConfig:
    compile_cmd: tuple[str, ...]
    run_cmd: tuple[str, ...]
    timeout_s: float = DEFAULT_SIM_TIMEOUT_S
    env: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class CompileResult:
    artifact: Path | None
    diagnostics: tuple[Diagnostic, ...]
    raw_output: str

    @property
    def ok(self) -> bool:
        return self.artifact is not None


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class SimOutput:
    discrepancies: tuple[Discrepancy, ...]
    verdict: Verdict
    note: str = ""


class HdlToolchain:
    def __init__(self, config: ToolchainConfig):
        self.config = config

    def _render(self, template: tuple[str, ...], sources: list[str], artifact: Path, workdir: Path) -> list[str]:
        cmd: list[str] = []
        for part in template:
            if part == "{sources}":
                cmd.extend(sources)
            else:
                cmd.append(part.replace("{artifact}", str(artifact)).replace("{workdir}", str(workdir)))
        return cmd

    def compile(self, sources: list[tuple[str, str]], workdir: str | Path) -> CompileResult:
        """Write sources into workdir and run the compile command.

        `sources` is a list of (filename, verilog text). All temporaries stay
        confined to workdir.
        """
        if not sources:
            raise ValueError("compile needs at least one source")
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in sources:
            p = workdir / name
            p.write_text(text)
            paths.append(str(p))
        artifact = workdir / "simv"
        cmd = self._render(self.config.compile_cmd, paths, artifact, workdir)
        try:
            proc = subprocess.run(
                cmd,
                capture_output=True,
                text=True,
                cwd=workdir,
                env={**os.environ, **self.config.env},
            )
        except FileNotFoundError as e:
            raise ToolchainMissingError(f"compiler not found: {cmd[0]}") from e
        output = proc.stdout + proc.stderr
        diagnostics = parse_diagnostics(output)
        if proc.returncode == 0 and artifact.exists():
            return CompileResult(artifact=artifact, diagnostics=tuple(diagnostics), raw_output=output)
        if not any(d.severity is Severity.ERROR for d in diagnostics):
            raw = output.strip() or f"compiler exited with status {proc.returncode}"
            diagnostics.append(
                Diagnostic(severity=Severity.ERROR, file="", line=None, message=raw.splitlines()[0], raw=raw)
            )
        return CompileResult(artifact=None, diagnostics=tuple(diagnostics), raw_output=output)

    def simulate(self, artifact: str | Path, timeout_s: float | None = None) -> str:
        """Run the simulation command and capture stdout.

        Kills the process at the timeout — a hung simulation (combinational
        loop, missing $finish) is reported distinctly from a failing one.
        """
        artifact = Path(artifact)
        if not artifact.exists():
            raise ToolchainError(f"artifact does not exist: {artifact}")
        limit = timeout_s if timeout_s is not None else self.config.timeout_s
        cmd = self._render(self.config.run_cmd, [], artifact, artifact.parent)
        try:
            proc = subprocess.run(
                cmd,
                capture_output=True,
                text=True,
                cwd=artifact.parent,
                env={**os.environ, **self.config.env},
                timeout=limit,
            )
        except FileNotFoundError as e:
            raise ToolchainMissingError(f"simulator not found: {cmd[0]}") from e
        except subprocess.TimeoutExpired as e:
            partial = e.stdout.decode() if isinstance(e.stdout, bytes) else (e.stdout or "")
            raise SimTimeoutError(partial, limit) from None
        if proc.returncode != 0:
            raise SimCrashError(proc.stdout + proc.stderr, proc.returncode)
        return proc.stdout


# -- diagnostic parsing -------------------------------------------------------

_PREFIXED_LOC_RE = re.compile(
    r"^%(Error|Warning)(?:-[A-Z0-9_]+)?: ([^\s:]+):(\d+):(?:\d+:)? ?(.*)$"
)
_PREFIXED_BARE_RE = re.compile(r"^%(Error|Warning)(?:-[A-Z0-9_]+)?: (.*)$")
_FILE_LINE_SEV_RE = re.compile(r"^([^\s:]+):(\d+):\s*(error|warning|sorry)\s*:\s*(.*)$")
_FILE_LINE_RE = re.compile(r"^([^\s:]+):(\d+):\s*(.*)$")


def parse_diagnostics(tool_output: str) -> list[Diagnostic]:
    """Parse compiler output into ordered Diagnostic records. Total function.

    Recognizes `%Error[-TAG]: file:line[:col]: msg` / `%Warning[-TAG]: …`
    prefixed shapes and plain `file:line: [severity:] msg` shapes.
    Unrecognized lines attach to the previous diagnostic as continuation
    text, or accumulate into a raw record when nothing precedes them.
    """
    diagnostics: list[Diagnostic] = []
    orphans: list[str] = []
    for line in tool_output.splitlines():
        if not line.strip():
            continue
        parsed = _parse_diag_line(line)
        if parsed is not None:
            if orphans:
                diagnostics.append(_orphan_diag(orphans))
                orphans = []
            diagnostics.append(parsed)
        elif diagnostics:
            last = diagnostics[-1]
            diagnostics[-1] = replace(last, raw=last.raw + "\n" + line)
        else:
            orphans.append(line)
    if orphans:
        diagnostics.append(_orphan_diag(orphans))
    return diagnostics


def _parse_diag_line(line: str) -> Diagnostic | None:
    m = _PREFIXED_LOC_RE.match(line)
    if m:
        severity = Severity.ERROR if m.group(1) == "Error" else Severity.WARNING
        return Diagnostic(severity=severity, file=m.group(2), line=int(m.group(3)), message=m.group(4), raw=line)
    m = _PREFIXED_BARE_RE.match(line)
    if m:
        severity = Severity.ERROR if m.group(1) == "Error" else Severity.WARNING
        return Diagnostic(severity=severity, file="", line=None, message=m.group(2), raw=line)
    m = _FILE_LINE_SEV_RE.match(line)
    if m:
        severity = Severity.WARNING if m.group(3) == "warning" else Severity.ERROR
        return Diagnostic(severity=severity, file=m.group(1), line=int(m.group(2)), message=m.group(4), raw=line)
    m = _FILE_LINE_RE.match(line)
    if m:
        return Diagnostic(severity=Severity.ERROR, file=m.group(1), line=int(m.group(2)), message=m.group(3), raw=line)
    return None


def _orphan_diag(lines: list[str]) -> Diagnostic:
    return Diagnostic(
        severity=Severity.WARNING,
        file="",
        line=None,
        message=lines[0].strip(),
        raw="\n".join(lines),
    )


# -- simulation output: the testbench mismatch grammar ------------------------

_MISMATCH_RE = re.compile(
    r"^MISMATCH cycle=(\d+) signal=(\S+) expected=([0-9a-fA-FxzXZ]+) observed=([0-9a-fA-FxzXZ]+)\s*$"
)
_RESULT_RE = re.compile(r"^RESULT (pass|fail) mismatches=(\d+)\s*$")


def emit_mismatch_line(d: Discrepancy) -> str:
    observed = "x" if isinstance(d.observed, XValue) else format_bitvec(d.observed)
    return f"MISMATCH cycle={d.cycle} signal={d.signal} expected={format_bitvec(d.expected)} observed={observed}"


def emit_result_line(passed: bool, mismatches: int) -> str:
    return f"RESULT {'pass' if passed else 'fail'} mismatches={mismatches}"


def compose_sim_output(discrepancies: list[Discrepancy]) -> str:
    """Render discrepancies through the emission grammar, as a testbench run would."""
    lines = [emit_mismatch_line(d) for d in discrepancies]
    lines.append(emit_result_line(not discrepancies, len(discrepancies)))
    return "\n".join(lines) + "\n"


def parse_sim_output(stdout: str, spec: ProblemSpec) -> SimOutput:
    """Parse MISMATCH/RESULT lines. Contradictions yield verdict=malformed, never an exception."""
    outputs = {p.name: p for p in spec.output_ports}
    discrepancies: list[Discrepancy] = []
    results: list[tuple[str, int]] = []
    for line in stdout.splitlines():
        m = _MISMATCH_RE.match(line)
        if m:
            cycle, signal = int(m.group(1)), m.group(2)
            if signal not in outputs:
                return SimOutput((), Verdict.MALFORMED, f"mismatch names undeclared signal {signal!r}")
            width = outputs[signal].width
            try:
                expected = parse_bitvec(m.group(3), width)
                observed = parse_bitvec(m.group(4), width)
            except Exception as e:
                return SimOutput((), Verdict.MALFORMED, f"unparseable mismatch values: {e}")
            if isinstance(expected, XValue):
                return SimOutput((), Verdict.MALFORMED, "expected value is x")
            try:
                discrepancies.append(
                    Discrepancy(cycle=cycle, signal=signal, expected=expected, observed=observed)
                )
            except ValidationError:
                return SimOutput((), Verdict.MALFORMED, "mismatch line describes equal values")
            continue
        m = _RESULT_RE.match(line)
        if m:
            results.append((m.group(1), int(m.group(2))))
    if len(results) != 1:
        return SimOutput(tuple(discrepancies), Verdict.MALFORMED, f"{len(results)} RESULT lines")
    verdict_word, count = results[0]
    if verdict_word == "pass":
        if discrepancies:
            return SimOutput(tuple(discrepancies), Verdict.MALFORMED, "RESULT pass despite mismatch lines")
        if count != 0:
            return SimOutput((), Verdict.MALFORMED, "RESULT pass with nonzero mismatch count")
        return SimOutput((), Verdict.PASS)
    if count != len(discrepancies) or not discrepancies:
        return SimOutput(
            tuple(discrepancies),
            Verdict.MALFORMED,
            f"RESULT fail count {count} != {len(discrepancies)} mismatch lines",
        )
    return SimOutput(tuple(discrepancies), Verdict.FAIL)


# -- default toolchain discovery ----------------------------------------------

VERILATOR_ROOT_ENV = "AUTOVERIFIX_VERILATOR_ROOT"


def find_verilator_root() -> Path | None:
    """Locate a prebuilt Verilator install tree (the npm layout or a real one)."""
    override = os.environ.get(VERILATOR_ROOT_ENV)
    if override:
        root = Path(override)
        return root if (root / "bin" / "verilator_bin").exists() else None
    candidates = []
    npm = shutil.which("npm")
    if npm:
        try:
            out = subprocess.run([npm, "root", "-g"], capture_output=True, text=True, timeout=15)
            if out.returncode == 0 and out.stdout.strip():
                candidates.append(
                    Path(out.stdout.strip()) / "verilator" / "node_modules" / "verilator-linux-x64"
                )
        except (subprocess.SubprocessError, OSError):
            pass
    candidates.append(Path("/usr/lib/node_modules/verilator/node_modules/verilator-linux-x64"))
    for root in candidates:
        if (root / "bin" / "verilator_bin").exists():
            return root
    return None


def default_cache_dir() -> Path:
    base = os.environ.get("XDG_CACHE_HOME") or str(Path.home() / ".cache")
    return Path(base) / "autoverifix" / "vlcache"


def default_toolchain_config(
    timeout_s: float = DEFAULT_SIM_TIMEOUT_S, cache_dir: str | Path | None = None
) -> ToolchainConfig | None:
    """Best available toolchain: iverilog/vvp if on PATH, else the Verilator tree."""
    if shutil.which("iverilog") and shutil.which("vvp"):
        return ToolchainConfig(
            compile_cmd=("iverilog", "-g2012", "-o", "{artifact}", "{sources}"),
            run_cmd=("vvp", "{artifact}"),
            timeout_s=timeout_s,
        )
    root = find_verilator_root()
    if root is not None:
        cache = Path(cache_dir) if cache_dir else default_cache_dir()
        return ToolchainConfig(
            compile_cmd=(
                sys.executable,
                "-m",
                "autoverifix.vlbuild",
                "--root",
                str(root),
                "--cache",
                str(cache),
                "--top",
                "tb_main",
                "--out",
                "{artifact}",
                "{sources}",
            ),
            run_cmd=("{artifact}",),
            timeout_s=timeout_s,
        )
    return None
