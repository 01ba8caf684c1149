"""Self-checking Verilog testbench synthesis from a recorded reference trace.

The emitted bench drives the recorded inputs cycle by cycle, compares DUT
outputs against the recorded expected outputs, and prints machine-parseable
mismatch lines plus a single terminal RESULT line.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import (
    BitVec,
    DesignKind,
    PortDecl,
    ProblemSpec,
    SimTrace,
    XValue,
    format_bitvec,
)

MISMATCH_LINE_FORMAT = "MISMATCH cycle=%0d signal=%s expected=%h observed=%h"

CLOCK_PERIOD = 10
SETTLE_DELAY = 1
# sample 4 ticks after the negedge: 1 tick before the next positive edge
SAMPLE_OFFSET = 4

_RESERVED = {"tb_main", "tb_dut", "tb_mismatches"}


class TestbenchError(Exception):
    pass


class EmptyTraceError(TestbenchError):
    pass


@dataclass(frozen=True)
class TestbenchSource:
    source: str
    mismatch_line_format: str
    expected_cycle_count: int


def synthesize_testbench(spec: ProblemSpec, trace: SimTrace, emit_vcd: bool = False) -> TestbenchSource:
    """Build a standalone bench for any module matching the spec's interface.

    Sequential: clock period 10, one reset cycle before cycle 0, inputs
    driven just after each negative edge, outputs sampled just before the
    next positive edge. Combinational: drive, settle 1 time unit, compare.
    `emit_vcd` adds a value-change dump for human debugging; mismatch lines
    stay the sole machine channel either way.
    """
    if len(trace) == 0:
        raise EmptyTraceError("trace has no cycles")
    trace.validate_against(spec)
    for rec in trace.cycles:
        for name, value in rec.outputs.items():
            if isinstance(value, XValue):
                raise TestbenchError(f"expected output {name} at cycle {rec.cycle_index} is X")
    for p in spec.ports:
        if p.name in _RESERVED:
            raise TestbenchError(f"port name {p.name!r} collides with a testbench identifier")

    lines: list[str] = []
    emit = lines.append
    emit("`timescale 1ns/1ns")
    emit("module tb_main;")
    for p in spec.input_ports:
        emit(f"  reg {_range(p)}{p.name};")
    for p in spec.output_ports:
        emit(f"  wire {_range(p)}{p.name};")
    emit("  integer tb_mismatches;")
    emit("")
    conns = ", ".join(f".{p.name}({p.name})" for p in spec.ports)
    emit(f"  {spec.module_name} tb_dut ({conns});")
    emit("")
    if emit_vcd:
        emit("  initial begin")
        emit('    $dumpfile("tb_main.vcd");')
        emit("    $dumpvars(0, tb_main);")
        emit("  end")
        emit("")
    if spec.kind is DesignKind.SEQUENTIAL:
        _emit_sequential(spec, trace, emit)
    else:
        _emit_combinational(spec, trace, emit)
    emit("endmodule")
    return TestbenchSource(
        source="\n".join(lines) + "\n",
        mismatch_line_format=MISMATCH_LINE_FORMAT,
        expected_cycle_count=len(trace),
    )


def _range(p: PortDecl) -> str:
    return f"[{p.width - 1}:0] " if p.width > 1 else ""


def _hex_literal(bv: BitVec) -> str:
    return f"{bv.width}'h{format_bitvec(bv)}"


def _emit_checks(spec: ProblemSpec, cycle: int, outputs: dict, emit) -> None:
    for name in sorted(outputs):
        expected = _hex_literal(outputs[name])
        emit(f"    if ({name} !== {expected}) begin")
        emit(
            f'      $display("{MISMATCH_LINE_FORMAT}", {cycle}, "{name}", {expected}, {name});'
        )
        emit("      tb_mismatches = tb_mismatches + 1;")
        emit("    end")


def _emit_drives(rec_inputs: dict, emit) -> None:
    for name in sorted(rec_inputs):
        bv = rec_inputs[name]
        emit(f"    {name} = {_hex_literal(bv)};")


def _emit_result(emit) -> None:
    emit('    if (tb_mismatches == 0) $display("RESULT pass mismatches=0");')
    emit('    else $display("RESULT fail mismatches=%0d", tb_mismatches);')
    emit("    $finish;")


def _emit_sequential(spec: ProblemSpec, trace: SimTrace, emit) -> None:
    clk = spec.clock_port.name
    rst = spec.reset_port.name if spec.reset_port else None
    half = CLOCK_PERIOD // 2
    emit(f"  initial {clk} = 1'b0;")
    emit(f"  always #{half} {clk} = ~{clk};")
    emit("")
    emit("  initial begin")
    emit("    tb_mismatches = 0;")
    if rst:
        emit(f"    {rst} = 1'b1;")
    for p in spec.data_input_ports:
        emit(f"    {p.name} = {p.width}'h0;")
    emit(f"    @(negedge {clk});")
    if rst:
        emit(f"    {rst} = 1'b0;")
    _emit_drives(trace.cycles[0].inputs, emit)
    for rec in trace.cycles[1:]:
        emit(f"    @(negedge {clk});")
        _emit_drives(rec.inputs, emit)
        emit(f"    #{SAMPLE_OFFSET};")
        _emit_checks(spec, rec.cycle_index - 1, trace.cycles[rec.cycle_index - 1].outputs, emit)
    emit(f"    @(negedge {clk});")
    emit(f"    #{SAMPLE_OFFSET};")
    last = trace.cycles[-1]
    _emit_checks(spec, last.cycle_index, last.outputs, emit)
    _emit_result(emit)
    emit("  end")


def _emit_combinational(spec: ProblemSpec, trace: SimTrace, emit) -> None:
    emit("  initial begin")
    emit("    tb_mismatches = 0;")
    for rec in trace.cycles:
        _emit_drives(rec.inputs, emit)
        emit(f"    #{SETTLE_DELAY};")
        _emit_checks(spec, rec.cycle_index, rec.outputs, emit)
    _emit_result(emit)
    emit("  end")
