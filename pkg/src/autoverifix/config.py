"""Single JSON config file with env-var overrides for secrets only.

The fully resolved config is content-addressable: its digest keys the
benchmark journal, so a sweep resumes only against identical settings.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .core import RunBudget, canonical_json, sha256_text
from .gateway import ChatGateway, LiveBackend, RecordingBackend, ReplayBackend
from .harness_client import RecordedHarness, RecordingHarness, SubprocessHarness
from .prompts import PromptForge, PromptSettings
from .toolchain import HdlToolchain, ToolchainConfig, default_toolchain_config


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class BackendConfig:
    mode: str = "live"  # live | replay
    model: str = "gpt-4"
    base_url: str = "https://api.openai.com/v1"
    temperature: float = 0.8
    max_tokens: int = 4096
    seed: int | None = None
    transcript: str | None = None
    retries: int = 3

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "model": self.model,
            "base_url": self.base_url,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
            "transcript": self.transcript,
            "retries": self.retries,
        }


@dataclass(frozen=True)
class HarnessConfig:
    command: tuple[str, ...] = ()
    recorded_results: str | None = None

    def to_json_dict(self) -> dict[str, Any]:
        return {"command": list(self.command), "recorded_results": self.recorded_results}


@dataclass(frozen=True)
class AppConfig:
    stage1_backend: BackendConfig = field(default_factory=BackendConfig)
    stage2_backend: BackendConfig = field(default_factory=BackendConfig)
    budget: RunBudget = field(default_factory=RunBudget)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    toolchain: ToolchainConfig | None = None
    templates_dir: str | None = None
    coverage_feedback: bool = True
    samples: int = 10
    jobs: int | None = None

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "stage1_backend": self.stage1_backend.to_json_dict(),
            "stage2_backend": self.stage2_backend.to_json_dict(),
            "budget": {
                "max_python_syntax_iters": self.budget.max_python_syntax_iters,
                "max_coverage_iters": self.budget.max_coverage_iters,
                "max_verilog_syntax_iters": self.budget.max_verilog_syntax_iters,
                "max_function_iters": self.budget.max_function_iters,
                "coverage_threshold": self.budget.coverage_threshold,
                "sim_timeout_s": self.budget.sim_timeout_s,
                "max_reported_discrepancies": self.budget.max_reported_discrepancies,
            },
            "harness": self.harness.to_json_dict(),
            "toolchain": (
                {
                    "compile_cmd": list(self.toolchain.compile_cmd),
                    "run_cmd": list(self.toolchain.run_cmd),
                    "timeout_s": self.toolchain.timeout_s,
                }
                if self.toolchain
                else None
            ),
            "templates_dir": self.templates_dir,
            "coverage_feedback": self.coverage_feedback,
            "samples": self.samples,
            "jobs": self.jobs,
        }

    def digest(self) -> str:
        return sha256_text(canonical_json(self.to_json_dict()))


def _backend_from_json(d: dict[str, Any], where: str) -> BackendConfig:
    try:
        return BackendConfig(
            mode=d.get("mode", "live"),
            model=d.get("model", "gpt-4"),
            base_url=d.get("base_url", "https://api.openai.com/v1"),
            temperature=float(d.get("temperature", 0.8)),
            max_tokens=int(d.get("max_tokens", 4096)),
            seed=d.get("seed"),
            transcript=d.get("transcript"),
            retries=int(d.get("retries", 3)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def load_config(path: str | Path | None) -> AppConfig:
    if path is None:
        return AppConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    budget_raw = raw.get("budget", {})
    try:
        budget = RunBudget(
            max_python_syntax_iters=int(budget_raw.get("max_python_syntax_iters", 5)),
            max_coverage_iters=int(budget_raw.get("max_coverage_iters", 5)),
            max_verilog_syntax_iters=int(budget_raw.get("max_verilog_syntax_iters", 5)),
            max_function_iters=int(budget_raw.get("max_function_iters", 5)),
            coverage_threshold=float(budget_raw.get("coverage_threshold", 0.85)),
            sim_timeout_s=float(budget_raw.get("sim_timeout_s", 10.0)),
            max_reported_discrepancies=int(budget_raw.get("max_reported_discrepancies", 10)),
        )
    except Exception as e:
        raise ConfigError(f"budget: {e}") from None
    tool_raw = raw.get("toolchain")
    toolchain = None
    if tool_raw is not None:
        try:
            toolchain = ToolchainConfig(
                compile_cmd=tuple(tool_raw["compile_cmd"]),
                run_cmd=tuple(tool_raw["run_cmd"]),
                timeout_s=float(tool_raw.get("timeout_s", 30.0)),
            )
        except KeyError as e:
            raise ConfigError(f"toolchain: missing key {e}") from None
    harness_raw = raw.get("harness", {})
    return AppConfig(
        stage1_backend=_backend_from_json(raw.get("stage1_backend", {}), "stage1_backend"),
        stage2_backend=_backend_from_json(raw.get("stage2_backend", {}), "stage2_backend"),
        budget=budget,
        harness=HarnessConfig(
            command=tuple(harness_raw.get("command", ())),
            recorded_results=harness_raw.get("recorded_results"),
        ),
        toolchain=toolchain,
        templates_dir=raw.get("templates_dir"),
        coverage_feedback=bool(raw.get("coverage_feedback", True)),
        samples=int(raw.get("samples", 10)),
        jobs=raw.get("jobs"),
    )


def build_gateway(backend: BackendConfig, record_to: str | Path | None = None) -> ChatGateway:
    if backend.mode == "replay":
        if not backend.transcript:
            raise ConfigError("replay backend requires a transcript path")
        inner = ReplayBackend(backend.transcript)
    elif backend.mode == "live":
        inner = LiveBackend(backend.base_url)
        if record_to is not None:
            inner = RecordingBackend(inner, record_to)
    else:
        raise ConfigError(f"unknown backend mode {backend.mode!r}")
    return ChatGateway(inner, retries=backend.retries)


def build_forge(backend: BackendConfig, templates_dir: str | None) -> PromptForge:
    return PromptForge(
        PromptSettings(
            model=backend.model,
            temperature=backend.temperature,
            max_tokens=backend.max_tokens,
            seed=backend.seed,
        ),
        template_dir=templates_dir,
    )


def build_harness(cfg: HarnessConfig, record_to: str | Path | None = None):
    if cfg.recorded_results:
        return RecordedHarness(cfg.recorded_results)
    command = list(cfg.command) or [sys.executable, "-m", "refmodel_harness"]
    harness = SubprocessHarness(command)
    if record_to is not None:
        return RecordingHarness(harness, record_to)
    return harness


def build_toolchain(cfg: AppConfig) -> HdlToolchain:
    tc = cfg.toolchain or default_toolchain_config(timeout_s=cfg.budget.sim_timeout_s)
    if tc is None:
        raise ConfigError(
            "no HDL toolchain configured and none discovered "
            "(install iverilog or the verilator npm package, or set toolchain.compile_cmd/run_cmd)"
        )
    return HdlToolchain(tc)
