"""Operator entry point: single runs, benchmark sweeps, transcript record/replay."""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import tempfile
from pathlib import Path

from .config import (
    AppConfig,
    BackendConfig,
    ConfigError,
    build_forge,
    build_gateway,
    build_harness,
    build_toolchain,
    load_config,
)
from .core import ValidationError, load_problems, problem_from_json
from .evalharness import run_benchmark
from .gateway import AuthError, GatewayError
from .harness_client import HarnessError
from .pipeline import run_problem
from .stage1 import Stage1Controller
from .stage2 import Stage2Controller
from .toolchain import ToolchainError

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_USAGE = 2


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AuthError, ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (GatewayError, ToolchainError, HarnessError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUN_FAILURE


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autoverifix")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p_run = sub.add_parser("run", help="run stage 1 + stage 2 for one problem")
    p_run.add_argument("--problem", required=True, help="problem JSON/JSONL file")
    p_run.add_argument("--id", default=None, help="problem id when the file has several")
    p_run.add_argument("--stage1-backend", default=None, choices=("live", "replay"))
    p_run.add_argument("--stage2-backend", default=None, choices=("live", "replay"))
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="benchmark sweep with pass@k / FPR report")
    p_bench.add_argument("--problems", required=True, help="problem JSONL file")
    p_bench.add_argument("--samples", type=int, default=None, help="stage-2 samples per problem (default 10)")
    p_bench.add_argument("--jobs", type=int, default=None, help="worker pool width")
    p_bench.add_argument("--stage1-backend", default=None, choices=("live", "replay"))
    p_bench.add_argument("--stage2-backend", default=None, choices=("live", "replay"))
    common(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_record = sub.add_parser("record", help="run live and record transcripts for later replay")
    p_record.add_argument("--problem", required=True)
    p_record.add_argument("--id", default=None)
    p_record.add_argument("--transcript", required=True, help="transcript file to write")
    common(p_record)
    p_record.set_defaults(func=cmd_record)

    p_replay = sub.add_parser("replay", help="re-run a recorded session deterministically")
    p_replay.add_argument("--problem", required=True)
    p_replay.add_argument("--id", default=None)
    p_replay.add_argument("--transcript", required=True, help="transcript file to read")
    common(p_replay)
    p_replay.set_defaults(func=cmd_replay)
    return parser


def _load_one_problem(path: str, problem_id: str | None):
    text = Path(path).read_text()
    stripped = text.strip()
    if stripped.startswith("{") and "\n{" not in stripped:
        spec = problem_from_json(json.loads(stripped), base_dir=Path(path).parent, where=path)
        problems = [spec]
    else:
        problems = load_problems(path)
    if problem_id is not None:
        matches = [p for p in problems if p.id == problem_id]
        if not matches:
            raise ValidationError(f"no problem with id {problem_id!r} in {path}", "id")
        return matches[0]
    if len(problems) != 1:
        raise ValidationError(
            f"{path} holds {len(problems)} problems; select one with --id", "id"
        )
    return problems[0]


def _prepare_out_dir(base: str, name: str, force: bool) -> Path:
    target = Path(base) / name
    if target.exists():
        if not force:
            raise ConfigError(f"output directory {target} exists (use --force to overwrite)")
    return target


def _write_artifacts(target: Path, outcome, force: bool) -> None:
    staging = Path(tempfile.mkdtemp(prefix="autoverifix_out_"))
    try:
        (staging / "reference_model.py").write_text(outcome.reference_source)
        (staging / "test_vectors.json").write_text(
            json.dumps([dict(v) for v in outcome.test_vectors], indent=2) + "\n"
        )
        (staging / "testbench.v").write_text(outcome.testbench_source)
        (staging / "design.v").write_text(outcome.verilog_source)
        payload = outcome.to_json_dict()
        payload["digest"] = outcome.digest()
        (staging / "outcome.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        if target.exists():
            shutil.rmtree(target)
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.move(str(staging), str(target))
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def _apply_overrides(cfg: AppConfig, args) -> AppConfig:
    from dataclasses import replace

    s1, s2 = cfg.stage1_backend, cfg.stage2_backend
    if getattr(args, "stage1_backend", None):
        s1 = replace(s1, mode=args.stage1_backend)
    if getattr(args, "stage2_backend", None):
        s2 = replace(s2, mode=args.stage2_backend)
    return replace(cfg, stage1_backend=s1, stage2_backend=s2)


def _run_pipeline(cfg: AppConfig, spec, gateway1, gateway2, harness):
    forge1 = build_forge(cfg.stage1_backend, cfg.templates_dir)
    forge2 = build_forge(cfg.stage2_backend, cfg.templates_dir)
    toolchain = build_toolchain(cfg)
    stage1 = Stage1Controller(gateway1, harness, forge1, cfg.budget, cfg.coverage_feedback)
    stage2 = Stage2Controller(gateway2, toolchain, forge2, cfg.budget)
    return run_problem(spec, stage1, stage2)


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    spec = _load_one_problem(args.problem, args.id)
    target = _prepare_out_dir(args.out, spec.id, args.force)
    gateway1 = build_gateway(cfg.stage1_backend)
    gateway2 = build_gateway(cfg.stage2_backend)
    harness = build_harness(cfg.harness)
    outcome = _run_pipeline(cfg, spec, gateway1, gateway2, harness)
    _write_artifacts(target, outcome, args.force)
    print(f"{spec.id}: {outcome.status.value} (digest {outcome.digest()[:16]})")
    return EXIT_OK if outcome.status.value == "pass" else EXIT_RUN_FAILURE


def cmd_record(args) -> int:
    cfg = load_config(args.config)
    from dataclasses import replace

    cfg = replace(
        cfg,
        stage1_backend=replace(cfg.stage1_backend, mode="live"),
        stage2_backend=replace(cfg.stage2_backend, mode="live"),
    )
    spec = _load_one_problem(args.problem, args.id)
    target = _prepare_out_dir(args.out, spec.id, args.force)
    transcript = Path(args.transcript)
    transcript.parent.mkdir(parents=True, exist_ok=True)
    if transcript.exists() and args.force:
        transcript.unlink()
    harness_path = Path(str(transcript) + ".harness.jsonl")
    if harness_path.exists() and args.force:
        harness_path.unlink()
    gateway1 = build_gateway(cfg.stage1_backend, record_to=transcript)
    gateway2 = build_gateway(cfg.stage2_backend, record_to=transcript)
    harness = build_harness(cfg.harness, record_to=harness_path)
    outcome = _run_pipeline(cfg, spec, gateway1, gateway2, harness)
    _write_artifacts(target, outcome, args.force)
    print(f"{spec.id}: {outcome.status.value} (digest {outcome.digest()[:16]})")
    print(f"transcript: {transcript}")
    return EXIT_OK if outcome.status.value == "pass" else EXIT_RUN_FAILURE


def cmd_replay(args) -> int:
    cfg = load_config(args.config)
    from dataclasses import replace

    cfg = replace(
        cfg,
        stage1_backend=replace(cfg.stage1_backend, mode="replay", transcript=args.transcript),
        stage2_backend=replace(cfg.stage2_backend, mode="replay", transcript=args.transcript),
    )
    harness_path = Path(str(args.transcript) + ".harness.jsonl")
    if harness_path.exists():
        cfg = replace(cfg, harness=replace(cfg.harness, recorded_results=str(harness_path)))
    spec = _load_one_problem(args.problem, args.id)
    target = _prepare_out_dir(args.out, spec.id, args.force)
    gateway1 = build_gateway(cfg.stage1_backend)
    gateway2 = build_gateway(cfg.stage2_backend)
    harness = build_harness(cfg.harness)
    outcome = _run_pipeline(cfg, spec, gateway1, gateway2, harness)
    _write_artifacts(target, outcome, args.force)
    print(f"{spec.id}: {outcome.status.value} (digest {outcome.digest()[:16]})")
    return EXIT_OK if outcome.status.value == "pass" else EXIT_RUN_FAILURE


class _CliPipelineFactory:
    """Shares gateways/harness/toolchain across cells; controllers are per-cell."""

    def __init__(self, cfg: AppConfig):
        self.cfg = cfg
        self.gateway1 = build_gateway(cfg.stage1_backend)
        self.gateway2 = build_gateway(cfg.stage2_backend)
        self.harness = build_harness(cfg.harness)
        self.forge1 = build_forge(cfg.stage1_backend, cfg.templates_dir)
        self.forge2 = build_forge(cfg.stage2_backend, cfg.templates_dir)
        self.toolchain = build_toolchain(cfg)

    def make_stage1(self, problem_id: str) -> Stage1Controller:
        return Stage1Controller(
            self.gateway1, self.harness, self.forge1, self.cfg.budget, self.cfg.coverage_feedback
        )

    def make_stage2(self, problem_id: str, sample_index: int) -> Stage2Controller:
        return Stage2Controller(self.gateway2, self.toolchain, self.forge2, self.cfg.budget)

    def make_toolchain(self):
        return self.toolchain


def cmd_bench(args) -> int:
    from dataclasses import replace

    cfg = _apply_overrides(load_config(args.config), args)
    if args.samples is not None:
        if args.samples < 1:
            print("error: --samples must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        cfg = replace(cfg, samples=args.samples)
    if args.jobs is not None:
        if args.jobs < 1:
            print("error: --jobs must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        cfg = replace(cfg, jobs=args.jobs)
    problems = load_problems(args.problems)
    out_dir = Path(args.out)
    if args.force and out_dir.exists():
        shutil.rmtree(out_dir)
    jobs = cfg.jobs if cfg.jobs is not None else _default_jobs()
    factory = _CliPipelineFactory(cfg)
    report = run_benchmark(
        problems,
        factory,
        out_dir,
        config_snapshot=cfg.to_json_dict(),
        config_digest=cfg.digest(),
        n_samples=cfg.samples,
        jobs=jobs,
        progress=lambda msg: print(msg, file=sys.stderr),
    )
    print((out_dir / "report.txt").read_text(), end="")
    return EXIT_OK


def _default_jobs() -> int:
    import os

    return min(os.cpu_count() or 1, 8)


if __name__ == "__main__":
    sys.exit(main())
