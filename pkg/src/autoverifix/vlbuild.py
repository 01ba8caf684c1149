"""Compile driver for Verilator prebuilt trees (`python -m autoverifix.vlbuild`).

Wraps the verilate + make steps into the single compile command the
toolchain adapter expects, and keeps a cache of the Verilator runtime
objects (verilated*.o) so repeat builds of small benches take seconds.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import shutil
import subprocess
import sys
from pathlib import Path

VERILATE_FLAGS = [
    "--cc",
    "--exe",
    "--main",
    "--timing",
    "--quiet",
    "-Wno-fatal",
    "-Wno-TIMESCALEMOD",
    "-CFLAGS",
    "-O0",
]

# stand-in for the verilator_includer helper missing from some prebuilt trees:
# emits a translation unit that #includes every generated source
INCLUDER_SRC = """\
import sys
defines, files = [], []
for arg in sys.argv[1:]:
    (defines if arg.startswith("-D") else files).append(arg)
for define in defines:
    body = define[2:]
    print("#define " + body.replace("=", " ", 1) if "=" in body else "#define " + body)
for filename in files:
    print('#include "%s"' % filename)
"""


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="vlbuild")
    parser.add_argument("--root", required=True, help="Verilator install tree (VERILATOR_ROOT)")
    parser.add_argument("--cache", required=True, help="runtime object cache directory")
    parser.add_argument("--top", default="tb_main", help="top module name")
    parser.add_argument("--out", required=True, help="output executable path")
    parser.add_argument("sources", nargs="+")
    args = parser.parse_args(argv)

    root = Path(args.root)
    verilator_bin = root / "bin" / "verilator_bin"
    if not verilator_bin.exists():
        print(f"vlbuild: verilator_bin not found under {root}", file=sys.stderr)
        return 2
    out = Path(args.out)
    mdir = out.parent / "vlobj"
    env = {**os.environ, "VERILATOR_ROOT": str(root)}

    cmd = [str(verilator_bin), *VERILATE_FLAGS, "--top-module", args.top, "--Mdir", str(mdir), "-o", "simv"]
    cmd += args.sources
    proc = subprocess.run(cmd, capture_output=True, text=True, env=env)
    sys.stdout.write(proc.stdout)
    sys.stderr.write(proc.stderr)
    if proc.returncode != 0:
        return proc.returncode

    cache = Path(args.cache) / _cache_key(verilator_bin, env)
    cached = sorted(cache.glob("verilated*.o")) if cache.is_dir() else []
    for obj in cached:
        shutil.copy(obj, mdir / obj.name)

    includer = mdir / "vl_includer.py"
    includer.write_text(INCLUDER_SRC)
    make_cmd = [
        "make",
        "-s",
        "-C",
        str(mdir),
        "-f",
        f"V{args.top}.mk",
        f"VERILATOR_INCLUDER={sys.executable} {includer}",
    ]
    proc = subprocess.run(make_cmd, capture_output=True, text=True, env=env)
    sys.stdout.write(proc.stdout)
    sys.stderr.write(proc.stderr)
    if proc.returncode != 0:
        return proc.returncode

    built = mdir / "simv"
    if not built.exists():
        print("vlbuild: make succeeded but produced no executable", file=sys.stderr)
        return 2
    shutil.copy(built, out)
    out.chmod(0o755)

    if not cached:
        cache.mkdir(parents=True, exist_ok=True)
        for obj in mdir.glob("verilated*.o"):
            # concurrent builds may race to populate the cache; land atomically
            tmp = cache / f".{obj.name}.{os.getpid()}"
            shutil.copy(obj, tmp)
            os.replace(tmp, cache / obj.name)
    return 0


def _cache_key(verilator_bin: Path, env: dict[str, str]) -> str:
    try:
        version = subprocess.run(
            [str(verilator_bin), "--version"], capture_output=True, text=True, env=env, timeout=30
        ).stdout.strip()
    except (subprocess.SubprocessError, OSError):
        version = "unknown"
    payload = version + "|" + " ".join(VERILATE_FLAGS)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


if __name__ == "__main__":
    sys.exit(main())
