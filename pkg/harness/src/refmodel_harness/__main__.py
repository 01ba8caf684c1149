"""Process entry: one job JSON object on stdin, one result JSON object on stdout.

Exit code 0 for any well-formed result (the status field carries model
failures); nonzero only for harness-internal faults.
"""

from __future__ import annotations

import json
import sys

from .runner import run_job_dict


def main() -> int:
    try:
        raw = json.load(sys.stdin)
    except json.JSONDecodeError as e:
        print(f"refmodel-harness: invalid job JSON: {e}", file=sys.stderr)
        return 2
    try:
        result = run_job_dict(raw)
    except KeyError as e:
        print(f"refmodel-harness: job is missing field {e}", file=sys.stderr)
        return 2
    except Exception as e:  # internal fault, not a model failure
        print(f"refmodel-harness: internal error: {e}", file=sys.stderr)
        return 1
    json.dump(result, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
