"""Scripted stub experiment.

Behavior is driven by `status_script.txt` in the working directory: one
comma-separated directive per invocation, consumed left to right via a
cursor file. Directives may combine parts with `+`:

    0                exit 0 (writes the canned metrics file)
    1                exit 1 with an error message
    sleep:S          sleep S seconds
    bytes:N          write N bytes into the out_dir
    spawn:S          spawn a child process sleeping S seconds

Without a status script every invocation succeeds.
"""

import argparse
import json
import os
import subprocess
import sys
import time

CANNED_METRICS = {
    "baseline": {"final_loss": 0.1234, "score": 1.0},
    "variant": {"final_loss": 0.0987, "score": 1.1},
}

CURSOR_FILE = ".stub_cursor"
SCRIPT_FILE = "status_script.txt"


def next_directive():
    if not os.path.exists(SCRIPT_FILE):
        return "0"
    with open(SCRIPT_FILE) as fh:
        directives = [d.strip() for d in fh.read().split(",") if d.strip()]
    cursor = 0
    if os.path.exists(CURSOR_FILE):
        with open(CURSOR_FILE) as fh:
            cursor = int(fh.read().strip() or "0")
    with open(CURSOR_FILE, "w") as fh:
        fh.write(str(cursor + 1))
    if cursor < len(directives):
        return directives[cursor]
    return "0"


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out_dir", required=True)
    args = parser.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    directive = next_directive()
    status = 0
    for part in directive.split("+"):
        if part.startswith("sleep:"):
            time.sleep(float(part.split(":", 1)[1]))
        elif part.startswith("bytes:"):
            n = int(part.split(":", 1)[1])
            with open(os.path.join(args.out_dir, "blob.bin"), "wb") as fh:
                fh.write(b"\0" * n)
        elif part.startswith("spawn:"):
            s = float(part.split(":", 1)[1])
            subprocess.Popen([sys.executable, "-c", f"import time; time.sleep({s})"])
        else:
            status = int(part)

    if status == 0:
        metrics = CANNED_METRICS
        if os.path.exists("canned_metrics.json"):
            with open("canned_metrics.json") as fh:
                metrics = json.load(fh)
        with open(os.path.join(args.out_dir, "final_info.json"), "w") as fh:
            json.dump(metrics, fh, indent=1, sort_keys=True)
        print("stub experiment complete")
    else:
        print(f"stub experiment failing with status {status}", file=sys.stderr)
    sys.exit(status)


if __name__ == "__main__":
    main()
