"""Tests that probe the runner rather than any code under test.

    probe.py --list
    probe.py NAME OUTDIR

env    records the environment it was started with in OUTDIR/env.json
sleep  sleeps for PROBE_SLEEP_MS milliseconds
crash  kills itself with SIGKILL
"""

import json
import os
import signal
import sys
import time

TESTS = ["env", "sleep", "crash"]


def write_artifact(outdir, name):
    with open(os.path.join(outdir, "coverage.jsonl"), "w") as out:
        out.write(json.dumps({"test": name, "outcome": "PASSED", "files": []}) + "\n")


def main():
    if sys.argv[1] == "--list":
        print("\n".join(TESTS))
        return 0
    name, outdir = sys.argv[1], sys.argv[2]
    if name == "env":
        with open(os.path.join(outdir, "env.json"), "w") as out:
            json.dump(dict(os.environ), out)
    elif name == "sleep":
        time.sleep(int(os.environ["PROBE_SLEEP_MS"]) / 1000)
    elif name == "crash":
        os.kill(os.getpid(), signal.SIGKILL)
    write_artifact(outdir, name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
