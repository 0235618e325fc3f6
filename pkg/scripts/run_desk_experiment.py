#!/usr/bin/env python3
"""End-to-end desk-scale experiment: synthesize a blob dataset, train,
generate ten sets, and score them with the mock classifier.

Usage: python scripts/run_desk_experiment.py --work /tmp/afge_demo [--epochs 200]
"""

import argparse
import subprocess
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
REPO = HERE.parent


def run(argv):
    print("+", " ".join(str(a) for a in argv))
    subprocess.run([str(a) for a in argv], check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", required=True, type=Path)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    work = args.work
    data = work / "data"
    out = work / "train"
    gen = work / "generated"

    run([sys.executable, HERE / "make_blob_dataset.py", "--out", data, "--count", 512,
         "--size", 32, "--seed", args.seed])
    run([sys.executable, "-m", "autoforge.cli", "train",
         "--config", REPO / "configs" / "desk.txt",
         "--data", data, "--out", out,
         "--set", f"epochs={args.epochs}", "--set", f"seed={args.seed}"])
    run([sys.executable, "-m", "autoforge.cli", "generate",
         "--checkpoint", out / "checkpoint_final.afge",
         "--sets", 10, "--count", 100, "--seed", args.seed, "--out", gen])
    run([sys.executable, "-m", "autoforge.cli", "evaluate",
         "--images", gen,
         "--classifier-cmd", f"{sys.executable} {HERE / 'mock_classifier.py'} --accept 40 {{dir}}",
         "--out", work / "report.csv"])
    print(f"report written to {work / 'report.csv'}")


if __name__ == "__main__":
    main()
