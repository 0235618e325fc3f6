#!/usr/bin/env python3
"""Mock classifier implementing the adapter protocol.

Scores the lexicographically first --accept images in the directory at
--hi and the rest at --lo, printing one `filename,score` line per image.
The --omit/--malform/--duplicate flags deliberately violate the protocol
so the error paths can be exercised end to end.
"""

import argparse
import sys
from pathlib import Path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("directory", type=Path)
    ap.add_argument("--accept", type=int, default=40, help="images scored high per directory")
    ap.add_argument("--hi", type=float, default=0.9)
    ap.add_argument("--lo", type=float, default=0.1)
    ap.add_argument("--omit", action="store_true", help="skip the last image (protocol violation)")
    ap.add_argument("--malform", action="store_true", help="emit one malformed line")
    ap.add_argument("--duplicate", action="store_true", help="score the first image twice")
    args = ap.parse_args()

    names = sorted(p.name for p in args.directory.iterdir() if p.suffix.lower() == ".png")
    if not names:
        print(f"no images in {args.directory}", file=sys.stderr)
        return 1
    if args.omit:
        names = names[:-1]
    if args.malform:
        print("this line has no score")
    for i, name in enumerate(names):
        print(f"{name},{args.hi if i < args.accept else args.lo}")
    if args.duplicate:
        print(f"{names[0]},{args.hi}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
