"""Tables of exact vs fitted duration laws (beam dwell time and dark chords).

Usage: python3 scripts/distributions.py [outdir] [--points N]
"""

import argparse
import sys

from cptwall.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", nargs="?", default="distributions")
    ap.add_argument("--points", type=int, default=201)
    a = ap.parse_args()
    sys.exit(main(["distributions", "--output", a.outdir, "--points", str(a.points)]))
