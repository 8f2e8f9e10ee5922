"""Spectra and structure reports for the six resonance-shape panels.

Usage: python3 scripts/fig5.py [outdir] [--points N] [--workers K]
"""

import argparse
import sys

from cptwall.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", nargs="?", default="fig5")
    ap.add_argument("--points", type=int, default=401)
    ap.add_argument("--workers", type=int, default=1)
    a = ap.parse_args()
    sys.exit(main(["fig5", "--output", a.outdir, "--points", str(a.points),
                   "--workers", str(a.workers)]))
