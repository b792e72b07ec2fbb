#!/usr/bin/env python3
"""Train Jarzynski, PCD and CD on one teacher and print the comparison table.

    python3 scripts/run_gmm_comparison.py --preset gmm-scaled --out runs/cmp

Each algorithm gets its own run directory under ``--out``; the table is the
one ``jebm compare`` prints.
"""

import argparse
import sys
from pathlib import Path

from jarzynski_ebm import cli
from jarzynski_ebm.training import ALGORITHMS


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="gmm-scaled", choices=[p for p in cli.PRESETS if p != "appendixC-fig8"])
    ap.add_argument("--config", type=Path, help="INI layered over the preset")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", type=Path, default=Path("runs/comparison"))
    ap.add_argument("--algorithms", nargs="+", default=list(ALGORITHMS), choices=ALGORITHMS)
    args = ap.parse_args(argv)

    dirs = []
    for algorithm in args.algorithms:
        out = args.out / algorithm
        cmd = ["run", "--preset", args.preset, "--algorithm", algorithm, "--out-dir", str(out)]
        if args.config:
            cmd += ["--config", str(args.config)]
        if args.seed is not None:
            cmd += ["--seed", str(args.seed)]
        print(f"running {algorithm} -> {out}", file=sys.stderr)
        code = cli.main(cmd)
        if code == cli.EXIT_CONFIG:
            return code
        dirs.append(out)
    print(cli.format_table(cli.compare_runs(dirs)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
