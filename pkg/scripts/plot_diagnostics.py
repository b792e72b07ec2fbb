#!/usr/bin/env python3
"""Plot p_k, ESS and the exact cross-entropy from one or more run directories.

    python3 scripts/plot_diagnostics.py runs/comparison/* -o comparison.png

Needs matplotlib, which is not a dependency of the package.
"""

import argparse
import json
import sys
from pathlib import Path

from jarzynski_ebm.cli import read_diagnostics


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", nargs="+", type=Path)
    ap.add_argument("-o", "--output", type=Path, default=Path("diagnostics.png"))
    args = ap.parse_args(argv)
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is required for plotting: pip install matplotlib", file=sys.stderr)
        return 1

    fig, axes = plt.subplots(3, 1, figsize=(7, 9), sharex=True)
    for run in args.runs:
        diag = read_diagnostics(run / "diagnostics.csv")
        label = json.loads((run / "summary.json").read_text()).get("algorithm", run.name)
        axes[0].plot(diag["k"], diag["p_k"], label=label)
        axes[1].plot(diag["k"], diag["ess"], label=label)
        axes[2].plot(diag["k"], diag["ce_exact"], label=label)
    axes[0].axhline(0.25, color="k", lw=0.5, ls="--")
    for ax, name in zip(axes, ["mass of mode a", "ESS fraction", "exact cross-entropy"]):
        ax.set_ylabel(name)
    axes[0].legend()
    axes[-1].set_xlabel("iteration k")
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(f"wrote {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
