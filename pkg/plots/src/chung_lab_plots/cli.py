"""Command line: one figure per invocation.

    chung-lab-plot --kind tailfit --in results.csv --out fig.png

Exit codes: 0 success, 1 schema mismatch or empty selection, 2 usage.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FIGURE_KINDS, EmptySelectionError, PlotSpec, render
from .reader import SchemaError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="chung-lab-plot", description=__doc__.splitlines()[0])
    parser.add_argument("--kind", required=True, choices=sorted(FIGURE_KINDS), help="figure kind")
    parser.add_argument("--in", dest="source", required=True, help="results CSV")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--dpi", type=int, default=120)
    parser.add_argument("--title", default=None)
    args = parser.parse_args(argv)
    style = {} if args.title is None else {"title": args.title}
    spec = PlotSpec(source=Path(args.source), kind=args.kind, out=Path(args.out), dpi=args.dpi, style=style)
    try:
        out = render(spec)
    except (SchemaError, EmptySelectionError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {out} (+ sidecar {out.name}.txt)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
