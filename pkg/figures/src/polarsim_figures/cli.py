"""polarsim-figs: one subcommand per figure id."""

from __future__ import annotations

import argparse
import sys

from polarsim_figures.recipes import FIGURE_IDS, recipe_for
from polarsim_figures.render import RenderError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polarsim-figs",
        description="Render benchmark figures from polarsim harness CSV output")
    sub = parser.add_subparsers(dest="figure", required=True)
    for fid in FIGURE_IDS:
        p = sub.add_parser(fid, help=f"render {fid}")
        p.add_argument("--in", dest="in_dir", required=True,
                       help="harness output directory")
        p.add_argument("--out", dest="out_file", required=True,
                       help="image file to write")
        p.add_argument("--xlim", help="comma-separated axis range, e.g. -15,15")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    xlim = None
    if args.xlim:
        lo, hi = (float(v) for v in args.xlim.split(","))
        xlim = (lo, hi)
    recipe = recipe_for(args.figure, out_path=args.out_file, xlim=xlim)
    try:
        render(recipe, args.in_dir)
    except RenderError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {args.out_file}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
