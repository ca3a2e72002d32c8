"""Command line: turn benchmark CSVs into figures."""

from __future__ import annotations

import argparse
import sys

from .figures import PlotSpec, plot_box, plot_convergence

KINDS = {"convergence": "convergence-band", "convergence-band": "convergence-band",
         "box": "boxplot", "boxplot": "boxplot"}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="vvcv-plots",
                                description="figures from vvcv benchmark CSVs")
    p.add_argument("inputs", nargs="+", help="benchmark CSVs (trace/raw plus "
                                             "optional summary for legend stats)")
    p.add_argument("--kind", required=True, choices=sorted(KINDS))
    p.add_argument("--out", required=True, help="image path; extension picks the "
                                                "format (png, svg, pdf)")
    p.add_argument("--methods", default="", help="comma list; default: all present")
    p.add_argument("--truth-line", type=float, default=None,
                   help="horizontal reference for box plots")
    try:
        args = p.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    methods = tuple(m for m in args.methods.split(",") if m)
    spec = PlotSpec(inputs=tuple(args.inputs), kind=KINDS[args.kind], out=args.out,
                    methods=methods, truth_line=args.truth_line)
    try:
        if spec.kind == "convergence-band":
            path = plot_convergence(spec)
        else:
            path = plot_box(spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
