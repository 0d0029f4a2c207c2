"""figures <run_dir> [--format png|svg] [--out DIR]

Renders every figure the artifacts in run_dir support: the norm-scaling plot,
one phase profile per sweep point, and field-magnitude slices when dumps are
present.
"""

from __future__ import annotations

import argparse
import os
import sys

from .io import SchemaError, TooFewRows, find_runs, read_report
from .plots import plot_field_slice, plot_norm_scaling, plot_phase


def render_run(run_dir: str, out_dir: str | None = None, fmt: str = "png",
               verbose: bool = True) -> list:
    out_dir = out_dir or run_dir
    os.makedirs(out_dir, exist_ok=True)
    runs = find_runs(run_dir)
    written = []

    res = plot_norm_scaling(runs["report"], runs["summary"],
                            os.path.join(out_dir, f"norm_scaling.{fmt}"), fmt)
    written.append(res["path"])

    rep = read_report(runs["report"])
    usable = {int(l): (lo, hi) for l, lo, hi in
              zip(rep["lambda"], rep["usable_lo"], rep["usable_hi"])}
    anchors = {int(l): a for l, a in zip(rep["lambda"], rep["t0_anchor"])}
    for tag, path in runs["phase"].items():
        lam = int(tag)
        res = plot_phase(path, os.path.join(out_dir, f"phase_{tag}.{fmt}"), fmt,
                         anchor=anchors.get(lam), usable=usable.get(lam))
        written.append(res["path"])
    for tag, path in runs["slice"].items():
        res = plot_field_slice(path, os.path.join(out_dir, f"field_slice_{tag}.{fmt}"),
                               fmt, phase_path=runs["phase"].get(tag))
        written.append(res["path"])
    if verbose:
        for p in written:
            print(p)
    return written


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="figures", description=__doc__)
    ap.add_argument("run_dir")
    ap.add_argument("--format", choices=("png", "svg"), default="png")
    ap.add_argument("--out", default=None)
    ap.add_argument("-q", "--quiet", action="store_true")
    args = ap.parse_args(argv)
    try:
        render_run(args.run_dir, out_dir=args.out, fmt=args.format,
                   verbose=not args.quiet)
    except (SchemaError, TooFewRows, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
