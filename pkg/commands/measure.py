import argparse
import sys
from pathlib import Path

import storage
from geometry import functionals, gauss_bonnet_residual
from models import Functionals


def register(subparsers):
    parser = subparsers.add_parser("measure", help="W, E, A, V, M, I, T of a surface file or family directory")
    parser.add_argument("path", type=Path)
    parser.add_argument("--out", type=Path, help="CSV file; stdout when omitted")
    parser.add_argument("--fields", type=Path, help="directory for per-node field dumps of every chart")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    if args.path.is_dir():
        surfaces = {f"k{k}": s for k, s in storage.load_family(args.path).items()}
    else:
        surfaces = {args.path.stem: storage.load_surface(args.path)}
    rows = []
    for name, surface in surfaces.items():
        f = functionals(surface)
        rows.append({"name": name, **f.model_dump(), "gauss_bonnet": gauss_bonnet_residual(surface)})
        if args.fields is not None:
            for chart in surface.charts:
                storage.write_field_csv(chart.immersion, args.fields / f"{name}_{chart.immersion.name}.csv")
    fieldnames = ["name", *Functionals.model_fields, "gauss_bonnet"]
    if args.out is not None:
        storage.write_csv(rows, args.out, fieldnames=fieldnames)
    else:
        print(",".join(fieldnames))
        for row in rows:
            print(",".join(str(row[f]) for f in fieldnames))
        sys.stdout.flush()
    return 0
