import argparse
import math
from pathlib import Path

import storage
import varifold as vf


def register(subparsers):
    parser = subparsers.add_parser("varifold", help="density, Li-Yau gap and monotonicity at probe points")
    parser.add_argument("path", type=Path, help="surface JSON or varifold atom CSV")
    parser.add_argument("--point", type=float, nargs=3, action="append", required=True)
    parser.add_argument("--invert", action="store_true", help="also report the stationarity of the inverted varifold")
    parser.add_argument("--dump", type=Path, help="write the atoms as CSV")
    parser.add_argument("--out", type=Path)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    if args.path.suffix == ".csv":
        mu = storage.read_varifold_csv(args.path)
    else:
        mu = vf.from_immersion(storage.load_surface(args.path))
    if args.dump is not None:
        storage.write_varifold_csv(mu, args.dump)
    W = mu.willmore()
    rows = []
    for x0 in args.point:
        mono = vf.monotonicity_residual(mu, x0)
        row = {"x": x0[0], "y": x0[1], "z": x0[2], "density": mono.density,
               "li_yau_gap": W / (4 * math.pi) - mono.density,
               "monotonicity_residual": mono.residual / (W / 4) if W > 0 else mono.residual}
        if args.invert:
            nu = vf.pushforward_inversion(mu, x0)
            row["stationarity_defect"] = vf.stationarity_defect(nu, vf.test_field_family(nu))
        rows.append(row)
    if args.out is not None:
        storage.write_csv(rows, args.out)
    for row in rows:
        print(" ".join(f"{k}={v:.6g}" for k, v in row.items()))
    return 0
