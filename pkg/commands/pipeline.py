import argparse
from pathlib import Path

import storage
from harness import default_family_spec, run_pipeline
from models import PipelineConfig


def register(subparsers):
    parser = subparsers.add_parser("pipeline", help="synthesize/load, measure, normalize, detect and verify")
    parser.add_argument("--config", type=Path, help="KEY=value text file or JSON")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--genus", type=int, default=1)
    source.add_argument("--input", type=Path, help="family directory written by synth")
    parser.add_argument("--configuration", choices=("coincident", "tangent"), default="coincident")
    parser.add_argument("--skip-models", action="store_true", help="leave out the closed-form model checks")
    parser.add_argument("--out", type=Path)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    config = storage.load_config(args.config) if args.config else PipelineConfig()
    source = args.input if args.input is not None else default_family_spec(args.genus, args.configuration)
    report = run_pipeline(config, source, args.out, include_models=not args.skip_models)
    width = max(len(c.name) for c in report.checks)
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status}  {c.name:<{width}}  measured={c.measured:.6g} target={c.target:.6g} tol={c.tolerance:.3g}")
    return 0 if report.passed else 1
