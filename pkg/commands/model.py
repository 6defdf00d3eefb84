import argparse
from pathlib import Path

import storage
from geometry import functionals
from model_surfaces import ic_kind, make_model
from models import ModelKind, ModelTag


def register(subparsers):
    parser = subparsers.add_parser("model", help="closed-form bubble models")
    actions = parser.add_subparsers(dest="action", required=True)
    emit = actions.add_parser("emit", help="write a model surface as JSON")
    emit.add_argument("--kind", choices=[t.value for t in ModelTag], required=True)
    emit.add_argument("--scale", type=float, default=1.0)
    emit.add_argument("--out", type=Path, required=True)
    emit.set_defaults(func=run_emit)


def run_emit(args: argparse.Namespace) -> int:
    tag = ModelTag(args.kind)
    kind = ic_kind(tag, args.scale) if tag in (ModelTag.IC1, ModelTag.IC2) else ModelKind(tag=tag, scale=args.scale)
    surface = make_model(kind)
    storage.save_surface(surface, args.out)
    f = functionals(surface)
    print(f"{tag.value}: W={f.W:.8g} E={f.E:.8g} A={f.A:.8g}")
    return 0
