import argparse
import logging
from pathlib import Path

import storage
from models import FamilySpec, TreeSpec
from synthesizer import degenerate_torus, synthesize_family
from harness import default_family_spec

logger = logging.getLogger("willmore_lab.commands.synth")


def register(subparsers):
    parser = subparsers.add_parser("synth", help="synthesize a degenerating family with a known bubble tree")
    parser.add_argument("--genus", type=int, default=1)
    parser.add_argument("--tree", type=Path, help="JSON tree spec {\"parent\": {...}} overriding the default tree")
    parser.add_argument("--spec", type=Path, help="full FamilySpec JSON")
    parser.add_argument("--configuration", choices=("coincident", "tangent"), default="coincident")
    parser.add_argument("--k-min", type=int, default=0)
    parser.add_argument("--k-max", type=int, default=3)
    parser.add_argument("--resolution", type=int, default=64)
    parser.add_argument("--torus-lengths", type=float, nargs="+",
                        help="write a degenerating torus family for these thin-part lengths instead")
    parser.add_argument("--out", type=Path, required=True)
    parser.set_defaults(func=run)


def family_spec(args: argparse.Namespace) -> FamilySpec:
    if args.spec is not None:
        return FamilySpec.model_validate(storage.load_json(args.spec))
    if args.tree is not None:
        tree = TreeSpec.model_validate(storage.load_json(args.tree))
        base = FamilySpec(tree=tree, genus=tree.genus, configuration=args.configuration)
    else:
        base = default_family_spec(args.genus, args.configuration)
    return FamilySpec.model_validate({**base.model_dump(), "k_range": (args.k_min, args.k_max),
                                      "resolution": args.resolution})


def run(args: argparse.Namespace) -> int:
    if args.torus_lengths:
        members = degenerate_torus(args.torus_lengths)
        storage.save_family({m.index: m.atlas for m in members}, args.out)
        storage.write_csv([{"index": m.index, "l": m.l, "re": m.modulus.re, "im": m.modulus.im,
                            "target_im": m.target.im}
                           for m in members], args.out / "moduli.csv")
        return 0
    spec = family_spec(args)
    family = synthesize_family(spec)
    storage.save_family(family.members, args.out, spec)
    storage.write_graph(family.graph, args.out, "ground_truth")
    logger.info("wrote %d members to %s", len(family.members), args.out)
    return 0
