import argparse
from pathlib import Path

import storage
from bubble_graph import center_behavior, classify_inversion_type


def register(subparsers):
    parser = subparsers.add_parser("invert-type", help="type 1-4 of an inverting center sequence")
    parser.add_argument("graph", type=Path, help="bubble graph JSON")
    parser.add_argument("centers", type=Path, help="JSON {k: [x, y, z]}")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    graph = storage.read_graph(args.graph)
    centers = {int(k): tuple(v) for k, v in storage.load_json(args.centers).items()}
    behavior = center_behavior(graph, centers)
    for vid, b in sorted(behavior.items()):
        if b.finite:
            print(f"{vid}: limit={b.limit} on_image={b.on_image} at_puncture={b.at_puncture}")
    print(f"type {classify_inversion_type(graph, behavior)}")
    return 0
