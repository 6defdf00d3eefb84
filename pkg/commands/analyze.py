import argparse
from pathlib import Path

import storage
from detector import extract_graph, neck_decomposition
from settings import get_settings


def register(subparsers):
    parser = subparsers.add_parser("analyze", help="recover the bubble graph of a family directory")
    parser.add_argument("family", type=Path)
    parser.add_argument("--epsilon", type=float, default=1.0)
    parser.add_argument("--out", type=Path, default=None)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    out = args.out or Path(get_settings().output_dir)
    members = storage.load_family(args.family)
    graph = extract_graph(members, args.epsilon)
    storage.write_graph(graph, out, "graph")
    rows = []
    for k, atlas in sorted(members.items()):
        for chart in atlas.charts:
            if chart.immersion.chart.domain_kind == "rectangle":
                continue
            decomposition = neck_decomposition(chart.immersion, args.epsilon)
            for zone in decomposition.zones:
                rows.append({"k": k, "chart": chart.immersion.name, **zone.model_dump()})
    storage.write_csv(rows, out / "zones.csv", fieldnames=["k", "chart", "kind", "lo", "hi", "energy"])
    print(storage.graph_dot(graph), end="")
    return 0
