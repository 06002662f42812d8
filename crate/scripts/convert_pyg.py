#!/usr/bin/env python3
"""Write a PyTorch Geometric node-classification dataset as a graph bundle.

    python scripts/convert_pyg.py --name Cora --out data/cora
    python scripts/convert_pyg.py --name Photo --out data/photo

Planetoid names: Cora, CiteSeer, PubMed. Amazon names: Computers, Photo.
Requires torch and torch_geometric.
"""

import argparse
import json
from pathlib import Path

from torch_geometric.datasets import Amazon, Planetoid

PLANETOID = {"cora", "citeseer", "pubmed"}
AMAZON = {"computers", "photo"}


def load(name: str, cache: Path):
    key = name.lower()
    if key in PLANETOID:
        return Planetoid(str(cache), name)[0]
    if key in AMAZON:
        return Amazon(str(cache), name)[0]
    raise SystemExit(f"unknown dataset {name!r}")


def fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--name", required=True)
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--cache", default=Path(".pyg-cache"), type=Path)
    args = ap.parse_args()

    data = load(args.name, args.cache)
    args.out.mkdir(parents=True, exist_ok=True)

    pairs = {tuple(sorted(e)) for e in data.edge_index.t().tolist() if e[0] != e[1]}
    with open(args.out / "edges.tsv", "w", newline="\n") as f:
        for u, v in sorted(pairs):
            f.write(f"{u}\t{v}\n")

    with open(args.out / "features.csv", "w", newline="\n") as f:
        for row in data.x.tolist():
            f.write(",".join(fmt(v) for v in row) + "\n")

    labels = data.y.tolist()
    with open(args.out / "labels.csv", "w", newline="\n") as f:
        f.writelines(f"{y}\n" for y in labels)

    meta = {
        "num_nodes": data.num_nodes,
        "num_features": data.num_features,
        "num_classes": max(labels) + 1,
        "num_edges": len(pairs),
        "name": args.name.lower(),
    }
    (args.out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"{args.name}: {meta['num_nodes']} nodes, {meta['num_edges']} edges -> {args.out}")


if __name__ == "__main__":
    main()
