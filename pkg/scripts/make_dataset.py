#!/usr/bin/env python3
"""Write a synthetic planted-path dataset directory for the CLI to consume."""

import argparse

from slotgnn.graph import SyntheticSpec, save_dataset, synthetic_generate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="dataset directory to create")
    ap.add_argument("--targets", type=int, default=600)
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--mids", type=int, default=200)
    ap.add_argument("--attrs", type=int, default=40)
    ap.add_argument("--junk", type=int, default=80)
    ap.add_argument("--coherence", type=float, default=0.9)
    ap.add_argument("--no-planted", action="store_true", help="distractor relations only")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = SyntheticSpec(
        num_targets=args.targets,
        num_classes=args.classes,
        num_mid=args.mids,
        num_attr=args.attrs,
        num_junk=args.junk,
        coherence=args.coherence,
        planted=not args.no_planted,
    )
    graph = synthetic_generate(spec, seed=args.seed)
    save_dataset(graph, args.out)
    edge_total = sum(len(e) for e in graph.edges.values())
    print(f"wrote {args.out}: {sum(graph.counts.values())} nodes, {edge_total} edges")


if __name__ == "__main__":
    main()
