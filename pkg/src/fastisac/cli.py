"""Command-line entry point: ``fastisac {train,classify,evaluate,gen}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bqp import generate_qkp, generate_tsp, save_coords, save_instance, tsp_to_bqp
from .pipeline import (
    Baseline,
    PipelineError,
    cmd_classify,
    cmd_evaluate,
    cmd_train,
    generate_corpus,
)


def _baseline(tokens: list[str]) -> Baseline:
    if tokens == ["default"]:
        return Baseline()
    if len(tokens) == 2 and tokens[0] == "registry":
        return Baseline.load(tokens[1])
    raise ValueError("--baseline takes 'default' or 'registry FILE'")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fastisac", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="build a bundle from a corpus of instance files")
    t.add_argument("--corpus", required=True, type=Path)
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--cache", type=Path, default=None, help="reuse ticks-clock solver runs")

    c = sub.add_parser("classify", help="select parameters for one instance")
    c.add_argument("--instance", required=True, type=Path)
    c.add_argument("--bundle", required=True, type=Path)
    c.add_argument("--json", action="store_true")

    e = sub.add_parser("evaluate", help="compare selected parameters against a baseline")
    e.add_argument("--manifest", required=True, type=Path)
    e.add_argument("--bundle", required=True, type=Path)
    e.add_argument("--baseline", nargs="+", default=["default"], metavar="default|registry FILE")
    e.add_argument("--seeds", type=int, default=10)
    e.add_argument("--wall-ms", type=int, default=30000)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--clock", choices=("wall", "ticks"), default="wall")
    e.add_argument("--true-class-by-features", action="store_true")
    e.add_argument("--cache", type=Path, default=None)

    g = sub.add_parser("gen", help="generate instances")
    gsub = g.add_subparsers(dest="kind", required=True)
    q = gsub.add_parser("qkp")
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--density", type=float, required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--id", default=None)
    q.add_argument("--out", type=Path, required=True)
    s = gsub.add_parser("tsp")
    s.add_argument("--cities", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--penalty", type=float, default=None)
    s.add_argument("--id", default=None)
    s.add_argument("--out", type=Path, required=True, help="BQP instance file")
    s.add_argument("--coords-out", type=Path, default=None)
    k = gsub.add_parser("corpus", help="three planted families (dense QKP, sparse QKP, TSP)")
    k.add_argument("--per-family", type=int, required=True)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--start", type=int, default=0)
    k.add_argument("--out", type=Path, required=True)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and not (args.baseline == ["default"]
                                           or (len(args.baseline) == 2 and args.baseline[0] == "registry")):
        parser.error("--baseline takes 'default' or 'registry FILE'")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (PipelineError, ValueError, OSError) as exc:
        print(f"fastisac {args.command}: error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "train":
        res = cmd_train(args.corpus, args.config, args.out, cache_dir=args.cache)
        print(f"bundle {res.bundle_dir}: {res.registry.L} classes, {len(res.instance_ids)} instances")
        return 0
    if args.command == "classify":
        res = cmd_classify(args.instance, args.bundle)
        if args.json:
            print(json.dumps(res.to_dict()))
        else:
            p = res.params
            print(f"{res.instance_id}: class {res.predicted_class} -> num_run={p.num_run} "
                  f"gs_level={p.gs_level} gs_cutoff={p.gs_cutoff} (T_tune {res.t_tune_ms:.1f} ms)")
        return 0
    if args.command == "evaluate":
        baseline = _baseline(args.baseline)
        _, tally = cmd_evaluate(args.manifest, args.bundle, baseline, args.seeds, args.wall_ms, args.out,
                                clock=args.clock, true_class_by_features=args.true_class_by_features,
                                cache_dir=args.cache)
        print(" ".join(f"{k}={v}" for k, v in tally.items()))
        return 0
    if args.command == "gen":
        if args.kind == "qkp":
            save_instance(generate_qkp(args.n, args.density, args.seed, id=args.id), args.out)
        elif args.kind == "tsp":
            coords = generate_tsp(args.cities, args.seed)
            inst = tsp_to_bqp(coords, args.penalty, id=args.id or f"tsp_{args.cities}_{args.seed}")
            save_instance(inst, args.out)
            if args.coords_out is not None:
                save_coords(coords, args.coords_out)
        else:
            paths = generate_corpus(args.out, args.per_family, args.seed, args.start)
            print(f"wrote {len(paths)} instances to {args.out}")
        return 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
