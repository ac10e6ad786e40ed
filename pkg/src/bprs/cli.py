"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_users, stratified_users, synthetic_scaling
from .dataset import DataError, SplitSpec, load_movielens, split, write_split_csv
from .evaluation import loglog_slope, rank_items, run_experiment, write_timings
from .graph import GenreOverlap, Neighborhood
from .inference import InferenceConfig, infer_user

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("bprs")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def git_blob_hash(path: str | os.PathLike) -> str:
    """Content hash computed the same way as ``git hash-object``."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, default=Path("data/ml-100k"), help="directory with u.data and u.item")
    p.add_argument("--rho0", type=float, default=0.5, help="initial rater confidence, in (0, 1)")
    p.add_argument("--epsilon", type=float, default=1e-3, help="convergence threshold on predictions")
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--mode", choices=["two-hop", "all", "all-users"], default="two-hop")
    p.add_argument("--workers", type=int, default=1, help="processes for per-user inference")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bprs", description="Belief-propagation rating prediction on MovieLens 100K")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ev = sub.add_parser("evaluate", help="split, run inference for every test user, score")
    _common(ev)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--train-frac", type=float, default=0.8)
    ev.add_argument("--out", type=Path, default=Path("runs/latest"))
    ev.add_argument("--precision-k", type=int, nargs="+", default=[5, 10])
    ev.add_argument("--threshold", type=float, default=4.0)
    ev.add_argument("--write-split", action="store_true", help="also write train.csv/test.csv snapshots")

    rec = sub.add_parser("recommend", help="top-N unseen items for one user, using all ratings")
    _common(rec)
    rec.add_argument("--user", type=int, required=True, help="original MovieLens user id")
    rec.add_argument("--top-n", type=int, default=10)

    bench = sub.add_parser("bench", help="time single-user inference")
    _common(bench)
    bench.add_argument("--sample", type=int, default=50)
    bench.add_argument("--out", type=Path, default=Path("runs/bench"))
    bench.add_argument("--synthetic", action="store_true",
                       help="time synthetic matrices of growing size instead of ml-100k users")

    # debugging aid: compare BP beliefs against brute-force enumeration
    orc = sub.add_parser("oracle")
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--count", type=int, default=10)
    return parser


def inference_config(args) -> InferenceConfig:
    try:
        return InferenceConfig(args.rho0, args.epsilon, args.max_iters, Neighborhood.parse(args.mode))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_evaluate(args) -> int:
    config = inference_config(args)
    try:
        spec = SplitSpec(args.train_frac, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if any(k < 1 for k in args.precision_k):
        raise UsageError("--precision-k values must be >= 1")

    matrix, catalog = load_movielens(args.data)
    train, test = split(matrix, spec)
    result = run_experiment(train, test, catalog, config, precision_k=args.precision_k,
                            threshold=args.threshold, workers=args.workers)
    report = result.report

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "convergence.csv").write_text(report.curve_csv())
    write_timings(out / "timings.csv", result.timings)
    if args.write_split:
        write_split_csv(train.triples(), train, out / "train.csv")
        write_split_csv(test, train, out / "test.csv")
    manifest = {
        "command": "evaluate",
        "version": __version__,
        "config": {
            "seed": args.seed, "train_frac": args.train_frac, "rho0": args.rho0,
            "epsilon": args.epsilon, "max_iters": args.max_iters, "mode": config.mode.value,
            "precision_k": args.precision_k, "threshold": args.threshold,
        },
        "inputs": {name: git_blob_hash(args.data / name) for name in ("u.data", "u.item")},
        "outputs": {name: git_blob_hash(out / name) for name in ("report.json", "convergence.csv")},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    slope = loglog_slope([t.graph_size for t in result.timings], [t.ms for t in result.timings])
    print(f"mode={report.mode} users={report.num_users} test={report.num_test}")
    print(f"RMSE={report.rmse:.4f} (iteration 1: {report.rmse_curve[0]:.4f}) MovieAvg={report.movie_avg_rmse:.4f}")
    print(f"precision@K={report.precision_at_k} coverage={report.coverage:.4f}")
    print(f"iterations mean={report.mean_iterations:.2f} median={report.median_iterations:.1f}")
    print(f"time vs. graph size log-log slope={slope:.3f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_recommend(args) -> int:
    config = inference_config(args)
    if args.top_n < 0:
        raise UsageError("--top-n must be >= 0")
    matrix, catalog = load_movielens(args.data)
    hits = np.flatnonzero(matrix.user_ids == args.user)
    if hits.size == 0:
        raise UsageError(f"unknown user id {args.user}")
    z = int(hits[0])
    result = infer_user(matrix, GenreOverlap.for_matrix(matrix, catalog), z, config)
    state, graph = result.state, result.graph

    unseen = np.flatnonzero(graph.clamp == 0)
    ranked = rank_items(unseen, state.predictions[unseen])[: args.top_n]
    titles = dict(zip(catalog.item_ids.tolist(), catalog.titles))
    print(f"user {args.user}: {graph.num_factors} raters, {state.iteration} iterations, "
          f"converged={state.converged}")
    for rank, a in enumerate(ranked, start=1):
        item_id = int(matrix.item_ids[a])
        print(f"{rank}\t{item_id}\t{state.predictions[a]:.4f}\t{titles.get(item_id, '')}")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = inference_config(args)
    if args.sample < 1:
        raise UsageError("--sample must be >= 1")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        points, slope = synthetic_scaling()
        with open(out / "scaling.csv", "w") as fh:
            fh.write("num_users,edges,ms\n")
            for p in points:
                fh.write(f"{p.num_users},{p.edges},{p.ms:.3f}\n")
        print(f"synthetic log-log slope (time vs. edges) = {slope:.3f}")
        return EXIT_OK

    matrix, catalog = load_movielens(args.data)
    users = stratified_users(matrix, args.sample)
    rows = [replace(row, user=int(matrix.user_ids[row.user]))
            for row in bench_users(matrix, catalog, users, config)]
    write_timings(out / "timings.csv", rows)
    slope = loglog_slope([r.graph_size for r in rows], [r.ms for r in rows])
    print(f"{len(rows)} users timed; log-log slope (time vs. graph size) = {slope:.3f}")
    print(f"wrote {out / 'timings.csv'}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .inference import posterior_beliefs
    from .oracle import exact_marginal, random_tiny_instance

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.count):
        inst = random_tiny_instance(rng)
        beliefs = posterior_beliefs(inst.graph, inst.weights, inst.weights.mean(axis=0), inst.confidences)
        for a in inst.rated_unclamped_items():
            worst = max(worst, float(np.abs(beliefs[a] - exact_marginal(inst, a)).max()))
    print(f"{args.count} instances, max |BP - exact| = {worst:.3e}")
    return EXIT_OK


COMMANDS = {"evaluate": cmd_evaluate, "recommend": cmd_recommend, "bench": cmd_bench, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bprs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"bprs: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
