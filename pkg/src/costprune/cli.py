"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 data or schema problem, 4 solver or
integrality failure, 5 oracle mismatch. Set ``COSTPRUNE_LOG`` to a logging
level name (DEBUG, INFO, ...) for more output on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from math import prod
from pathlib import Path

import numpy as np

from . import __version__
from .data import TrainParams, load_costs, load_dataset, load_ensemble, save_ensemble, train_ensemble
from .errors import CostPruneError, DataError, OracleMismatch
from .forest import Ensemble, compute_routing_profile, with_stats
from .oracle import MAX_COMBINATIONS, MAX_NODES, brute_force_optimum, count_prunings
from .problem import build_ip3, format_matrix, size_report, to_network_form
from .prune import (
    CURVE_COLUMNS,
    EnsemblePruner,
    _fmt,
    evaluate,
    make_pruned,
    point_of,
    prune_with_budget,
    sweep,
)
from .simplex import Tolerances, format_lp

log = logging.getLogger("costprune")


def _setup_logging() -> None:
    level = os.environ.get("COSTPRUNE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _nonneg(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v >= 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be finite and >= 0, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _data_args(p: argparse.ArgumentParser, names=("train",), required=True) -> None:
    for name in names:
        p.add_argument(f"--{name}", required=required and name == "train", metavar="CSV", help=f"{name} set CSV")
    p.add_argument("--label-col", type=int, default=-1, help="label column index (default: -1, the last)")
    p.add_argument("--header", action="store_true", help="CSV files start with a header row")


def _solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", choices=("direct", "dw"), default="direct", help="LP method (default: direct)")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker threads for column generation (default: all cores)")
    p.add_argument("--feas-tol", type=float, default=1e-8, help="primal feasibility tolerance (default: 1e-8)")
    p.add_argument("--opt-tol", type=float, default=1e-8, help="reduced-cost tolerance (default: 1e-8)")
    p.add_argument("--costs", metavar="TXT", help="feature costs, one per line (default: those stored in the ensemble)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="costprune", description="Prune tree ensembles for test-time feature cost.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=0, help="random seed for every randomised step (default: 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="grow a random-subsample Gini ensemble")
    _data_args(p)
    p.add_argument("--costs", metavar="TXT", help="feature costs, one per line (default: unit costs)")
    p.add_argument("--num-trees", type=_positive_int, default=10, help="number of trees (default: 10)")
    p.add_argument("--max-depth", type=int, default=4, help="maximum depth (default: 4)")
    p.add_argument("--min-leaf", type=_positive_int, default=1, help="minimum examples per leaf (default: 1)")
    p.add_argument("--subsample", type=float, default=0.8, help="fraction of rows per tree (default: 0.8)")
    p.add_argument("--max-features", type=_positive_int, default=None, help="features tried per split (default: all)")
    p.add_argument("--output", "-o", required=True, metavar="JSON", help="ensemble file to write")

    p = sub.add_parser("prune", help="prune at one lambda or budget")
    p.add_argument("--ensemble", required=True, metavar="JSON")
    _data_args(p, ("train", "test"))
    _solver_args(p)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--lambda", dest="lam", type=_nonneg, help="cost trade-off weight")
    mode.add_argument("--budget", type=_nonneg, help="maximum expected train feature cost")
    p.add_argument("--output", "-o", metavar="JSON", help="write the pruned ensemble here")
    p.add_argument("--metrics", metavar="CSV", help="write the metrics row here (default: stdout)")
    p.add_argument("--trace", metavar="CSV", help="column-generation trace (dw solver only)")
    p.add_argument("--check-oracle", action="store_true", help="compare against exhaustive search when small enough")
    p.add_argument("--check-direct", action="store_true", help="with --solver dw, also solve directly and compare")

    p = sub.add_parser("sweep", help="trade-off curve over a lambda or budget grid")
    p.add_argument("--ensemble", required=True, metavar="JSON")
    _data_args(p, ("train", "test"))
    _solver_args(p)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--lambdas", type=_float_list, help="comma-separated increasing lambdas")
    mode.add_argument("--budgets", type=_float_list, help="comma-separated decreasing budgets")
    p.add_argument("--output", "-o", metavar="CSV", help="curve file (default: stdout)")
    p.add_argument("--save-pruned", metavar="DIR", help="also write each point's pruned ensemble into DIR")

    p = sub.add_parser("evaluate", help="average feature cost and error of an ensemble")
    p.add_argument("--ensemble", required=True, metavar="JSON")
    p.add_argument("--data", required=True, metavar="CSV")
    p.add_argument("--label-col", type=int, default=-1, help="label column index (default: -1)")
    p.add_argument("--header", action="store_true", help="CSV starts with a header row")
    p.add_argument("--costs", metavar="TXT", help="feature costs (default: those stored in the ensemble)")
    p.add_argument("--hard-vote", action="store_true", help="majority vote of leaf labels instead of averaged distributions")
    p.add_argument("--output", "-o", metavar="CSV", help="metrics file (default: stdout)")

    p = sub.add_parser("inspect", help="problem size report and constraint matrices")
    p.add_argument("--ensemble", required=True, metavar="JSON")
    p.add_argument("--data", required=True, metavar="CSV")
    p.add_argument("--label-col", type=int, default=-1, help="label column index (default: -1)")
    p.add_argument("--header", action="store_true", help="CSV starts with a header row")
    p.add_argument("--dump-matrices", action="store_true", help="print each tree's constraint block before and after telescoping")
    p.add_argument("--dump-lp", metavar="FILE", help="write the LP in text form (lambda from --lambda)")
    p.add_argument("--lambda", dest="lam", type=_nonneg, default=0.0, help="lambda for --dump-lp (default: 0)")
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _check_paths(args, names) -> None:
    for name in names:
        v = getattr(args, name, None)
        if v is not None and not Path(v).is_file():
            raise DataError(f"--{name.replace('_', '-')}: no such file {v}")


def _load(path, args):
    return load_dataset(path, label_col=args.label_col, header=args.header)


def _ensemble_with_costs(args) -> Ensemble:
    ens = load_ensemble(args.ensemble)
    if getattr(args, "costs", None):
        ens = Ensemble(ens.trees, load_costs(args.costs, ens.n_features), ens.n_classes)
    return ens


def _tol(args) -> Tolerances:
    return Tolerances(feas_tol=args.feas_tol, opt_tol=args.opt_tol)


def _write(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _metrics_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for p in points:
        w.writerow([_fmt(v) for v in (p.lam, p.train_cost, p.train_error_term, p.objective, p.test_cost, p.test_error)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    _check_paths(args, ("train", "costs"))
    data = _load(args.train, args)
    if args.costs is None:
        print("warning: no costs file given; assuming unit feature costs", file=sys.stderr)
    costs = load_costs(args.costs, data.n_features)
    params = TrainParams(args.max_depth, args.min_leaf, args.subsample, args.seed, args.max_features)
    ens = with_stats(train_ensemble(data, args.num_trees, params, costs), data)
    save_ensemble(ens, args.output)
    for t, tree in enumerate(ens.trees):
        leaves = tree.leaves
        err = sum(int(tree.nodes[h].err) for h in leaves) / data.n_examples
        print(f"tree {t}: nodes={len(tree)} leaves={len(leaves)} train_error={err!r}")
    return 0


def _oracle_check(pruner: EnsemblePruner, pruned, lam: float) -> None:
    ens = pruner.ens
    if any(len(t) > MAX_NODES for t in ens.trees) or prod(count_prunings(t) for t in ens.trees) > MAX_COMBINATIONS:
        print("warning: instance too large for --check-oracle; skipped", file=sys.stderr)
        return
    best, _ = brute_force_optimum(ens, pruner.train, lam)
    if abs(best - pruned.objective) > 1e-7:
        raise OracleMismatch(f"LP objective {pruned.objective!r} differs from exhaustive optimum {best!r} at lambda={lam!r}")
    print(f"oracle: objective matches exhaustive search ({best!r})", file=sys.stderr)


def cmd_prune(args) -> int:
    _check_paths(args, ("ensemble", "train", "test", "costs"))
    ens = _ensemble_with_costs(args)
    train = _load(args.train, args)
    test = _load(args.test, args) if args.test else None
    pruner = EnsemblePruner(ens, train, args.solver, threads=args.threads, tol=_tol(args), check_direct=args.check_direct,
                           trace_path=args.trace)
    if args.lam is not None:
        pruned, _ = pruner.solve(args.lam)
        point = point_of(pruned, test)
    else:
        res = prune_with_budget(ens, train, args.budget, pruner=pruner)
        pruned, point = res.pruned, point_of(res.pruned, test, budget=args.budget)
        print(f"budget {args.budget!r}: lambda={pruned.lam!r} train_cost={pruned.cost_term!r}", file=sys.stderr)
        if res.bracket is not None:
            (lo, lo_cost), (hi, hi_cost) = res.bracket
            print(
                f"bracket: lambda={lo!r} cost={lo_cost!r} (over budget) | lambda={hi!r} cost={hi_cost!r}; "
                f"lagrangian bound={res.lower_bound!r} gap={res.gap!r}",
                file=sys.stderr,
            )
    if args.check_oracle:
        _oracle_check(pruner, pruned, pruned.lam)
    if args.output:
        out, id_maps = pruned.to_ensemble()
        save_ensemble(out, args.output, source_ids=id_maps)
    _write(_metrics_csv([point]), args.metrics)
    return 0


def cmd_sweep(args) -> int:
    _check_paths(args, ("ensemble", "train", "test", "costs"))
    ens = _ensemble_with_costs(args)
    train = _load(args.train, args)
    test = _load(args.test, args) if args.test else None
    curve = sweep(
        ens, train, test,
        lambdas=args.lambdas, budgets=args.budgets,
        solver=args.solver, keep_pruned=bool(args.save_pruned),
        threads=args.threads, tol=_tol(args),
    )
    if args.save_pruned:
        out_dir = Path(args.save_pruned)
        out_dir.mkdir(parents=True, exist_ok=True)
        for j, pruned in enumerate(curve.pruned):
            pe, id_maps = pruned.to_ensemble()
            save_ensemble(pe, out_dir / f"point_{j:03d}.json", source_ids=id_maps)
    _write(curve.to_csv(), args.output)
    return 0


def cmd_evaluate(args) -> int:
    _check_paths(args, ("ensemble", "data", "costs"))
    ens = _ensemble_with_costs(args)
    data = _load(args.data, args)
    # the stored class counts define each leaf's distribution
    pruned = make_pruned(ens, data, [tree.leaves for tree in ens.trees], 0.0)
    ev = evaluate(pruned, data, hard_vote=args.hard_vote)
    _write(f"avg_cost,error\n{ev.avg_cost!r},{ev.error!r}\n", args.output)
    return 0


def cmd_inspect(args) -> int:
    _check_paths(args, ("ensemble", "data"))
    ens = load_ensemble(args.ensemble)
    data = _load(args.data, args)
    ens = with_stats(ens, data)
    prof = compute_routing_profile(ens, data)
    rep = size_report(ens, prof)
    print("\n".join(rep.lines()))
    if args.dump_matrices or args.dump_lp:
        problem = build_ip3(ens, prof, args.lam)
        if args.dump_matrices:
            for nf in to_network_form(problem):
                print(f"\ntree {nf.t}: constraint block")
                print(format_matrix(nf.original, [f"r{j + 1}" for j in range(nf.original.shape[0])], nf.col_labels))
                print(f"tree {nf.t}: telescoped (network check: {'pass' if nf.is_network() else 'FAIL'})")
                print(format_matrix(nf.transformed, nf.row_labels, nf.col_labels))
        if args.dump_lp:
            Path(args.dump_lp).write_text(format_lp(problem.to_standard_lp(), problem.variable_names()))
    return 0


COMMANDS = {
    "train": cmd_train,
    "prune": cmd_prune,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CostPruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
