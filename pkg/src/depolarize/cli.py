"""Command-line entry point: ``depolarize <command> [options]``.

Exit status is 0 on success, 1 on runtime failures (solver divergence,
unreadable data) and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path


from . import dynamics, gcn, selection, synth
from .dynamics import SolverConfig
from .graph import GraphFormatError, load_edge_list, load_opinions, load_polbooks_gml

log = logging.getLogger("depolarize")

ALGO_NAMES = {"greedy": selection.GREEDY, "gnn": selection.GNN, "random": selection.RANDOM}


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--tol", type=float, default=1e-10, help="fixed-point tolerance on the sup-norm update")
    g.add_argument("--max-iter", type=int, default=100_000, help="sweep limit per equilibrium solve")
    g.add_argument("--solver", choices=["fixed-point", "direct"], default="fixed-point")
    g.add_argument("--threads", type=int, default=None, help="worker threads for candidate evaluation")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None, help="output file or directory")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _graph_inputs(p):
    g = p.add_argument_group("input graph (one of)")
    g.add_argument("--graph", help="labelled-graph directory (edges.txt + opinions.csv)")
    g.add_argument("--edges", help="edge list 'u v [w]'")
    g.add_argument("--opinions", help="CSV node,s[,z] used with --edges")
    g.add_argument("--gml", help="political-books style GML with c/n/l labels")
    g.add_argument("--default-weight", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="depolarize", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="build a labelled DCSBM training corpus")
    d = synth.DcsbmParams()
    p.add_argument("--count", type=int, default=128)
    p.add_argument("--n", type=int, default=d.n)
    p.add_argument("--mu", type=float, default=d.mu)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--d-min", type=float, default=d.d_min)
    p.add_argument("--d-max", type=float, default=None)
    p.add_argument("--mean-degree", type=float, default=d.mean_degree)
    p.add_argument("--block-split", type=float, default=d.block_split)

    p = sub.add_parser("label", parents=[common], help="compute per-node gains for one network")
    _graph_inputs(p)

    p = sub.add_parser("train", parents=[common], help="train the gain-regression GCN")
    p.add_argument("--corpus", required=True, help="corpus directory with manifest.json")
    t = gcn.TrainConfig()
    p.add_argument("--epochs", type=int, default=t.epochs)
    p.add_argument("--lr", type=float, default=t.lr)
    p.add_argument("--batch-size", type=int, default=t.batch_size)
    p.add_argument("--patience", type=int, default=t.patience)
    p.add_argument("--val-frac", type=float, default=t.val_frac)
    p.add_argument("--weighted", action="store_true", help="weight neighbour averages by edge weight")
    p.add_argument("--augment", type=int, default=0,
                   help="extra partially moderated samples per training graph")

    p = sub.add_parser("solve", parents=[common], help="pick K nodes to moderate")
    _graph_inputs(p)
    p.add_argument("--algorithm", choices=sorted(ALGO_NAMES), default="greedy")
    p.add_argument("--k", type=int, default=None, help="number of nodes (default: ceil(n/10))")
    p.add_argument("--model", help="trained model file (required for --algorithm gnn)")
    p.add_argument("--no-timing", action="store_true", help="write elapsed_ms as 0 for reproducible files")

    p = sub.add_parser("sweep", parents=[common], help="final polarization versus K")
    _graph_inputs(p)
    p.add_argument("--algorithms", default="greedy,gnn,random")
    p.add_argument("--k-max", type=int, default=None, help="sweep K = 0..k-max (default ceil(n/10))")
    p.add_argument("--repeats", type=int, default=10, help="random-baseline seeds per K")
    p.add_argument("--model")

    p = sub.add_parser("bench", parents=[common], help="wall-clock comparison on DCSBM graphs")
    p.add_argument("--n-values", default="500,1000,2000,5000")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--algorithms", default="greedy,gnn")
    p.add_argument("--model")

    p = sub.add_parser("validate", parents=[common], help="check corpus, model, graph or trace files")
    p.add_argument("--corpus")
    p.add_argument("--model")
    p.add_argument("--graph")
    p.add_argument("--trace")
    return parser


def _solver(args) -> SolverConfig:
    method = dynamics.DIRECT if args.solver == "direct" else dynamics.FIXED_POINT
    try:
        return SolverConfig(args.tol, args.max_iter, method, args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _existing(path, what):
    if path is None or not Path(path).exists():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _load_network(args, config):
    sources = [x for x in (args.graph, args.edges, args.gml) if x]
    if len(sources) != 1:
        raise UsageError("give exactly one of --graph, --edges, --gml")
    if args.graph:
        d = _existing(args.graph, "graph directory")
        net = load_opinions(load_edge_list(d / "edges.txt"), d / "opinions.csv")
    elif args.gml:
        net = load_polbooks_gml(_existing(args.gml, "GML file"))
    else:
        net = load_edge_list(_existing(args.edges, "edge list"), args.default_weight)
        if args.opinions:
            net = load_opinions(net, _existing(args.opinions, "opinions file"))
    return dynamics.equilibrium(net, config)


def _load_model(args, required):
    if args.model is None:
        if required:
            raise UsageError("--model is required for the gnn algorithm")
        return None
    return gcn.load_model(_existing(args.model, "model file"))


def _algorithms(text):
    names = [a.strip() for a in text.split(",") if a.strip()]
    bad = [a for a in names if a not in ALGO_NAMES]
    if bad or not names:
        raise UsageError(f"unknown algorithm(s) {bad}; choose from {sorted(ALGO_NAMES)}")
    return names


def _write_sidecar(path, payload):
    path = Path(path)
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(payload, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _out_path(args, default):
    return Path(args.out) if args.out else Path(default)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args, config):
    try:
        params = synth.DcsbmParams(n=args.n, block_split=args.block_split, gamma=args.gamma,
                                   d_min=args.d_min, d_max=args.d_max, mu=args.mu,
                                   mean_degree=args.mean_degree, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.count < 1:
        raise UsageError("--count must be positive")
    out = _out_path(args, "corpus")

    def progress(i, count):
        log.info("labelled graph %d/%d", i + 1, count)

    manifest = synth.build_corpus(out, args.count, params, config, args.threads, progress)
    print(f"wrote {manifest.count} labelled graphs to {out}")


def cmd_label(args, config):
    net = _load_network(args, config)
    labeled = synth.label_gains(net, config, args.threads)
    out = _out_path(args, "labeled")
    synth.write_labeled(labeled, out, {"solver": config.as_dict(), "source": args.graph or args.edges or args.gml})
    print(f"labelled {net.n} nodes into {out}")


def cmd_train(args, config):
    corpus = _existing(args.corpus, "corpus directory")
    problems = synth.validate_corpus(corpus)
    if problems:
        raise RuntimeError("corpus is incomplete: " + "; ".join(problems[:5]))
    data = synth.load_corpus(corpus)
    tc = gcn.TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
                         patience=args.patience, val_frac=args.val_frac, seed=args.seed,
                         aggregation="weighted_mean" if args.weighted else "mean",
                         augment=args.augment)
    if not 0 <= tc.val_frac < 1 or tc.epochs < 1 or tc.lr <= 0 or tc.batch_size < 1 or tc.augment < 0:
        raise UsageError("invalid training configuration")
    model, history = gcn.train(data, tc)
    model.training_meta["corpus"] = str(corpus)
    out = _out_path(args, "model.json")
    gcn.save_model(model, out)
    log_path = out.with_suffix(".log.csv")
    with open(log_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_loss"]), "" if h["val_loss"] is None else repr(h["val_loss"])])
    _write_sidecar(log_path, {"train": tc.as_dict(), "corpus": str(corpus)})
    print(f"saved model to {out} (best epoch {model.training_meta['best_epoch']}, loss {model.training_meta['best_loss']:.6g})")


def run_algorithm(name, net, k, config, model=None, seed=0):
    if name == "greedy":
        return selection.greedy_ext(net, k, config)
    if name == "gnn":
        return selection.gnn_greedy_ext(net, k, model, config)
    return selection.random_select(net, k, seed, config)


def cmd_solve(args, config):
    model = _load_model(args, required=args.algorithm == "gnn")
    net = _load_network(args, config)
    k = selection.default_k(net.n) if args.k is None else args.k
    if not 1 <= k <= net.n:
        raise UsageError(f"--k must lie in 1..{net.n}")
    trace = run_algorithm(args.algorithm, net, k, config, model, args.seed)
    if args.no_timing:
        trace.elapsed = [0.0] * len(trace.elapsed)
        trace.initial_elapsed = 0.0
    out = _out_path(args, "trace.csv")
    selection.write_trace(trace, out, {
        "solver": config.as_dict(), "k": k, "seed": args.seed, "model": args.model,
        "input": args.graph or args.edges or args.gml,
    })
    print(f"{trace.algorithm}: pi {trace.initial_pi:.6f} -> {trace.final_pi:.6f} with K={k}; trace in {out}")


def sweep_rows(net, algorithms, k_max, config, model=None, seed=0, repeats=10):
    """Long-form rows (algorithm, k, final_pi, seed) for K = 0..k_max."""
    rows = []
    for name in algorithms:
        if name == "random":
            seeds = [seed + r for r in range(repeats)]
            for r in seeds:
                rows.append((name, 0, None, r))
                for k in range(1, k_max + 1):
                    rows.append((name, k, selection.random_select(net, k, r, config).final_pi, r))
        else:
            # greedy choices for K are a prefix of those for K + 1
            trace = run_algorithm(name, net, k_max, config, model, seed)
            for k, pi in enumerate(trace.pi_trace):
                rows.append((name, k, None if k == 0 else pi, seed))
    initial = dynamics.polarization_index(net.z)
    return [(a, k, initial if pi is None else pi, s) for a, k, pi, s in rows]


def cmd_sweep(args, config):
    algorithms = _algorithms(args.algorithms)
    model = _load_model(args, required="gnn" in algorithms)
    net = _load_network(args, config)
    k_max = selection.default_k(net.n) if args.k_max is None else args.k_max
    if not 1 <= k_max <= net.n:
        raise UsageError(f"--k-max must lie in 1..{net.n}")
    rows = sweep_rows(net, algorithms, k_max, config, model, args.seed, args.repeats)
    out = _out_path(args, "sweep.csv")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "k", "final_pi", "seed"])
        for a, k, pi, s in rows:
            w.writerow([ALGO_NAMES[a], k, repr(float(pi)), s])
    _write_sidecar(out, {"solver": config.as_dict(), "k_max": k_max, "seed": args.seed,
                         "repeats": args.repeats, "model": args.model,
                         "input": args.graph or args.edges or args.gml})
    print(f"wrote {len(rows)} rows to {out}")


def bench_rows(n_values, k, algorithms, config, model=None, seed=0):
    rows = []
    # untimed warm-up so kernel compilation or cache loading is not billed to the first n
    tiny = synth.assign_opinions(*synth.generate_dcsbm(synth.DcsbmParams(n=60, seed=seed)), config)
    for name in algorithms:
        run_algorithm(name, tiny, 2, config, model, seed)
    for n in n_values:
        params = synth.DcsbmParams(n=n, seed=seed)
        net, membership = synth.generate_dcsbm(params)
        net = synth.assign_opinions(net, membership, config)
        kk = min(k, net.n)
        for name in algorithms:
            trace = run_algorithm(name, net, kk, config, model, seed)
            rows.append((ALGO_NAMES[name], net.n, kk, trace.total_time * 1e3))
            log.info("bench %s n=%d k=%d: %.1f ms", name, net.n, kk, trace.total_time * 1e3)
    return rows


def cmd_bench(args, config):
    algorithms = _algorithms(args.algorithms)
    model = _load_model(args, required="gnn" in algorithms)
    try:
        n_values = [int(x) for x in args.n_values.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --n-values: {exc}") from exc
    if not n_values or min(n_values) < 2 or args.k < 1:
        raise UsageError("need n >= 2 and k >= 1")
    rows = bench_rows(n_values, args.k, algorithms, config, model, args.seed)
    out = _out_path(args, "bench.csv")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "n", "k", "wall_ms"])
        for a, n, k, ms in rows:
            w.writerow([a, n, k, f"{ms:.3f}"])
    _write_sidecar(out, {"solver": config.as_dict(), "n_values": n_values, "k": args.k,
                         "seed": args.seed, "model": args.model})
    print(f"wrote {len(rows)} rows to {out}")


def cmd_validate(args, config):
    if not any((args.corpus, args.model, args.graph, args.trace)):
        raise UsageError("nothing to validate; pass --corpus, --model, --graph or --trace")
    problems = []
    if args.corpus:
        problems += synth.validate_corpus(_existing(args.corpus, "corpus directory"))
    if args.model:
        try:
            gcn.load_model(_existing(args.model, "model file"))
        except gcn.ModelFormatError as exc:
            problems.append(str(exc))
    if args.graph:
        try:
            synth.read_labeled(_existing(args.graph, "graph directory"))
        except (GraphFormatError, ValueError, IndexError) as exc:
            problems.append(str(exc))
    if args.trace:
        try:
            selection.read_trace(_existing(args.trace, "trace file"))
        except (ValueError, KeyError) as exc:
            problems.append(f"{args.trace}: {exc}")
    for p in problems:
        print(p)
    if problems:
        return 1
    print("ok")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "label": cmd_label,
    "train": cmd_train,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _solver(args)
        status = COMMANDS[args.command](args, config)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"depolarize {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (dynamics.ConvergenceError, gcn.DivergenceError, GraphFormatError, gcn.ModelError,
            RuntimeError, ValueError, IndexError, OSError) as exc:
        print(f"depolarize {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
