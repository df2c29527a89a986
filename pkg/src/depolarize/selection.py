"""Choosing K nodes to anchor at zero: exhaustive greedy, GCN-guided greedy
and a uniform random baseline.

Every algorithm records the polarization index before any anchoring and
after each step, together with per-step wall-clock time. Ties are broken by
the lowest node id.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics
from .dynamics import DEFAULT_SOLVER, ConvergenceError, ModerationState, SolverConfig, anchor
from .gcn import GcnModel, ModelError, aggregation_matrix, forward
from .graph import Network

GREEDY = "greedy"
GNN = "gnn_greedy"
RANDOM = "random"
ALGORITHMS = (GREEDY, GNN, RANDOM)


@dataclass
class SelectionTrace:
    algorithm: str
    chosen: list = field(default_factory=list)
    pi_trace: list = field(default_factory=list)
    elapsed: list = field(default_factory=list)
    initial_elapsed: float = 0.0
    stats: dict = field(default_factory=dict)

    @property
    def initial_pi(self) -> float:
        return self.pi_trace[0]

    @property
    def final_pi(self) -> float:
        return self.pi_trace[-1]

    @property
    def decrease(self) -> float:
        return self.pi_trace[0] - self.pi_trace[-1]

    @property
    def total_time(self) -> float:
        return self.initial_elapsed + sum(self.elapsed)


def default_k(n: int) -> int:
    """Ten percent of the graph, rounded up."""
    return max(1, math.ceil(n / 10))


def _check_k(net, k):
    if not 1 <= k <= net.n:
        raise ValueError(f"K must lie in 1..{net.n}, got {k}")


def _initial(net, config):
    t0 = time.perf_counter()
    rep = dynamics.solve(net, None, config, warm_start=net.z)
    return rep, time.perf_counter() - t0


def _advance(net, mod, v, z, config, step):
    """Anchor ``v`` and recompute the equilibrium from the previous one."""
    mod = anchor(mod, v)
    warm = z.copy()
    warm[v] = 0.0
    try:
        rep = dynamics.solve(net, mod, config, warm_start=warm)
    except ConvergenceError as exc:
        exc.step, exc.node = step, v
        raise
    return mod, rep


def greedy_ext(net: Network, k: int, config: SolverConfig = DEFAULT_SOLVER) -> SelectionTrace:
    """At each step evaluate the gain of every free node and anchor the best."""
    _check_k(net, k)
    rep, t_init = _initial(net, config)
    z = rep.z_ss
    mod = ModerationState.empty(net)
    trace = SelectionTrace(GREEDY, pi_trace=[dynamics.polarization_index(z)], initial_elapsed=t_init,
                           stats={"equilibrium_sweeps": rep.iterations})
    free = np.ones(net.n, dtype=bool)
    for step in range(1, k + 1):
        t0 = time.perf_counter()
        candidates = np.flatnonzero(free)
        try:
            after = dynamics.pinned_polarization(net, mod, candidates, z, config)
        except ConvergenceError as exc:
            exc.step = step
            raise ConvergenceError(f"step {step}: {exc}", residual=exc.residual,
                                   iterations=exc.iterations, node=exc.node, step=step) from exc
        gains = trace.pi_trace[-1] - after
        v = int(candidates[int(np.argmax(gains))])
        mod, rep = _advance(net, mod, v, z, config, step)
        z = rep.z_ss
        free[v] = False
        trace.elapsed.append(time.perf_counter() - t0)
        trace.chosen.append(v)
        trace.pi_trace.append(dynamics.polarization_index(z))
        trace.stats["equilibrium_sweeps"] += rep.iterations
    trace.stats["candidate_solves"] = int(sum(net.n - i for i in range(k)))
    return trace


def gnn_greedy_ext(net: Network, k: int, model: GcnModel,
                   config: SolverConfig = DEFAULT_SOLVER) -> SelectionTrace:
    """Greedy loop where the per-step argmax comes from GCN scores.

    The GCN is re-run every step on the current features, so anchored nodes
    enter as (0, 0) and everyone else sees the updated equilibrium.
    """
    _check_k(net, k)
    if model.dims[0] != 2:
        raise ModelError(f"model expects {model.dims[0]} node features; networks provide 2")
    rep, t_init = _initial(net, config)
    z = rep.z_ss
    t0 = time.perf_counter()
    P = aggregation_matrix(net, model.aggregation == "weighted_mean")
    t_init += time.perf_counter() - t0
    mod = ModerationState.empty(net)
    trace = SelectionTrace(GNN, pi_trace=[dynamics.polarization_index(z)], initial_elapsed=t_init,
                           stats={"equilibrium_sweeps": rep.iterations})
    free = np.ones(net.n, dtype=bool)
    for step in range(1, k + 1):
        t0 = time.perf_counter()
        _, scores = forward(model, net, mod, z=z, P=P)
        scores = np.where(free, scores, -np.inf)
        v = int(np.argmax(scores))
        mod, rep = _advance(net, mod, v, z, config, step)
        z = rep.z_ss
        free[v] = False
        trace.elapsed.append(time.perf_counter() - t0)
        trace.chosen.append(v)
        trace.pi_trace.append(dynamics.polarization_index(z))
        trace.stats["equilibrium_sweeps"] += rep.iterations
    return trace


def evaluate_selection(net: Network, chosen, config: SolverConfig = DEFAULT_SOLVER,
                       algorithm: str = "external") -> SelectionTrace:
    """Polarization after anchoring ``chosen`` one node at a time, in order."""
    chosen = [int(v) for v in chosen]
    if len(set(chosen)) != len(chosen):
        raise ValueError("chosen nodes must be distinct")
    for v in chosen:
        if not 0 <= v < net.n:
            raise IndexError(f"node {v} outside 0..{net.n - 1}")
    rep, t_init = _initial(net, config)
    z = rep.z_ss
    mod = ModerationState.empty(net)
    trace = SelectionTrace(algorithm, pi_trace=[dynamics.polarization_index(z)], initial_elapsed=t_init,
                           stats={"equilibrium_sweeps": rep.iterations})
    for step, v in enumerate(chosen, start=1):
        t0 = time.perf_counter()
        mod, rep = _advance(net, mod, v, z, config, step)
        z = rep.z_ss
        trace.elapsed.append(time.perf_counter() - t0)
        trace.chosen.append(v)
        trace.pi_trace.append(dynamics.polarization_index(z))
        trace.stats["equilibrium_sweeps"] += rep.iterations
    return trace


def random_select(net: Network, k: int, seed: int = 0, config: SolverConfig = DEFAULT_SOLVER) -> SelectionTrace:
    """K distinct nodes drawn uniformly, anchored in draw order."""
    _check_k(net, k)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(net.n, size=k, replace=False)
    trace = evaluate_selection(net, chosen, config, algorithm=RANDOM)
    trace.stats["seed"] = seed
    return trace


def final_pi(net: Network, anchors, config: SolverConfig = DEFAULT_SOLVER) -> float:
    """Polarization index at the equilibrium with ``anchors`` pinned (order-free)."""
    mod = ModerationState(net.n, frozenset(int(a) for a in anchors))
    rep = dynamics.solve(net, mod, config, warm_start=mod.effective_s(net))
    return dynamics.polarization_index(rep.z_ss)


# ---------------------------------------------------------------------------
# trace files


def write_trace(trace: SelectionTrace, path, config: dict | None = None) -> None:
    """CSV ``step,node,polarization,elapsed_ms``; row 0 is the initial state.

    The resolved run configuration goes to a ``.json`` sidecar next to it.
    """
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "node", "polarization", "elapsed_ms"])
        w.writerow([0, "", repr(float(trace.pi_trace[0])), repr(trace.initial_elapsed * 1e3)])
        for step, (v, pi, dt) in enumerate(zip(trace.chosen, trace.pi_trace[1:], trace.elapsed), start=1):
            w.writerow([step, v, repr(float(pi)), repr(dt * 1e3)])
    if config is not None:
        sidecar = {"algorithm": trace.algorithm, "stats": trace.stats, **config}
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(sidecar, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")


def read_trace(path) -> SelectionTrace:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or rows[0]["node"] != "":
        raise ValueError(f"{path}: first row must be the initial state")
    trace = SelectionTrace("external", pi_trace=[float(rows[0]["polarization"])],
                           initial_elapsed=float(rows[0]["elapsed_ms"]) / 1e3)
    for r in rows[1:]:
        trace.chosen.append(int(r["node"]))
        trace.pi_trace.append(float(r["polarization"]))
        trace.elapsed.append(float(r["elapsed_ms"]) / 1e3)
    return trace
