"""Two-community degree-corrected SBM graphs and gain-labelled training data.

Graphs follow the Karrer-Newman Poisson recipe: the number of edges between
``i`` and ``j`` is Poisson with mean ``theta_i * theta_j * omega[g_i, g_j]``,
where ``theta`` sums to one inside each block and ``omega`` holds expected
edge counts between blocks. Multi-edges are collapsed, self-loops dropped and
the largest connected component kept.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import dynamics
from .dynamics import DEFAULT_SOLVER, ModerationState, SolverConfig
from .graph import (
    GraphFormatError,
    Network,
    largest_connected_component,
    load_edge_list,
    load_opinions,
    write_edge_list,
    write_opinions,
)

log = logging.getLogger(__name__)

LABELED_FORMAT_VERSION = 1


class DegenerateParameterError(ValueError):
    pass


@dataclass(frozen=True)
class DcsbmParams:
    """Generator settings.

    ``d_min``/``d_max`` bound the power-law degree propensities (``d_max``
    defaults to ``sqrt(n)``); ``mean_degree`` sets the overall edge budget
    and ``mu`` the expected fraction of edge ends that cross communities.
    """

    n: int = 1000
    block_split: float = 0.5
    gamma: float = 2.5
    d_min: float = 2.0
    d_max: float | None = None
    mu: float = 0.24
    mean_degree: float = 7.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not self.gamma > 2:
            raise ValueError("gamma must exceed 2")
        if not 0 < self.mu < 1:
            raise ValueError("mu must lie in (0, 1)")
        if not 0 < self.block_split < 1:
            raise ValueError("block_split must lie in (0, 1)")
        if not 2 <= self.d_min <= self.upper_degree <= self.n - 1:
            raise ValueError("need 2 <= d_min <= d_max <= n - 1")
        if self.mean_degree < 1:
            raise DegenerateParameterError(f"mean degree {self.mean_degree} < 1 gives a shattered graph")

    @property
    def upper_degree(self) -> float:
        return math.sqrt(self.n) if self.d_max is None else float(self.d_max)

    def to_dict(self):
        return asdict(self)


def power_law_degrees(rng, size, gamma, lo, hi):
    """Inverse-CDF draws from a density proportional to ``k**-gamma`` on [lo, hi]."""
    a = 1.0 - gamma
    u = rng.random(size)
    return (lo**a - u * (lo**a - hi**a)) ** (1.0 / a)


def generate_dcsbm(params: DcsbmParams) -> tuple[Network, np.ndarray]:
    """Draw a two-block DCSBM graph and keep its largest connected component.

    Returns the network (opinions zero) and the block label (0 or 1) of each
    surviving node.
    """
    rng = np.random.default_rng(params.seed)
    n = params.n
    n1 = int(round(params.block_split * n))
    n1 = min(max(n1, 1), n - 1)
    block = np.zeros(n, dtype=np.int64)
    block[n1:] = 1

    k = power_law_degrees(rng, n, params.gamma, params.d_min, params.upper_degree)
    k *= params.mean_degree / k.mean()
    members = [np.flatnonzero(block == r) for r in (0, 1)]
    kappa = np.array([k[m].sum() for m in members])
    theta = [k[m] / kappa[r] for r, m in enumerate(members)]

    # omega[r, s]: expected edge-end count between blocks (twice edges for r == s)
    cross = params.mu * kappa.sum() / 2.0
    omega = np.array([
        [(1 - params.mu) * kappa[0], cross],
        [cross, (1 - params.mu) * kappa[1]],
    ])

    pairs = []
    for r in (0, 1):
        for t in (r, 1 - r):
            if t < r:
                continue
            mean_edges = omega[r, t] / 2.0 if r == t else omega[r, t]
            count = rng.poisson(mean_edges)
            u = rng.choice(members[r], size=count, p=theta[r])
            v = rng.choice(members[t], size=count, p=theta[t])
            pairs.append(np.stack([u, v], axis=1))
    e = np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)
    e = e[e[:, 0] != e[:, 1]]
    e = np.unique(np.sort(e, axis=1), axis=0)
    if len(e) == 0:
        raise DegenerateParameterError("generated graph has no edges")
    full = Network.from_edges(n, e)
    net, keep = largest_connected_component(full)
    return net, block[keep]


def tail_exponent(degrees) -> float:
    """Power-law exponent from a log-log line fit of the empirical CCDF over
    the top decade of observed degrees (``d >= d_max / 10``)."""
    d = np.sort(np.asarray(degrees, dtype=np.float64))[::-1]
    d = d[d > 0]
    ccdf = np.arange(1, len(d) + 1) / len(d)
    top = d >= d[0] / 10.0
    slope = np.polyfit(np.log(d[top]), np.log(ccdf[top]), 1)[0]
    return 1.0 - slope


def assign_opinions(net: Network, membership, config: SolverConfig = DEFAULT_SOLVER) -> Network:
    """Block 0 gets ``s = +1``, block 1 gets ``s = -1``; ``z`` is the equilibrium."""
    membership = np.asarray(membership)
    if membership.shape != (net.n,):
        raise ValueError("membership must cover every node")
    labels = np.unique(membership)
    if len(labels) > 2:
        raise ValueError("at most two communities are supported")
    first = membership.min()
    s = np.where(membership == first, 1.0, -1.0)
    return dynamics.equilibrium(net.with_opinions(s=s, z=s), config)


def label_gains(net: Network, config: SolverConfig = DEFAULT_SOLVER, parallelism: int | None = None):
    """Per-node first-step gains, warm-started from the stored equilibrium.

    ``net.z`` must already be the unmoderated equilibrium. The result does
    not depend on ``parallelism``.
    """
    from .gcn import LabeledGraph

    if parallelism:
        config = SolverConfig(config.tol, config.max_iter, config.method, parallelism, config.direct_cap)
    mod = ModerationState.empty(net)
    try:
        targets = dynamics.gains(net, mod, np.arange(net.n), config, z_current=net.z)
    except dynamics.ConvergenceError as exc:
        raise dynamics.ConvergenceError(
            f"labelling failed at node {exc.node}: {exc}", residual=exc.residual,
            iterations=exc.iterations, node=exc.node,
        ) from exc
    return LabeledGraph(net, targets)


def moderated_sample(graph, k: int, seed: int, config: SolverConfig = DEFAULT_SOLVER):
    """Training example for a partially moderated state.

    Anchors ``k`` random nodes, stores the anchored features (s and z zero on
    anchors, z the anchored equilibrium) and labels the remaining nodes with
    their gains on top of that state. Anchors are masked out of the loss.
    """
    from .gcn import LabeledGraph

    net = graph.net
    if not 0 <= k < net.n:
        raise ValueError(f"k must lie in 0..{net.n - 1}")
    rng = np.random.default_rng(seed)
    mod = ModerationState(net.n, frozenset(int(v) for v in rng.choice(net.n, size=k, replace=False)))
    z = dynamics.solve(net, mod, config, warm_start=mod.effective_z(net)).z_ss
    free = np.flatnonzero(~mod.mask)
    targets = np.zeros(net.n)
    targets[free] = dynamics.gains(net, mod, free, config, z_current=z)
    feat = net.with_opinions(s=mod.effective_s(net), z=z)
    return LabeledGraph(feat, targets, mask=~mod.mask)


def augment(dataset, per_graph: int, seed: int = 0, config: SolverConfig = DEFAULT_SOLVER,
            max_frac: float = 0.1):
    """``per_graph`` moderated samples for each graph, with up to ``max_frac * n`` anchors."""
    out = []
    seeds = np.random.SeedSequence(seed).spawn(max(len(dataset), 1))
    for g, ss in zip(dataset, seeds):
        rng = np.random.default_rng(ss)
        hi = min(max(1, int(math.ceil(max_frac * g.net.n))), g.net.n - 1)
        for _ in range(per_graph):
            out.append(moderated_sample(g, int(rng.integers(1, hi + 1)), int(rng.integers(2**32)), config))
    return out


# ---------------------------------------------------------------------------
# on-disk corpus


def write_labeled(graph, directory, meta: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_edge_list(graph.net, d / "edges.txt")
    write_opinions(graph.net, d / "opinions.csv", include_z=True)
    with open(d / "targets.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("node,gain\n")
        for i, g in enumerate(graph.targets):
            fh.write(f"{i},{float(g)!r}\n")
    meta = dict(meta or {})
    meta.setdefault("version", LABELED_FORMAT_VERSION)
    meta["n"] = graph.net.n
    meta["m"] = graph.net.m
    # meta.json last: its presence marks a complete graph directory
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return d


def read_labeled(directory):
    from .gcn import LabeledGraph

    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise GraphFormatError(f"{d}: missing or unreadable meta.json ({exc})") from exc
    net = load_edge_list(d / "edges.txt")
    net = load_opinions(net, d / "opinions.csv")
    if net.n != meta.get("n") or net.m != meta.get("m"):
        raise GraphFormatError(f"{d}: size does not match meta.json")
    targets = np.full(net.n, np.nan)
    with open(d / "targets.csv", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "node,gain":
            raise GraphFormatError(f"{d}/targets.csv: bad header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            node, val = line.strip().split(",")
            targets[int(node)] = float(val)
    if np.any(np.isnan(targets)):
        raise GraphFormatError(f"{d}/targets.csv: missing targets")
    return LabeledGraph(net, targets), meta


@dataclass
class CorpusManifest:
    count: int
    params: dict
    seeds: list
    paths: list
    solver: dict
    version: int = LABELED_FORMAT_VERSION

    def to_dict(self):
        return asdict(self)

    def write(self, directory) -> Path:
        path = Path(directory) / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, directory) -> "CorpusManifest":
        path = Path(directory) / "manifest.json"
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            return cls(**data)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise GraphFormatError(f"{path}: unreadable manifest ({exc})") from exc


def graph_seeds(base_seed: int, count: int) -> list[int]:
    children = np.random.SeedSequence(base_seed).spawn(count)
    seeds = [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("seed collision; choose another base seed")
    return seeds


def _graph_ok(directory, seed, params: DcsbmParams) -> bool:
    try:
        _, meta = read_labeled(directory)
    except (GraphFormatError, OSError, ValueError, IndexError):
        return False
    return meta.get("seed") == seed and meta.get("params") == {**params.to_dict(), "seed": seed}


def make_labeled(params: DcsbmParams, config: SolverConfig = DEFAULT_SOLVER, parallelism=None):
    net, membership = generate_dcsbm(params)
    net = assign_opinions(net, membership, config)
    return label_gains(net, config, parallelism), membership


def build_corpus(out_dir, count: int = 128, params: DcsbmParams = DcsbmParams(),
                 config: SolverConfig = DEFAULT_SOLVER, parallelism=None,
                 progress=None) -> CorpusManifest:
    """Generate ``count`` labelled DCSBM graphs under ``out_dir``.

    Graph ``i`` lives in ``graph_{i:04d}/`` and uses its own seed spawned from
    ``params.seed``. Directories that already validate are kept as is.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = graph_seeds(params.seed, count)
    paths = []
    for i, seed in enumerate(seeds):
        gp = DcsbmParams(**{**params.to_dict(), "seed": seed})
        rel = f"graph_{i:04d}"
        paths.append(rel)
        if _graph_ok(out / rel, seed, gp):
            continue
        labeled, membership = make_labeled(gp, config, parallelism)
        write_labeled(labeled, out / rel, {
            "seed": seed,
            "params": gp.to_dict(),
            "solver": config.as_dict(),
            "membership": [int(b) for b in membership],
        })
        if progress:
            progress(i, count)
        log.info("graph %d/%d: n=%d m=%d", i + 1, count, labeled.net.n, labeled.net.m)
    manifest = CorpusManifest(count, params.to_dict(), seeds, paths, config.as_dict())
    manifest.write(out)
    return manifest


def validate_corpus(directory) -> list[str]:
    """Problems found in a corpus directory; empty when it is complete."""
    d = Path(directory)
    try:
        manifest = CorpusManifest.read(d)
    except GraphFormatError as exc:
        return [str(exc)]
    problems = []
    if len(manifest.seeds) != manifest.count or len(manifest.paths) != manifest.count:
        problems.append("manifest count does not match listed graphs")
    if len(set(manifest.seeds)) != len(manifest.seeds):
        problems.append("per-graph seeds are not distinct")
    base = DcsbmParams(**manifest.params)
    for rel, seed in zip(manifest.paths, manifest.seeds):
        gp = DcsbmParams(**{**base.to_dict(), "seed": seed})
        if not _graph_ok(d / rel, seed, gp):
            problems.append(f"{rel}: missing or invalid")
    return problems


def load_corpus(directory):
    d = Path(directory)
    manifest = CorpusManifest.read(d)
    return [read_labeled(d / rel)[0] for rel in manifest.paths]
