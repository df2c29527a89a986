"""Weighted undirected networks with per-node opinions.

Node ids are dense 0-based integers. A :class:`Network` is immutable once
built; every transformation returns a new instance.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import cached_property
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GraphFormatError(ValueError):
    """Malformed edge-list or opinion file."""


class OpinionRangeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Network:
    """Undirected weighted graph with internal (``s``) and expressed (``z``) opinions.

    ``edges`` holds each undirected edge once as ``(u, v)`` with ``u < v``,
    sorted lexicographically; ``weights`` is aligned with it.
    """

    n: int
    edges: np.ndarray
    weights: np.ndarray
    s: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(edges) != len(weights):
            raise ValueError("edges and weights differ in length")
        if len(edges):
            if edges.min() < 0 or edges.max() >= self.n:
                raise ValueError("edge endpoint out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValueError("self-loops are not allowed")
            if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
                raise ValueError("edge weights must be finite and positive")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        order = np.lexsort((hi, lo))
        edges = np.stack([lo[order], hi[order]], axis=1) if len(edges) else edges
        weights = weights[order]
        if len(edges) > 1 and np.any(np.all(edges[1:] == edges[:-1], axis=1)):
            raise ValueError("duplicate undirected edge")
        s = np.asarray(self.s, dtype=np.float64).reshape(-1)
        z = np.asarray(self.z, dtype=np.float64).reshape(-1)
        if len(s) != self.n or len(z) != self.n:
            raise ValueError("opinion vectors must have length n")
        for name, vec in (("s", s), ("z", z)):
            if np.any(np.abs(vec) > 1.0) or not np.all(np.isfinite(vec)):
                raise OpinionRangeError(f"{name} must lie in [-1, 1]")
        for arr in (edges, weights, s, z):
            arr.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_edges(cls, n, edges, weights=None, s=None, z=None) -> "Network":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            weights = np.ones(len(edges))
        s = np.zeros(n) if s is None else s
        z = np.zeros(n) if z is None else z
        return cls(n, edges, weights, s, z)

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric weighted adjacency in CSR form with sorted column indices."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        data = np.concatenate([self.weights, self.weights])
        a = sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))
        a.sort_indices()
        return a

    @cached_property
    def weighted_degree(self) -> np.ndarray:
        a = self.adjacency
        deg = np.zeros(self.n)
        for i in range(self.n):
            # fixed left-to-right order so every consumer sees identical sums
            acc = 0.0
            for w in a.data[a.indptr[i]:a.indptr[i + 1]]:
                acc += w
            deg[i] = acc
        return deg

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        a = self.adjacency
        lo, hi = a.indptr[i], a.indptr[i + 1]
        return [(int(j), float(w)) for j, w in zip(a.indices[lo:hi], a.data[lo:hi])]

    def with_opinions(self, s=None, z=None) -> "Network":
        return replace(
            self,
            s=self.s if s is None else s,
            z=self.z if z is None else z,
        )

    def same_as(self, other: "Network") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.z, other.z)
        )

    def __repr__(self):
        return f"Network(n={self.n}, m={self.m})"


@dataclass(frozen=True)
class LaplacianView:
    matrix: sp.csr_matrix
    zeroed_rows: frozenset = field(default_factory=frozenset)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def zero_rows(self, rows) -> "LaplacianView":
        rows = frozenset(int(r) for r in rows) | self.zeroed_rows
        keep = np.ones(self.matrix.shape[0])
        keep[list(rows)] = 0.0
        m = sp.diags(keep) @ self.matrix
        return LaplacianView(sp.csr_matrix(m), rows)


def laplacian(net: Network) -> LaplacianView:
    a = net.adjacency
    lap = sp.diags(net.weighted_degree) - a
    return LaplacianView(sp.csr_matrix(lap))


# ---------------------------------------------------------------------------
# file formats


def load_edge_list(path, default_weight: float = 1.0) -> Network:
    """Read a whitespace-separated ``u v [w]`` edge list.

    Lines starting with ``#`` and blank lines are skipped. The node count is
    one more than the largest id seen, or the value of a ``# nodes=N``
    comment if that is larger (so trailing isolated nodes survive a
    write/load round trip).
    """
    if default_weight <= 0:
        raise ValueError("default_weight must be positive")
    edges, weights, seen = [], [], {}
    max_id = -1
    declared = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key.strip() == "nodes" and val.strip().isdigit():
                    declared = max(declared, int(val))
                continue
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise GraphFormatError(f"{path}:{lineno}: expected 'u v [w]', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else float(default_weight)
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: unparsable line {line!r}") from None
            if u < 0 or v < 0:
                raise GraphFormatError(f"{path}:{lineno}: negative node id")
            if u == v:
                raise GraphFormatError(f"{path}:{lineno}: self-loop on node {u}")
            if not w > 0 or not np.isfinite(w):
                raise GraphFormatError(f"{path}:{lineno}: non-positive weight {w}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GraphFormatError(
                    f"{path}:{lineno}: duplicate edge {key} (first seen on line {seen[key]})"
                )
            seen[key] = lineno
            edges.append(key)
            weights.append(w)
            max_id = max(max_id, u, v)
    return Network.from_edges(max(max_id + 1, declared), edges, weights)


def write_edge_list(net: Network, path, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        fh.write(f"# nodes={net.n}\n")
        for (u, v), w in zip(net.edges, net.weights):
            fh.write(f"{u} {v} {float(w)!r}\n")


def load_opinions(net: Network, path) -> Network:
    """Read ``node,s`` or ``node,s,z`` CSV into a copy of ``net``.

    Unlisted nodes keep ``s = 0``. Without a ``z`` column the expressed
    opinions are left as they were.
    """
    s = np.zeros(net.n)
    z = None
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header not in (["node", "s"], ["node", "s", "z"]):
            raise GraphFormatError(f"{path}: header must be 'node,s' or 'node,s,z', got {header}")
        has_z = len(header) == 3
        if has_z:
            z = np.zeros(net.n)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise GraphFormatError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                node = int(row[0])
                vals = [float(x) for x in row[1:]]
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: unparsable row {row}") from None
            if node < 0 or node >= net.n:
                raise IndexError(f"{path}:{lineno}: node {node} outside 0..{net.n - 1}")
            for val in vals:
                if not -1.0 <= val <= 1.0:
                    raise OpinionRangeError(f"{path}:{lineno}: opinion {val} outside [-1, 1]")
            s[node] = vals[0]
            if has_z:
                z[node] = vals[1]
    return net.with_opinions(s=s, z=z)


def write_opinions(net: Network, path, include_z: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "s", "z"] if include_z else ["node", "s"])
        for i in range(net.n):
            row = [i, repr(float(net.s[i]))]
            if include_z:
                row.append(repr(float(net.z[i])))
            w.writerow(row)


POLBOOKS_OPINION = {"c": 1.0, "n": 0.0, "l": -1.0}


def load_polbooks_gml(path) -> Network:
    """Load the political-books co-purchase GML (Krebs / Newman release).

    Books labelled conservative/neutral/liberal (``c``/``n``/``l``) map to
    internal opinions +1/0/-1.
    """
    import networkx as nx

    g = nx.read_gml(path, label="id")
    nodes = sorted(g.nodes())
    index = {u: i for i, u in enumerate(nodes)}
    s = np.zeros(len(nodes))
    for u, data in g.nodes(data=True):
        label = str(data.get("value", "n")).strip().lower()[:1]
        if label not in POLBOOKS_OPINION:
            raise GraphFormatError(f"{path}: unknown label {data.get('value')!r} on node {u}")
        s[index[u]] = POLBOOKS_OPINION[label]
    edges = sorted({(min(index[u], index[v]), max(index[u], index[v])) for u, v in g.edges() if u != v})
    return Network.from_edges(len(nodes), edges, s=s)


# ---------------------------------------------------------------------------
# structural utilities


def largest_connected_component(net: Network) -> tuple[Network, np.ndarray]:
    """Induced subgraph on the largest component.

    Returns the relabelled network and ``id_map`` where ``id_map[new] = old``.
    Ties between equally large components go to the one holding the smallest
    original id.
    """
    if net.n == 0:
        return net, np.zeros(0, dtype=np.int64)
    ncomp, labels = connected_components(net.adjacency, directed=False)
    sizes = np.bincount(labels, minlength=ncomp)
    first_seen = np.full(ncomp, net.n)
    np.minimum.at(first_seen, labels, np.arange(net.n))
    best = min(range(ncomp), key=lambda c: (-sizes[c], first_seen[c]))
    keep = np.flatnonzero(labels == best)
    return induced_subgraph(net, keep), keep


def induced_subgraph(net: Network, keep) -> Network:
    keep = np.asarray(keep, dtype=np.int64)
    new_id = np.full(net.n, -1, dtype=np.int64)
    new_id[keep] = np.arange(len(keep))
    e = net.edges
    mask = (new_id[e[:, 0]] >= 0) & (new_id[e[:, 1]] >= 0) if len(e) else np.zeros(0, bool)
    edges = new_id[e[mask]] if len(e) else e
    return Network(len(keep), edges, net.weights[mask], net.s[keep], net.z[keep])


def permute(net: Network, perm) -> Network:
    """Relabel nodes: old node ``i`` becomes ``perm[i]``."""
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (net.n,) or not np.array_equal(np.sort(perm), np.arange(net.n)):
        raise ValueError("perm must be a bijection on 0..n-1")
    s = np.empty(net.n)
    z = np.empty(net.n)
    s[perm] = net.s
    z[perm] = net.z
    edges = perm[net.edges] if net.m else net.edges
    return Network(net.n, edges, net.weights, s, z)


def is_connected(net: Network) -> bool:
    if net.n == 0:
        return True
    ncomp, _ = connected_components(net.adjacency, directed=False)
    return ncomp == 1
