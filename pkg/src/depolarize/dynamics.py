"""Friedkin-Johnsen equilibria, the polarization index and per-node gains.

Moderating (anchoring) a node pins its expressed opinion to zero while it
keeps its edges: neighbours still weigh it in their averages and see 0.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numba
import numpy as np

from . import _kernels
from .graph import Network, laplacian

FIXED_POINT = "fixed_point"
DIRECT = "direct"


class ConvergenceError(RuntimeError):
    def __init__(self, message, z=None, residual=np.inf, iterations=0, node=None, step=None):
        super().__init__(message)
        self.z = z
        self.residual = residual
        self.iterations = iterations
        self.node = node
        self.step = step


class CapabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 100_000
    method: str = FIXED_POINT
    threads: int | None = None
    direct_cap: int = 2000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.method not in (FIXED_POINT, DIRECT):
            raise ValueError(f"unknown solver method {self.method!r}")

    def as_dict(self):
        return {"tol": self.tol, "max_iter": self.max_iter, "method": self.method}


DEFAULT_SOLVER = SolverConfig()


@dataclass(frozen=True)
class ModerationState:
    """Set of anchored nodes ``T`` over a network with ``n`` nodes."""

    n: int
    anchors: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        anchors = frozenset(int(a) for a in self.anchors)
        if any(a < 0 or a >= self.n for a in anchors):
            raise IndexError("anchor outside node range")
        object.__setattr__(self, "anchors", anchors)

    @classmethod
    def empty(cls, net: Network) -> "ModerationState":
        return cls(net.n)

    @property
    def x(self) -> np.ndarray:
        x = np.zeros(self.n, dtype=np.int8)
        x[list(self.anchors)] = 1
        return x

    @property
    def mask(self) -> np.ndarray:
        return self.x.astype(bool)

    def effective(self, vec) -> np.ndarray:
        out = np.array(vec, dtype=np.float64, copy=True)
        out[list(self.anchors)] = 0.0
        return out

    def effective_s(self, net: Network) -> np.ndarray:
        return self.effective(net.s)

    def effective_z(self, net: Network) -> np.ndarray:
        return self.effective(net.z)

    def __len__(self):
        return len(self.anchors)


def anchor(mod: ModerationState, v: int) -> ModerationState:
    v = int(v)
    if v in mod.anchors:
        raise ValueError(f"node {v} is already anchored")
    if not 0 <= v < mod.n:
        raise IndexError(f"node {v} outside 0..{mod.n - 1}")
    return ModerationState(mod.n, mod.anchors | {v})


@dataclass
class SolveReport:
    z_ss: np.ndarray
    iterations: int
    residual: float
    method: str


@contextmanager
def _num_threads(threads):
    if not threads:
        yield
        return
    old = numba.get_num_threads()
    numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))
    try:
        yield
    finally:
        numba.set_num_threads(old)


def _csr(net: Network):
    a = net.adjacency
    return (
        a.indptr.astype(np.int64),
        a.indices.astype(np.int64),
        a.data.astype(np.float64),
        1.0 + net.weighted_degree,
    )


def _state(net, mod):
    if mod is None:
        mod = ModerationState.empty(net)
    if mod.n != net.n:
        raise ValueError("moderation state does not match network size")
    return mod


def steady_state(net: Network, mod: ModerationState | None = None, tol: float = 1e-10,
                 max_iter: int = 100_000, warm_start=None) -> SolveReport:
    """Synchronous fixed-point iteration of the FJ update until the sup-norm
    of one sweep's change drops to ``tol``.

    Anchored nodes are held at zero throughout. ``warm_start`` defaults to the
    effective internal opinions.
    """
    mod = _state(net, mod)
    s = mod.effective_s(net)
    z0 = s if warm_start is None else np.asarray(warm_start, dtype=np.float64)
    if z0.shape != (net.n,):
        raise ValueError("warm start must have length n")
    indptr, indices, weights, denom = _csr(net)
    z, it, res = _kernels.solve_one(indptr, indices, weights, denom, s, mod.mask, z0,
                                    float(tol), int(max_iter))
    if res > tol:
        raise ConvergenceError(
            f"fixed-point solve did not reach tol={tol} in {max_iter} sweeps (residual {res:.3e})",
            z=z, residual=res, iterations=it,
        )
    return SolveReport(z, int(it), float(res), FIXED_POINT)


def steady_state_direct(net: Network, mod: ModerationState | None = None,
                        cap: int = 2000) -> SolveReport:
    """Dense solve of ``(D_xbar L + I) z = s - s*x``."""
    mod = _state(net, mod)
    if net.n > cap:
        raise CapabilityError(f"direct solve capped at {cap} nodes, got {net.n}")
    lap = laplacian(net).zero_rows(mod.anchors).toarray()
    m = lap + np.eye(net.n)
    rhs = mod.effective_s(net)
    z = np.linalg.solve(m, rhs) if net.n else np.zeros(0)
    z[list(mod.anchors)] = 0.0
    return SolveReport(z, 0, 0.0, DIRECT)


def solve(net: Network, mod: ModerationState | None = None, config: SolverConfig = DEFAULT_SOLVER,
          warm_start=None) -> SolveReport:
    if config.method == DIRECT:
        return steady_state_direct(net, mod, cap=config.direct_cap)
    return steady_state(net, mod, config.tol, config.max_iter, warm_start)


def polarization_index(z) -> float:
    z = np.ascontiguousarray(z, dtype=np.float64)
    if z.ndim != 1 or len(z) == 0:
        raise ValueError("polarization index needs a non-empty vector")
    return float(_kernels.sum_sq(z) / len(z))


def equilibrium(net: Network, config: SolverConfig = DEFAULT_SOLVER) -> Network:
    """Copy of ``net`` with ``z`` replaced by the unmoderated equilibrium."""
    rep = solve(net, None, config, warm_start=net.z)
    # rounding can push |z| one ulp past 1 when all s agree
    return net.with_opinions(z=np.clip(rep.z_ss, -1.0, 1.0))


def pinned_polarization(net: Network, mod: ModerationState, candidates, z_current,
                        config: SolverConfig = DEFAULT_SOLVER) -> np.ndarray:
    """Polarization index after additionally anchoring each candidate.

    Each candidate is solved independently, warm-started from ``z_current``;
    the result for a candidate does not depend on which others are in the
    batch or on the thread count.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0:
        return np.zeros(0)
    if np.any(mod.mask[candidates]):
        bad = int(candidates[mod.mask[candidates]][0])
        raise ValueError(f"node {bad} is already anchored")
    if config.method == DIRECT:
        out = np.empty(len(candidates))
        for k, v in enumerate(candidates):
            out[k] = polarization_index(steady_state_direct(net, anchor(mod, v), config.direct_cap).z_ss)
        return out
    indptr, indices, weights, denom = _csr(net)
    s = mod.effective_s(net)
    z0 = np.ascontiguousarray(z_current, dtype=np.float64)
    with _num_threads(config.threads):
        sq, iters, resid = _kernels.pin_each(indptr, indices, weights, denom, s, mod.mask, z0,
                                             candidates, float(config.tol), int(config.max_iter))
    failed = np.flatnonzero(resid > config.tol)
    if len(failed):
        v = int(candidates[failed[0]])
        raise ConvergenceError(
            f"solve with node {v} anchored did not converge (residual {resid[failed[0]]:.3e})",
            residual=float(resid[failed[0]]), iterations=int(iters[failed[0]]), node=v,
        )
    return sq / net.n


def gains(net: Network, mod: ModerationState, candidates, config: SolverConfig = DEFAULT_SOLVER,
          z_current=None) -> np.ndarray:
    """Vector of ``Gain(v)`` for each candidate against the current state."""
    mod = _state(net, mod)
    if z_current is None:
        z_current = solve(net, mod, config, warm_start=mod.effective_z(net)).z_ss
    before = polarization_index(z_current)
    after = pinned_polarization(net, mod, candidates, z_current, config)
    return before - after


def gain(net: Network, mod: ModerationState | None, v: int, config: SolverConfig = DEFAULT_SOLVER,
         z_current=None) -> float:
    """Decrease in polarization index when ``v`` is anchored on top of ``mod``.

    Negative when anchoring ``v`` raises polarization.
    """
    mod = _state(net, mod)
    if int(v) in mod.anchors:
        raise ValueError(f"node {v} is already anchored")
    return float(gains(net, mod, [int(v)], config, z_current)[0])
