from fractions import Fraction

import numpy as np
import pytest
from hypothesis import strategies as st

from depolarize.graph import Network


def dyad(s=(1.0, -1.0)):
    return Network.from_edges(2, [(0, 1)], s=list(s))


def path3(s=(1.0, 0.0, -1.0)):
    return Network.from_edges(3, [(0, 1), (1, 2)], s=list(s))


@pytest.fixture
def dyad_net():
    return dyad()


@pytest.fixture
def path_net():
    return path3()


def random_network(rng, n, p=None, weighted=True, opinions=True):
    p = min(1.0, 3.0 / max(n - 1, 1)) if p is None else p
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    w = rng.uniform(0.2, 2.0, size=len(edges)) if weighted else np.ones(len(edges))
    s = rng.uniform(-1, 1, size=n) if opinions else np.zeros(n)
    return Network.from_edges(n, edges, w, s=s)


@st.composite
def networks(draw, max_n=10, weighted=True):
    n = draw(st.integers(min_value=1, max_value=max_n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    if weighted:
        w = draw(st.lists(st.floats(0.1, 3.0), min_size=len(chosen), max_size=len(chosen)))
    else:
        w = [1.0] * len(chosen)
    s = draw(st.lists(st.floats(-1.0, 1.0), min_size=n, max_size=n))
    return Network.from_edges(n, chosen, w, s=s)


@st.composite
def permutations(draw, n):
    return np.array(draw(st.permutations(list(range(n)))), dtype=np.int64)


def exact_equilibrium(n, edges, weights, s, anchors=()):
    """Rational Gauss-Jordan solve of (D_xbar L + I) z = s - s*x.

    Independent of every numeric code path in the package; inputs should be
    exact (ints or Fractions).
    """
    anchors = set(anchors)
    m = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        m[i][i] = Fraction(1)
    for (u, v), w in zip(edges, weights):
        w = Fraction(w)
        for a, b in ((u, v), (v, u)):
            if a in anchors:
                continue
            m[a][a] += w
            m[a][b] -= w
    rhs = [Fraction(0) if i in anchors else Fraction(s[i]) for i in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[piv] = m[piv], m[col]
        rhs[col], rhs[piv] = rhs[piv], rhs[col]
        p = m[col][col]
        m[col] = [x / p for x in m[col]]
        rhs[col] /= p
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col]
                m[r] = [a - f * b for a, b in zip(m[r], m[col])]
                rhs[r] -= f * rhs[col]
    return rhs


def exact_pi(z):
    return sum(x * x for x in z) / len(z)


# --- acceptance reporting -----------------------------------------------------

_criteria = {}
_details = {}


def note(num, text):
    """Attach a measured value to an acceptance criterion's summary line."""
    _details.setdefault(num, []).append(text)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    rep = outcome.get_result()
    if rep.when == "call" or rep.failed or rep.skipped:
        ok = rep.passed and rep.when == "call"
        for num in marker.args:
            _criteria[num] = _criteria.get(num, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        extra = "; ".join(_details.get(num, []))
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if _criteria[num] else 'FAIL'}  {extra}".rstrip())
