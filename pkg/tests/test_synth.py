import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dyad, path3, permutations, random_network
from depolarize import dynamics
from depolarize.dynamics import ModerationState, anchor
from depolarize.graph import Network, is_connected, permute
from depolarize.synth import (
    CorpusManifest,
    DcsbmParams,
    DegenerateParameterError,
    assign_opinions,
    augment,
    build_corpus,
    generate_dcsbm,
    graph_seeds,
    label_gains,
    load_corpus,
    make_labeled,
    moderated_sample,
    read_labeled,
    tail_exponent,
    validate_corpus,
    write_labeled,
)


def test_params_validation():
    with pytest.raises(ValueError):
        DcsbmParams(gamma=2.0)
    with pytest.raises(ValueError):
        DcsbmParams(mu=1.5)
    with pytest.raises(ValueError):
        DcsbmParams(block_split=1.0)
    with pytest.raises(ValueError):
        DcsbmParams(n=50, d_min=1)
    with pytest.raises(ValueError):
        DcsbmParams(n=50, d_max=60)
    with pytest.raises(DegenerateParameterError):
        DcsbmParams(mean_degree=0.5)
    assert DcsbmParams(n=100).upper_degree == 10.0


def test_generation_is_deterministic():
    p = DcsbmParams(n=300, seed=4)
    a, ma = generate_dcsbm(p)
    b, mb = generate_dcsbm(p)
    assert a.same_as(b) and np.array_equal(ma, mb)
    c, _ = generate_dcsbm(DcsbmParams(n=300, seed=5))
    assert not (c.n == a.n and np.array_equal(c.edges, a.edges))


def test_generated_graph_is_simple_and_connected():
    net, membership = generate_dcsbm(DcsbmParams(n=400, seed=1))
    assert is_connected(net)
    assert np.all(net.edges[:, 0] < net.edges[:, 1])
    assert len(np.unique(net.edges, axis=0)) == net.m
    assert np.all(net.weights == 1.0)
    assert set(np.unique(membership)) == {0, 1}


def test_small_mu_separates_blocks():
    cross = []
    for seed in range(5):
        net, g = generate_dcsbm(DcsbmParams(n=400, mu=1e-4, seed=seed))
        cross.append(np.sum(g[net.edges[:, 0]] != g[net.edges[:, 1]]))
    assert max(cross) <= 2
    mixed, g = generate_dcsbm(DcsbmParams(n=400, mu=0.4, seed=0))
    assert np.mean(g[mixed.edges[:, 0]] != g[mixed.edges[:, 1]]) > 0.2


def test_default_size_and_polarization():
    # reference draw: ~977 nodes, ~3724 edges, pi ~0.102
    nodes, edges, pis = [], [], []
    for seed in range(5):
        net, g = generate_dcsbm(DcsbmParams(seed=seed))
        net = assign_opinions(net, g)
        nodes.append(net.n)
        edges.append(net.m)
        pis.append(dynamics.polarization_index(net.z))
    assert abs(np.mean(nodes) - 977) <= 0.15 * 977
    assert abs(np.mean(edges) - 3724) <= 0.15 * 3724
    assert 0.07 <= np.mean(pis) <= 0.14


def test_heavy_tail_exponent():
    gamma = 2.5
    ex = [tail_exponent(generate_dcsbm(DcsbmParams(gamma=gamma, seed=s))[0].degree) for s in range(10)]
    assert abs(np.mean(ex) - gamma) <= 0.5


def test_tail_exponent_on_exact_power_law():
    # values placed so that rank/N is exactly x**-(gamma-1)
    n = 100_000
    for gamma in (2.2, 2.5, 3.0):
        x = (np.arange(1, n + 1) / n) ** (-1 / (gamma - 1))
        assert abs(tail_exponent(x) - gamma) < 1e-9


def test_assign_opinions_dyad():
    net = assign_opinions(Network.from_edges(2, [(0, 1)]), [1, 2])
    assert net.s.tolist() == [1.0, -1.0]
    np.testing.assert_allclose(net.z, [1 / 3, -1 / 3], atol=1e-10)


def test_assign_opinions_single_community():
    net = assign_opinions(random_network(np.random.default_rng(0), 20, opinions=False), np.ones(20))
    assert np.all(net.s == 1.0)
    np.testing.assert_allclose(net.z, 1.0, atol=1e-12)
    assert abs(dynamics.polarization_index(net.z) - 1.0) < 1e-12
    with pytest.raises(ValueError):
        assign_opinions(net, [0, 1, 2] + [0] * 17)


def test_label_examples():
    p = label_gains(dynamics.equilibrium(path3()))
    np.testing.assert_allclose(p.targets, [1 / 30, 0, 1 / 30], atol=1e-9)
    d = label_gains(dynamics.equilibrium(dyad()))
    np.testing.assert_allclose(d.targets, [-1 / 72, -1 / 72], atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**32 - 1))
def test_label_oracle_direct(n, seed):
    net = dynamics.equilibrium(random_network(np.random.default_rng(seed), n, weighted=False))
    t = label_gains(net).targets
    empty = ModerationState.empty(net)
    base = dynamics.polarization_index(dynamics.steady_state_direct(net, empty).z_ss)
    for v in range(n):
        after = dynamics.polarization_index(dynamics.steady_state_direct(net, anchor(empty, v)).z_ss)
        assert abs(t[v] - (base - after)) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_labels_equivariant(data):
    net = dynamics.equilibrium(random_network(np.random.default_rng(data.draw(st.integers(0, 999))), 12))
    p = data.draw(permutations(net.n))
    a = label_gains(net).targets
    b = label_gains(permute(net, p)).targets
    np.testing.assert_allclose(b[p], a, atol=1e-9)


def test_labels_independent_of_parallelism():
    labeled, _ = make_labeled(DcsbmParams(n=300, seed=2))
    again = label_gains(labeled.net, parallelism=1).targets
    assert np.array_equal(labeled.targets, again)


def test_moderated_sample():
    labeled, _ = make_labeled(DcsbmParams(n=120, seed=3))
    g = moderated_sample(labeled, 5, seed=1)
    anchors = np.flatnonzero(~g.mask)
    assert len(anchors) == 5
    assert np.all(g.net.s[anchors] == 0) and np.all(g.net.z[anchors] == 0)
    mod = ModerationState(labeled.net.n, frozenset(anchors.tolist()))
    v = int(np.flatnonzero(g.mask)[0])
    assert abs(g.targets[v] - dynamics.gain(labeled.net, mod, v)) <= 1e-9
    more = augment([labeled], 3, seed=0)
    assert len(more) == 3 and all(1 <= (~m.mask).sum() <= 12 for m in more)


def test_labeled_round_trip(tmp_path):
    labeled, membership = make_labeled(DcsbmParams(n=80, seed=1))
    write_labeled(labeled, tmp_path / "g", {"seed": 1})
    back, meta = read_labeled(tmp_path / "g")
    assert back.net.same_as(labeled.net)
    assert np.array_equal(back.targets, labeled.targets)
    assert meta["seed"] == 1 and meta["n"] == labeled.net.n
    assert (tmp_path / "g" / "targets.csv").read_text().startswith("node,gain\n")


def test_corpus_smoke_and_resume(tmp_path):
    params = DcsbmParams(n=50, d_min=2, seed=7)
    m = build_corpus(tmp_path, count=2, params=params)
    assert m.count == 2 and len(set(m.seeds)) == 2
    assert m.paths == ["graph_0000", "graph_0001"]
    assert validate_corpus(tmp_path) == []
    data = load_corpus(tmp_path)
    assert len(data) == 2 and all(g.net.n <= 50 for g in data)

    keep = (tmp_path / "graph_0000" / "meta.json").stat().st_mtime_ns
    snapshot = (tmp_path / "graph_0001" / "targets.csv").read_bytes()
    shutil.rmtree(tmp_path / "graph_0001")
    assert validate_corpus(tmp_path) == ["graph_0001: missing or invalid"]
    calls = []
    build_corpus(tmp_path, count=2, params=params, progress=lambda i, c: calls.append(i))
    assert calls == [1]
    assert (tmp_path / "graph_0000" / "meta.json").stat().st_mtime_ns == keep
    assert (tmp_path / "graph_0001" / "targets.csv").read_bytes() == snapshot
    assert validate_corpus(tmp_path) == []


def test_corpus_detects_partial_write(tmp_path):
    build_corpus(tmp_path, count=2, params=DcsbmParams(n=40, seed=1))
    (tmp_path / "graph_0000" / "meta.json").unlink()
    assert validate_corpus(tmp_path) == ["graph_0000: missing or invalid"]
    (tmp_path / "manifest.json").write_text("{")
    assert validate_corpus(tmp_path)


def test_default_manifest_shape(tmp_path):
    seeds = graph_seeds(0, 128)
    assert len(set(seeds)) == 128
    m = CorpusManifest(128, DcsbmParams().to_dict(), seeds, [f"graph_{i:04d}" for i in range(128)], {})
    m.write(tmp_path)
    back = CorpusManifest.read(tmp_path)
    assert back.count == 128 and back.params["n"] == 1000
    assert json.loads((tmp_path / "manifest.json").read_text())["seeds"] == seeds
