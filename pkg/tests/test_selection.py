import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dyad, path3, random_network
from depolarize import dynamics, selection
from depolarize.dynamics import ModerationState, SolverConfig
from depolarize.gcn import GcnModel, ModelError
from depolarize.selection import (
    default_k,
    evaluate_selection,
    final_pi,
    gnn_greedy_ext,
    greedy_ext,
    random_select,
    read_trace,
    write_trace,
)


def zero_model(head_b=0.0):
    return GcnModel((2, 16, 16, 1), np.zeros((16, 2)), np.zeros((16, 2)), np.zeros((16, 16)),
                    np.zeros((16, 16)), np.zeros(16), head_b)


def brute_force_greedy(net, k):
    """Per-step exhaustive argmax with independent dense solves."""
    mod = ModerationState.empty(net)
    chosen = []
    for _ in range(k):
        base = dynamics.polarization_index(dynamics.steady_state_direct(net, mod).z_ss)
        best, best_gain = None, -np.inf
        for v in range(net.n):
            if v in mod.anchors:
                continue
            after = dynamics.polarization_index(dynamics.steady_state_direct(net, dynamics.anchor(mod, v)).z_ss)
            if base - after > best_gain + 1e-12:
                best, best_gain = v, base - after
        chosen.append(best)
        mod = dynamics.anchor(mod, best)
    return chosen


def test_greedy_path3():
    tr = greedy_ext(path3(), 1)
    assert tr.chosen == [0]
    assert tr.algorithm == "greedy"
    np.testing.assert_allclose(tr.pi_trace, [1 / 6, 2 / 15], atol=1e-10)
    assert len(tr.elapsed) == 1


def test_greedy_dyad_can_increase():
    tr = greedy_ext(dyad(), 1)
    assert tr.chosen == [0]
    np.testing.assert_allclose(tr.pi_trace, [1 / 9, 1 / 8], atol=1e-10)
    assert tr.final_pi > tr.initial_pi


def test_k_equals_n_gives_zero():
    net = random_network(np.random.default_rng(1), 15)
    for tr in (greedy_ext(net, 15), random_select(net, 15, seed=3), gnn_greedy_ext(net, 15, GcnModel.init())):
        assert tr.final_pi == 0.0
        assert sorted(tr.chosen) == list(range(15))


def test_k_bounds():
    with pytest.raises(ValueError):
        greedy_ext(path3(), 0)
    with pytest.raises(ValueError):
        random_select(path3(), 4)
    assert default_k(105) == 11 and default_k(1000) == 100 and default_k(3) == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 30), st.integers(0, 2**32 - 1))
def test_greedy_step_optimality(n, seed):
    net = random_network(np.random.default_rng(seed), n)
    k = min(n, 4)
    tr = greedy_ext(net, k)
    mod = ModerationState.empty(net)
    for step, v in enumerate(tr.chosen):
        free = [u for u in range(n) if u not in mod.anchors]
        g = dynamics.gains(net, mod, free)
        chosen_gain = g[free.index(v)]
        assert chosen_gain >= g.max() - 1e-12
        if g.max() > 1e-12:
            assert chosen_gain > 0
        mod = dynamics.anchor(mod, v)
    assert len(set(tr.chosen)) == k
    assert all(0 <= p <= 1 for p in tr.pi_trace)


def test_greedy_matches_brute_force_oracle():
    rng = np.random.default_rng(42)
    for _ in range(3):
        net = random_network(rng, 40)
        assert greedy_ext(net, 6).chosen == brute_force_greedy(net, 6)


def test_zero_model_tie_break():
    net = random_network(np.random.default_rng(2), 12)
    tr = gnn_greedy_ext(net, 5, zero_model(head_b=0.7))
    assert tr.chosen == [0, 1, 2, 3, 4]
    assert tr.algorithm == "gnn_greedy"


def test_gnn_rejects_incompatible_model():
    with pytest.raises(ModelError):
        gnn_greedy_ext(path3(), 1, GcnModel.init((3, 4, 4, 1)))


def test_oracle_scores_reproduce_greedy(monkeypatch):
    net = random_network(np.random.default_rng(5), 25)

    def oracle_forward(model, net, mod, z=None, P=None):
        free = np.flatnonzero(~mod.mask)
        scores = np.zeros(net.n)
        scores[free] = dynamics.gains(net, mod, free, z_current=z)
        return None, scores

    monkeypatch.setattr(selection, "forward", oracle_forward)
    gnn = gnn_greedy_ext(net, 6, zero_model())
    monkeypatch.undo()
    greedy = greedy_ext(net, 6)
    assert gnn.chosen == greedy.chosen
    assert gnn.pi_trace == greedy.pi_trace


def test_gnn_never_reselects(monkeypatch):
    net = random_network(np.random.default_rng(6), 10)
    # the raw scores always favour node 3; masking must move on
    monkeypatch.setattr(selection, "forward", lambda m, n, mod, z=None, P=None: (None, -np.arange(n.n) + 10.0 * (np.arange(n.n) == 3)))
    tr = gnn_greedy_ext(net, 4, zero_model())
    assert tr.chosen == [3, 0, 1, 2]


def test_evaluate_selection_consistency():
    net = random_network(np.random.default_rng(7), 30)
    tr = greedy_ext(net, 5)
    ev = evaluate_selection(net, tr.chosen)
    assert ev.pi_trace == tr.pi_trace
    empty = evaluate_selection(net, [])
    assert empty.pi_trace == [tr.pi_trace[0]]
    rev = evaluate_selection(net, tr.chosen[::-1])
    assert abs(rev.final_pi - tr.final_pi) <= 1e-9
    with pytest.raises(ValueError):
        evaluate_selection(net, [1, 1])
    with pytest.raises(IndexError):
        evaluate_selection(net, [30])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_set_order_independence(seed, k):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 20)
    chosen = rng.choice(20, size=k, replace=False)
    a = evaluate_selection(net, chosen).final_pi
    b = evaluate_selection(net, rng.permutation(chosen)).final_pi
    assert abs(a - b) <= 1e-9
    assert abs(final_pi(net, set(chosen.tolist())) - a) <= 1e-9


def test_random_determinism():
    net = random_network(np.random.default_rng(8), 40)
    a = random_select(net, 8, seed=1)
    b = random_select(net, 8, seed=1)
    assert a.chosen == b.chosen and a.pi_trace == b.pi_trace
    assert random_select(net, 8, seed=2).chosen != a.chosen
    assert len(set(a.chosen)) == 8


def test_trace_file_round_trip(tmp_path):
    tr = greedy_ext(path3(), 2)
    write_trace(tr, tmp_path / "t.csv", {"k": 2})
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,node,polarization,elapsed_ms"
    assert lines[1].startswith("0,,")
    back = read_trace(tmp_path / "t.csv")
    assert back.chosen == tr.chosen and back.pi_trace == tr.pi_trace
    assert (tmp_path / "t.csv.json").exists()


def test_direct_solver_config_agrees():
    net = random_network(np.random.default_rng(9), 25)
    a = greedy_ext(net, 3)
    b = greedy_ext(net, 3, SolverConfig(method="direct"))
    assert a.chosen == b.chosen
    np.testing.assert_allclose(a.pi_trace, b.pi_trace, atol=1e-9)
