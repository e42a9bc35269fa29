import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forestmark.attacks import (
    Box, ForgeStatus, ForgeryTimeout, LeafIndex, detect_band, detect_band_values, detect_mean,
    detect_mean_values, epsilon_box, forge_instance, forge_trigger_set, leaf_boxes, pattern_holds,
    pick_witness, required_labels, solve_pattern,
)
from forestmark.dataset import Dataset
from forestmark.forest import Ensemble, Internal, Leaf
from forestmark.watermark import Signature

from conftest import two_tree_ensemble, two_tree_pair, grid_feasible, random_forgery_case

INF = np.inf


def box(lo, hi):
    return Box(np.array(lo, dtype=float), np.array(hi, dtype=float))


def test_two_tree_leaf_boxes():
    t1, _ = two_tree_pair()
    pos = leaf_boxes(t1, 1, 3)
    assert pos == [box([-INF, -INF, -INF], [5, 3, INF]), box([5, -INF, 7], [INF, INF, INF])]
    assert leaf_boxes(Leaf(1), 1, 2) == [Box.full(2)]
    assert leaf_boxes(Leaf(1), -1, 2) == []


def test_leaf_boxes_partition_space():
    t1, t2 = two_tree_pair()
    g = np.random.default_rng(0)
    for t in (t1, t2):
        bs = leaf_boxes(t, 1, 3) + leaf_boxes(t, -1, 3)
        for x in g.uniform(0, 10, size=(200, 3)):
            assert sum(b.contains(x) for b in bs) == 1


intervals = st.tuples(st.floats(-2, 2), st.floats(-2, 2))


@settings(max_examples=100)
@given(st.lists(st.tuples(intervals, intervals), min_size=3, max_size=3),
       st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_box_algebra(iv, x):
    a, b, c = (Box(np.array([p[0][0], p[1][0]]), np.array([p[0][1], p[1][1]])) for p in iv)
    assert (a & b) == (b & a)
    assert ((a & b) & c) == (a & (b & c))
    assert (a & b).contains(x) == (a.contains(x) and b.contains(x))
    if (a & b).is_empty():
        assert not (a & b).contains(x)


def test_closed_box_bounds():
    b = Box.closed([0.2], [0.4])
    assert b.contains([0.2]) and b.contains([0.4]) and not b.contains([np.nextafter(0.2, 0)])


@settings(max_examples=200)
@given(st.floats(0, 1), st.floats(1e-6, 1))
def test_epsilon_box_is_exact(zj, eps):
    b = epsilon_box(np.array([zj]), eps)
    lo, hi = np.nextafter(b.lo[0], INF), b.hi[0]
    assert abs(lo - zj) <= eps and abs(hi - zj) <= eps and 0 <= lo <= hi <= 1
    assert lo <= max(0.0, zj - eps) + 1e-12 and hi >= min(1.0, zj + eps) - 1e-12


def test_pick_witness_rule():
    b = box([0.0, 0.5, -INF], [1.0, 0.8, INF])
    np.testing.assert_array_equal(pick_witness(b, np.array([0.3, 0.1, 7.0])), [0.3, 0.8, 7.0])


def test_two_tree_forgery():
    T = two_tree_ensemble(0.1)  # thresholds scaled into [0, 1]
    z = np.array([0.4, 0.3, 0.5])
    x = forge_instance(T, Signature((0, 1)), 1, z, 1.0)
    np.testing.assert_array_equal(x, z)
    x = forge_instance(T, Signature((1, 1)), 1, z, 1.0)
    assert pattern_holds(T, Signature((1, 1)), 1, x)


def test_single_leaf_infeasible():
    T = Ensemble([Leaf(1)], [(0,)], 1)
    assert forge_instance(T, Signature((1,)), 1, np.array([0.5]), 0.9) is None
    np.testing.assert_array_equal(forge_instance(T, Signature((0,)), 1, np.array([0.5]), 0.9), [0.5])


def test_tiny_epsilon_keeps_non_matching_point():
    t = Internal(0, 0.5, Leaf(-1), Leaf(1))
    T = Ensemble([t], [(0,)], 1)
    assert forge_instance(T, Signature((0,)), 1, np.array([0.2]), 1e-12) is None
    x = forge_instance(T, Signature((0,)), 1, np.array([0.2]), 0.31)
    assert x is not None and x[0] > 0.5 and abs(x[0] - 0.2) <= 0.31


def test_forge_argument_checks():
    T = two_tree_ensemble(0.1)
    with pytest.raises(ValueError):
        forge_instance(T, Signature((0,)), 1, np.zeros(3), 0.5)
    with pytest.raises(ValueError):
        forge_instance(T, Signature((0, 0)), 1, np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        forge_instance(T, Signature((0, 0)), 1, np.zeros(2), 0.5)


def test_solver_matches_grid():
    g = np.random.default_rng(2024)
    sub_grid = 0
    for _ in range(60):
        T, sigma, y, z, eps = random_forgery_case(g)
        x = forge_instance(T, sigma, y, z, eps)
        grid = grid_feasible(T, required_labels(sigma, y), z, eps)
        if x is not None:
            assert pattern_holds(T, sigma, y, x) and np.max(np.abs(x - z)) <= eps
            sub_grid += not grid
        else:
            assert not grid
    assert sub_grid <= 6


def test_timeout_is_distinct():
    g = np.random.default_rng(7)
    for _ in range(500):
        T, sigma, y, z, eps = random_forgery_case(g)
        res = solve_pattern(T, required_labels(sigma, y), epsilon_box(z, eps), z)
        if res.expansions >= 2:
            break
    else:
        pytest.fail("no case needed branching")
    assert solve_pattern(T, required_labels(sigma, y), epsilon_box(z, eps), z, budget=0).status is ForgeStatus.TIMEOUT
    with pytest.raises(ForgeryTimeout):
        forge_instance(T, sigma, y, z, eps, budget=0)


def stump_case():
    t = Internal(0, 0.5, Leaf(-1), Leaf(1))
    T = Ensemble([t, t], [(0,), (0,)], 1)
    X = np.array([[0.1], [0.45], [0.6], [0.9]])
    return T, Dataset(X, np.array([1, 1, -1, 1]), np.arange(4))


def test_forge_trigger_set_counts():
    T, test = stump_case()
    res = forge_trigger_set(T, Signature((0, 0)), test, 0.1, k_original=2)
    # 0.1 cannot reach the right of 0.5; 0.6 with label -1 moves to 0.5
    assert [r.status for r in res.records] == [ForgeStatus.INFEASIBLE] + [ForgeStatus.FORGED] * 3
    assert len(res.forged) == 3 and res.ratio == 1.0 and res.complete
    for r in res.forged:
        assert r.linf <= 0.1 and pattern_holds(T, Signature((0, 0)), r.target, r.instance)
    assert forge_trigger_set(T, Signature((0, 0)), test, 0.1, k_original=4).ratio == 0.75
    assert forge_trigger_set(T, Signature((0, 1)), test, 1.0, k_original=4).ratio == 0.0
    # flipping the target asks for the opposite label around the same rows
    assert len(forge_trigger_set(T, Signature((0, 0)), test, 0.1, 4, flip_target=True).forged) == 3


def test_forge_wall_clock_partial():
    T, test = stump_case()
    res = forge_trigger_set(T, Signature((0, 0)), test, 0.1, k_original=2, wall_clock_budget=-1.0)
    assert res.attempted == 0 and not res.complete and res.ratio == 0.0


def test_forge_ratio_monotone_in_epsilon():
    g = np.random.default_rng(5)
    for _ in range(20):
        T, sigma, y, z, _ = random_forgery_case(g)
        X = np.round(g.random((15, T.d)), 2)
        test = Dataset(X, g.choice([-1, 1], size=15), np.arange(15))
        idx = LeafIndex(T)
        ratios = [forge_trigger_set(T, sigma, test, e, 15, index=idx).ratio for e in (0.05, 0.1, 0.3, 0.9)]
        assert ratios == sorted(ratios)


def test_band_detection():
    r = detect_band_values([1, 100], sigma=Signature((0, 1)))
    assert r.assigned == (None, None) and r.uncertain == 2  # both sit exactly on mu -+ s
    r = detect_band_values([18.0] * 5)
    assert r.uncertain == 5 and r.std == 0
    r = detect_band_values([1, 5, 5, 5, 5, 9], sigma=Signature((0, 1, 0, 1, 0, 1)))
    assert r.assigned == (0, None, None, None, None, 1) and (r.correct, r.wrong, r.uncertain) == (2, 0, 4)


def test_mean_detection():
    r = detect_mean_values([3, 9], sigma=Signature((0, 1)))
    assert r.assigned == (0, 1) and r.correct == 2 and r.uncertain == 0
    r = detect_mean_values([4, 4, 4])
    assert r.assigned == (1, 1, 1)


@settings(max_examples=100)
@given(st.lists(st.integers(0, 30), min_size=2, max_size=40), st.integers(0, 2**32 - 1))
def test_detection_counts_add_up(values, seed):
    sigma = Signature(tuple(np.random.default_rng(seed).integers(0, 2, size=len(values)).tolist()))
    b = detect_band_values(values, sigma=sigma)
    m = detect_mean_values(values, sigma=sigma)
    assert b.correct + b.wrong + b.uncertain == len(values)
    assert m.uncertain == 0 and m.correct + m.wrong == len(values)


def test_detection_on_ensemble():
    t1, t2 = two_tree_pair()
    T = Ensemble([t1, t2, Leaf(1)], [(0, 1, 2)] * 3, 3)
    assert detect_mean(T, "depth").assigned == (1, 1, 0)
    assert detect_band(T, "leaves").assigned == (None, None, 0)
    with pytest.raises(ValueError):
        detect_mean(T, "width")
