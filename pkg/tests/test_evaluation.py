import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spokensyntax.core import (LabeledRefTree, ParseTree, Segmentation, TimeSpan, labeled_from_parse,
                               left_branching, parse_sexpr, right_branching)
from spokensyntax.evaluation import (constituent_recall, corpus_constituent_recall, flatten,
                                     mean_parseval_f1, parseval_f1, saiou, saiou_bruteforce)
from spokensyntax.parser import trivial_tree


def unit_seg(n):
    return Segmentation.from_pairs([[i, i + 1] for i in range(n)])


def test_parseval_examples():
    t = parse_sexpr("((0 1) (2 3))")
    assert parseval_f1(t, t)[2] == 1.0
    assert parseval_f1(right_branching(3), left_branching(3))[2] == 0.0
    assert parseval_f1(right_branching(4), t) == pytest.approx((0.5, 0.5, 0.5))
    # no non-trivial brackets on either side
    assert parseval_f1(right_branching(2), left_branching(2)) == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="saiou"):
        parseval_f1(right_branching(3), right_branching(4))


def test_parseval_accepts_labeled_gold():
    t = parse_sexpr("((0 1) (2 3))").with_times(unit_seg(4))
    gold = labeled_from_parse(t, {(0, 2): "NP"})
    assert parseval_f1(t, gold)[2] == 1.0
    assert mean_parseval_f1([t, right_branching(4)], [gold, gold]) == pytest.approx(0.75)


def test_recall_of_binarised_gold_is_one():
    t = parse_sexpr("((0 1) (2 (3 4)))").with_times(unit_seg(5))
    gold = labeled_from_parse(t, {(0, 2): "NP", (2, 5): "VP", (3, 5): "PP", (0, 5): "other"})
    rec = constituent_recall(t, gold)
    assert rec == {"NP": 1.0, "VP": 1.0, "PP": 1.0, "ADJP": None}


def test_recall_counts_a_single_leaf_as_the_whole_span():
    seg = unit_seg(1)
    pred = ParseTree.leaf(0).with_times(seg)
    gold = LabeledRefTree(TimeSpan(0, 1), "NP")
    assert constituent_recall(pred, gold)["NP"] == 1.0


def test_recall_tolerates_one_frame_and_pools_counts():
    pred = right_branching(3).with_times(Segmentation.from_pairs([[0, 0.5], [0.5, 1], [1, 1.51]]))
    gold_seg = Segmentation.from_pairs([[0, 0.5], [0.5, 1], [1, 1.5]])
    gold = labeled_from_parse(left_branching(3).with_times(gold_seg), {(0, 2): "NP", (0, 3): "VP"})
    assert constituent_recall(pred, gold, tol=0.0) == {"NP": 0.0, "VP": 0.0, "PP": None, "ADJP": None}
    rec = constituent_recall(pred, gold)
    assert rec["NP"] == 0.0 and rec["VP"] == 1.0
    pooled = corpus_constituent_recall([pred, pred], [gold, gold])
    assert pooled["NP"] == 0.0 and pooled["VP"] == 1.0 and pooled["PP"] is None


def test_saiou_examples():
    t = parse_sexpr("((0 1) (2 3))").with_times(unit_seg(4))
    assert saiou(t, t) == pytest.approx(1.0)
    a = LabeledRefTree(TimeSpan(0, 2))
    b = LabeledRefTree(TimeSpan(1, 3))
    assert saiou(a, b) == pytest.approx(1 / 3)


def test_saiou_finds_the_nested_leaf_alignment():
    # [[x y] z] vs [x [y z]]: root and all three leaves align (weight 4);
    # the inner nodes would break ancestry with x or z
    seg = unit_seg(3)
    a, b = left_branching(3).with_times(seg), right_branching(3).with_times(seg)
    assert saiou(a, b) == pytest.approx(2 * 4 / 10)
    assert saiou_bruteforce(a, b) == pytest.approx(0.8)


def test_saiou_drops_when_a_node_is_added():
    seg = unit_seg(2)
    t = right_branching(2).with_times(seg)
    bigger = right_branching(3).with_times(unit_seg(3))
    assert saiou(t, t) > saiou(t, bigger)


def test_flatten_postorder():
    ft = flatten(right_branching(3).with_times(unit_seg(3)))
    assert ft.size == 5
    assert ft.parent[-1] == -1
    assert ft.is_ancestor(4, 0) and not ft.is_ancestor(0, 4)


def random_timed_tree(rng, n_leaves):
    cuts = np.sort(rng.uniform(0, 5, size=n_leaves - 1))
    edges = np.concatenate([[0.0], cuts, [5.0]])
    seg = Segmentation.from_pairs(zip(edges[:-1], edges[1:]))
    return trivial_tree(n_leaves, "random", rng).with_times(seg)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4))
def test_saiou_properties(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = random_timed_tree(rng, n), random_timed_tree(rng, m)
    s = saiou(a, b)
    assert 0.0 <= s <= 1.0 + 1e-12
    assert s == saiou(b, a)
    assert abs(s - saiou_bruteforce(a, b)) < 1e-12
