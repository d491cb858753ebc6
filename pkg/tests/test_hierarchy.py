import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import newsgroup_hierarchy, random_tree
from transferhb.families import GaussianFamily, MultinomialFamily
from transferhb.hierarchy import (
    HierarchyError,
    ParamState,
    build_hierarchy,
    internal_nodes,
    layout,
    leaves,
)


def fig1():
    return build_hierarchy([("giraffe", "quadruped"), ("deer", "quadruped")],
                           ["quadruped", "giraffe", "deer"])


def test_single_node_tree():
    h = build_hierarchy([], ["root"])
    assert h.root == 0
    assert h.parent(0) is None
    assert leaves(h) == [0]
    assert h.is_leaf(0)


def test_quadruped_tree_has_one_root_two_leaves():
    h = fig1()
    assert h.names[h.root] == "quadruped"
    assert {h.names[n] for n in leaves(h)} == {"giraffe", "deer"}
    assert internal_nodes(h) == [h.root]


def test_two_cycle_rejected():
    with pytest.raises(HierarchyError, match="cycle"):
        build_hierarchy([("a", "b"), ("b", "a")], ["a", "b"])


def test_newsgroup_shape():
    h = newsgroup_hierarchy()
    assert h.size == 21
    assert len(leaves(h)) == 15
    assert len([n for n in internal_nodes(h) if n != h.root]) == 5


@pytest.mark.parametrize("edges,names,msg", [
    ([("a", "r"), ("a", "s")], ["r", "s", "a"], "two parents"),
    ([("a", "zz")], ["r", "a"], "unknown"),
    ([], ["r", "s"], "root"),
    ([("a", "r")], ["r", "a", "a"], "duplicate"),
    ([("a", "a")], ["r", "a"], "cycle"),
    ([("b", "a"), ("a", "b")], ["r", "a", "b"], "cycle"),
])
def test_invalid_hierarchies(edges, names, msg):
    with pytest.raises(HierarchyError, match=msg):
        build_hierarchy(edges, names)


def test_empty_name_rejected():
    with pytest.raises(HierarchyError):
        build_hierarchy([], [""])


def test_chain_depths_and_descendants():
    h = build_hierarchy([("mid", "root"), ("leaf", "mid")], ["root", "mid", "leaf"])
    assert [h.depth(n) for n in range(3)] == [0, 1, 2]
    assert h.descendant_leaves(h.root) == [h.index("leaf")]
    assert h.topological()[0] == h.root


def test_layout_sizes():
    h3 = fig1()
    assert layout(h3, GaussianFamily(2).groups).total_dim == 15
    assert layout(h3, MultinomialFamily(4).groups).total_dim == 12
    assert layout(build_hierarchy([], ["r"]), MultinomialFamily(1).groups).total_dim == 1


def test_layout_rejects_zero_group():
    with pytest.raises(ValueError):
        layout(fig1(), [("mean", 0)])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 4), st.integers(0, 10_000))
def test_layout_is_a_bijection(n_nodes, d, seed):
    h = random_tree(np.random.default_rng(seed), n_nodes)
    idx = layout(h, GaussianFamily(d).groups)
    owner = np.full(idx.total_dim, -1)
    for (node, group), sl in idx.blocks.items():
        assert np.all(owner[sl] == -1)
        owner[sl] = 1
        for k, coord in enumerate(range(sl.start, sl.stop)):
            assert idx.locate(coord) == (node, group, k)
    assert np.all(owner == 1)
    assert len(h.edges) == h.size - 1
    assert sorted(leaves(h) + internal_nodes(h)) == list(range(h.size))


def test_param_state_get_set_copy():
    h = fig1()
    idx = layout(h, MultinomialFamily(3).groups)
    s = ParamState(idx, np.zeros(idx.total_dim))
    s.set(1, "logits", [1, 2, 3])
    c = s.copy()
    c.set(1, "logits", [0, 0, 0])
    np.testing.assert_array_equal(s.get(1, "logits"), [1, 2, 3])
    with pytest.raises(ValueError):
        ParamState(idx, np.zeros(idx.total_dim + 1))


def test_to_dict_round_trip():
    h = newsgroup_hierarchy()
    d = h.to_dict()
    again = build_hierarchy(d["edges"], d["nodes"])
    assert again == h
