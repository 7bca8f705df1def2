from __future__ import annotations

from hypothesis import given
from hypothesis import strategies as st

from cedsmc_app.unionfind import UnionFind
from tests.settings import STANDARD_SETTINGS


def test_groups_keep_insertion_order():
    uf = UnionFind(range(6))
    uf.union(4, 1)
    uf.union(5, 0)
    uf.union_all([2])
    groups = list(uf.groups().values())
    assert groups == [[0, 5], [1, 4], [2], [3]]


def test_union_all_merges_everything():
    uf: UnionFind[str] = UnionFind()
    uf.union_all("abc")
    uf.union_all([])
    assert list(uf.groups().values()) == [["a", "b", "c"]]
    assert uf.find("z") == "z"


@given(
    n=st.integers(1, 12),
    edges=st.lists(st.tuples(st.integers(0, 11), st.integers(0, 11)), max_size=20),
)
@STANDARD_SETTINGS
def test_groups_partition_by_reachability(n, edges):
    edges = [(a % n, b % n) for a, b in edges]
    uf = UnionFind(range(n))
    for a, b in edges:
        uf.union(a, b)

    # reference: flood fill over the undirected edge list
    label = list(range(n))
    changed = True
    while changed:
        changed = False
        for a, b in edges:
            low = min(label[a], label[b])
            if label[a] != low or label[b] != low:
                label[a] = label[b] = low
                changed = True

    expected = {}
    for x in range(n):
        expected.setdefault(label[x], []).append(x)
    assert sorted(uf.groups().values()) == sorted(expected.values())
