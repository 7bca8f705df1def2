from __future__ import annotations

from collections import Counter
from collections.abc import Hashable, Iterable
from typing import Generic, TypeVar


T = TypeVar("T", bound=Hashable)


class UnionFind(Generic[T]):
    """Disjoint sets with union by rank and path compression.

    >>> uf = UnionFind()
    >>> uf.union(1, 2)
    >>> uf.union(4, 5)
    >>> uf.find(2) == uf.find(1), uf.find(4) == uf.find(1)
    (True, False)
    """

    def __init__(self, items: Iterable[T] = ()) -> None:
        self.parent: dict[T, T] = {}
        self.rank: Counter[T] = Counter()
        for item in items:
            self.add(item)

    def add(self, x: T) -> None:
        self.parent.setdefault(x, x)

    def find(self, x: T) -> T:
        root = self.parent.setdefault(x, x)
        if root == x:
            return x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: T, y: T) -> None:
        px = self.find(x)
        py = self.find(y)
        if px == py:
            return
        if self.rank[px] == self.rank[py]:
            self.parent[py] = px
            self.rank[px] += 1
        elif self.rank[px] > self.rank[py]:
            self.parent[py] = px
        else:
            self.parent[px] = py

    def union_all(self, items: Iterable[T]) -> None:
        it = iter(items)
        first = next(it, None)
        if first is None:
            return
        self.add(first)
        for other in it:
            self.union(first, other)

    def groups(self) -> dict[T, list[T]]:
        """Root -> members, members in insertion order."""
        out: dict[T, list[T]] = {}
        for x in self.parent:
            out.setdefault(self.find(x), []).append(x)
        return out
