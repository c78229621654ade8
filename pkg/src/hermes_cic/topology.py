"""Undirected communication graphs over the vehicles of a platoon."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class CommGraph:
    """Binary symmetric adjacency over vehicles indexed ``1..n``."""

    n: int
    adjacency: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.int8)
        if a.shape != (self.n, self.n):
            raise ValidationError("adjacency", f"expected shape {(self.n, self.n)}, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise ValidationError("adjacency", "must be symmetric")
        if np.any(np.diag(a)):
            raise ValidationError("adjacency", "self-edges are not allowed")
        if not np.all((a == 0) | (a == 1)):
            raise ValidationError("adjacency", "entries must be 0 or 1")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum()) // 2

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as 1-based ``(i, j)`` pairs with ``i < j``."""
        rows, cols = np.nonzero(np.triu(self.adjacency))
        return [(int(i) + 1, int(j) + 1) for i, j in zip(rows, cols)]

    def __eq__(self, other):
        if not isinstance(other, CommGraph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash((self.n, self.adjacency.tobytes()))


def build_graph(n: int, edges: Iterable[Sequence[int]]) -> CommGraph:
    if n < 1:
        raise ValidationError("n", "need at least one vehicle")
    a = np.zeros((n, n), dtype=np.int8)
    for pair in edges:
        i, j = (int(x) for x in pair)
        if i == j:
            raise ValidationError("edges", f"self-pair ({i}, {j})")
        if not (1 <= i <= n and 1 <= j <= n):
            raise ValidationError("edges", f"pair ({i}, {j}) outside 1..{n}")
        a[i - 1, j - 1] = a[j - 1, i - 1] = 1
    return CommGraph(n, a)


def neighbors(g: CommGraph, i: int) -> set[int]:
    if not 1 <= i <= g.n:
        raise ValidationError("i", f"vehicle index {i} outside 1..{g.n}")
    return {int(j) + 1 for j in np.flatnonzero(g.adjacency[i - 1])}


def is_connected(g: CommGraph) -> bool:
    seen = {1}
    queue = deque([1])
    while queue:
        i = queue.popleft()
        for j in neighbors(g, i):
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == g.n


def chain_graph(order: Sequence[int]) -> CommGraph:
    """Predecessor-follower chain; ``order`` lists vehicle indices by crossing rank."""
    n = len(order)
    return build_graph(n, zip(order, order[1:]))


def complete_graph(n: int) -> CommGraph:
    return build_graph(n, [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)])
