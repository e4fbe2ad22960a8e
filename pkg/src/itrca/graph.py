"""Causal DAG container, structural predicates and controlled misspecification."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    pass


class CycleError(GraphError):
    pass


class UnknownNodeError(GraphError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class DuplicateEdgeError(GraphError):
    pass


class InfeasibleShdError(GraphError):
    pass


class MaxRetriesError(RuntimeError):
    pass


@dataclass(frozen=True)
class CausalDag:
    """Immutable DAG over named variables.

    Use :func:`build_dag` to construct one; it validates the edge list and
    precomputes parent/child lists and a topological order.
    """

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    _index: dict[str, int] = field(repr=False, compare=False)
    _parents: tuple[tuple[str, ...], ...] = field(repr=False, compare=False)
    _children: tuple[tuple[str, ...], ...] = field(repr=False, compare=False)
    _order: tuple[str, ...] = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node: object) -> bool:
        return node in self._index

    def index(self, node: str) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise UnknownNodeError(f"unknown node {node!r}") from None

    def parents(self, node: str) -> tuple[str, ...]:
        return self._parents[self.index(node)]

    def children(self, node: str) -> tuple[str, ...]:
        return self._children[self.index(node)]

    def in_degree(self, node: str) -> int:
        return len(self.parents(node))

    def topological_order(self) -> tuple[str, ...]:
        return self._order

    def roots(self) -> list[str]:
        return [n for n, ps in zip(self.nodes, self._parents) if not ps]

    def edge_set(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.edges)

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "edges": [list(e) for e in self.edges]}

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, payload: dict) -> "CausalDag":
        return build_dag(payload["nodes"], [tuple(e) for e in payload["edges"]])

    @classmethod
    def from_json(cls, text_or_path: str | Path) -> "CausalDag":
        if isinstance(text_or_path, Path) or not str(text_or_path).lstrip().startswith("{"):
            text_or_path = Path(text_or_path).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text_or_path))


def build_dag(nodes: Sequence[str], edges: Iterable[Sequence[str]]) -> CausalDag:
    """Validate ``nodes``/``edges`` and return a :class:`CausalDag`.

    Raises CycleError for self-loops and directed cycles, UnknownNodeError for
    edge endpoints that are not declared, DuplicateEdgeError for repeated edges
    or repeated node names.
    """
    nodes = tuple(str(n) for n in nodes)
    index = {n: i for i, n in enumerate(nodes)}
    if len(index) != len(nodes):
        raise DuplicateEdgeError("node names must be unique")

    edge_list: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    parents: list[list[str]] = [[] for _ in nodes]
    children: list[list[str]] = [[] for _ in nodes]
    for edge in edges:
        u, v = (str(x) for x in edge)
        for name in (u, v):
            if name not in index:
                raise UnknownNodeError(f"edge ({u!r}, {v!r}) references unknown node {name!r}")
        if u == v:
            raise CycleError(f"self-loop on {u!r}")
        if (u, v) in seen:
            raise DuplicateEdgeError(f"duplicate edge ({u!r}, {v!r})")
        seen.add((u, v))
        edge_list.append((u, v))
        parents[index[v]].append(u)
        children[index[u]].append(v)

    # Kahn's algorithm; ties resolved by declaration order so the result is stable.
    indeg = [len(p) for p in parents]
    ready = deque(i for i, d in enumerate(indeg) if d == 0)
    order: list[str] = []
    while ready:
        i = ready.popleft()
        order.append(nodes[i])
        for c in children[i]:
            j = index[c]
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    if len(order) != len(nodes):
        stuck = [nodes[i] for i, d in enumerate(indeg) if d > 0]
        raise CycleError(f"directed cycle among {stuck[:5]}")

    return CausalDag(
        nodes=nodes,
        edges=tuple(edge_list),
        _index=index,
        _parents=tuple(tuple(p) for p in parents),
        _children=tuple(tuple(c) for c in children),
        _order=tuple(order),
    )


def is_polytree(dag: CausalDag) -> bool:
    """True iff the undirected skeleton has no cycle (a forest)."""
    parent = list(range(len(dag.nodes)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for u, v in dag.edges:
        ru, rv = find(dag.index(u)), find(dag.index(v))
        if ru == rv:
            return False
        parent[ru] = rv
    return True


def ancestors(dag: CausalDag, node: str) -> set[str]:
    """Nodes with a directed path into ``node``, including ``node`` itself."""
    dag.index(node)
    out = {node}
    stack = [node]
    while stack:
        for p in dag.parents(stack.pop()):
            if p not in out:
                out.add(p)
                stack.append(p)
    return out


def descendants(dag: CausalDag, node: str) -> set[str]:
    """Nodes reachable from ``node``, including ``node`` itself."""
    dag.index(node)
    out = {node}
    stack = [node]
    while stack:
        for c in dag.children(stack.pop()):
            if c not in out:
                out.add(c)
                stack.append(c)
    return out


def max_in_degree(dag: CausalDag) -> int:
    return max((len(p) for p in dag._parents), default=0)


def structural_hamming_distance(a: CausalDag, b: CausalDag) -> int:
    """Count node pairs whose edge status differs; a reversal costs 1."""
    ea, eb = a.edge_set(), b.edge_set()
    pairs = {frozenset(e) for e in ea} | {frozenset(e) for e in eb}
    dist = 0
    for pair in pairs:
        u, v = tuple(pair)
        if (((u, v) in ea) != ((u, v) in eb)) or (((v, u) in ea) != ((v, u) in eb)):
            dist += 1
    return dist


def shd_feasible_range(n_nodes: int, n_edges: int, target_shd: int) -> tuple[int, int]:
    """Closed interval of admissible add/remove counts for ``target_shd``.

    With ``m`` edges removed and ``m`` added, the remaining budget
    ``target_shd - 2m`` is spent on reversals of un-removed edges, so
    ``target_shd - n_edges <= m <= target_shd // 2``; additions are drawn
    from pairs not adjacent in the input graph.
    """
    free_pairs = n_nodes * (n_nodes - 1) // 2 - n_edges
    lo = max(0, target_shd - n_edges)
    hi = min(target_shd // 2, n_edges, free_pairs)
    return lo, hi


def _reaches(succ: list[set[int]], src: int, dst: int) -> bool:
    stack, seen = [src], {src}
    while stack:
        for w in succ[stack.pop()]:
            if w == dst:
                return True
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return False


def perturb_graph(
    dag: CausalDag,
    target_shd: int,
    rng: np.random.Generator,
    max_retries: int = 10_000,
) -> CausalDag:
    """Randomly add, remove and reverse edges so the SHD to ``dag`` is exactly ``target_shd``.

    Equal numbers of edges are added and removed so density is preserved.
    Edits are applied one at a time and each keeps the graph acyclic: a
    reversal is only taken when no other path joins its endpoints, and an
    added pair gets whichever orientation closes no cycle.  Every edit touches
    a distinct node pair, so the distance is exact.  If too few reversals are
    admissible the draw is repeated.
    """
    if target_shd < 0:
        raise InfeasibleShdError("target_shd must be nonnegative")
    if target_shd == 0:
        return dag
    lo, hi = shd_feasible_range(len(dag.nodes), len(dag.edges), target_shd)
    if lo > hi:
        raise InfeasibleShdError(
            f"SHD {target_shd} not reachable with {len(dag.nodes)} nodes and {len(dag.edges)} edges"
        )

    n = len(dag.nodes)
    edges = [(dag.index(u), dag.index(v)) for u, v in dag.edges]
    adjacent = {frozenset(e) for e in edges}
    free = [(i, j) for i in range(n) for j in range(i + 1, n) if frozenset((i, j)) not in adjacent]

    for _ in range(max_retries):
        n_ar = int(rng.integers(lo, hi + 1))
        n_flip = target_shd - 2 * n_ar
        perm = rng.permutation(len(edges))
        kept = [edges[i] for i in perm[n_ar:]]
        succ: list[set[int]] = [set() for _ in range(n)]
        for u, v in kept:
            succ[u].add(v)

        pending = list(range(len(kept)))
        flipped = 0
        progress = True
        while flipped < n_flip and progress:
            progress = False
            rest = []
            for i in pending:
                if flipped == n_flip:
                    rest.append(i)
                    continue
                u, v = kept[i]
                succ[u].discard(v)
                if _reaches(succ, u, v):
                    succ[u].add(v)
                    rest.append(i)
                else:
                    succ[v].add(u)
                    kept[i] = (v, u)
                    flipped += 1
                    progress = True
            pending = rest
        if flipped < n_flip:
            continue

        new_edges = list(kept)
        for k in rng.choice(len(free), size=n_ar, replace=False) if n_ar else []:
            u, v = free[int(k)]
            if rng.random() < 0.5:
                u, v = v, u
            if _reaches(succ, v, u):
                u, v = v, u
            succ[u].add(v)
            new_edges.append((u, v))
        return build_dag(dag.nodes, [(dag.nodes[u], dag.nodes[v]) for u, v in new_edges])
    raise MaxRetriesError(f"no acyclic graph at SHD {target_shd} after {max_retries} draws")
