"""Metapath discovery between same-type endpoints.

Candidate endpoint pairs come from boolean products of the adjacency started
at both ends; concrete node paths are then enumerated breadth-first from each
end and joined where the two half-paths share their last node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation
from .hingraph import HeteroGraph

DEFAULT_MAX_LEN = 5
DEFAULT_P = 10

Node = tuple[str, int]


@dataclass(frozen=True)
class MetaPath:
    nodes: tuple[Node, ...]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def endpoint_type(self) -> str:
        return self.nodes[0][0]

    @property
    def type_signature(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.nodes)

    def reversed(self) -> "MetaPath":
        return MetaPath(self.nodes[::-1])

    def validate(self, graph: HeteroGraph, max_len: int = DEFAULT_MAX_LEN) -> None:
        if not 3 <= len(self.nodes) <= max_len:
            raise ValueError(f"path length {len(self.nodes)} outside [3, {max_len}]")
        if self.nodes[0][0] != self.nodes[-1][0]:
            raise ValueError("endpoints differ in type")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("path repeats a node")
        for (ta, ia), (tb, ib) in zip(self.nodes, self.nodes[1:]):
            if graph.relation(ta, tb)[ia, ib] == 0:
                raise ValueError(f"no edge {ta}:{ia} - {tb}:{ib}")

    def __str__(self) -> str:
        return " ".join(f"{t}:{i}" for t, i in self.nodes)


def path_sort_key(path: MetaPath):
    return len(path.nodes), path.nodes


@dataclass
class PathSet:
    """Paths per unordered endpoint pair, stored under ``(a, b)`` with ``a < b``.

    ``totals`` keeps the number of paths found before truncation to ``p``.
    """

    endpoint_type: str
    max_len: int
    p: int | None
    paths: dict[tuple[int, int], list[MetaPath]] = field(default_factory=dict)
    totals: dict[tuple[int, int], int] = field(default_factory=dict)

    def get(self, a: int, b: int) -> list[MetaPath]:
        if a <= b:
            return self.paths.get((a, b), [])
        return [q.reversed() for q in self.paths.get((b, a), [])]

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self.paths)

    def __len__(self) -> int:
        return len(self.paths)

    def path_set(self) -> set[MetaPath]:
        return {q for ps in self.paths.values() for q in ps}

    def num_paths(self) -> int:
        return sum(len(v) for v in self.paths.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PathSet):
            return NotImplemented
        return (self.endpoint_type, self.max_len, self.p, self.paths, self.totals) == (
            other.endpoint_type, other.max_len, other.p, other.paths, other.totals)


def _select(paths: Iterable[MetaPath], p: int | None) -> list[MetaPath]:
    ordered = sorted(set(paths), key=path_sort_key)
    return ordered if p is None else ordered[:p]


def _pathset_from(endpoint_type, max_len, p, found: dict[tuple[int, int], list[MetaPath]]) -> PathSet:
    ps = PathSet(endpoint_type, max_len, p)
    for key in sorted(found):
        uniq = set(found[key])
        if uniq:
            ps.totals[key] = len(uniq)
            ps.paths[key] = _select(uniq, p)
    return ps


def _reach_matrices(adj: sp.csr_matrix, starts: np.ndarray, max_hops: int) -> list[sp.csr_matrix]:
    """``out[j][s, v] = 1`` iff some walk of exactly j hops joins start s to node v."""
    n = adj.shape[0]
    cur = sp.csr_matrix((np.ones(len(starts), dtype=np.int8), (np.arange(len(starts)), starts)),
                        shape=(len(starts), n))
    out = [cur]
    a32 = adj.astype(np.int32)
    for _ in range(max_hops):
        cur = ((cur.astype(np.int32) @ a32) > 0).astype(np.int8).tocsr()
        out.append(cur)
    return out


class _HalfPaths:
    """Breadth-first enumeration of simple half-paths, memoised per (start, hops)."""

    def __init__(self, adj: sp.csr_matrix):
        self.indptr = adj.indptr
        self.indices = adj.indices
        self._memo: dict[tuple[int, int], dict[int, list[tuple[int, ...]]]] = {}

    def __call__(self, start: int, hops: int) -> dict[int, list[tuple[int, ...]]]:
        key = (start, hops)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        layer = [(start,)]
        for _ in range(hops):
            nxt = []
            for path in layer:
                last = path[-1]
                for v in self.indices[self.indptr[last]:self.indptr[last + 1]]:
                    v = int(v)
                    if v not in path:
                        nxt.append(path + (v,))
            layer = nxt
        by_end: dict[int, list[tuple[int, ...]]] = {}
        for path in layer:
            by_end.setdefault(path[-1], []).append(path)
        self._memo[key] = by_end
        return by_end


def _to_metapath(graph: HeteroGraph, gids: Iterable[int]) -> MetaPath:
    return MetaPath(tuple(graph.local(g) for g in gids))


def biwalk(graph: HeteroGraph, endpoint_type: str, max_len: int = DEFAULT_MAX_LEN,
           p: int | None = DEFAULT_P) -> PathSet:
    """Discover up to ``p`` node-simple paths for every pair of ``endpoint_type`` nodes.

    For a path of ``I`` nodes (``I - 1`` hops) the walk from the first
    endpoint covers ``ceil((I-1)/2)`` hops and the walk from the second
    covers the rest. Pairs whose reach sets intersect are candidates; their
    half-paths are joined on the shared meeting node. Per pair the ``p``
    shortest paths are kept, ties broken on the (type, id) sequence.
    ``p=None`` keeps everything.
    """
    if endpoint_type not in graph.node_types:
        raise ContractViolation(f"endpoint type {endpoint_type!r} not in graph")
    if max_len < 3:
        raise ContractViolation("max_len must be at least 3")
    n_end = graph.num_nodes(endpoint_type)
    if n_end == 0:
        return PathSet(endpoint_type, max_len, p)
    adj = graph.adjacency
    off = graph.offset(endpoint_type)
    starts = np.arange(off, off + n_end)
    reach = _reach_matrices(adj, starts, math.ceil((max_len - 1) / 2))
    halves = _HalfPaths(adj)

    found: dict[tuple[int, int], list[MetaPath]] = {}
    for hops in range(2, max_len):
        fwd, bwd = math.ceil(hops / 2), hops // 2
        cand = sp.triu((reach[fwd].astype(np.int32) @ reach[bwd].T.astype(np.int32)) > 0, k=1).tocoo()
        for a, b in sorted(zip(cand.row.tolist(), cand.col.tolist())):
            ga, gb = a + off, b + off
            left, right = halves(ga, fwd), halves(gb, bwd)
            for meet in sorted(left.keys() & right.keys()):
                for lp in left[meet]:
                    if gb in lp:
                        continue
                    lset = set(lp)
                    for rp in right[meet]:
                        if ga in rp or lset.intersection(rp[:-1]):
                            continue
                        found.setdefault((a, b), []).append(_to_metapath(graph, lp + rp[-2::-1]))
    return _pathset_from(endpoint_type, max_len, p, found)


def brute_force_paths(graph: HeteroGraph, endpoint_type: str, max_len: int = DEFAULT_MAX_LEN,
                      max_nodes: int = 32) -> PathSet:
    """Exhaustive depth-first enumeration; a test oracle for small graphs only."""
    if graph.total_nodes > max_nodes:
        raise ContractViolation(f"brute force refuses graphs over {max_nodes} nodes ({graph.total_nodes})")
    if endpoint_type not in graph.node_types:
        raise ContractViolation(f"endpoint type {endpoint_type!r} not in graph")
    adj = graph.adjacency
    nbrs = [adj.indices[adj.indptr[i]:adj.indptr[i + 1]].tolist() for i in range(graph.total_nodes)]
    found: dict[tuple[int, int], list[MetaPath]] = {}

    def dfs(path: list[int]):
        last = path[-1]
        if len(path) >= 3:
            t, i = graph.local(last)
            a = graph.local(path[0])[1]
            if t == endpoint_type and a < i:
                found.setdefault((a, i), []).append(_to_metapath(graph, path))
        if len(path) == max_len:
            return
        for v in nbrs[last]:
            if v not in path:
                path.append(v)
                dfs(path)
                path.pop()

    off = graph.offset(endpoint_type)
    for a in range(graph.num_nodes(endpoint_type)):
        dfs([a + off])
    return _pathset_from(endpoint_type, max_len, None, found)


def path_count_stats(ps: PathSet) -> float:
    """Mean pre-truncation path count per endpoint that takes part in any pair."""
    per_node: dict[int, int] = {}
    for (a, b), n in ps.totals.items():
        per_node[a] = per_node.get(a, 0) + n
        per_node[b] = per_node.get(b, 0) + n
    return float(np.mean(list(per_node.values()))) if per_node else 0.0


# -- serialisation ----------------------------------------------------------
def save_pathset(path: str | Path, ps: PathSet) -> None:
    lines = [f"# pathset endpoint_type={ps.endpoint_type} max_len={ps.max_len} p={ps.p}"]
    for key in sorted(ps.paths):
        lines.append(f"# total\t{key[0]}\t{key[1]}\t{ps.totals[key]}")
        for q in ps.paths[key]:
            lines.append(f"{key[0]}\t{key[1]}\t{q}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_pathset(path: str | Path) -> PathSet:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = dict(kv.split("=", 1) for kv in text[0].split()[2:])
    p = None if header["p"] == "None" else int(header["p"])
    ps = PathSet(header["endpoint_type"], int(header["max_len"]), p)
    for line in text[1:]:
        if not line:
            continue
        if line.startswith("# total"):
            _, a, b, n = line.split("\t")
            ps.totals[(int(a), int(b))] = int(n)
            continue
        a, b, seq = line.split("\t")
        nodes = tuple((t, int(i)) for t, i in (tok.rsplit(":", 1) for tok in seq.split(" ")))
        ps.paths.setdefault((int(a), int(b)), []).append(MetaPath(nodes))
    return ps
