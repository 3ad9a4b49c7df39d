"""Item co-occurrence graphs built from sessions."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import UnknownNodeError

MAX_SESSION_ITEMS = 40


@dataclass(eq=False)
class ItemGraph:
    """Undirected weighted item graph.

    Edges are stored once with ``src < dst``; ``weights`` are the raw
    co-occurrence ``counts`` divided by the largest count.
    """

    node_ids: np.ndarray
    node_types: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    counts: np.ndarray
    max_count: int = 0
    _adj: dict | None = field(default=None, repr=False)

    @property
    def weights(self) -> np.ndarray:
        if self.max_count == 0:
            return np.zeros(0)
        return self.counts / float(self.max_count)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def __contains__(self, i) -> bool:
        k = np.searchsorted(self.node_ids, i)
        return bool(k < len(self.node_ids) and self.node_ids[k] == i)

    def node_type(self, i) -> int:
        if i not in self:
            raise UnknownNodeError(f"item {i} is not a node", stage="graph")
        return int(self.node_types[np.searchsorted(self.node_ids, i)])

    def co_counts(self) -> dict:
        return {(int(a), int(b)): int(c) for a, b, c in zip(self.src, self.dst, self.counts)}

    def weight(self, i, j) -> float:
        a, b = min(i, j), max(i, j)
        return self.edge_weights().get((a, b), 0.0)

    def edge_weights(self) -> dict:
        return {(int(a), int(b)): float(w) for a, b, w in zip(self.src, self.dst, self.weights)}

    def adjacency(self) -> dict:
        if self._adj is None:
            adj: dict = {int(i): [] for i in self.node_ids}
            for a, b, w in zip(self.src.tolist(), self.dst.tolist(), self.weights.tolist()):
                adj[a].append((b, w))
                adj[b].append((a, w))
            self._adj = adj
        return self._adj

    def weight_matrix(self, n_items: int) -> np.ndarray:
        """Dense symmetric weight matrix over item indices 0..n_items-1."""
        w = np.zeros((n_items, n_items))
        w[self.src, self.dst] = self.weights
        w[self.dst, self.src] = self.weights
        return w

    def __eq__(self, other) -> bool:
        if not isinstance(other, ItemGraph):
            return NotImplemented
        return (
            self.max_count == other.max_count
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("node_ids", "node_types", "src", "dst", "counts")
            )
        )


def _dedup(items):
    seen, out = set(), []
    for i in items:
        if i not in seen:
            seen.add(i)
            out.append(i)
    return out


def build_graph(sessions, item_types, max_session_items: int = MAX_SESSION_ITEMS, use_numba=None) -> ItemGraph:
    """Co-occurrence graph over indexed sessions.

    Every unordered pair of distinct items inside a session adds 1 to its
    count; only the first ``max_session_items`` distinct items of a session
    are paired. ``item_types`` maps item index to category index.
    """
    item_types = np.asarray(item_types, dtype=np.int64)
    nodes = set()
    flat, offsets = [], [0]
    for s in sessions:
        items = _dedup(s.items)
        nodes.update(items)
        items = items[:max_session_items]
        flat.extend(items)
        offsets.append(len(flat))
    node_ids = np.array(sorted(nodes), dtype=np.int64)
    n = int(node_ids[-1]) + 1 if len(node_ids) else 1
    codes = _kernels.pair_codes(np.array(flat, dtype=np.int64), np.array(offsets, dtype=np.int64), n, use_numba)
    uniq, counts = np.unique(codes, return_counts=True)
    return ItemGraph(
        node_ids=node_ids,
        node_types=item_types[node_ids] if len(node_ids) else np.zeros(0, dtype=np.int64),
        src=(uniq // n).astype(np.int64),
        dst=(uniq % n).astype(np.int64),
        counts=counts.astype(np.int64),
        max_count=int(counts.max()) if len(counts) else 0,
    )


def build_split_graphs(split, item_types, **kwargs):
    """Training graph from train sessions and testing graph from test sessions."""
    return build_graph(split.train, item_types, **kwargs), build_graph(split.test, item_types, **kwargs)


def neighbors(g: ItemGraph, i: int, min_weight: float = 0.0):
    """Neighbors of ``i`` with weight >= ``min_weight``, heaviest first, ties by index."""
    if i not in g:
        raise UnknownNodeError(f"item {i} is not a node", stage="graph")
    out = [(j, w) for j, w in g.adjacency()[int(i)] if w >= min_weight]
    return sorted(out, key=lambda jw: (-jw[1], jw[0]))


# ---------------------------------------------------------------- persistence


def graph_to_ndjson(g: ItemGraph) -> str:
    lines = [json.dumps({"record": "header", "n_nodes": g.n_nodes, "n_edges": g.n_edges, "max_count": g.max_count})]
    for i, t in zip(g.node_ids.tolist(), g.node_types.tolist()):
        lines.append(json.dumps({"record": "node", "id": i, "type": t}))
    for a, b, c, w in zip(g.src.tolist(), g.dst.tolist(), g.counts.tolist(), g.weights.tolist()):
        lines.append(json.dumps({"record": "edge", "i": a, "j": b, "count": c, "weight": w}))
    return "\n".join(lines) + "\n"


def graph_from_ndjson(text: str) -> ItemGraph:
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    header, body = records[0], records[1:]
    if header.get("record") != "header":
        raise ValueError("graph file must start with a header record")
    nodes = [r for r in body if r["record"] == "node"]
    edges = [r for r in body if r["record"] == "edge"]
    if len(nodes) != header["n_nodes"] or len(edges) != header["n_edges"]:
        raise ValueError("graph header counts do not match the records")
    return ItemGraph(
        node_ids=np.array([r["id"] for r in nodes], dtype=np.int64),
        node_types=np.array([r["type"] for r in nodes], dtype=np.int64),
        src=np.array([r["i"] for r in edges], dtype=np.int64),
        dst=np.array([r["j"] for r in edges], dtype=np.int64),
        counts=np.array([r["count"] for r in edges], dtype=np.int64),
        max_count=int(header["max_count"]),
    )


def save_graph(g: ItemGraph, path) -> None:
    Path(path).write_text(graph_to_ndjson(g), encoding="utf-8")


def load_graph(path) -> ItemGraph:
    return graph_from_ndjson(Path(path).read_text(encoding="utf-8"))
