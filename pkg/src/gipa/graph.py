"""Destination-grouped CSR graph store and subgraph selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, IngestionError

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class Graph:
    """Directed multigraph with in-edges of node ``i`` at
    ``row_offsets[i]:row_offsets[i + 1]``, sorted by source id.

    ``split`` holds integer codes indexing :data:`SPLITS`.
    """

    n_nodes: int
    row_offsets: np.ndarray
    src_ids: np.ndarray
    edge_feat: np.ndarray
    node_feat: np.ndarray
    labels: np.ndarray
    split: np.ndarray

    @property
    def n_edges(self) -> int:
        return int(self.src_ids.shape[0])

    @property
    def dst_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_nodes, dtype=np.int64), np.diff(self.row_offsets))

    def in_degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def split_mask(self, name: str) -> np.ndarray:
        return self.split == SPLITS.index(name)

    def edge_list(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) arrays in CSR order."""
        return self.src_ids.copy(), self.dst_ids


@dataclass(frozen=True)
class Subgraph:
    parent_ids: np.ndarray
    parent_edge_ids: np.ndarray
    graph: Graph


def _as_matrix(rows, n_expected: int | None, what: str) -> np.ndarray:
    if isinstance(rows, np.ndarray):
        arr = rows.astype(np.float64, copy=False)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 0)
    else:
        rows = list(rows)
        width = None
        for k, r in enumerate(rows):
            w = len(r)
            if width is None:
                width = w
            elif w != width:
                raise IngestionError(f"ragged {what} row: width {w}, expected {width}", record=k)
        arr = np.asarray(rows, dtype=np.float64).reshape(len(rows), width or 0)
    if arr.ndim != 2:
        raise IngestionError(f"{what} must be a 2-D matrix, got {arr.ndim} dims")
    if n_expected is not None and arr.shape[0] != n_expected:
        raise IngestionError(f"{what} has {arr.shape[0]} rows, expected {n_expected}")
    return arr


def _split_codes(split, n: int) -> np.ndarray:
    if split is None:
        return np.zeros(n, dtype=np.int8)
    out = np.empty(n, dtype=np.int8)
    split = list(split)
    if len(split) != n:
        raise IngestionError(f"split has {len(split)} entries, expected {n}")
    for k, s in enumerate(split):
        if isinstance(s, str):
            if s not in SPLITS:
                raise IngestionError(f"unknown split tag {s!r}", record=k)
            out[k] = SPLITS.index(s)
        else:
            if int(s) not in (0, 1, 2):
                raise IngestionError(f"unknown split code {s!r}", record=k)
            out[k] = int(s)
    return out


def build_graph(src, dst, edge_feat, node_feat, labels=None, split=None,
                undirected: bool = False) -> Graph:
    """Ingest an edge list into destination-grouped CSR.

    With ``undirected=True`` each input edge becomes two directed edges
    carrying copies of the same feature row.
    """
    node_feat = _as_matrix(node_feat, None, "node feature")
    n = node_feat.shape[0]
    src = np.asarray(src, dtype=np.int64).reshape(-1)
    dst = np.asarray(dst, dtype=np.int64).reshape(-1)
    if src.shape != dst.shape:
        raise IngestionError(f"src has {src.size} entries but dst has {dst.size}")
    n_in = src.size
    if edge_feat is None:
        efeat = np.zeros((n_in, 0))
    else:
        efeat = _as_matrix(edge_feat, n_in, "edge feature")
    bad = np.flatnonzero((src < 0) | (src >= n) | (dst < 0) | (dst >= n))
    if bad.size:
        k = int(bad[0])
        raise IngestionError(f"edge ({src[k]}, {dst[k]}) has a node id outside [0, {n})", record=k)

    if labels is None:
        labels = np.zeros((n, 0))
    labels = _as_matrix(labels, n, "label")
    codes = _split_codes(split, n)

    if undirected:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        efeat = np.concatenate([efeat, efeat], axis=0)
    order = np.lexsort((np.arange(src.size), src, dst))
    src, dst, efeat = src[order], dst[order], efeat[order]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=n), out=offsets[1:])
    return Graph(n, offsets, src, np.ascontiguousarray(efeat), node_feat, labels, codes)


def neighbors(g: Graph, i: int) -> list[tuple[int, int]]:
    """In-neighbours of ``i`` as ``(source id, edge id)`` pairs, ascending by source."""
    if not 0 <= i < g.n_nodes:
        raise IndexError(f"node {i} out of range [0, {g.n_nodes})")
    lo, hi = int(g.row_offsets[i]), int(g.row_offsets[i + 1])
    return [(int(g.src_ids[e]), e) for e in range(lo, hi)]


def induced_subgraph(g: Graph, nodes) -> Subgraph:
    """Keep the selected nodes (relabelled densely, relative order preserved)
    and exactly the edges whose endpoints are both selected."""
    ids = np.unique(np.asarray(list(nodes) if not isinstance(nodes, np.ndarray) else nodes,
                               dtype=np.int64))
    if ids.size and (ids[0] < 0 or ids[-1] >= g.n_nodes):
        raise IndexError(f"node id out of range [0, {g.n_nodes})")
    new_id = np.full(g.n_nodes, -1, dtype=np.int64)
    new_id[ids] = np.arange(ids.size)
    dst = g.dst_ids
    keep = np.flatnonzero((new_id[g.src_ids] >= 0) & (new_id[dst] >= 0))
    # parent CSR order is (dst, src) sorted and relabelling is monotone, so no re-sort
    sub_src = new_id[g.src_ids[keep]]
    sub_dst = new_id[dst[keep]]
    offsets = np.zeros(ids.size + 1, dtype=np.int64)
    np.cumsum(np.bincount(sub_dst, minlength=ids.size), out=offsets[1:])
    sub = Graph(int(ids.size), offsets, sub_src, g.edge_feat[keep], g.node_feat[ids],
                g.labels[ids], g.split[ids])
    return Subgraph(ids, keep, sub)


def random_partition(g: Graph, n_parts: int, seed) -> list[Subgraph]:
    """Shuffle nodes with a seeded RNG and cut them into ``n_parts`` near-equal
    groups, returning the induced subgraph of each group."""
    if not 1 <= n_parts <= max(g.n_nodes, 1):
        raise ContractError(f"n_parts must be in [1, {g.n_nodes}], got {n_parts}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(g.n_nodes)
    return [induced_subgraph(g, part) for part in np.array_split(perm, n_parts)]
