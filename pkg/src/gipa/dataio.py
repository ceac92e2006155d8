"""On-disk dataset format: a manifest plus four delimited text files.

::

    manifest.json   counts, widths and the undirected flag
    nodes.csv       id,f0..f{m-1}        (empty field = missing value)
    edges.csv       src,dst,e0..e{d-1}   (each undirected edge listed once)
    labels.csv      id,y0..y{L-1}        (0/1)
    split.csv       id,split             (train | valid | test)

Rows of ``nodes.csv``, ``labels.csv`` and ``split.csv`` may come in any
order but every id in ``[0, n_nodes)`` must appear exactly once. External
datasets (e.g. OGB packaging) are converted into this layout by a separate
script; no network download happens here.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestionError
from .graph import SPLITS, Graph, build_graph
from .fsutil import atomic_write

FORMAT = "gipa-dataset"
VERSION = 1
FILES = {"nodes": "nodes.csv", "edges": "edges.csv", "labels": "labels.csv", "split": "split.csv"}


@dataclass
class Dataset:
    """Raw matrices as stored on disk (undirected edges not yet doubled)."""

    node_feat: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_feat: np.ndarray
    labels: np.ndarray
    split: np.ndarray          # int codes into SPLITS
    undirected: bool = True

    @property
    def n_nodes(self) -> int:
        return self.node_feat.shape[0]

    def to_graph(self) -> Graph:
        return build_graph(self.src, self.dst, self.edge_feat, self.node_feat, self.labels,
                           self.split, undirected=self.undirected)

    def manifest(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "n_nodes": int(self.n_nodes),
            "n_edges": int(self.src.size),
            "n_features": int(self.node_feat.shape[1]),
            "edge_features": int(self.edge_feat.shape[1]),
            "n_labels": int(self.labels.shape[1]),
            "undirected": bool(self.undirected),
            "files": dict(FILES),
        }


def _num(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    m, d, L = ds.node_feat.shape[1], ds.edge_feat.shape[1], ds.labels.shape[1]
    atomic_write(path / FILES["nodes"], _csv_bytes(
        ["id"] + [f"f{k}" for k in range(m)],
        ([i] + [_num(v) for v in row] for i, row in enumerate(ds.node_feat))))
    atomic_write(path / FILES["edges"], _csv_bytes(
        ["src", "dst"] + [f"e{k}" for k in range(d)],
        ([int(s), int(t)] + [_num(v) for v in row]
         for s, t, row in zip(ds.src, ds.dst, ds.edge_feat))))
    atomic_write(path / FILES["labels"], _csv_bytes(
        ["id"] + [f"y{k}" for k in range(L)],
        ([i] + [int(v) for v in row] for i, row in enumerate(ds.labels))))
    atomic_write(path / FILES["split"], _csv_bytes(
        ["id", "split"], ([i, SPLITS[c]] for i, c in enumerate(ds.split))))
    atomic_write(path / "manifest.json", (json.dumps(ds.manifest(), indent=1) + "\n").encode())


def _float(field: str, fname, line: int) -> float:
    if field == "":
        return np.nan
    try:
        return float(field)
    except ValueError:
        raise IngestionError(f"not a number: {field!r}", file=fname, line=line) from None


def _int(field: str, fname, line: int) -> int:
    try:
        return int(field)
    except ValueError:
        raise IngestionError(f"not an integer id: {field!r}", file=fname, line=line) from None


def _rows(fname: Path, width: int):
    """Yield ``(line number, fields)`` for each data row, checking the width."""
    if not fname.exists():
        raise IngestionError("file is missing", file=fname)
    with open(fname, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != width:
            raise IngestionError(f"header has {0 if header is None else len(header)} columns, "
                                 f"expected {width}", file=fname, line=1)
        for fields in reader:
            line = reader.line_num
            if len(fields) != width:
                raise IngestionError(f"row has {len(fields)} columns, expected {width}",
                                     file=fname, line=line)
            yield line, fields


def _per_node(fname: Path, n: int, width: int, parse):
    """Fill one row per node id, rejecting duplicate, out-of-range and missing ids."""
    seen = np.zeros(n, dtype=bool)
    for line, fields in _rows(fname, width + 1):
        i = _int(fields[0], fname, line)
        if not 0 <= i < n:
            raise IngestionError(f"node id {i} outside [0, {n})", file=fname, line=line)
        if seen[i]:
            raise IngestionError(f"duplicate node id {i}", file=fname, line=line)
        seen[i] = True
        parse(i, fields[1:], line)
    if not seen.all():
        raise IngestionError(f"missing node id {int(np.flatnonzero(~seen)[0])}", file=fname)


def load_dataset(path) -> tuple[Graph, Dataset]:
    """Read and validate a dataset directory; returns the graph and raw matrices."""
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise IngestionError("manifest is missing", file=mpath)
    try:
        man = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise IngestionError(f"malformed manifest: {exc}", file=mpath) from None
    if man.get("format") != FORMAT or man.get("version") != VERSION:
        raise IngestionError("unsupported manifest format/version", file=mpath)
    try:
        n, E = int(man["n_nodes"]), int(man["n_edges"])
        m, d, L = int(man["n_features"]), int(man["edge_features"]), int(man["n_labels"])
        undirected = bool(man["undirected"])
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"manifest field problem: {exc}", file=mpath) from None
    files = {k: path / v for k, v in {**FILES, **man.get("files", {})}.items()}

    node_feat = np.empty((n, m))

    def put_node(i, fields, line):
        node_feat[i] = [_float(f, files["nodes"], line) for f in fields]

    _per_node(files["nodes"], n, m, put_node)

    src = np.empty(E, dtype=np.int64)
    dst = np.empty(E, dtype=np.int64)
    edge_feat = np.empty((E, d))
    count = 0
    for line, fields in _rows(files["edges"], d + 2):
        if count >= E:
            raise IngestionError(f"more edges than the manifest's {E}", file=files["edges"], line=line)
        s, t = _int(fields[0], files["edges"], line), _int(fields[1], files["edges"], line)
        if not (0 <= s < n and 0 <= t < n):
            raise IngestionError(f"edge ({s}, {t}) references a node outside [0, {n})",
                                 file=files["edges"], line=line)
        src[count], dst[count] = s, t
        edge_feat[count] = [_float(f, files["edges"], line) for f in fields[2:]]
        count += 1
    if count != E:
        raise IngestionError(f"found {count} edges, manifest says {E}", file=files["edges"])

    labels = np.empty((n, L))

    def put_label(i, fields, line):
        vals = [_int(f, files["labels"], line) for f in fields]
        if any(v not in (0, 1) for v in vals):
            raise IngestionError("labels must be 0 or 1", file=files["labels"], line=line)
        labels[i] = vals

    _per_node(files["labels"], n, L, put_label)

    split = np.empty(n, dtype=np.int8)

    def put_split(i, fields, line):
        if fields[0] not in SPLITS:
            raise IngestionError(f"unknown split tag {fields[0]!r}", file=files["split"], line=line)
        split[i] = SPLITS.index(fields[0])

    _per_node(files["split"], n, 1, put_split)

    ds = Dataset(node_feat, src, dst, edge_feat, labels, split, undirected)
    return ds.to_graph(), ds
