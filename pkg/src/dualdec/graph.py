"""Attributed-network data model, adjacency normalization, kNN-graph
construction for non-graph feature data, and text file I/O.

File formats (UTF-8, LF line endings):
  edges.txt  -- one "u v" pair per line, 0-indexed, whitespace-separated
  attrs.txt  -- one row of space-separated reals per node
  labels.txt -- one integer cluster id per line
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ParameterError, ParseError, ShapeError


@dataclass
class AttributedNetwork:
    """A simple undirected graph with node attributes and optional labels.

    adjacency is n x n CSR, symmetric, zero diagonal, 0/1 values;
    attributes is n x m dense; labels, when present, hold cluster ids in [0, K).
    ``symmetrized_input`` flags edge lists that mixed directed and undirected
    conventions and were symmetrized on load.
    """

    adjacency: sparse.csr_array
    attributes: np.ndarray
    labels: np.ndarray | None = None
    symmetrized_input: bool = field(default=False, compare=False)

    @property
    def n(self) -> int:
        return self.attributes.shape[0]

    @property
    def m(self) -> int:
        return self.attributes.shape[1]

    @property
    def num_clusters(self) -> int:
        if self.labels is None:
            raise ParameterError("network has no ground-truth labels")
        return int(self.labels.max()) + 1

    def validate(self) -> None:
        a = self.adjacency
        if a.shape[0] != a.shape[1]:
            raise ShapeError(f"adjacency must be square, got {a.shape}")
        if a.shape[0] != self.n:
            raise ShapeError(f"adjacency {a.shape} vs {self.n} attribute rows")
        if (a != a.T).nnz != 0:
            raise ShapeError("adjacency must be symmetric")
        if a.diagonal().any():
            raise ShapeError("adjacency must have a zero diagonal")
        if a.nnz and not np.all(a.data == 1.0):
            raise ShapeError("adjacency entries must be 0/1")
        if not np.all(np.isfinite(self.attributes)):
            raise ShapeError("attributes must be finite")
        if self.labels is not None:
            if len(self.labels) != self.n:
                raise ShapeError(f"{len(self.labels)} labels for {self.n} nodes")
            if self.labels.min() < 0:
                raise ShapeError("labels must be non-negative")


def normalize_adjacency(net) -> sparse.csr_array:
    """Symmetrically normalized adjacency with self-loops.

    Returns S^{-1/2} (A + I) S^{-1/2} where S is the degree matrix of A + I.
    The self-loop guarantees every degree is >= 1, so isolated nodes are fine.
    """
    a = net.adjacency if isinstance(net, AttributedNetwork) else net
    n = a.shape[0]
    a_tilde = (a + sparse.eye_array(n, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    scale = sparse.dia_array((inv_sqrt[None, :], [0]), shape=(n, n))
    return (scale @ a_tilde @ scale).tocsr()


def knn_neighbors(features: np.ndarray, k: int, metric: str = "euclidean") -> np.ndarray:
    """Indices of the k nearest neighbors of every row (self excluded).

    Returns an (n, k) int array; row i lists exactly k neighbors, so the
    directed pair count is always n*k. Ties are broken by smaller node index
    so runs are deterministic.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k < n:
        raise ParameterError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    if metric == "euclidean":
        base = x
        sq = (x * x).sum(axis=1)
    elif metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        base = x / np.maximum(norms, 1e-300)[:, None]
        sq = None
    else:
        raise ParameterError(f"unknown metric: {metric!r}")

    out = np.empty((n, k), dtype=np.int64)
    chunk = max(1, int(4_000_000 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        if metric == "euclidean":
            d = sq[start:stop, None] + sq[None, :] - 2.0 * (base[start:stop] @ base.T)
            np.maximum(d, 0.0, out=d)
        else:
            d = 1.0 - base[start:stop] @ base.T
        for i in range(start, stop):
            row = d[i - start]
            row[i] = np.inf
            kth = np.partition(row, k - 1)[k - 1]
            cand = np.flatnonzero(row <= kth)
            order = np.lexsort((cand, row[cand]))
            out[i] = cand[order[:k]]
    return out


def build_knn_graph(features: np.ndarray, k: int, metric: str = "euclidean") -> sparse.csr_array:
    """Symmetrized 0/1 union of the directed kNN pairs, zero diagonal."""
    nbrs = knn_neighbors(features, k, metric)
    n = features.shape[0]
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = nbrs.ravel()
    a = sparse.coo_array((np.ones(n * k), (rows, cols)), shape=(n, n)).tocsr()
    a = a + a.T
    a.data = np.ones_like(a.data)
    return a.tocsr()


def _parse_attr_file(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = np.array(line.split(), dtype=np.float64)
            except ValueError as exc:
                raise ParseError(path, line_no, f"bad attribute value ({exc})") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(path, line_no, f"expected {width} attributes, got {len(row)}")
            rows.append(row)
    if not rows:
        raise ParseError(path, 1, "attribute file is empty")
    return np.vstack(rows)


def _parse_edge_file(path, n: int):
    """Returns (set of undirected edges, symmetrized_input flag)."""
    directed: set[tuple[int, int]] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ParseError(path, line_no, f"expected 'u v', got {line.strip()!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(path, line_no, f"non-integer endpoint in {line.strip()!r}") from None
            if not (0 <= u < n and 0 <= v < n):
                raise ParseError(path, line_no, f"endpoint out of range [0, {n}) in ({u}, {v})")
            if u == v:
                continue  # self-loops only ever enter through normalization
            directed.add((u, v))
    edges = {(min(u, v), max(u, v)) for u, v in directed}
    with_reverse = sum(1 for u, v in edges if (u, v) in directed and (v, u) in directed)
    # flag files that mix the one-line-per-edge and both-directions conventions
    mixed = 0 < with_reverse < len(edges)
    return edges, mixed


def _parse_label_file(path, n: int) -> np.ndarray:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                value = int(line.strip())
            except ValueError:
                raise ParseError(path, line_no, f"non-integer label {line.strip()!r}") from None
            if value < 0:
                raise ParseError(path, line_no, f"negative label {value}")
            labels.append(value)
    if len(labels) != n:
        raise ParseError(path, len(labels) + 1, f"expected {n} labels, got {len(labels)}")
    return np.array(labels, dtype=np.int64)


def _adjacency_from_edges(edges, n: int) -> sparse.csr_array:
    if not edges:
        return sparse.csr_array((n, n), dtype=np.float64)
    arr = np.array(sorted(edges), dtype=np.int64)
    rows = np.concatenate([arr[:, 0], arr[:, 1]])
    cols = np.concatenate([arr[:, 1], arr[:, 0]])
    return sparse.coo_array((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()


def load_network(edge_path, attr_path, label_path=None) -> AttributedNetwork:
    """Load a network from text files; see module docstring for the formats."""
    attributes = _parse_attr_file(attr_path)
    n = attributes.shape[0]
    edges, mixed = _parse_edge_file(edge_path, n)
    labels = _parse_label_file(label_path, n) if label_path is not None else None
    net = AttributedNetwork(_adjacency_from_edges(edges, n), attributes, labels,
                            symmetrized_input=mixed)
    net.validate()
    return net


def save_network(net: AttributedNetwork, out_dir) -> None:
    """Write edges.txt, attrs.txt, and (if present) labels.txt into out_dir.

    Deterministic: edges are emitted once each as "u v" with u < v in sorted
    order, attributes with full round-trip precision.
    """
    os.makedirs(out_dir, exist_ok=True)
    coo = net.adjacency.tocoo()
    pairs = sorted({(min(i, j), max(i, j)) for i, j in zip(coo.row, coo.col)})
    with open(os.path.join(out_dir, "edges.txt"), "w", encoding="utf-8", newline="\n") as fh:
        for u, v in pairs:
            fh.write(f"{u} {v}\n")
    with open(os.path.join(out_dir, "attrs.txt"), "w", encoding="utf-8", newline="\n") as fh:
        for row in net.attributes:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")
    if net.labels is not None:
        with open(os.path.join(out_dir, "labels.txt"), "w", encoding="utf-8", newline="\n") as fh:
            for value in net.labels:
                fh.write(f"{int(value)}\n")
