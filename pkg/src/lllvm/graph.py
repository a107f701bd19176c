"""Neighbourhood graphs, their Laplacians and Laplacian spectra."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from .errors import InvalidParameterError, NumericalError, ParseError

ZERO_EIGENVALUE_TOL = 1e-10


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LaplacianSpectrum:
    """Ascending eigenvalues and orthonormal eigenvectors of a Laplacian."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n_zero(self) -> int:
        return int(np.count_nonzero(self.eigenvalues == 0.0))

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.T


@dataclass(frozen=True, eq=False)
class NeighbourhoodGraph:
    """Undirected, unweighted neighbourhood graph on ``n`` nodes.

    Instances are immutable; derived quantities (edge list, incidence
    operators, spectrum) are computed once on first access.
    """

    adjacency: np.ndarray
    laplacian: np.ndarray
    k: int | None = None

    @classmethod
    def from_adjacency(cls, adjacency, k=None) -> "NeighbourhoodGraph":
        G = np.asarray(adjacency, dtype=float)
        return cls(_frozen(G), _frozen(laplacian(G)), k)

    @classmethod
    def from_edges(cls, n, edges, k=None) -> "NeighbourhoodGraph":
        G = np.zeros((n, n))
        for i, j in edges:
            if i == j:
                raise InvalidParameterError(f"self-loop at node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidParameterError(f"edge ({i}, {j}) out of range for n={n}")
            G[i, j] = G[j, i] = 1.0
        return cls.from_adjacency(G, k)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @cached_property
    def edges(self) -> np.ndarray:
        """``(m, 2)`` array of undirected edges with ``i < j``, row-major order."""
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return np.column_stack([i, j]).astype(np.int64)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @cached_property
    def n_components(self) -> int:
        return int(connected_components(sp.csr_matrix(self.adjacency), directed=False)[0])

    @property
    def is_connected(self) -> bool:
        return self.n_components == 1

    @cached_property
    def spectrum(self) -> LaplacianSpectrum:
        return spectrum(self)

    def incidence(self, signed: bool = True) -> sp.csr_matrix:
        """Edge-node incidence matrix, ``+1`` at the lower index, ``-1`` (or ``+1``) at the higher."""
        return self._incidence_signed if signed else self._incidence_unsigned

    @cached_property
    def _incidence_signed(self):
        return self._build_incidence(-1.0)

    @cached_property
    def _incidence_unsigned(self):
        return self._build_incidence(1.0)

    def _build_incidence(self, second):
        m = self.n_edges
        rows = np.repeat(np.arange(m), 2)
        vals = np.tile([1.0, second], m)
        return sp.csr_matrix((vals, (rows, self.edges.ravel())), shape=(m, self.n))

    def neighbours(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def same_edges(self, other: "NeighbourhoodGraph") -> bool:
        return self.n == other.n and np.array_equal(self.adjacency, other.adjacency)


def laplacian(adjacency) -> np.ndarray:
    """Graph Laplacian ``diag(G 1) - G`` of a symmetric 0/1 adjacency matrix."""
    G = np.asarray(adjacency, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise InvalidParameterError(f"adjacency must be square, got shape {G.shape}")
    if not np.array_equal(G, G.T):
        raise InvalidParameterError("adjacency must be symmetric")
    if np.any(np.diag(G) != 0):
        raise InvalidParameterError("adjacency must have a zero diagonal")
    if not np.all((G == 0) | (G == 1)):
        raise InvalidParameterError("adjacency entries must be 0 or 1")
    return np.diag(G.sum(axis=1)) - G


def build_knn_graph(Y, k: int) -> NeighbourhoodGraph:
    """Union-symmetrised k-nearest-neighbour graph under Euclidean distance.

    ``i`` and ``j`` are joined when either is among the other's ``k``
    nearest neighbours. Equidistant candidates are ranked by index.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise InvalidParameterError(f"Y must be a 2-D array, got shape {Y.shape}")
    n = Y.shape[0]
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidParameterError(f"k must be a positive integer, got {k!r}")
    if k >= n:
        raise InvalidParameterError(f"k={k} must be smaller than the number of points n={n}")
    if not np.all(np.isfinite(Y)):
        raise InvalidParameterError("Y contains non-finite values")

    D = cdist(Y, Y, "sqeuclidean")
    np.fill_diagonal(D, np.inf)
    # stable sort: ties resolved towards the smaller index
    nearest = np.argsort(D, axis=1, kind="stable")[:, :k]
    G = np.zeros((n, n))
    G[np.repeat(np.arange(n), k), nearest.ravel()] = 1.0
    G = np.maximum(G, G.T)
    return NeighbourhoodGraph.from_adjacency(G, k=int(k))


def edit_edge(g: NeighbourhoodGraph, i: int, j: int, present: bool) -> NeighbourhoodGraph:
    """Copy of ``g`` with edge ``(i, j)`` set to ``present``."""
    if i == j:
        raise InvalidParameterError("cannot edit a self-loop (i == j)")
    if not (0 <= i < g.n and 0 <= j < g.n):
        raise InvalidParameterError(f"edge ({i}, {j}) out of range for n={g.n}")
    G = np.array(g.adjacency)
    G[i, j] = G[j, i] = 1.0 if present else 0.0
    return NeighbourhoodGraph.from_adjacency(G, k=g.k)


def spectrum(g: NeighbourhoodGraph) -> LaplacianSpectrum:
    try:
        w, U = np.linalg.eigh(g.laplacian)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"graph: Laplacian eigendecomposition failed: {exc}") from exc
    w = np.where(np.abs(w) < ZERO_EIGENVALUE_TOL, 0.0, w)
    if np.any(w < 0):
        raise NumericalError(f"graph: Laplacian has negative eigenvalue {w.min():.3e}")
    return LaplacianSpectrum(_frozen(w), _frozen(U))


def write_edge_list(g: NeighbourhoodGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j"])
        w.writerows(g.edges.tolist())


def read_edge_list(path, n: int) -> NeighbourhoodGraph:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["i", "j"]:
        raise ParseError('edge list must start with header "i,j"', line=1)
    edges = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 columns, got {len(row)}", line=lineno)
        try:
            i, j = int(row[0]), int(row[1])
        except ValueError as exc:
            raise ParseError(f"non-integer node index: {row}", line=lineno) from exc
        if not i < j:
            raise ParseError(f"edge ({i}, {j}) must satisfy i < j", line=lineno)
        edges.append((i, j))
    return NeighbourhoodGraph.from_edges(n, edges)


def path_graph(n: int) -> NeighbourhoodGraph:
    return NeighbourhoodGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def complete_graph(n: int) -> NeighbourhoodGraph:
    return NeighbourhoodGraph.from_adjacency(np.ones((n, n)) - np.eye(n))

