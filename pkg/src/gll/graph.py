"""Similarity-graph construction and calculus on graphs.

A graph is built from a feature matrix by an exact k-nearest-neighbour
search, union-symmetrised adjacency, and a radial kernel with self-tuning
(or constant) bandwidths:

    w_ij = a_ij * eta(||x_i - x_j||^2 / (2 eps_i eps_j)),   eta(z) = exp(-4z)

where eps_i is the distance from x_i to its k-th nearest neighbour.
Edges are stored once with i < j; weights are symmetric by construction.
Graphs are immutable after construction and all operations here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sparse

from . import _backend
from .errors import DegenerateBandwidthError

__all__ = [
    "WeightKernel",
    "EXP_KERNEL",
    "Graph",
    "VectorField",
    "knn_search",
    "build_graph",
    "rebuild_weights",
    "gradient",
    "divergence",
    "divergence_general",
    "laplacian_apply",
    "dirichlet_energy",
    "node_inner",
    "field_inner",
    "connected_components",
    "save_graph",
    "load_graph",
]


@dataclass(frozen=True)
class WeightKernel:
    """Radial kernel eta with its analytic derivative; eta(0) must be 1."""

    eta: Callable[[np.ndarray], np.ndarray]
    eta_prime: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"


def _exp4(z):
    return np.exp(-4.0 * z)


def _exp4_prime(z):
    return -4.0 * np.exp(-4.0 * z)


#: Default kernel eta(z) = exp(-4z); its derivative is -4*eta, so the edge
#: derivative matrix equals -4W.
EXP_KERNEL = WeightKernel(eta=_exp4, eta_prime=_exp4_prime, name="exp4")

_KERNELS = {"exp4": EXP_KERNEL}


@dataclass(frozen=True)
class VectorField:
    """Edge values on canonical (i < j) edges; the value on the reversed
    pair is the negation. Shape (E,) or (E, C)."""

    values: np.ndarray


@dataclass(frozen=True)
class Graph:
    """Symmetric weighted k-NN graph.

    edges_i/edges_j list each undirected edge once with edges_i < edges_j;
    weights aligns with them. eps are the per-node kernel bandwidths, kth the
    index of each node's k-th nearest neighbour at construction time.
    """

    n: int
    k_param: int
    edges_i: np.ndarray
    edges_j: np.ndarray
    weights: np.ndarray
    eps: np.ndarray
    kth: np.ndarray
    bandwidth_mode: str  # "self_tuning" | "constant"
    kernel: WeightKernel = EXP_KERNEL
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def n_edges(self) -> int:
        return self.edges_i.shape[0]

    def weight_matrix(self) -> sparse.csr_matrix:
        """Full symmetric weight matrix in CSR form (cached)."""
        if "W" not in self._cache:
            i, j, w = self.edges_i, self.edges_j, self.weights
            rows = np.concatenate([i, j])
            cols = np.concatenate([j, i])
            vals = np.concatenate([w, w])
            self._cache["W"] = sparse.csr_matrix(
                (vals, (rows, cols)), shape=(self.n, self.n)
            )
        return self._cache["W"]

    def degrees(self) -> np.ndarray:
        if "deg" not in self._cache:
            deg = np.zeros(self.n)
            np.add.at(deg, self.edges_i, self.weights)
            np.add.at(deg, self.edges_j, self.weights)
            self._cache["deg"] = deg
        return self._cache["deg"]

    def edge_sq_dists(self, X: np.ndarray) -> np.ndarray:
        """Squared feature distances along the stored edges."""
        diff = X[self.edges_i] - X[self.edges_j]
        return np.einsum("ij,ij->i", diff, diff)


def _validate_features(X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError("feature matrix must be 2-D with n >= 1, d >= 1")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite entries")
    return X


def knn_search(X, k):
    """Exact k nearest neighbours of every row of X.

    Returns (indices, distances), each (n, k), sorted by ascending Euclidean
    distance with ties broken by the lower node index; self is excluded.
    """
    X = _validate_features(X)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    D = _backend.sqdist(X)
    idx, sq = _backend.knn_select(D, int(k))
    return idx, np.sqrt(sq)


def build_graph(X, k, kernel=EXP_KERNEL, bandwidth=None):
    """Build the symmetric k-NN similarity graph on the rows of X.

    bandwidth=None selects self-tuning bandwidths eps_i = distance to the
    k-th neighbour; a positive float fixes eps_i to that constant.
    """
    X = _validate_features(X)
    idx, dist = knn_search(X, k)
    n = X.shape[0]
    kth = idx[:, -1].astype(np.int64)

    if bandwidth is None:
        eps = dist[:, -1].copy()
        zero = np.flatnonzero(eps == 0.0)
        if zero.size:
            raise DegenerateBandwidthError(
                f"node {zero[0]} has zero distance to its k-th neighbour "
                "(duplicate points); self-tuning bandwidth is undefined"
            )
        mode = "self_tuning"
    else:
        c = float(bandwidth)
        if c <= 0:
            raise ValueError("constant bandwidth must be positive")
        eps = np.full(n, c)
        mode = "constant"

    # Union symmetrisation: an edge exists when either endpoint lists the other.
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = idx.ravel()
    lo = np.minimum(rows, cols)
    hi = np.maximum(rows, cols)
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    ei, ej = pairs[:, 0], pairs[:, 1]

    diff = X[ei] - X[ej]
    sq = np.einsum("ij,ij->i", diff, diff)
    w = kernel.eta(sq / (2.0 * eps[ei] * eps[ej]))

    return Graph(
        n=n,
        k_param=int(k),
        edges_i=ei,
        edges_j=ej,
        weights=w,
        eps=eps,
        kth=kth,
        bandwidth_mode=mode,
        kernel=kernel,
    )


def rebuild_weights(g: Graph, X) -> Graph:
    """Re-evaluate weights (and self-tuning bandwidths) for new features,
    keeping the adjacency pattern and k-th-neighbour indices frozen.

    This is the map the feature gradients differentiate.
    """
    X = _validate_features(X)
    if X.shape[0] != g.n:
        raise ValueError("feature matrix size does not match graph")
    if g.bandwidth_mode == "self_tuning":
        eps = np.linalg.norm(X - X[g.kth], axis=1)
        zero = np.flatnonzero(eps == 0.0)
        if zero.size:
            raise DegenerateBandwidthError(
                f"node {zero[0]} coincides with its recorded k-th neighbour"
            )
    else:
        eps = g.eps.copy()
    diff = X[g.edges_i] - X[g.edges_j]
    sq = np.einsum("ij,ij->i", diff, diff)
    w = g.kernel.eta(sq / (2.0 * eps[g.edges_i] * eps[g.edges_j]))
    return Graph(
        n=g.n,
        k_param=g.k_param,
        edges_i=g.edges_i,
        edges_j=g.edges_j,
        weights=w,
        eps=eps,
        kth=g.kth,
        bandwidth_mode=g.bandwidth_mode,
        kernel=g.kernel,
    )


def _check_node_function(g, u):
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != g.n:
        raise ValueError(f"node function has length {u.shape[0]}, graph has {g.n}")
    return u


def gradient(g: Graph, u) -> VectorField:
    """Graph gradient (u(i) - u(j)) restricted to edges; skew-symmetric."""
    u = _check_node_function(g, u)
    return VectorField(u[g.edges_i] - u[g.edges_j])


def divergence(g: Graph, v: VectorField) -> np.ndarray:
    """Divergence of a vector field: div v(x) = sum_y w_xy v(x,y)."""
    vals = np.asarray(v.values, dtype=np.float64)
    w = g.weights if vals.ndim == 1 else g.weights[:, None]
    out = np.zeros((g.n,) + vals.shape[1:])
    np.add.at(out, g.edges_i, w * vals)
    np.add.at(out, g.edges_j, -w * vals)
    return out


def divergence_general(g: Graph, v_ij, v_ji) -> np.ndarray:
    """Divergence of a general edge function via
    div v(x) = (1/2) sum_y w_xy (v(x,y) - v(y,x))."""
    v_ij = np.asarray(v_ij, dtype=np.float64)
    v_ji = np.asarray(v_ji, dtype=np.float64)
    w = g.weights if v_ij.ndim == 1 else g.weights[:, None]
    out = np.zeros((g.n,) + v_ij.shape[1:])
    np.add.at(out, g.edges_i, 0.5 * w * (v_ij - v_ji))
    np.add.at(out, g.edges_j, 0.5 * w * (v_ji - v_ij))
    return out


def laplacian_apply(g: Graph, u, tau: float = 0.0) -> np.ndarray:
    """Apply the (optionally diagonally perturbed) graph Laplacian:
    (Delta + tau I)u, with Delta u(x) = sum_y w_xy (u(x) - u(y))."""
    u = _check_node_function(g, u)
    deg = g.degrees()
    d = deg if u.ndim == 1 else deg[:, None]
    return d * u - g.weight_matrix() @ u + tau * u


def node_inner(u, v) -> float:
    """Inner product on node functions: sum over nodes (and channels)."""
    return float(np.sum(np.asarray(u) * np.asarray(v)))


def field_inner(g: Graph, a: VectorField, b: VectorField) -> float:
    """Weighted inner product on vector fields,
    (1/2) sum_{x,y} w_xy a(x,y) b(x,y)."""
    prod = a.values * b.values
    if prod.ndim > 1:
        prod = prod.sum(axis=1)
    return float(g.weights @ prod)


def dirichlet_energy(g: Graph, u) -> float:
    """(1/2) sum_{x,y} w_xy ||u(x) - u(y)||^2."""
    grad = gradient(g, u).values
    sq = grad * grad if grad.ndim == 1 else np.sum(grad * grad, axis=1)
    return float(np.sum(g.weights * sq))


def connected_components(g: Graph):
    """Union-find over the edge list. Returns (labels, count) with components
    numbered in order of their smallest node index."""
    parent = np.arange(g.n, dtype=np.int64)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in zip(g.edges_i, g.edges_j):
        ra, rb = find(a), find(b)
        if ra != rb:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
    roots = np.array([find(a) for a in range(g.n)])
    uniq, labels = np.unique(roots, return_inverse=True)
    return labels, len(uniq)


def save_graph(g: Graph, path) -> None:
    """Serialise a graph to the documented text format.

    Header line: `n k bandwidth_mode kernel_name`; one line `i j a w` per
    stored edge (i < j); then an `eps` line and a `kth` line. Doubles are
    written with 17 significant digits, so a load round-trips exactly.
    """
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{g.n} {g.k_param} {g.bandwidth_mode} {g.kernel.name}\n")
        for i, j, w in zip(g.edges_i, g.edges_j, g.weights):
            f.write(f"{i} {j} 1 {w:.17g}\n")
        f.write("eps " + " ".join(f"{e:.17g}" for e in g.eps) + "\n")
        f.write("kth " + " ".join(str(t) for t in g.kth) + "\n")


def load_graph(path) -> Graph:
    """Inverse of save_graph."""
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        n, k = int(header[0]), int(header[1])
        mode, kname = header[2], header[3]
        if kname not in _KERNELS:
            raise ValueError(f"unknown kernel {kname!r} in graph file")
        ei, ej, w = [], [], []
        eps = kth = None
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "eps":
                eps = np.array([float(x) for x in parts[1:]])
            elif parts[0] == "kth":
                kth = np.array([int(x) for x in parts[1:]], dtype=np.int64)
            else:
                ei.append(int(parts[0]))
                ej.append(int(parts[1]))
                w.append(float(parts[3]))
    if eps is None or kth is None or len(eps) != n or len(kth) != n:
        raise ValueError("graph file is missing eps/kth vectors")
    return Graph(
        n=n,
        k_param=k,
        edges_i=np.array(ei, dtype=np.int64),
        edges_j=np.array(ej, dtype=np.int64),
        weights=np.array(w),
        eps=eps,
        kth=kth,
        bandwidth_mode=mode,
        kernel=_KERNELS[kname],
    )
