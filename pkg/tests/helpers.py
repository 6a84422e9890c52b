"""Shared test fixtures: hand-built graphs and dense reference operators."""

import numpy as np

from gll.graph import EXP_KERNEL, Graph


def make_graph(n, edges, weights=None, eps=None, kth=None, mode="constant"):
    """Graph from an explicit undirected edge list (for solver/calculus tests)."""
    edges = np.asarray(edges, dtype=np.int64)
    ei = np.minimum(edges[:, 0], edges[:, 1])
    ej = np.maximum(edges[:, 0], edges[:, 1])
    order = np.lexsort((ej, ei))
    ei, ej = ei[order], ej[order]
    w = np.ones(len(ei)) if weights is None else np.asarray(weights, float)[order]
    if eps is None:
        eps = np.ones(n)
    if kth is None:
        kth = np.array([(i + 1) % n for i in range(n)], dtype=np.int64)
    return Graph(
        n=n,
        k_param=1,
        edges_i=ei,
        edges_j=ej,
        weights=w,
        eps=np.asarray(eps, float),
        kth=np.asarray(kth, dtype=np.int64),
        bandwidth_mode=mode,
        kernel=EXP_KERNEL,
    )


def path_graph(n, weights=None):
    return make_graph(n, [(i, i + 1) for i in range(n - 1)], weights)


def dense_weight_matrix(g):
    W = np.zeros((g.n, g.n))
    W[g.edges_i, g.edges_j] = g.weights
    W[g.edges_j, g.edges_i] = g.weights
    return W


def dense_laplacian(g, tau=0.0):
    W = dense_weight_matrix(g)
    return np.diag(W.sum(axis=1)) - W + tau * np.eye(g.n)


def random_geometric_graph(rng, n, d=2, k=3, bandwidth=None):
    from gll.graph import build_graph

    X = rng.standard_normal((n, d))
    return X, build_graph(X, k, bandwidth=bandwidth)


def bfs_components(n, edges_i, edges_j):
    """Independent breadth-first component labelling."""
    adj = [[] for _ in range(n)]
    for a, b in zip(edges_i, edges_j):
        adj[a].append(b)
        adj[b].append(a)
    labels = -np.ones(n, dtype=int)
    comp = 0
    for s in range(n):
        if labels[s] != -1:
            continue
        queue = [s]
        labels[s] = comp
        while queue:
            x = queue.pop(0)
            for y in adj[x]:
                if labels[y] == -1:
                    labels[y] = comp
                    queue.append(y)
        comp += 1
    return labels, comp
