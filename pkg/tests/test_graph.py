import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gll
from gll.errors import DegenerateBandwidthError
from gll.graph import (
    EXP_KERNEL,
    VectorField,
    build_graph,
    connected_components,
    dirichlet_energy,
    divergence,
    divergence_general,
    field_inner,
    gradient,
    knn_search,
    laplacian_apply,
    load_graph,
    node_inner,
    rebuild_weights,
    save_graph,
)

from helpers import (
    bfs_components,
    dense_laplacian,
    dense_weight_matrix,
    make_graph,
    path_graph,
)


class TestKnnSearch:
    def test_collinear_points(self):
        X = np.array([[0.0], [1.0], [3.0]])
        idx, dist = knn_search(X, 1)
        assert idx[:, 0].tolist() == [1, 0, 1]
        assert dist[:, 0].tolist() == [1.0, 1.0, 2.0]

    def test_k1_is_nearest_neighbour(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((20, 3))
        idx, dist = knn_search(X, 1)
        D = np.linalg.norm(X[:, None] - X[None, :], axis=2)
        np.fill_diagonal(D, np.inf)
        assert np.array_equal(idx[:, 0], D.argmin(axis=1))
        assert np.allclose(dist[:, 0], D.min(axis=1))

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(7)
        X = rng.random((50, 2))
        idx, dist = knn_search(X, 5)
        for i in range(50):
            d = np.sqrt(np.sum((X - X[i]) ** 2, axis=1))
            order = sorted((d[j], j) for j in range(50) if j != i)[:5]
            assert idx[i].tolist() == [j for _, j in order]
            assert np.allclose(dist[i], [dj for dj, _ in order], rtol=1e-12)

    def test_ties_take_lower_index(self):
        # nodes 1 and 2 are equidistant from node 0
        X = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [5.0, 0.0]])
        idx, _ = knn_search(X, 2)
        assert idx[0].tolist() == [1, 2]

    def test_rejects_bad_arguments(self):
        X = np.zeros((3, 2))
        with pytest.raises(ValueError):
            knn_search(X, 3)
        with pytest.raises(ValueError):
            knn_search(np.array([[np.nan, 0.0], [0.0, 1.0]]), 1)


class TestBuildGraph:
    def test_collinear_weights(self):
        X = np.array([[0.0], [1.0], [3.0]])
        g = build_graph(X, 1, bandwidth=1.0)
        edges = set(zip(g.edges_i.tolist(), g.edges_j.tolist()))
        assert edges == {(0, 1), (1, 2)}
        w = dict(zip(zip(g.edges_i.tolist(), g.edges_j.tolist()), g.weights))
        assert w[(0, 1)] == pytest.approx(np.exp(-2.0), rel=1e-15)
        assert w[(1, 2)] == pytest.approx(np.exp(-8.0), rel=1e-15)

    def test_kernel_normalisation_at_zero(self):
        assert EXP_KERNEL.eta(np.array(0.0)) == 1.0

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((30, 5))
        g = build_graph(X, 4)
        # dense reference: symmetrised adjacency, then the kernel formula
        n = 30
        D = np.linalg.norm(X[:, None] - X[None, :], axis=2)
        np.fill_diagonal(D, np.inf)
        order = np.argsort(D, axis=1)[:, :4]
        A = np.zeros((n, n), dtype=bool)
        for i in range(n):
            A[i, order[i]] = True
        A |= A.T
        eps = D[np.arange(n), order[:, -1]]
        W_ref = np.where(A, np.exp(-4.0 * D**2 / (2.0 * np.outer(eps, eps))), 0.0)
        W = dense_weight_matrix(g)
        assert np.max(np.abs(W - W_ref)) <= 1e-14
        assert np.allclose(g.eps, eps)

    def test_weight_bounds_symmetry_and_pattern(self):
        rng = np.random.default_rng(11)
        X = rng.random((40, 3))
        g = build_graph(X, 5)
        W = dense_weight_matrix(g)
        assert np.allclose(W, W.T)
        assert np.all(np.diag(W) == 0)
        assert np.all(g.weights > 0) and np.all(g.weights <= 1.0)
        # pattern equals adjacency pattern, and k-th neighbour edges are present
        assert np.all(g.kth != np.arange(40))
        for i in range(40):
            assert W[i, g.kth[i]] > 0

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((25, 3))
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        Y = X @ q + np.array([2.0, -1.0, 0.5])
        g1 = build_graph(X, 4)
        g2 = build_graph(Y, 4)
        assert np.array_equal(g1.edges_i, g2.edges_i)
        assert np.array_equal(g1.edges_j, g2.edges_j)
        assert np.max(np.abs(g1.weights - g2.weights)) <= 1e-12

    def test_duplicate_points_raise(self):
        X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        with pytest.raises(DegenerateBandwidthError, match="node 0"):
            build_graph(X, 1)

    def test_constant_bandwidth_allows_duplicates(self):
        X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        g = build_graph(X, 1, bandwidth=2.0)
        assert np.all(g.eps == 2.0)
        w = dict(zip(zip(g.edges_i.tolist(), g.edges_j.tolist()), g.weights))
        assert w[(0, 1)] == 1.0  # zero distance -> eta(0) = 1

    def test_rebuild_weights_tracks_features(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((15, 2))
        g = build_graph(X, 3)
        g2 = rebuild_weights(g, X)
        assert np.allclose(g2.weights, g.weights, rtol=0, atol=1e-15)
        g3 = rebuild_weights(g, X + 0.01 * rng.standard_normal(X.shape))
        assert not np.allclose(g3.weights, g.weights)
        assert np.array_equal(g3.edges_i, g.edges_i)


class TestCalculus:
    def test_gradient_of_constant_is_zero(self):
        g = path_graph(4)
        assert np.all(gradient(g, np.full(4, 2.5)).values == 0)

    def test_gradient_one_hot(self):
        g = path_graph(2)
        v = gradient(g, np.array([1.0, 0.0]))
        assert v.values.tolist() == [1.0]  # stored on edge (0, 1)

    def test_divergence_of_zero_field(self):
        g = path_graph(3)
        out = divergence(g, VectorField(np.zeros(2)))
        assert np.all(out == 0)

    def test_divergence_path_example(self):
        g = path_graph(3)
        # v(0,1) = 1 = -v(1,0), zero elsewhere
        out = divergence(g, VectorField(np.array([1.0, 0.0])))
        assert out.tolist() == [1.0, -1.0, 0.0]

    def test_adjoint_identity(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            X = rng.standard_normal((18, 2))
            g = build_graph(X, 3)
            u = rng.standard_normal(18)
            v = VectorField(rng.standard_normal(g.n_edges))
            lhs = field_inner(g, gradient(g, u), v)
            rhs = node_inner(u, divergence(g, v))
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_general_divergence_matches_field_divergence(self):
        rng = np.random.default_rng(2)
        g = path_graph(5, weights=rng.random(4) + 0.5)
        vals = rng.standard_normal(4)
        skew = divergence(g, VectorField(vals))
        gen = divergence_general(g, vals, -vals)
        assert np.allclose(skew, gen, atol=1e-15)

    def test_general_divergence_nonskew(self):
        # one-sided edge function on a single unit edge:
        # div(0) = w/2 * (v01 - v10), div(1) = w/2 * (v10 - v01)
        g = path_graph(2)
        out = divergence_general(g, np.array([3.0]), np.array([1.0]))
        assert out.tolist() == [1.0, -1.0]

    def test_laplacian_constant_in_kernel(self):
        g = path_graph(5)
        assert np.allclose(laplacian_apply(g, np.ones(5)), 0.0)

    def test_laplacian_path_example(self):
        g = path_graph(3)
        out = laplacian_apply(g, np.array([0.0, 1.0, 0.0]))
        assert out.tolist() == [-1.0, 2.0, -1.0]

    def test_laplacian_with_tau(self):
        g = path_graph(3)
        u = np.array([1.0, 2.0, 3.0])
        assert np.allclose(
            laplacian_apply(g, u, tau=0.5), laplacian_apply(g, u) + 0.5 * u
        )

    def test_energy_identity(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            X = rng.standard_normal((16, 3))
            g = build_graph(X, 4)
            u = rng.standard_normal(16)
            lhs = node_inner(laplacian_apply(g, u), u)
            rhs = dirichlet_energy(g, u)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))
            # independent double-sum evaluation
            W = dense_weight_matrix(g)
            direct = 0.5 * np.sum(W * (u[:, None] - u[None, :]) ** 2)
            assert abs(rhs - direct) <= 1e-12 * max(1.0, abs(direct))

    def test_laplacian_matches_dense(self):
        rng = np.random.default_rng(17)
        X = rng.standard_normal((20, 2))
        g = build_graph(X, 3)
        u = rng.standard_normal((20, 3))
        L = dense_laplacian(g, tau=0.2)
        assert np.allclose(laplacian_apply(g, u, tau=0.2), L @ u, atol=1e-13)

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_adjoint_identity_property(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 25))
        X = rng.standard_normal((n, 2))
        g = build_graph(X, min(3, n - 1))
        u = rng.standard_normal(n)
        v = VectorField(rng.standard_normal(g.n_edges))
        lhs = field_inner(g, gradient(g, u), v)
        rhs = node_inner(u, divergence(g, v))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


class TestComponents:
    def test_complete_graph(self):
        edges = [(i, j) for i in range(5) for j in range(i + 1, 5)]
        labels, count = connected_components(make_graph(5, edges))
        assert count == 1 and np.all(labels == 0)

    def test_two_triangles(self):
        g = make_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
        labels, count = connected_components(g)
        assert count == 2
        assert labels.tolist() == [0, 0, 0, 1, 1, 1]

    def test_matches_bfs_oracle(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            n = int(rng.integers(5, 40))
            m = int(rng.integers(1, 2 * n))
            pairs = {
                (min(a, b), max(a, b))
                for a, b in rng.integers(0, n, (m, 2))
                if a != b
            }
            if not pairs:
                continue
            g = make_graph(n, sorted(pairs))
            labels, count = connected_components(g)
            ref_labels, ref_count = bfs_components(n, g.edges_i, g.edges_j)
            assert count == ref_count
            assert np.array_equal(labels, ref_labels)

    def test_zero_eigenvalue_multiplicity(self):
        rng = np.random.default_rng(29)
        for _ in range(5):
            n = int(rng.integers(10, 50))
            m = int(rng.integers(n // 2, 2 * n))
            pairs = sorted(
                {
                    (min(a, b), max(a, b))
                    for a, b in rng.integers(0, n, (m, 2))
                    if a != b
                }
            )
            g = make_graph(n, pairs, weights=rng.random(len(pairs)) + 0.1)
            _, count = connected_components(g)
            eig = np.linalg.eigvalsh(dense_laplacian(g))
            assert int(np.sum(np.abs(eig) < 1e-8)) == count


class TestSerialization:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(31)
        X = rng.standard_normal((12, 3))
        g = build_graph(X, 3)
        path = tmp_path / "graph.txt"
        save_graph(g, path)
        g2 = load_graph(path)
        assert g2.n == g.n and g2.k_param == g.k_param
        assert g2.bandwidth_mode == g.bandwidth_mode
        assert np.array_equal(g2.edges_i, g.edges_i)
        assert np.array_equal(g2.edges_j, g.edges_j)
        assert np.array_equal(g2.weights, g.weights)  # bit-exact
        assert np.array_equal(g2.eps, g.eps)
        assert np.array_equal(g2.kth, g.kth)


class TestBackends:
    def test_backends_agree(self):
        from gll import _ckernels, _pykernels

        if gll.BACKEND != "compiled":
            pytest.skip("compiled backend unavailable")
        rng = np.random.default_rng(37)
        X = np.ascontiguousarray(rng.standard_normal((40, 6)))
        Dc = _ckernels.sqdist(X)
        Dp = _pykernels.sqdist(X)
        assert np.allclose(Dc, Dp, atol=1e-12)
        ic, dc = _ckernels.knn_select(Dc, 5)
        ip, dp = _pykernels.knn_select(Dc, 5)
        assert np.array_equal(ic, ip)
        assert np.array_equal(dc, dp)
