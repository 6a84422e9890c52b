"""Exact backward pass of the graph learning layer.

Given the forward solution u and the upstream gradient dJ/du, one linear
adjoint solve per class yields the gradients of the loss with respect to the
edge weights, the source term and the boundary values. A second, purely
sparse step pushes the edge-weight gradient through the kernel construction
(including the self-tuning bandwidths) down to the input features:

    grad_X = L_{H-M} X

where H carries the direct kernel sensitivities and M the bandwidth terms
supported on (node, k-th neighbour) pairs. All arithmetic is 64-bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AdjointSingularError
from .graph import Graph
from .solvers import (
    DEFAULT_TOL,
    LabelData,
    PhiSpec,
    Solution,
    _pcg,
    _reduced_system,
)

__all__ = [
    "LAPLACE_PHI",
    "AdjointSolution",
    "GradBundle",
    "FeatureGradWorkspace",
    "solve_adjoint",
    "grad_w",
    "grad_f",
    "grad_g",
    "grad_features",
    "gll_backward",
]

#: phi for ordinary Laplace learning (p = 2).
LAPLACE_PHI = PhiSpec.plaplace(2.0)

_COEFF_FLOOR = 1e-12


@dataclass
class AdjointSolution:
    """Adjoint variable v per class; v = 0 exactly on the labeled set."""

    v: np.ndarray  # (n, C)
    residuals: np.ndarray
    iterations: np.ndarray
    floored: bool = False  # some adjoint edge coefficients were clamped up


@dataclass
class GradBundle:
    """All backward outputs of the layer.

    grad_w holds the symmetrised weight gradient on the stored edges of the
    graph (its support never exceeds the adjacency pattern); grad_f and
    grad_g are the source/boundary gradients on unlabeled and labeled rows;
    grad_x is the gradient with respect to the feature matrix.
    """

    grad_w: np.ndarray  # (E,)
    grad_f: np.ndarray  # (n - m, C)
    grad_g: np.ndarray  # (m, C)
    grad_x: np.ndarray  # (n, d)


@dataclass
class FeatureGradWorkspace:
    """Intermediates of the feature-gradient assembly, exposed for
    verification: g_tilde = G + G^T on edges, the kernel-derivative edge
    values, the H edge values, and the bandwidth vector b."""

    g_tilde: np.ndarray
    v_edge: np.ndarray
    h_edge: np.ndarray
    b: Optional[np.ndarray]
    sq_dists: np.ndarray


def _upstream_matrix(g, upstream, C):
    up = np.asarray(upstream, dtype=np.float64)
    if up.ndim == 1:
        up = up[:, None]
    if up.shape != (g.n, C):
        raise ValueError(f"upstream gradient must have shape ({g.n}, {C})")
    return up


def _edge_coefficients(g: Graph, uc: np.ndarray, phi: PhiSpec) -> np.ndarray:
    """Symmetric edge coefficients of the linearised operator,
    w_xy * (phi_q(grad u(x,y)) + phi_q(grad u(y,x))) / 2."""
    if phi.is_linear:
        return g.weights
    q = uc[g.edges_i] - uc[g.edges_j]
    fq_ij = phi.phi_q_values(q, g.edges_i, g.edges_j)
    fq_ji = phi.phi_q_values(-q, g.edges_j, g.edges_i)
    return g.weights * 0.5 * (fq_ij + fq_ji)


def solve_adjoint(
    g: Graph,
    solution: Solution,
    upstream,
    labels: LabelData,
    phi: PhiSpec = LAPLACE_PHI,
    tau: float = 0.0,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> AdjointSolution:
    """Solve the adjoint equation tau v + div(phi_q(grad u) grad v) = dJ/du
    off the labeled set, with v = 0 on it.

    The adjoint is linear even when the forward problem is not; for p = 2 it
    reuses the forward operator. Nonlinear coefficients below 1e-12 are
    clamped up (recorded on the result); a row of vanishing coefficients with
    tau = 0 raises AdjointSingularError.
    """
    C = solution.u.shape[1]
    up = _upstream_matrix(g, upstream, C)
    v = np.zeros((g.n, C))
    residuals = np.zeros(C)
    iterations = np.zeros(C, dtype=np.int64)
    floored = False

    shared = None  # (system, unlabeled) reused across classes when linear
    for c in range(C):
        if phi.is_linear and shared is not None:
            system, unlabeled = shared
        else:
            coeff = _edge_coefficients(g, solution.u[:, c], phi)
            if not phi.is_linear:
                if tau == 0.0:
                    diag = np.zeros(g.n)
                    np.add.at(diag, g.edges_i, coeff)
                    np.add.at(diag, g.edges_j, coeff)
                    labeled_mask = np.zeros(g.n, dtype=bool)
                    labeled_mask[labels.indices] = True
                    dead = np.flatnonzero(~labeled_mask & (diag <= g.n * _COEFF_FLOOR))
                    if dead.size:
                        raise AdjointSingularError(
                            f"adjoint system is singular at node {int(dead[0])}: all "
                            "incident coefficients vanish and tau = 0 (e.g. constant "
                            "forward solution with p != 2)"
                        )
                low = coeff < _COEFF_FLOOR
                if np.any(low):
                    coeff = np.maximum(coeff, _COEFF_FLOOR)
                    floored = True
            system, _, unlabeled = _reduced_system(g, coeff, labels.indices, tau)
            if phi.is_linear:
                shared = (system, unlabeled)
        if unlabeled.size == 0:
            continue
        x, iters, rel = _pcg(
            system,
            up[unlabeled, c],
            tol,
            max_iter or 10 * unlabeled.size,
            f"adjoint class {c}",
        )
        v[unlabeled, c] = x
        residuals[c] = rel
        iterations[c] = iters
    if floored:
        warnings.warn(
            "adjoint edge coefficients below 1e-12 were clamped; gradients "
            "may be inaccurate where the forward gradient vanishes",
            RuntimeWarning,
            stacklevel=2,
        )
    return AdjointSolution(v=v, residuals=residuals, iterations=iterations, floored=floored)


def _phi_jump(g, uc, phi):
    """phi(grad u(x,y)) - phi(grad u(y,x)) on edges (equals 2*grad u for p=2)."""
    q = uc[g.edges_i] - uc[g.edges_j]
    if phi.is_linear:
        return 2.0 * q
    return phi.phi_values(q, g.edges_i, g.edges_j) - phi.phi_values(
        -q, g.edges_j, g.edges_i
    )


def grad_w(
    g: Graph,
    solution: Solution,
    adjoint: AdjointSolution,
    phi: PhiSpec = LAPLACE_PHI,
    symmetrized: bool = True,
):
    """Gradient of the loss with respect to the edge weights, summed over
    class channels.

    symmetrized=True returns the symmetric edge values
    -(1/2)(phi(grad u(x,y)) - phi(grad u(y,x))) * grad v(x,y)
    (for p = 2 simply -grad u * grad v); symmetrized=False returns the raw
    ordered-pair values (on (i,j) and (j,i)) which differ only by carrying
    v(x) instead of grad v(x,y). Both feed grad_features identically.
    """
    C = solution.u.shape[1]
    sym = np.zeros(g.n_edges)
    raw_ij = np.zeros(g.n_edges)
    raw_ji = np.zeros(g.n_edges)
    for c in range(C):
        jump = _phi_jump(g, solution.u[:, c], phi)
        vc = adjoint.v[:, c]
        if symmetrized:
            sym += -0.5 * jump * (vc[g.edges_i] - vc[g.edges_j])
        else:
            raw_ij += -0.5 * jump * vc[g.edges_i]
            raw_ji += 0.5 * jump * vc[g.edges_j]
    if symmetrized:
        return sym
    return raw_ij, raw_ji


def grad_f(adjoint: AdjointSolution, labels: LabelData) -> np.ndarray:
    """Gradient with respect to the source term: v restricted to unlabeled rows."""
    n = adjoint.v.shape[0]
    unlabeled = np.setdiff1d(np.arange(n), labels.indices)
    return adjoint.v[unlabeled]


def grad_g(
    g: Graph,
    solution: Solution,
    adjoint: AdjointSolution,
    upstream,
    labels: LabelData,
    phi: PhiSpec = LAPLACE_PHI,
    tau: float = 0.0,
) -> np.ndarray:
    """Gradient with respect to the boundary values, evaluated on the
    labeled set: dJ/du - tau v - div(phi_q(grad u) grad v)."""
    C = solution.u.shape[1]
    up = _upstream_matrix(g, upstream, C)
    out = np.zeros((labels.m, C))
    for c in range(C):
        coeff = _edge_coefficients(g, solution.u[:, c], phi)
        vc = adjoint.v[:, c]
        flux = coeff * (vc[g.edges_i] - vc[g.edges_j])
        div = np.zeros(g.n)
        np.add.at(div, g.edges_i, flux)
        np.add.at(div, g.edges_j, -flux)
        out[:, c] = up[labels.indices, c] - tau * vc[labels.indices] - div[labels.indices]
    return out


def grad_features(
    g: Graph,
    X,
    edge_grad,
    return_workspace: bool = False,
) -> np.ndarray:
    """Push an edge-weight gradient through the kernel construction to the
    features.

    edge_grad is either the symmetrised edge array returned by grad_w (which
    already equals g_tilde = G + G^T on each stored edge) or an (ij, ji) pair
    of raw ordered-pair values, in which case g_tilde is formed here. Both
    yield identical results. For self-tuning graphs the bandwidth
    sensitivities add the M term on (node, k-th neighbour) pairs;
    constant-bandwidth graphs use only H.
    """
    X = np.asarray(X, dtype=np.float64)
    if isinstance(edge_grad, tuple):
        g_tilde = np.asarray(edge_grad[0]) + np.asarray(edge_grad[1])
    else:
        g_tilde = np.asarray(edge_grad, dtype=np.float64)
    ei, ej = g.edges_i, g.edges_j
    sqd = g.edge_sq_dists(X)
    eps_i, eps_j = g.eps[ei], g.eps[ej]
    v_edge = g.kernel.eta_prime(sqd / (2.0 * eps_i * eps_j))

    h_edge = g_tilde * v_edge / (eps_i * eps_j)
    diff = X[ei] - X[ej]
    out = np.zeros_like(X)
    np.add.at(out, ei, h_edge[:, None] * diff)
    np.add.at(out, ej, -h_edge[:, None] * diff)

    b = None
    if g.bandwidth_mode == "self_tuning":
        common = g_tilde * v_edge * sqd * 0.5
        b = np.zeros(g.n)
        np.add.at(b, ei, common / (eps_i**3 * eps_j))
        np.add.at(b, ej, common / (eps_j**3 * eps_i))
        # minus L_M X on the (t, kth[t]) pairs
        kdiff = X - X[g.kth]
        contrib = b[:, None] * kdiff
        out -= contrib
        np.add.at(out, g.kth, contrib)

    if return_workspace:
        return out, FeatureGradWorkspace(
            g_tilde=g_tilde, v_edge=v_edge, h_edge=h_edge, b=b, sq_dists=sqd
        )
    return out


def gll_backward(
    g: Graph,
    X,
    solution: Solution,
    upstream,
    labels: LabelData,
    phi: PhiSpec = LAPLACE_PHI,
    tau: float = 0.0,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> GradBundle:
    """Full backward pass: adjoint solve per class, then weight, source,
    boundary and feature gradients."""
    adjoint = solve_adjoint(
        g, solution, upstream, labels, phi=phi, tau=tau, tol=tol, max_iter=max_iter
    )
    gw = grad_w(g, solution, adjoint, phi=phi)
    return GradBundle(
        grad_w=gw,
        grad_f=grad_f(adjoint, labels),
        grad_g=grad_g(g, solution, adjoint, upstream, labels, phi=phi, tau=tau),
        grad_x=grad_features(g, X, gw),
    )
