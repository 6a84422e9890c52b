"""Forward label-propagation solvers on similarity graphs.

Multi-class problems are handled one-vs-rest: one independent scalar system
per class channel, all sharing the same operator for the linear modes. Hard
constraints are imposed by reducing to the unlabeled block, so the solution
equals the boundary data exactly on labeled nodes. Linear systems are solved
with Jacobi-preconditioned conjugate gradient (the reduced operators are
symmetric positive definite).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sparse

from . import _backend
from .errors import ConvergenceError, SolvabilityError
from .graph import Graph, connected_components

__all__ = [
    "LabelData",
    "PhiSpec",
    "EllipticProblem",
    "Solution",
    "solve_laplace",
    "solve_laplace_soft",
    "solve_plaplace",
    "solve_poisson",
    "predict",
]

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class LabelData:
    """Labeled node indices with their boundary values (one row per node)."""

    indices: np.ndarray  # (m,) sorted, unique
    values: np.ndarray  # (m, C)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        vals = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if vals.shape[0] != idx.shape[0]:
            raise ValueError("labels and values disagree in length")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise ValueError("label indices must be sorted and unique")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_labels(cls, indices, labels, n_classes=None):
        """One-hot boundary values from integer class labels."""
        indices = np.asarray(indices, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        order = np.argsort(indices)
        indices, labels = indices[order], labels[order]
        C = int(labels.max()) + 1 if n_classes is None else int(n_classes)
        vals = np.zeros((len(indices), C))
        vals[np.arange(len(indices)), labels] = 1.0
        return cls(indices=indices, values=vals)

    @property
    def m(self) -> int:
        return self.indices.shape[0]

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PhiSpec:
    """Edge nonlinearity phi(q, x, y) of the propagation equation.

    The built-in p-Laplace family has phi(q) = |q|^(p-2) q and
    phi_q(q) = (p-1)|q|^(p-2); p = 2 is ordinary Laplace learning. Custom
    nonlinearities supply vectorised callables phi(q, i, j), phi_q(q, i, j)
    over edge arrays and declare whether they map vector fields to vector
    fields.
    """

    kind: str = "plaplace"
    p: float = 2.0
    phi: Optional[Callable] = None
    phi_q: Optional[Callable] = None
    preserves_vector_fields: bool = True

    @classmethod
    def plaplace(cls, p: float) -> "PhiSpec":
        if p < 1.0:
            raise ValueError("p-Laplace requires p >= 1")
        return cls(kind="plaplace", p=float(p))

    @classmethod
    def custom(cls, phi, phi_q, preserves_vector_fields) -> "PhiSpec":
        return cls(
            kind="custom",
            phi=phi,
            phi_q=phi_q,
            preserves_vector_fields=bool(preserves_vector_fields),
        )

    @property
    def is_linear(self) -> bool:
        return self.kind == "plaplace" and self.p == 2.0

    def phi_values(self, q, i=None, j=None):
        if self.kind == "plaplace":
            if self.p == 2.0:
                return np.asarray(q, dtype=np.float64)
            # sign(q)|q|^(p-1): finite at q = 0 for every p > 1
            return np.sign(q) * np.abs(q) ** (self.p - 1.0)
        return self.phi(q, i, j)

    def phi_q_values(self, q, i=None, j=None):
        if self.kind == "plaplace":
            if self.p == 2.0:
                return np.ones_like(q)
            a = np.abs(q)
            if self.p < 2.0:
                # keep the derivative finite where the gradient vanishes
                a = np.maximum(a, 1e-10)
            return (self.p - 1.0) * a ** (self.p - 2.0)
        return self.phi_q(q, i, j)


@dataclass
class Solution:
    """Per-class node values with solver diagnostics."""

    u: np.ndarray  # (n, C)
    residuals: np.ndarray  # (C,) relative residuals of the solved systems
    iterations: np.ndarray  # (C,)


@dataclass(frozen=True)
class EllipticProblem:
    """Full specification of one propagation problem: the graph, the edge
    nonlinearity, the diagonal perturbation, an optional source, the labeled
    set, and (for the soft mode) the fidelity weight."""

    graph: Graph
    labels: LabelData
    mode: str = "laplace"  # laplace | soft | plaplace | poisson
    phi: PhiSpec = PhiSpec(kind="plaplace", p=2.0)
    tau: float = 0.0
    source: Optional[np.ndarray] = None
    soft_lambda: Optional[float] = None

    def solve(self, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None) -> Solution:
        if self.mode == "laplace":
            return solve_laplace(self.graph, self.labels, tau=self.tau,
                                 source=self.source, tol=tol, max_iter=max_iter)
        if self.mode == "soft":
            if self.soft_lambda is None:
                raise ValueError("soft mode requires soft_lambda")
            return solve_laplace_soft(self.graph, self.labels, self.soft_lambda,
                                      tau=self.tau, tol=tol, max_iter=max_iter)
        if self.mode == "plaplace":
            return solve_plaplace(self.graph, self.labels, p=self.phi.p,
                                  tau=self.tau, tol=tol, max_iter=max_iter)
        if self.mode == "poisson":
            return solve_poisson(self.graph, self.labels, tol=tol,
                                 max_iter=max_iter)
        raise ValueError(f"unknown mode {self.mode!r}")


def predict(solution) -> np.ndarray:
    """Class with the highest channel value per node; ties go to the lowest
    class index."""
    u = solution.u if isinstance(solution, Solution) else np.asarray(solution)
    return np.argmax(u, axis=1)


# ---------------------------------------------------------------------------
# system assembly


def _check_solvable(g: Graph, labels: Optional[LabelData], tau: float, what: str):
    if tau > 0:
        return
    comp, count = connected_components(g)
    have = np.zeros(count, dtype=bool)
    if labels is not None and labels.m:
        have[comp[labels.indices]] = True
    missing = np.flatnonzero(~have)
    if missing.size:
        node = int(np.flatnonzero(comp == missing[0])[0])
        raise SolvabilityError(
            f"{what}: component {int(missing[0])} (containing node {node}) has "
            "no labeled node and tau = 0; the system is singular"
        )


class _Csr:
    """CSR triples in the layout the PCG kernels expect."""

    def __init__(self, mat: sparse.csr_matrix, diag: np.ndarray):
        mat.sort_indices()
        self.indptr = mat.indptr.astype(np.int64)
        self.indices = mat.indices.astype(np.int64)
        self.data = np.ascontiguousarray(mat.data, dtype=np.float64)
        self.diag = diag


def _assemble(n, rows, cols, vals, diag):
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat = mat + sparse.diags(diag, format="csr")
    return _Csr(mat, diag)


def _reduced_system(g: Graph, wvec, labeled_idx, tau):
    """(D - W + tau I) on the unlabeled block, plus the boundary coupling
    matrix W_UL used for the right-hand side."""
    n = g.n
    labeled = np.zeros(n, dtype=bool)
    labeled[labeled_idx] = True
    pos = -np.ones(n, dtype=np.int64)
    unlabeled = np.flatnonzero(~labeled)
    pos[unlabeled] = np.arange(unlabeled.size)
    lpos = -np.ones(n, dtype=np.int64)
    lpos[labeled_idx] = np.arange(len(labeled_idx))

    deg = np.zeros(n)
    np.add.at(deg, g.edges_i, wvec)
    np.add.at(deg, g.edges_j, wvec)

    ui = ~labeled[g.edges_i]
    uj = ~labeled[g.edges_j]
    both = ui & uj
    rows = np.concatenate([pos[g.edges_i[both]], pos[g.edges_j[both]]])
    cols = np.concatenate([pos[g.edges_j[both]], pos[g.edges_i[both]]])
    vals = np.concatenate([-wvec[both], -wvec[both]])
    system = _assemble(unlabeled.size, rows, cols, vals, deg[unlabeled] + tau)

    cross_i = ui & ~uj  # i unlabeled, j labeled
    cross_j = uj & ~ui
    crow = np.concatenate([pos[g.edges_i[cross_i]], pos[g.edges_j[cross_j]]])
    ccol = np.concatenate([lpos[g.edges_j[cross_i]], lpos[g.edges_i[cross_j]]])
    cval = np.concatenate([wvec[cross_i], wvec[cross_j]])
    coupling = sparse.coo_matrix(
        (cval, (crow, ccol)), shape=(unlabeled.size, len(labeled_idx))
    ).tocsr()
    return system, coupling, unlabeled


def _full_system(g: Graph, wvec, diag_extra):
    """(D - W) + diag_extra over all nodes."""
    deg = np.zeros(g.n)
    np.add.at(deg, g.edges_i, wvec)
    np.add.at(deg, g.edges_j, wvec)
    rows = np.concatenate([g.edges_i, g.edges_j])
    cols = np.concatenate([g.edges_j, g.edges_i])
    vals = np.concatenate([-wvec, -wvec])
    return _assemble(g.n, rows, cols, vals, deg + diag_extra)


def _pcg(system: _Csr, b, tol, max_iter, context):
    x = np.zeros_like(b)
    inv_diag = 1.0 / system.diag
    iters, res, bnorm = _backend.pcg(
        system.indptr,
        system.indices,
        system.data,
        inv_diag,
        np.ascontiguousarray(b, dtype=np.float64),
        x,
        tol,
        0.0,
        int(max_iter),
    )
    if bnorm > 0.0 and res > tol * bnorm:
        raise ConvergenceError(
            f"{context}: CG stopped after {iters} iterations with relative "
            f"residual {res / bnorm:.3e} > tol {tol:.1e}"
        )
    rel = res / bnorm if bnorm > 0 else 0.0
    return x, iters, rel


# ---------------------------------------------------------------------------
# solvers


def solve_laplace(
    g: Graph,
    labels: LabelData,
    tau: float = 0.0,
    source=None,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> Solution:
    """Hard-constrained (tau-perturbed) Laplace learning.

    Solves (Delta + tau I) u = source off the labeled set with u = labels on
    it, one system per class. Requires a labeled node in every connected
    component unless tau > 0.
    """
    _check_solvable(g, labels, tau, "laplace")
    C = labels.n_classes if labels.m else (source.shape[1] if source is not None else 1)
    u = np.zeros((g.n, C))
    if labels.m:
        u[labels.indices] = labels.values
    system, coupling, unlabeled = _reduced_system(g, g.weights, labels.indices, tau)
    max_iter = max_iter or 10 * max(unlabeled.size, 1)
    residuals = np.zeros(C)
    iterations = np.zeros(C, dtype=np.int64)
    if unlabeled.size == 0:
        return Solution(u, residuals, iterations)
    for c in range(C):
        b = coupling @ labels.values[:, c] if labels.m else np.zeros(unlabeled.size)
        if source is not None:
            b = b + np.asarray(source, dtype=np.float64)[unlabeled, c]
        x, iters, rel = _pcg(system, b, tol, max_iter, f"laplace class {c}")
        u[unlabeled, c] = x
        residuals[c] = rel
        iterations[c] = iters
    return Solution(u, residuals, iterations)


def solve_laplace_soft(
    g: Graph,
    labels: LabelData,
    lam: float,
    tau: float = 0.0,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> Solution:
    """Soft-constrained Laplace learning: (Delta + tau I + lam xi) u = lam xi g
    with xi the labeled-set indicator. Large lam recovers hard constraints."""
    if lam <= 0:
        raise ValueError("soft constraint weight lam must be positive")
    _check_solvable(g, labels, tau, "soft laplace")
    C = labels.n_classes
    xi = np.zeros(g.n)
    xi[labels.indices] = 1.0
    system = _full_system(g, g.weights, tau + lam * xi)
    max_iter = max_iter or 10 * g.n
    u = np.zeros((g.n, C))
    residuals = np.zeros(C)
    iterations = np.zeros(C, dtype=np.int64)
    for c in range(C):
        b = np.zeros(g.n)
        b[labels.indices] = lam * labels.values[:, c]
        x, iters, rel = _pcg(system, b, tol, max_iter, f"soft laplace class {c}")
        u[:, c] = x
        residuals[c] = rel
        iterations[c] = iters
    return Solution(u, residuals, iterations)


def solve_plaplace(
    g: Graph,
    labels: LabelData,
    p: float,
    tau: float = 0.0,
    tol: float = DEFAULT_TOL,
    outer_tol: float = 1e-8,
    theta: float = 0.5,
    grad_floor: float = 1e-10,
    max_outer: int = 100,
    max_iter: Optional[int] = None,
) -> Solution:
    """p-Laplace learning by iteratively reweighted linear solves.

    Each outer step solves the linear system with edge weights
    w_xy * max(|grad u|, grad_floor)^(p-2) and damps the update by theta;
    iteration stops when the max-norm change drops below outer_tol. p = 2
    reduces to a single Laplace solve.
    """
    if p <= 1.0:
        raise ValueError("p-Laplace iteration requires p > 1")
    if labels.m == 0:
        raise SolvabilityError("p-Laplace learning requires labeled nodes")
    _check_solvable(g, labels, tau, "p-laplace")
    init = solve_laplace(g, labels, tau=tau, tol=tol, max_iter=max_iter)
    C = labels.n_classes
    u = init.u.copy()
    residuals = init.residuals.copy()
    iterations = init.iterations.copy()
    labeled = labels.indices
    for c in range(C):
        uc = u[:, c]
        converged = False
        for _ in range(max_outer):
            grad = uc[g.edges_i] - uc[g.edges_j]
            rw = g.weights * np.maximum(np.abs(grad), grad_floor) ** (p - 2.0)
            system, coupling, unlabeled = _reduced_system(g, rw, labeled, tau)
            b = coupling @ labels.values[:, c]
            x, iters, rel = _pcg(
                system, b, tol, max_iter or 10 * max(unlabeled.size, 1),
                f"p-laplace class {c}",
            )
            new = uc.copy()
            new[unlabeled] = (1.0 - theta) * uc[unlabeled] + theta * x
            change = np.max(np.abs(new - uc)) if unlabeled.size else 0.0
            uc = new
            residuals[c] = rel
            iterations[c] += iters
            if change <= outer_tol:
                converged = True
                break
        if not converged:
            raise ConvergenceError(
                f"p-laplace class {c}: no convergence in {max_outer} outer "
                f"iterations (last change {change:.3e})"
            )
        u[:, c] = uc
    return Solution(u, residuals, iterations)


def solve_poisson(
    g: Graph,
    labels: LabelData,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> Solution:
    """Poisson learning: labels enter as mean-centred point sources,
    Delta u = (g - gbar) on the labeled set, 0 elsewhere.

    The constant ambiguity is fixed by the degree-weighted mean-zero gauge
    sum_x deg(x) u(x) = 0. Requires a connected graph.
    """
    if labels.m == 0:
        raise SolvabilityError("Poisson learning requires labeled nodes")
    _, count = connected_components(g)
    if count != 1:
        raise SolvabilityError(
            f"Poisson learning needs a connected graph; found {count} components"
        )
    C = labels.n_classes
    gbar = labels.values.mean(axis=0)
    system = _full_system(g, g.weights, np.zeros(g.n))
    deg = g.degrees()
    max_iter = max_iter or 10 * g.n
    u = np.zeros((g.n, C))
    residuals = np.zeros(C)
    iterations = np.zeros(C, dtype=np.int64)
    for c in range(C):
        b = np.zeros(g.n)
        b[labels.indices] = labels.values[:, c] - gbar[c]
        x, iters, rel = _pcg(system, b, tol, max_iter, f"poisson class {c}")
        x -= (deg @ x) / deg.sum()
        u[:, c] = x
        residuals[c] = rel
        iterations[c] = iters
    return Solution(u, residuals, iterations)
