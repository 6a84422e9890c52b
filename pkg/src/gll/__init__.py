"""gll: label propagation on k-NN similarity graphs as a differentiable layer.

Forward: exact k-NN graph construction, Laplace / soft-Laplace / p-Laplace /
Poisson propagation. Backward: one adjoint solve per class yields exact
gradients with respect to edge weights, sources, boundary values and the
input features, so the layer trains end to end inside a small network.
"""

import os as _os

# GLL_THREADS caps internal parallelism; the BLAS pools read these at first
# numpy import, so set them before anything numeric loads.
if _os.environ.get("GLL_THREADS"):
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _os.environ["GLL_THREADS"])

from ._backend import BACKEND
from .graph import (
    EXP_KERNEL,
    Graph,
    VectorField,
    WeightKernel,
    build_graph,
    connected_components,
    dirichlet_energy,
    divergence,
    divergence_general,
    gradient,
    field_inner,
    knn_search,
    laplacian_apply,
    load_graph,
    node_inner,
    rebuild_weights,
    save_graph,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EXP_KERNEL",
    "Graph",
    "VectorField",
    "WeightKernel",
    "build_graph",
    "connected_components",
    "dirichlet_energy",
    "divergence",
    "divergence_general",
    "gradient",
    "field_inner",
    "knn_search",
    "laplacian_apply",
    "load_graph",
    "node_inner",
    "rebuild_weights",
    "save_graph",
    "__version__",
]
