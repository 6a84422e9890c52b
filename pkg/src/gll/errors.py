"""Exception types raised by the graph, solver, backprop and I/O layers."""


class DegenerateBandwidthError(ValueError):
    """Self-tuning bandwidth is zero (duplicate points); the kernel argument
    and the feature gradients are undefined there."""


class SolvabilityError(RuntimeError):
    """The propagation problem is singular as posed (e.g. a connected
    component with no labeled node and no diagonal perturbation)."""


class ConvergenceError(RuntimeError):
    """An iterative solve stopped at its iteration cap above tolerance."""


class AdjointSingularError(RuntimeError):
    """The adjoint system has a (numerically) vanishing row and no diagonal
    perturbation; gradients are undefined."""


class IdxParseError(ValueError):
    """Malformed IDX file; message carries the offending byte offset."""


class ConfigError(ValueError):
    """Bad run-configuration file: unknown key, bad value, missing path."""
