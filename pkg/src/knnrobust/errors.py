"""Exception hierarchy shared across the package."""


class KnnRobustError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(KnnRobustError):
    """Malformed input data (bad CSV row, ragged table, bad label, ...)."""


class DegeneratePairError(KnnRobustError):
    """Two points with different labels coincide exactly.

    Such a pair makes the perturbation problem ill-posed (the constraint
    row is identically zero and strong duality breaks down), so it is
    rejected at construction time instead of producing garbage downstream.
    """


class InsufficientPointsError(KnnRobustError):
    """Not enough points of some class for the requested K / order statistic."""


class SolverError(KnnRobustError):
    """Numerical failure inside a solver (non-finite arithmetic, no KKT point)."""


class InfeasibleSubproblemError(SolverError):
    """The constraint polyhedron of a subproblem is empty."""


class CertificationError(KnnRobustError):
    """An internal consistency check failed (e.g. bound ordering violated)."""
