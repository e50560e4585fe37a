"""Constraint systems for the per-target perturbation QPs.

A subproblem encodes "push the query closer to every target point than to
every retained same-class point" as the linear system ``A delta + b >= 0``.
Row (i, j) has ``a = x_j - x_i`` and ``b = (||z - x_i||^2 - ||z - x_j||^2)/2``;
the squared distances are computed from the differences directly to limit
cancellation error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Query
from .errors import DegeneratePairError

_EMPTY = np.empty(0, dtype=np.int64)


@dataclass(frozen=True)
class Subproblem:
    """One convex QP instance: minimize ||delta||^2/2 s.t. rows.delta + offsets >= 0."""

    rows: np.ndarray            # (m, d) matrix A
    offsets: np.ndarray         # (m,) vector b
    target_ids: tuple           # indices the attack drives toward
    excluded_ids: tuple         # same-class indices whose constraints were dropped
    query: np.ndarray           # the z this system was built from
    row_source_ids: np.ndarray = field(default_factory=lambda: _EMPTY)  # i per row
    row_target_ids: np.ndarray = field(default_factory=lambda: _EMPTY)  # j per row
    row_norms_sq: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        rows = np.ascontiguousarray(np.asarray(self.rows, dtype=np.float64))
        offsets = np.asarray(self.offsets, dtype=np.float64).ravel()
        if rows.ndim != 2 or rows.shape[0] != offsets.shape[0] or rows.shape[0] < 1:
            raise ValueError("rows must be (m, d) with one offset per row, m >= 1")
        norms_sq = np.einsum("ij,ij->i", rows, rows)
        if np.any(norms_sq == 0.0):
            bad = int(np.flatnonzero(norms_sq == 0.0)[0])
            i = int(self.row_source_ids[bad]) if len(self.row_source_ids) else bad
            j = int(self.row_target_ids[bad]) if len(self.row_target_ids) else -1
            raise DegeneratePairError(
                f"points {i} and {j} coincide across classes (zero constraint row)"
            )
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "row_norms_sq", norms_sq)
        object.__setattr__(self, "query", np.asarray(self.query, dtype=np.float64).ravel())

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def residual(self, delta: np.ndarray) -> np.ndarray:
        """Constraint slack A delta + b (nonnegative iff delta feasible)."""
        return self.rows @ np.asarray(delta, dtype=np.float64) + self.offsets


def _build(ds: Dataset, z: np.ndarray, source_ids: np.ndarray, target_ids,
           excluded) -> Subproblem:
    dist_sq = ds.distances_sq(z)
    blocks = []
    offs = []
    src = []
    tgt = []
    for j in target_ids:
        a = ds.points[j] - ds.points[source_ids]
        b = 0.5 * (dist_sq[source_ids] - dist_sq[j])
        blocks.append(a)
        offs.append(b)
        src.append(source_ids)
        tgt.append(np.full(source_ids.size, j, dtype=np.int64))
    return Subproblem(
        rows=np.vstack(blocks),
        offsets=np.concatenate(offs),
        target_ids=tuple(int(j) for j in target_ids),
        excluded_ids=tuple(int(i) for i in excluded),
        query=z,
        row_source_ids=np.concatenate(src),
        row_target_ids=np.concatenate(tgt),
    )


def build_1nn_subproblem(ds: Dataset, q: Query, j: int) -> Subproblem:
    """Constraints forcing z + delta to be (weakly) nearer x_j than every
    point sharing the query's label.  One row per same-class point; rows for
    other classes would be identically zero and are not stored."""
    if int(ds.labels[j]) == q.true_label:
        raise ValueError(f"target {j} has the query's own label {q.true_label}")
    source_ids = ds.class_indices(q.true_label)
    if source_ids.size == 0:
        raise ValueError(f"no points with the query label {q.true_label}")
    return _build(ds, q.z, source_ids, (int(j),), ())


def build_knn_subproblem(ds: Dataset, q: Query, s_minus, excluded=()) -> Subproblem:
    """K-NN constraint system: every target in ``s_minus`` must end up nearer
    than every same-class point not listed in ``excluded``."""
    s_minus = tuple(int(j) for j in s_minus)
    excluded = tuple(int(i) for i in excluded)
    if not s_minus:
        raise ValueError("s_minus must be nonempty")
    target_labels = {int(ds.labels[j]) for j in s_minus}
    if len(target_labels) != 1:
        raise ValueError(f"s_minus mixes labels {sorted(target_labels)}")
    if q.true_label in target_labels:
        raise ValueError("s_minus must not carry the query's own label")
    for i in excluded:
        if int(ds.labels[i]) != q.true_label:
            raise ValueError(f"excluded index {i} is not a same-class point")
    source_ids = np.setdiff1d(ds.class_indices(q.true_label), np.asarray(excluded, dtype=np.int64))
    if source_ids.size == 0:
        raise ValueError("all same-class points excluded; constraint set is empty")
    return _build(ds, q.z, source_ids, s_minus, excluded)


def pair_bound(ds: Dataset, z: np.ndarray, i: int, j: int) -> float:
    """Clipped distance from z to the (x_i, x_j) bisection hyperplane.

    This equals ``max(||z-x_j||^2 - ||z-x_i||^2, 0) / (2 ||x_j - x_i||)`` and
    is the radius certified by the best single-coordinate dual solution of
    the (i, j) constraint row.
    """
    z = np.asarray(z, dtype=np.float64)
    xi, xj = ds.points[i], ds.points[j]
    gap = xj - xi
    denom = float(np.linalg.norm(gap))
    if denom == 0.0:
        raise DegeneratePairError(f"points {i} and {j} coincide")
    di = z - xi
    dj = z - xj
    numer = max(float(dj @ dj) - float(di @ di), 0.0)
    return numer / (2.0 * denom)
