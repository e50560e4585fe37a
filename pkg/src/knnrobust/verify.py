"""Certified lower bounds on the minimum adversarial perturbation.

The K-NN bound merges all non-true labels into a single negative class and
works purely with pair bounds (clipped distances to bisection hyperplanes):
for each negative point j take the k-th largest pair bound over the positive
points, then take the k-th smallest of those over j, with k = (K+1)/2.
Runtime is independent of K beyond the selection index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DEFAULT_TIE_RULE, Dataset, Query, TieRule, knn_predict
from .errors import DegeneratePairError, InsufficientPointsError

_BLOCK = 2048


@dataclass(frozen=True)
class VerificationResult:
    """A certified radius with the pair that made it binding."""

    epsilon_lower: float
    binding_pair: tuple[int, int] | None
    k_used: int
    misclassified: bool = False


def _pair_bound_block(ds: Dataset, dist_sq: np.ndarray, same: np.ndarray,
                      block: np.ndarray) -> np.ndarray:
    """Pair bounds C[i, j] for all same-class i against a block of targets j.

    The cross-pair squared distances are evaluated through a Gram product,
    which is the only tractable form at scale; tiny negative values from
    cancellation are clipped before the square root.
    """
    xs = ds.points[same]
    xb = ds.points[block]
    cross = (
        np.einsum("ij,ij->i", xs, xs)[:, None]
        + np.einsum("ij,ij->i", xb, xb)[None, :]
        - 2.0 * (xs @ xb.T)
    )
    np.maximum(cross, 0.0, out=cross)
    if np.any(cross == 0.0):
        i_bad, j_bad = np.argwhere(cross == 0.0)[0]
        raise DegeneratePairError(
            f"points {int(same[i_bad])} and {int(block[j_bad])} coincide across classes"
        )
    numer = np.maximum(dist_sq[block][None, :] - dist_sq[same][:, None], 0.0)
    return numer / (2.0 * np.sqrt(cross))


def verify_knn(ds: Dataset, q: Query, k: int = 1,
               tie: TieRule = DEFAULT_TIE_RULE) -> VerificationResult:
    """Certified K-NN lower bound via the order-statistic pair-bound formula."""
    if k % 2 == 0:
        raise ValueError(f"K must be odd, got {k}")
    order = (k + 1) // 2
    same = ds.class_indices(q.true_label)
    others = np.flatnonzero(ds.labels != q.true_label)
    if same.size < order:
        raise InsufficientPointsError(
            f"need at least {order} points of class {q.true_label}, have {same.size}"
        )
    if others.size < order:
        raise InsufficientPointsError(
            f"need at least {order} other-class points, have {others.size}"
        )
    if knn_predict(ds, q.z, k, tie, true_label=q.true_label) != q.true_label:
        return VerificationResult(0.0, None, order, misclassified=True)

    dist_sq = ds.distances_sq(q.z)
    d_vals = np.empty(others.size)
    kth_i = np.empty(others.size, dtype=np.int64)
    for lo in range(0, others.size, _BLOCK):
        block = others[lo:lo + _BLOCK]
        c = _pair_bound_block(ds, dist_sq, same, block)
        part = np.argpartition(c, same.size - order, axis=0)[same.size - order]
        d_vals[lo:lo + block.size] = c[part, np.arange(block.size)]
        kth_i[lo:lo + block.size] = same[part]

    j_pos = int(np.argpartition(d_vals, order - 1)[order - 1])
    epsilon = float(d_vals[j_pos])
    binding = (int(kth_i[j_pos]), int(others[j_pos]))
    return VerificationResult(epsilon, binding, order)


def verify_1nn(ds: Dataset, q: Query, tie: TieRule = DEFAULT_TIE_RULE) -> VerificationResult:
    """1-NN lower bound: min over targets of the max pair bound.

    Tight whenever the exact solution has a single active constraint; always
    at most the exact minimum perturbation.
    """
    return verify_knn(ds, q, 1, tie)
