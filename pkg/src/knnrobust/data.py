"""Reference database, CSV ingestion and K-NN prediction.

The dataset is an immutable matrix of points with integer class labels in
``{1..C}``.  Every routine in this module is a pure function of its inputs,
so datasets can be shared freely between worker threads.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, InsufficientPointsError

ATTACKER_FAVORABLE = "attacker-favorable"


@dataclass(frozen=True)
class TieRule:
    """Policy for distance ties at the decision boundary.

    The only supported mode resolves ties in favour of misclassification,
    which matches the non-strict inequality used by the perturbation
    constraints: a perturbation of exactly the minimum radius already flips
    the label.  ``inflation`` is the relative factor used to push a
    perturbation strictly past a bisection when validating attacks.
    """

    mode: str = ATTACKER_FAVORABLE
    inflation: float = 1e-9

    def __post_init__(self) -> None:
        if self.mode != ATTACKER_FAVORABLE:
            raise ValueError(f"unsupported tie mode: {self.mode!r}")
        if not self.inflation > 0:
            raise ValueError("inflation must be positive")


DEFAULT_TIE_RULE = TieRule()


@dataclass(frozen=True)
class Dataset:
    """n points in d dimensions with class labels in {1..C}."""

    points: np.ndarray
    labels: np.ndarray
    class_count: int = field(default=0)

    def __post_init__(self) -> None:
        points = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if points.ndim != 2:
            raise DataFormatError("points must be a 2-D matrix")
        n, d = points.shape
        if n < 2 or d < 1:
            raise DataFormatError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
        if labels.shape != (n,):
            raise DataFormatError("labels must have one entry per point")
        if not np.all(np.isfinite(points)):
            raise DataFormatError("points contain NaN or Inf entries")
        present = np.unique(labels)
        if present.size < 2:
            raise DataFormatError("need at least two distinct classes")
        c = self.class_count if self.class_count else int(present.max())
        if present[0] < 1 or present[-1] > c:
            raise DataFormatError(f"labels must lie in 1..{c}, got {present.tolist()}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_count", c)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def distances_sq(self, z: np.ndarray) -> np.ndarray:
        """Squared Euclidean distances from ``z`` to every point.

        Computed from the differences directly rather than by expanding the
        inner products, which keeps cancellation error small near ties.
        """
        z = np.asarray(z, dtype=np.float64).ravel()
        if z.shape != (self.d,):
            raise ValueError(f"query has dimension {z.size}, dataset has d={self.d}")
        diff = self.points - z
        return np.einsum("ij,ij->i", diff, diff)


@dataclass(frozen=True)
class Query:
    """A test instance together with the label the model should assign it."""

    z: np.ndarray
    true_label: int

    def __post_init__(self) -> None:
        z = np.ascontiguousarray(np.asarray(self.z, dtype=np.float64)).ravel()
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "true_label", int(self.true_label))


def _read_labeled_rows(path, has_header: bool) -> tuple[list[int], list[list[float]]]:
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        if has_header:
            next(reader, None)
        for lineno, record in enumerate(reader, start=1):
            if not record or all(not f.strip() for f in record):
                continue
            if len(record) < 2:
                raise DataFormatError(f"row {lineno}: need a label and at least one feature")
            raw_label = record[0].strip()
            try:
                label = int(raw_label)
            except ValueError:
                raise DataFormatError(f"row {lineno}: label {raw_label!r} is not an integer") from None
            if label < 1:
                raise DataFormatError(f"row {lineno}: label must be a positive integer, got {label}")
            features = []
            for col, fieldval in enumerate(record[1:], start=2):
                try:
                    features.append(float(fieldval))
                except ValueError:
                    raise DataFormatError(
                        f"row {lineno}: field {col} ({fieldval!r}) is not numeric"
                    ) from None
            if width is None:
                width = len(features)
            elif len(features) != width:
                raise DataFormatError(
                    f"row {lineno}: expected {width} features, got {len(features)}"
                )
            labels.append(label)
            rows.append(features)
    return labels, rows


def load_csv(path, has_header: bool = False) -> Dataset:
    """Load a ``label,f1,...,fd`` CSV file into a Dataset.

    Rows are kept in file order.  Errors carry the 1-based row number of the
    offending line (header excluded from the count when present).
    """
    labels, rows = _read_labeled_rows(path, has_header)
    if len(rows) < 2:
        raise DataFormatError(f"{path}: need at least 2 data rows, got {len(rows)}")
    label_arr = np.asarray(labels, dtype=np.int64)
    present = np.unique(label_arr)
    if present.size < 2:
        raise DataFormatError(f"{path}: fewer than 2 classes present")
    if present[0] != 1 or present[-1] != present.size:
        raise DataFormatError(
            f"{path}: labels must form a contiguous range 1..C, got {present.tolist()}"
        )
    return Dataset(np.asarray(rows, dtype=np.float64), label_arr, int(present.size))


def load_queries(path, has_header: bool = False) -> list[Query]:
    """Load test instances from a CSV in the same format as the database.

    The label column holds the true label of each query.
    """
    labels, rows = _read_labeled_rows(path, has_header)
    if not rows:
        raise DataFormatError(f"{path}: no query rows")
    return [Query(np.asarray(r, dtype=np.float64), lab) for lab, r in zip(labels, rows)]


def generate_synthetic(
    n_per_class: int, d: int, class_count: int, separation: float, seed: int
) -> Dataset:
    """Deterministic Gaussian blobs with class means ``separation`` apart.

    Class means sit on distinct coordinate axes (cycled with an increasing
    radius when C > d) so that means of different classes are separated by
    approximately ``separation``; unit-variance noise is added around each.
    """
    if n_per_class < 1 or d < 1 or class_count < 1:
        raise ValueError("all counts must be >= 1")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    rng = np.random.default_rng(seed)
    scale = separation / np.sqrt(2.0)
    means = np.zeros((class_count, d))
    for c in range(class_count):
        means[c, c % d] = scale * (1 + c // d)
    points = np.vstack(
        [means[c] + rng.standard_normal((n_per_class, d)) for c in range(class_count)]
    )
    labels = np.repeat(np.arange(1, class_count + 1), n_per_class)
    return Dataset(points, labels, class_count)


def k_nearest(ds: Dataset, z: np.ndarray, k: int) -> np.ndarray:
    """Indices of the K nearest points, nearest first.

    Equal distances are broken by ascending index, so the output is fully
    deterministic.
    """
    if k > ds.n:
        raise InsufficientPointsError(f"K={k} exceeds dataset size n={ds.n}")
    if k < 1:
        raise ValueError("K must be >= 1")
    order = np.argsort(ds.distances_sq(z), kind="stable")
    return order[:k]


def _vote(counts: Counter) -> int:
    best = max(counts.values())
    return min(label for label, c in counts.items() if c == best)


# Distances this close (relative) to the K-th rank count as tied.  Exact
# equality would be the mathematical definition, but a perturbation landing
# on a bisection hyperplane rarely reproduces the tie bit-for-bit when the
# distances are recomputed, and the tie rule exists precisely for that
# boundary.
_TIE_REL_TOL = 512 * np.finfo(np.float64).eps


def knn_predict(
    ds: Dataset,
    z: np.ndarray,
    k: int,
    tie: TieRule = DEFAULT_TIE_RULE,
    true_label: int | None = None,
) -> int:
    """Majority-vote K-NN prediction under the attacker-favorable tie rule.

    When a distance tie straddles the K-th rank, the tied candidates can be
    included or dropped at will; with ``true_label`` given, the choice (and
    any resulting tie in the vote itself) is resolved so that the prediction
    moves away from ``true_label`` whenever some choice achieves that.
    Without a reference label, ties are broken by ascending point index and
    vote ties by the smallest label.
    """
    if k % 2 == 0:
        raise ValueError(f"K must be odd, got {k}")
    if k > ds.n:
        raise InsufficientPointsError(f"K={k} exceeds dataset size n={ds.n}")
    dist_sq = ds.distances_sq(z)
    order = np.argsort(dist_sq, kind="stable")
    kth = dist_sq[order[k - 1]]
    window = _TIE_REL_TOL * max(1.0, kth)
    strict = order[dist_sq[order] < kth - window]
    tied = order[np.abs(dist_sq[order] - kth) <= window]
    slots = k - strict.size

    fixed = Counter(int(ds.labels[i]) for i in strict)
    avail = Counter(int(ds.labels[i]) for i in tied)

    if true_label is None:
        for i in tied[:slots]:
            fixed[int(ds.labels[i])] += 1
        return _vote(fixed)

    other_avail = sum(c for label, c in avail.items() if label != true_label)
    # Filling non-true tied candidates first leaves the true class with the
    # fewest achievable votes; the overflow below is forced either way.
    true_votes = fixed.get(true_label, 0) + max(0, slots - other_avail)
    best_label = None
    best_votes = -1
    for label in sorted(set(fixed) | set(avail)):
        if label == true_label:
            continue
        votes = fixed.get(label, 0) + min(avail.get(label, 0), slots)
        if votes >= true_votes and votes > best_votes:
            best_label, best_votes = label, votes
    return best_label if best_label is not None else true_label


def class_means(ds: Dataset) -> np.ndarray:
    """Row c-1 is the arithmetic mean of class-c points."""
    means = np.empty((ds.class_count, ds.d))
    for c in range(1, ds.class_count + 1):
        idx = ds.class_indices(c)
        if idx.size == 0:
            raise InsufficientPointsError(f"class {c} has no points")
        means[c - 1] = ds.points[idx].mean(axis=0)
    return means
