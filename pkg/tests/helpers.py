"""Independent brute-force oracles used to freeze expected values.

Nothing here shares code paths with the solvers under test: the exact 1-NN
reference goes through active-set enumeration per target, the 1-D reference
scans perturbation magnitudes densely, and the LP reference enumerates
vertices.
"""

import itertools

import numpy as np

from knnrobust import (
    Dataset,
    Query,
    active_set_oracle,
    build_1nn_subproblem,
    knn_predict,
)

GRID = np.arange(-5, 6)


def random_grid_dataset(rng, max_n=12, max_d=3, classes=(2, 3)):
    """Small dataset with distinct integer-grid points and a good query.

    Points are sampled without replacement from the [-5, 5]^d lattice, so no
    two points (in particular none across classes) coincide.  The returned
    query is an integer grid point correctly classified at K=1 and, when the
    class sizes allow it, at K=3 and K=5 as well.
    """
    while True:
        d = int(rng.integers(1, max_d + 1))
        cells = GRID.size ** d
        n = int(rng.integers(4, min(max_n, cells - 1) + 1))
        class_count = int(rng.choice(classes))
        flat = rng.choice(cells, size=n + 1, replace=False)
        coords = np.stack(np.unravel_index(flat, (GRID.size,) * d), axis=1)
        points = GRID[coords].astype(np.float64)
        labels = rng.integers(1, class_count + 1, size=n)
        if np.unique(labels).size < 2:
            continue
        ds = Dataset(points[:n], labels, class_count)
        z = points[n]
        ks = [1]
        for k in (3, 5):
            order = (k + 1) // 2
            counts = [np.count_nonzero(labels == c) for c in range(1, class_count + 1)]
            if k <= n and min(counts) >= order and (n - max(counts)) >= order:
                ks.append(k)
        true = knn_predict(ds, z, 1)
        ok = all(knn_predict(ds, z, k, true_label=true) == true for k in ks)
        if not ok:
            continue
        return ds, Query(z, true), ks


def brute_force_exact_1nn(ds: Dataset, q: Query) -> float:
    """Minimum over targets of the active-set reference optimum."""
    best = np.inf
    for j in np.flatnonzero(ds.labels != q.true_label):
        sp = build_1nn_subproblem(ds, q, int(j))
        delta, _ = active_set_oracle(sp)
        best = min(best, float(np.linalg.norm(delta)))
    return best


def min_flip_1d(ds: Dataset, q: Query, k: int, hi: float) -> float:
    """Exact smallest flipping magnitude in 1-D by breakpoint enumeration.

    Along a line the K-NN ranking only changes at pair midpoints, and with
    the attacker-favorable tie rule a flip that happens at all happens
    exactly at such a midpoint.  Checking every midpoint (both directions)
    is therefore an exact, solver-independent reference.
    """
    assert ds.d == 1
    xs = ds.points[:, 0]
    z = float(q.z[0])
    mids = {(a + b) / 2.0 for i, a in enumerate(xs) for b in xs[i + 1:]}
    best = np.inf
    for mid in mids:
        t = abs(mid - z)
        if 0 < t <= hi and t < best:
            if knn_predict(ds, np.array([mid]), k, true_label=q.true_label) != q.true_label:
                best = t
    return best


def no_flip_below_1d(ds: Dataset, q: Query, k: int, radius: float, step: float = 1e-4) -> bool:
    """True iff no perturbation magnitude below ``radius`` flips the prediction.

    Dense grid sweep, vectorized with a plain majority count; the rare grid
    point that fails the quick count (e.g. a distance tie hit exactly) is
    re-checked with the exact tie-aware prediction.
    """
    assert ds.d == 1
    ts = np.arange(step, radius, step)
    if ts.size == 0:
        return True
    z_batch = np.concatenate([q.z[0] + ts, q.z[0] - ts])[:, None]
    dist_sq = (z_batch - ds.points[:, 0][None, :]) ** 2
    nearest = np.argpartition(dist_sq, k - 1, axis=1)[:, :k]
    votes = (ds.labels[nearest] == q.true_label).sum(axis=1)
    for row in np.flatnonzero(votes < (k + 1) // 2):
        if knn_predict(ds, z_batch[row], k, true_label=q.true_label) != q.true_label:
            return False
    return True


def preserved_fraction(ds: Dataset, true_label: int, z_batch: np.ndarray, k: int) -> float:
    """Fraction of perturbed queries still predicted as ``true_label``.

    Simple vote counting without tie handling; callers use random radii
    where exact ties have probability zero.
    """
    diff = z_batch[:, None, :] - ds.points[None, :, :]
    dist_sq = np.einsum("qnd,qnd->qn", diff, diff)
    nearest = np.argpartition(dist_sq, k - 1, axis=1)[:, :k]
    votes = (ds.labels[nearest] == true_label).sum(axis=1)
    return float(np.mean(votes >= (k + 1) // 2))


def lp_vertex_minimum(lp) -> float | None:
    """Brute-force LP optimum by enumerating basic feasible points.

    Only valid when the feasible region is bounded (callers bound every
    variable).  Returns None when no vertex is feasible.
    """
    p = lp.num_variables
    planes = [(np.asarray(row), float(rhs)) for row, rhs in zip(lp.matrix, lp.rhs)]
    for kvar in range(p):
        for bound in (lp.lower[kvar], lp.upper[kvar]):
            if np.isfinite(bound):
                e = np.zeros(p)
                e[kvar] = 1.0
                planes.append((e, float(bound)))

    def feasible(x):
        for row, rel, rhs in zip(lp.matrix, lp.relations, lp.rhs):
            v = float(row @ x)
            if rel == ">=" and v < rhs - 1e-9:
                return False
            if rel == "<=" and v > rhs + 1e-9:
                return False
            if rel == "=" and abs(v - rhs) > 1e-9:
                return False
        return bool(np.all(x >= lp.lower - 1e-9) and np.all(x <= lp.upper + 1e-9))

    best = None
    for combo in itertools.combinations(range(len(planes)), p):
        a = np.stack([planes[i][0] for i in combo])
        b = np.array([planes[i][1] for i in combo])
        try:
            x = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            continue
        if feasible(x):
            val = float(lp.objective @ x)
            if best is None or val < best:
                best = val
    return best
