"""Minimum perturbations under the max, Euclidean and sum norms.

The same per-target constraint systems are solved as linear programs for
the max/sum norms and as quadratic programs for the Euclidean norm.  Since
||x||_inf <= ||x||_2 <= ||x||_1 pointwise, the minimum radii order the
opposite way.
"""

import numpy as np

from knnrobust import Dataset, Query, exact_1nn, exact_1nn_lp, generate_synthetic, knn_predict

# The two-point plane again: the max-norm optimum squeezes into the corner
# of the box while the sum-norm optimum moves along a single axis.
ds = Dataset(np.array([[1.0, 1.0], [2.0, 0.0]]), np.array([1, 2]))
q = Query(np.array([0.0, 0.0]), 1)

for norm, run in (("linf", lambda: exact_1nn_lp(ds, q, "linf")),
                  ("l2", lambda: exact_1nn(ds, q)),
                  ("l1", lambda: exact_1nn_lp(ds, q, "l1"))):
    cert = run()
    print(f"  {norm:>4}: epsilon {cert.epsilon:.6f}  delta {np.round(cert.delta, 6)}")

# Random blobs: the ordering linf <= l2 <= l1 holds on every query.
ds = generate_synthetic(30, 4, 2, 4.0, seed=5)
rng = np.random.default_rng(9)
print("\nrandom blobs:")
print(f"{'linf':>10} {'l2':>10} {'l1':>10}")
for _ in range(8):
    z = ds.points[rng.integers(ds.n)] + 0.3 * rng.standard_normal(ds.d)
    query = Query(z, knn_predict(ds, z, 1))
    linf = exact_1nn_lp(ds, query, "linf").epsilon
    l2 = exact_1nn(ds, query).epsilon
    l1 = exact_1nn_lp(ds, query, "l1").epsilon
    assert linf <= l2 + 1e-9 <= l1 + 2e-9
    print(f"{linf:>10.4f} {l2:>10.4f} {l1:>10.4f}")
