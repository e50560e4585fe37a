"""Upper-bound pipelines: exact 1-NN minimum perturbation and attacks.

The exact pipeline sorts the candidate targets by distance, discards most of
them with cheap dual bounds before ever building their constraint systems,
and solves the survivors by greedy coordinate ascent.  The greedy K-NN
attack and the line-search baselines reuse the same certificate type; every
certificate carrying a perturbation is validated against the classifier
before being returned.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import DEFAULT_TIE_RULE, Dataset, Query, TieRule, knn_predict
from .errors import CertificationError, SolverError
from .qp_solver import DualSolution, SolveStatus, SolverConfig, recover_primal, solve_dual_gca
from .subproblem import Subproblem, build_1nn_subproblem, build_knn_subproblem

DEFAULT_N_SCR = 8
_SUBSET_BUDGET = 50
_LINE_SEARCH_TOL = 1e-9
_RAY_EXTENSION_CAP = 2.0 ** 20


class CertificateKind(Enum):
    EXACT = "exact"
    UPPER_BOUND = "upper_bound"
    LOWER_BOUND = "lower_bound"


@dataclass
class AttackStats:
    subproblems_built: int = 0
    subproblems_solved: int = 0
    subproblems_screened: int = 0
    solver_iterations: int = 0
    wall_time: float = 0.0


@dataclass(frozen=True)
class PerturbationCertificate:
    """A perturbation and/or bound value with provenance.

    For ``EXACT`` and ``UPPER_BOUND`` kinds the perturbation is present,
    its norm equals ``epsilon``, and (inflated by the tie rule) it flips
    the prediction.
    """

    delta: np.ndarray | None
    epsilon: float
    kind: CertificateKind
    method: str
    stats: AttackStats = field(default_factory=AttackStats)
    misclassified: bool = False


def is_adversarial(ds: Dataset, q: Query, delta: np.ndarray, k: int,
                   tie: TieRule = DEFAULT_TIE_RULE) -> bool:
    """True iff the perturbation changes the prediction.

    Checks the slightly inflated point (robust when the solution stops a
    hair short of a bisection) and the exact point (the attacker-favorable
    tie rule makes a perturbation of exactly the minimum radius flip; at
    degenerate optima with a tight bisection the query already clears,
    inflating can cross back, so the exact point must count too).
    """
    delta = np.asarray(delta, dtype=np.float64)
    inflated = q.z + (1.0 + tie.inflation) * delta
    if knn_predict(ds, inflated, k, tie, true_label=q.true_label) != q.true_label:
        return True
    return knn_predict(ds, q.z + delta, k, tie, true_label=q.true_label) != q.true_label


def _zero_certificate(ds: Dataset, method: str, stats: AttackStats | None = None) -> PerturbationCertificate:
    return PerturbationCertificate(
        delta=np.zeros(ds.d), epsilon=0.0, kind=CertificateKind.EXACT,
        method=method, stats=stats or AttackStats(), misclassified=True,
    )


def _validated(ds: Dataset, q: Query, delta: np.ndarray, kind: CertificateKind,
               method: str, stats: AttackStats, k: int, tie: TieRule,
               norm_ord: float = 2) -> PerturbationCertificate:
    if not is_adversarial(ds, q, delta, k, tie):
        raise CertificationError(
            f"{method}: produced perturbation does not flip the {k}-NN prediction"
        )
    return PerturbationCertificate(
        delta=delta, epsilon=float(np.linalg.norm(delta, ord=norm_ord)), kind=kind,
        method=method, stats=stats,
    )


def screen_subproblem(ds: Dataset, q: Query, j: int, incumbent_sq: float,
                      n_scr: int = DEFAULT_N_SCR) -> bool:
    """Cheap test discarding target j without building its full subproblem.

    Evaluates the single-coordinate dual value for the ``n_scr`` same-class
    points nearest the query; if any of them already certifies a radius
    beyond the incumbent attack, the subproblem cannot improve it.
    """
    if n_scr < 1:
        raise ValueError("n_scr must be >= 1")
    dist_sq = ds.distances_sq(q.z)
    same = ds.class_indices(q.true_label)
    nearest = same[np.argsort(dist_sq[same], kind="stable")[:n_scr]]
    a = ds.points[j] - ds.points[nearest]
    norms_sq = np.einsum("ij,ij->i", a, a)
    if np.any(norms_sq == 0.0):
        return False  # degenerate pair; let the builder raise the real error
    neg_b = 0.5 * (dist_sq[j] - dist_sq[nearest])
    values = np.square(np.maximum(neg_b, 0.0)) / norms_sq
    return bool(np.any(incumbent_sq < values))


def _polish(sp: Subproblem, sol: DualSolution, delta: np.ndarray) -> tuple[np.ndarray, DualSolution]:
    """Refine a converged solution to machine precision on its active set.

    Coordinate ascent stops within tolerance of the optimum; at degenerate
    corners that residual noise can exceed the tie inflation used when
    validating attacks.  Re-solving the equality system of the nonzero
    multipliers fixes the vertex exactly; any sign of trouble (negative
    multipliers, infeasibility) falls back to the unpolished point.
    """
    if sol.indices.size == 0:
        return delta, sol
    sub = sp.rows[sol.indices]
    gram = sub @ sub.T
    try:
        lam = np.linalg.solve(gram, -sp.offsets[sol.indices])
    except np.linalg.LinAlgError:
        lam, *_ = np.linalg.lstsq(gram, -sp.offsets[sol.indices], rcond=None)
    if np.any(lam < 0.0):
        return delta, sol
    candidate = sub.T @ lam
    scale = 1.0 + float(np.max(np.abs(sp.offsets)))
    if float(np.min(sp.residual(candidate))) < -1e-11 * scale:
        return delta, sol
    keep = lam > 0.0
    polished = DualSolution(
        indices=sol.indices[keep], values=lam[keep],
        objective=-0.5 * float(candidate @ candidate)
        - float(lam[keep] @ sp.offsets[sol.indices[keep]]),
        iterations=sol.iterations, status=sol.status, size=sol.size,
    )
    return candidate, polished


def _solve_candidate(sp: Subproblem, cfg: SolverConfig, bound: float,
                     stats: AttackStats) -> tuple[np.ndarray, DualSolution]:
    """Row-screen, solve, recover and feasibility-check one subproblem."""
    reduced = sp
    if cfg.screening_enabled:
        lhs = -sp.offsets + np.sqrt(sp.row_norms_sq) * bound
        keep = np.flatnonzero(lhs >= 0.0)
        if keep.size < sp.m:
            reduced = Subproblem(
                rows=sp.rows[keep], offsets=sp.offsets[keep],
                target_ids=sp.target_ids, excluded_ids=sp.excluded_ids,
                query=sp.query, row_source_ids=sp.row_source_ids[keep],
                row_target_ids=sp.row_target_ids[keep],
            )
    sol = solve_dual_gca(reduced, cfg)
    stats.subproblems_solved += 1
    stats.solver_iterations += sol.iterations
    delta = recover_primal(reduced, sol)
    if sol.status is not SolveStatus.OBJECTIVE_CAP:
        slack = 1e-6 * (1.0 + float(np.max(np.abs(sp.offsets))))
        if sol.status is not SolveStatus.CONVERGED:
            raise SolverError(
                f"coordinate ascent hit the iteration cap after {sol.iterations} steps"
            )
        if float(np.min(sp.residual(delta))) < -slack:
            raise SolverError("recovered perturbation violates the full constraint set")
        polished, polished_sol = _polish(reduced, sol, delta)
        if polished is not delta and (
            reduced is sp
            or float(np.min(sp.residual(polished))) >= -1e-11 * (1.0 + float(np.max(np.abs(sp.offsets))))
        ):
            delta, sol = polished, polished_sol
    if reduced is not sp:
        # Remap multiplier indices back to the unreduced row numbering.
        sol = DualSolution(
            indices=keep[sol.indices], values=sol.values, objective=sol.objective,
            iterations=sol.iterations, status=sol.status, size=sp.m,
        )
    return delta, sol


def _qp_pipeline(ds: Dataset, q: Query, cfg: SolverConfig, n_scr: int,
                 sort_candidates: bool, candidate_limit: int | None,
                 stats: AttackStats) -> tuple[np.ndarray | None, float]:
    """Shared engine behind the exact and top-m 1-NN pipelines."""
    z = q.z
    dist_sq = ds.distances_sq(z)
    same = ds.class_indices(q.true_label)
    others = np.flatnonzero(ds.labels != q.true_label)
    if sort_candidates:
        others = others[np.argsort(dist_sq[others], kind="stable")]
    if candidate_limit is not None:
        others = others[:candidate_limit]

    d1 = float(np.sqrt(np.min(dist_sq[same])))
    scr_ids = same[np.argsort(dist_sq[same], kind="stable")[:n_scr]]
    x_scr = ds.points[scr_ids]
    dz2_scr = dist_sq[scr_ids]

    eps_best = np.inf
    delta_best: np.ndarray | None = None
    for pos, j in enumerate(others):
        dj = float(np.sqrt(dist_sq[j]))
        # No target farther out can certify below (dj - d1)/2, so once the
        # incumbent beats that, sorted iteration can stop altogether.
        if np.isfinite(eps_best) and (dj - d1) / 2.0 > eps_best:
            if sort_candidates:
                stats.subproblems_screened += len(others) - pos
                break
            stats.subproblems_screened += 1
            continue
        if cfg.screening_enabled and np.isfinite(eps_best):
            a = ds.points[j] - x_scr
            norms_sq = np.einsum("ij,ij->i", a, a)
            neg_b = 0.5 * (dist_sq[j] - dz2_scr)
            if norms_sq.min() > 0.0 and bool(
                np.any(eps_best * eps_best < np.square(np.maximum(neg_b, 0.0)) / norms_sq)
            ):
                stats.subproblems_screened += 1
                continue
        sp = build_1nn_subproblem(ds, q, int(j))
        stats.subproblems_built += 1
        if cfg.screening_enabled and np.isfinite(eps_best):
            # Single-coordinate radii for every row; if any exceeds the
            # incumbent the whole subproblem is certified unable to improve,
            # which also keeps the running-incumbent row screening sound.
            radii = np.maximum(-sp.offsets, 0.0) / np.sqrt(sp.row_norms_sq)
            if float(radii.max()) > eps_best:
                stats.subproblems_screened += 1
                continue
        bound = min(dj, eps_best)
        delta, _ = _solve_candidate(sp, cfg, bound, stats)
        eps_j = float(np.linalg.norm(delta))
        if eps_j < eps_best:
            eps_best = eps_j
            delta_best = delta
    if delta_best is None:
        raise SolverError("no candidate subproblem produced a perturbation")
    return delta_best, eps_best


def exact_1nn(ds: Dataset, q: Query, cfg: SolverConfig = SolverConfig(), *,
              n_scr: int = DEFAULT_N_SCR, sort_candidates: bool = True,
              tie: TieRule = DEFAULT_TIE_RULE) -> PerturbationCertificate:
    """Exact minimum adversarial perturbation of the 1-NN classifier.

    Sorts candidate targets by distance, screens those whose cheap dual
    bound already exceeds the incumbent, solves the survivors, and stops as
    soon as the remaining sorted candidates provably cannot win.  Queries the
    model already misclassifies get a zero certificate immediately.
    """
    stats = AttackStats()
    start = time.perf_counter()
    if knn_predict(ds, q.z, 1, tie, true_label=q.true_label) != q.true_label:
        stats.wall_time = time.perf_counter() - start
        return _zero_certificate(ds, "exact-1nn", stats)
    delta, _ = _qp_pipeline(ds, q, cfg, n_scr, sort_candidates, None, stats)
    stats.wall_time = time.perf_counter() - start
    return _validated(ds, q, delta, CertificateKind.EXACT, "exact-1nn", stats, 1, tie)


def qp_top_m(ds: Dataset, q: Query, m: int, cfg: SolverConfig = SolverConfig(), *,
             n_scr: int = DEFAULT_N_SCR, tie: TieRule = DEFAULT_TIE_RULE) -> PerturbationCertificate:
    """Upper bound from solving only the m nearest target subproblems."""
    if m < 1:
        raise ValueError("m must be >= 1")
    stats = AttackStats()
    start = time.perf_counter()
    if knn_predict(ds, q.z, 1, tie, true_label=q.true_label) != q.true_label:
        stats.wall_time = time.perf_counter() - start
        return _zero_certificate(ds, f"qp-{m}", stats)
    delta, _ = _qp_pipeline(ds, q, cfg, n_scr, True, m, stats)
    stats.wall_time = time.perf_counter() - start
    return _validated(ds, q, delta, CertificateKind.UPPER_BOUND, f"qp-{m}", stats, 1, tie)


def _subset_candidates(sorted_ids: np.ndarray, dists: np.ndarray, size: int):
    """Yield index subsets in roughly ascending order of summed distance.

    Starts from the ``size`` nearest points and expands by single swaps,
    driven by a heap on the distance sum.
    """
    if sorted_ids.size < size:
        return
    first = tuple(range(size))
    heap = [(float(dists[list(first)].sum()), first)]
    seen = {first}
    while heap:
        total, positions = heapq.heappop(heap)
        yield sorted_ids[list(positions)]
        taken = set(positions)
        for slot in range(size):
            nxt = positions[slot] + 1
            while nxt in taken:
                nxt += 1
            if nxt >= sorted_ids.size:
                continue
            child = tuple(sorted(positions[:slot] + (nxt,) + positions[slot + 1:]))
            if child not in seen:
                seen.add(child)
                heapq.heappush(heap, (float(dists[list(child)].sum()), child))


def qp_greedy_knn(ds: Dataset, q: Query, k: int, cfg: SolverConfig = SolverConfig(), *,
                  tie: TieRule = DEFAULT_TIE_RULE,
                  subset_budget: int = _SUBSET_BUDGET) -> PerturbationCertificate:
    """Greedy K-NN attack: force a same-label target cluster nearest.

    Enumerates size-ceil((K+1)/2) same-label target subsets in ascending
    order of summed distance to the query.  The first subset whose QP is
    feasible and whose solution actually flips the prediction wins; a second
    solve then drops the constraints of up to floor((K-1)/2) same-class
    points that carried nonzero multipliers, keeping the improvement when it
    still validates.
    """
    if k % 2 == 0:
        raise ValueError(f"K must be odd, got {k}")
    stats = AttackStats()
    start = time.perf_counter()
    if knn_predict(ds, q.z, k, tie, true_label=q.true_label) != q.true_label:
        stats.wall_time = time.perf_counter() - start
        return _zero_certificate(ds, "qp-greedy", stats)

    k_minus = (k + 1) // 2
    k_plus = (k - 1) // 2
    dist_sq = ds.distances_sq(q.z)
    # A useful attack never needs to travel further than twice the farthest
    # point; infeasible subproblems blow past this dual cap quickly.
    cap_norm = 2.0 * float(np.sqrt(dist_sq.max())) + 1.0
    solve_cfg = SolverConfig(
        tolerance=cfg.tolerance, max_iterations=cfg.max_iterations,
        screening_enabled=False, scaled_selection=cfg.scaled_selection,
        objective_cap=0.5 * cap_norm * cap_norm,
    )

    def heap_entry(sub, gen):
        # Tie-break equal distance sums by member indices so that K=1
        # enumerates targets exactly like the top-m pipeline does.
        return (float(np.sqrt(dist_sq[sub]).sum()), tuple(int(i) for i in sub), sub, gen)

    heap = []
    for label in range(1, ds.class_count + 1):
        if label == q.true_label:
            continue
        ids = ds.class_indices(label)
        if ids.size < k_minus:
            continue
        ids = ids[np.argsort(dist_sq[ids], kind="stable")]
        gen = _subset_candidates(ids, np.sqrt(dist_sq[ids]), k_minus)
        sub = next(gen, None)
        if sub is not None:
            heapq.heappush(heap, heap_entry(sub, gen))

    tried = 0
    while heap and tried < subset_budget:
        _, _, s_minus, gen = heapq.heappop(heap)
        nxt = next(gen, None)
        if nxt is not None:
            heapq.heappush(heap, heap_entry(nxt, gen))
        tried += 1

        sp = build_knn_subproblem(ds, q, s_minus)
        stats.subproblems_built += 1
        try:
            delta, sol = _solve_candidate(sp, solve_cfg, np.inf, stats)
        except SolverError:
            continue
        if sol.status is not SolveStatus.CONVERGED:
            continue  # infeasible or beyond any useful radius
        if not is_adversarial(ds, q, delta, k, tie):
            continue

        if k_plus > 0 and sol.indices.size:
            mass = {}
            for row, lam in zip(sol.indices, sol.values):
                i = int(sp.row_source_ids[row])
                mass[i] = mass.get(i, 0.0) + float(lam)
            s_plus = sorted(mass, key=lambda i: -mass[i])[:k_plus]
            if s_plus:
                sp2 = build_knn_subproblem(ds, q, s_minus, s_plus)
                stats.subproblems_built += 1
                try:
                    delta2, sol2 = _solve_candidate(sp2, solve_cfg, np.inf, stats)
                except SolverError:
                    sol2 = None
                if (
                    sol2 is not None
                    and sol2.status is SolveStatus.CONVERGED
                    and float(np.linalg.norm(delta2)) < float(np.linalg.norm(delta))
                    and is_adversarial(ds, q, delta2, k, tie)
                ):
                    delta = delta2
        stats.wall_time = time.perf_counter() - start
        return _validated(ds, q, delta, CertificateKind.UPPER_BOUND, "qp-greedy",
                          stats, k, tie)
    raise SolverError(
        f"qp-greedy: no feasible target subset among {tried} candidates (budget {subset_budget})"
    )


def _bisect_flip(predicate, lo: float, hi: float, tol: float) -> float:
    """Smallest magnitude in (lo, hi] at which ``predicate`` flips to True.

    Assumes predicate(lo) is False and predicate(hi) is True; returns the
    upper end of the final bracket so the result always satisfies the
    predicate.
    """
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            hi = mid
        else:
            lo = mid
    return hi


def naive_attack(ds: Dataset, q: Query, k: int, tries: int = 1, *,
                 tie: TieRule = DEFAULT_TIE_RULE) -> PerturbationCertificate:
    """Line-search baseline: walk straight toward nearby other-class targets.

    For K=1 the targets are the ``tries`` nearest other-class instances; for
    K>1 each target is the centroid of a size-(K+1)/2 same-label cluster
    grown around such an instance.  The step is found by bisection to 1e-9
    in the line parameter.
    """
    if tries < 1:
        raise ValueError("tries must be >= 1")
    if k % 2 == 0:
        raise ValueError(f"K must be odd, got {k}")
    stats = AttackStats()
    start = time.perf_counter()
    if knn_predict(ds, q.z, k, tie, true_label=q.true_label) != q.true_label:
        stats.wall_time = time.perf_counter() - start
        return _zero_certificate(ds, f"naive-{tries}", stats)

    dist_sq = ds.distances_sq(q.z)
    others = np.flatnonzero(ds.labels != q.true_label)
    others = others[np.argsort(dist_sq[others], kind="stable")]
    k_minus = (k + 1) // 2

    best_delta = None
    best_eps = np.inf
    for seed in others[:tries]:
        if k == 1:
            target = ds.points[seed]
        else:
            mates = ds.class_indices(int(ds.labels[seed]))
            if mates.size < k_minus:
                continue
            gaps = np.einsum("ij,ij->i", ds.points[mates] - ds.points[seed],
                             ds.points[mates] - ds.points[seed])
            cluster = mates[np.argsort(gaps, kind="stable")[:k_minus]]
            target = ds.points[cluster].mean(axis=0)
        direction = target - q.z
        if not np.any(direction):
            continue

        def predicate(t: float) -> bool:
            return knn_predict(ds, q.z + t * direction, k, tie,
                               true_label=q.true_label) != q.true_label

        if not predicate(1.0):
            continue
        t_star = _bisect_flip(predicate, 0.0, 1.0, _LINE_SEARCH_TOL)
        eps = t_star * float(np.linalg.norm(direction))
        if eps < best_eps:
            best_eps = eps
            best_delta = t_star * direction
    if best_delta is None:
        raise SolverError(f"naive-{tries}: no tested direction flips the {k}-NN prediction")
    stats.wall_time = time.perf_counter() - start
    return _validated(ds, q, best_delta, CertificateKind.UPPER_BOUND,
                      f"naive-{tries}", stats, k, tie)


def mean_attack(ds: Dataset, q: Query, k: int = 1, *,
                tie: TieRule = DEFAULT_TIE_RULE) -> PerturbationCertificate:
    """Baseline walking toward the nearest other-class mean.

    The ray through the mean is extended beyond it (doubling, then
    bisection) until the prediction flips; gives the loosest but cheapest
    upper bound.
    """
    if k % 2 == 0:
        raise ValueError(f"K must be odd, got {k}")
    stats = AttackStats()
    start = time.perf_counter()
    if knn_predict(ds, q.z, k, tie, true_label=q.true_label) != q.true_label:
        stats.wall_time = time.perf_counter() - start
        return _zero_certificate(ds, "mean", stats)

    present = [c for c in np.unique(ds.labels) if c != q.true_label]
    means = {c: ds.points[ds.class_indices(int(c))].mean(axis=0) for c in present}
    gaps = [float(np.linalg.norm(means[c] - q.z)) for c in present]
    target_label = present[int(np.argmin(gaps))]
    direction = means[target_label] - q.z
    if not np.any(direction):
        raise SolverError("mean: query coincides with the target class mean")

    def predicate(t: float) -> bool:
        return knn_predict(ds, q.z + t * direction, k, tie,
                           true_label=q.true_label) != q.true_label

    t_hi = 1.0
    while not predicate(t_hi):
        t_hi *= 2.0
        if t_hi > _RAY_EXTENSION_CAP:
            raise SolverError("mean: no flip within the ray-length cap")
    t_star = _bisect_flip(predicate, 0.0 if t_hi == 1.0 else t_hi / 2.0, t_hi,
                          _LINE_SEARCH_TOL)
    delta = t_star * direction
    stats.wall_time = time.perf_counter() - start
    return _validated(ds, q, delta, CertificateKind.UPPER_BOUND, "mean", stats, k, tie)
