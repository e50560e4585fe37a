import numpy as np
import pytest

from knnrobust import (
    CertificateKind,
    Dataset,
    Query,
    SolverConfig,
    active_set_oracle,
    build_knn_subproblem,
    exact_1nn,
    is_adversarial,
    mean_attack,
    naive_attack,
    qp_greedy_knn,
    qp_top_m,
    screen_subproblem,
    verify_1nn,
)

from helpers import brute_force_exact_1nn, min_flip_1d, random_grid_dataset


class TestExact1nn:
    def test_fix_a(self, fix_a):
        ds, q = fix_a
        cert = exact_1nn(ds, q)
        assert cert.kind is CertificateKind.EXACT
        assert cert.epsilon == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(cert.delta, [1.0], atol=1e-8)

    def test_fix_b_matches_oracle(self, fix_b):
        ds, q = fix_b
        cert = exact_1nn(ds, q)
        assert cert.epsilon == pytest.approx(np.sqrt(0.5), abs=1e-8)
        np.testing.assert_allclose(cert.delta, [0.5, -0.5], atol=1e-8)
        assert cert.epsilon == pytest.approx(brute_force_exact_1nn(ds, q), abs=1e-9)

    def test_fix_c_as_1nn(self, fix_c):
        ds, q = fix_c
        cert = exact_1nn(ds, q)
        assert cert.epsilon == pytest.approx(0.75, abs=1e-9)
        assert cert.epsilon == pytest.approx(min_flip_1d(ds, q, 1, hi=3.0), abs=1e-6)

    def test_misclassified_query_flagged_zero(self, fix_a):
        ds, _ = fix_a
        cert = exact_1nn(ds, Query(np.array([2.9]), 1))
        assert cert.misclassified
        assert cert.epsilon == 0.0
        np.testing.assert_array_equal(cert.delta, [0.0])

    def test_stats_populated(self, fix_c):
        ds, q = fix_c
        cert = exact_1nn(ds, q)
        assert cert.stats.subproblems_solved >= 1
        assert cert.stats.subproblems_solved + cert.stats.subproblems_screened >= 3
        assert cert.stats.wall_time > 0

    def test_oracle_equivalence_random(self):
        rng = np.random.default_rng(41)
        for _ in range(100):
            ds, q, _ = random_grid_dataset(rng)
            cert = exact_1nn(ds, q)
            assert cert.epsilon == pytest.approx(brute_force_exact_1nn(ds, q), abs=1e-8)

    def test_screening_neutrality(self):
        rng = np.random.default_rng(43)
        on = SolverConfig(screening_enabled=True)
        off = SolverConfig(screening_enabled=False)
        for _ in range(200):
            ds, q, _ = random_grid_dataset(rng)
            a = exact_1nn(ds, q, on)
            b = exact_1nn(ds, q, off)
            assert a.epsilon == pytest.approx(b.epsilon, abs=1e-8)

    def test_sorting_off_solves_more(self):
        rng = np.random.default_rng(47)
        solved_sorted = solved_unsorted = 0
        for _ in range(50):
            ds, q, _ = random_grid_dataset(rng)
            solved_sorted += exact_1nn(ds, q, sort_candidates=True).stats.subproblems_solved
            solved_unsorted += exact_1nn(ds, q, sort_candidates=False).stats.subproblems_solved
        assert solved_unsorted >= solved_sorted


class TestScreenSubproblem:
    def test_removable(self, fix_b):
        ds, q = fix_b
        assert screen_subproblem(ds, q, 1, incumbent_sq=0.25) is True

    def test_boundary_not_removable(self, fix_b):
        ds, q = fix_b
        assert screen_subproblem(ds, q, 1, incumbent_sq=0.5) is False

    def test_nonnegative_offsets_never_removable(self):
        ds = Dataset(np.array([[5.0], [0.5]]), np.array([1, 2]))
        q = Query(np.array([0.0]), 1)
        assert screen_subproblem(ds, q, 1, incumbent_sq=1e-12) is False


class TestQpTopM:
    def test_fix_a_single_candidate(self, fix_a):
        ds, q = fix_a
        cert = qp_top_m(ds, q, 1)
        assert cert.kind is CertificateKind.UPPER_BOUND
        assert cert.epsilon == pytest.approx(1.0, abs=1e-9)

    def test_fix_c_top1(self, fix_c):
        ds, q = fix_c
        assert qp_top_m(ds, q, 1).epsilon == pytest.approx(0.75, abs=1e-9)

    def test_exhaustive_equals_exact(self):
        rng = np.random.default_rng(53)
        for _ in range(30):
            ds, q, _ = random_grid_dataset(rng)
            n_other = int(np.count_nonzero(ds.labels != q.true_label))
            assert qp_top_m(ds, q, n_other).epsilon == pytest.approx(
                exact_1nn(ds, q).epsilon, abs=1e-9
            )

    def test_monotone_in_m(self):
        rng = np.random.default_rng(59)
        for _ in range(30):
            ds, q, _ = random_grid_dataset(rng)
            eps = [qp_top_m(ds, q, m).epsilon for m in (1, 2, 4, 8)]
            assert all(a >= b - 1e-9 for a, b in zip(eps, eps[1:]))


class TestQpGreedy:
    def test_fix_c_improves_phase1_to_exact(self, fix_c):
        ds, q = fix_c
        # Oracle value of the phase-1 system (targets q1, q2, nothing excluded).
        delta1, _ = active_set_oracle(build_knn_subproblem(ds, q, [2, 3]))
        assert np.linalg.norm(delta1) == pytest.approx(1.25, abs=1e-9)
        cert = qp_greedy_knn(ds, q, 3)
        assert cert.kind is CertificateKind.UPPER_BOUND
        assert cert.epsilon == pytest.approx(1.0, abs=1e-8)
        exact_star = min_flip_1d(ds, q, 3, hi=4.0)
        assert exact_star == pytest.approx(1.0, abs=1e-6)
        assert cert.epsilon >= exact_star - 1e-6

    def test_k1_reduces_to_top1(self):
        rng = np.random.default_rng(61)
        for _ in range(30):
            ds, q, _ = random_grid_dataset(rng)
            assert qp_greedy_knn(ds, q, 1).epsilon == pytest.approx(
                qp_top_m(ds, q, 1).epsilon, abs=1e-8
            )

    def test_phase2_strictly_improves(self):
        # Both targets must beat p1 in phase 1; dropping p1's constraints in
        # phase 2 lets the attack stop at the cheaper p2 bisections.
        ds = Dataset(
            np.array([[-0.5], [-1.0], [2.0], [2.2]]), np.array([1, 1, 2, 2])
        )
        q = Query(np.array([0.0]), 1)
        delta1, _ = active_set_oracle(build_knn_subproblem(ds, q, [2, 3]))
        phase1 = float(np.linalg.norm(delta1))
        assert phase1 == pytest.approx(0.85, abs=1e-9)
        cert = qp_greedy_knn(ds, q, 3)
        assert cert.epsilon == pytest.approx(0.6, abs=1e-8)
        assert cert.epsilon < phase1
        assert cert.epsilon >= min_flip_1d(ds, q, 3, hi=3.0) - 1e-6

    def test_nondecreasing_in_k_on_fix_c_family(self):
        ds = Dataset(
            np.array([[-0.5], [-1.0], [-1.5], [-2.0], [2.0], [3.0], [4.0]]),
            np.array([1, 1, 1, 1, 2, 2, 2]),
        )
        q = Query(np.array([0.0]), 1)
        eps = [qp_greedy_knn(ds, q, k).epsilon for k in (1, 3, 5)]
        assert all(a <= b + 1e-9 for a, b in zip(eps, eps[1:]))

    def test_upper_bounds_true_minimum_random(self):
        from knnrobust import SolverError

        rng = np.random.default_rng(67)
        checked = 0
        attempts = 0
        while checked < 25 and attempts < 400:
            attempts += 1
            ds, q, ks = random_grid_dataset(rng)
            if 3 not in ks or ds.d != 1:
                continue
            try:
                cert = qp_greedy_knn(ds, q, 3)
            except SolverError:
                # In 1-D every candidate cluster can straddle a same-class
                # point, leaving no feasible subset; that is a reported
                # condition, not a wrong bound.
                continue
            star = min_flip_1d(ds, q, 3, hi=25.0)
            assert cert.epsilon >= star - 1e-6
            checked += 1
        assert checked >= 10


class TestBaselines:
    def test_naive_fix_a(self, fix_a):
        ds, q = fix_a
        cert = naive_attack(ds, q, 1, 1)
        assert cert.kind is CertificateKind.UPPER_BOUND
        assert cert.epsilon == pytest.approx(1.0, abs=1e-7)

    def test_naive_fix_b_shows_suboptimality(self, fix_b):
        ds, q = fix_b
        assert naive_attack(ds, q, 1, 1).epsilon == pytest.approx(1.0, abs=1e-7)
        assert exact_1nn(ds, q).epsilon == pytest.approx(np.sqrt(0.5), abs=1e-8)

    def test_naive_fix_c_k3(self, fix_c):
        ds, q = fix_c
        cert = naive_attack(ds, q, 3, 1)
        assert cert.epsilon >= 1.0 - 1e-9
        assert cert.epsilon == pytest.approx(1.0, abs=1e-7)

    def test_mean_fix_a(self, fix_a):
        ds, q = fix_a
        assert mean_attack(ds, q, 1).epsilon == pytest.approx(1.0, abs=1e-7)

    def test_mean_fix_c(self, fix_c):
        ds, q = fix_c
        assert mean_attack(ds, q, 1).epsilon == pytest.approx(0.75, abs=1e-7)

    def test_mean_fix_b(self, fix_b):
        ds, q = fix_b
        assert mean_attack(ds, q, 1).epsilon == pytest.approx(1.0, abs=1e-7)

    def test_naive_more_tries_not_worse(self):
        rng = np.random.default_rng(71)
        for _ in range(20):
            ds, q, _ = random_grid_dataset(rng)
            a = naive_attack(ds, q, 1, 1).epsilon
            b = naive_attack(ds, q, 1, 10).epsilon
            assert b <= a + 1e-9


class TestIsAdversarial:
    def test_fix_a_at_radius(self, fix_a):
        ds, q = fix_a
        assert is_adversarial(ds, q, np.array([1.0]), 1)

    def test_fix_a_below_radius(self, fix_a):
        ds, q = fix_a
        assert not is_adversarial(ds, q, np.array([0.5]), 1)

    def test_fix_c_k3(self, fix_c):
        ds, q = fix_c
        assert is_adversarial(ds, q, np.array([1.0]), 3)

    def test_every_upper_certificate_validates(self):
        from knnrobust import SolverError

        rng = np.random.default_rng(73)
        for _ in range(25):
            ds, q, ks = random_grid_dataset(rng)
            certs = [exact_1nn(ds, q), qp_top_m(ds, q, 2), naive_attack(ds, q, 1, 2)]
            for maker, k in ((lambda: mean_attack(ds, q, 1), 1),
                             ((lambda: qp_greedy_knn(ds, q, 3)) if 3 in ks else None, 3)):
                if maker is None:
                    continue
                try:
                    certs.append(maker())
                except SolverError:
                    pass  # legitimately reported failure to find a bound
            for cert in certs:
                assert is_adversarial(ds, q, cert.delta, 1 if cert.method != "qp-greedy" else 3)
                assert cert.epsilon == pytest.approx(
                    float(np.linalg.norm(cert.delta)), rel=1e-9
                )


class TestBoundOrdering:
    def test_chain_on_random_instances(self):
        from knnrobust import SolverError

        rng = np.random.default_rng(79)
        for _ in range(60):
            ds, q, _ = random_grid_dataset(rng)
            lower = verify_1nn(ds, q).epsilon_lower
            exact = exact_1nn(ds, q).epsilon
            top10 = qp_top_m(ds, q, 10).epsilon
            top1 = qp_top_m(ds, q, 1).epsilon
            naive = naive_attack(ds, q, 1, 1).epsilon
            tol = 1e-8
            assert lower <= exact + tol
            assert exact <= top10 + tol
            assert top10 <= top1 + tol
            assert top1 <= naive + tol
            try:
                assert exact <= mean_attack(ds, q, 1).epsilon + tol
            except SolverError:
                pass  # the ray toward the nearest mean may never flip
