import numpy as np
import pytest

from infodesign.geometry import (Box, Zonotope, contains_point, intersection_empty,
                                 linear_map, minkowski_sum, rotation2d)

from helpers import zonotope_support_margin


def random_zonotope(rng, dim=2, max_gens=5):
    ell = int(rng.integers(1, max_gens + 1))
    return Zonotope(rng.normal(size=dim), rng.normal(size=(dim, ell)))


class TestBox:
    def test_bounds_must_order(self):
        with pytest.raises(ValueError):
            Box([1.0, 0.0], [0.0, 1.0])

    def test_volume_skips_degenerate_axes(self):
        assert Box([0, 2, -1], [2, 2, 1]).volume() == pytest.approx(4.0)
        assert Box([3.0], [3.0]).volume() == 1.0

    def test_sample_respects_bounds(self, rng):
        box = Box([-1.0, 2.0], [1.0, 2.0])
        pts = box.sample(rng, 100)
        assert np.all(pts[:, 0] >= -1) and np.all(pts[:, 0] <= 1)
        assert np.all(pts[:, 1] == 2.0)


class TestLinearMap:
    def test_identity_keeps_zonotope(self, rng):
        Z = random_zonotope(rng)
        mapped = linear_map(np.eye(2), Z)
        np.testing.assert_array_equal(mapped.center, Z.center)
        np.testing.assert_array_equal(mapped.generators, Z.generators)

    def test_quarter_rotation_of_unit_square(self):
        Z = Zonotope([0.0, 0.0], np.eye(2))
        R = rotation2d(np.pi / 2.0)
        mapped = linear_map(R, Z)
        # The square maps onto itself: generators rotate into +-unit vectors.
        hull = mapped.interval_hull()
        np.testing.assert_allclose(hull.lower, [-1, -1], atol=1e-15)
        np.testing.assert_allclose(hull.upper, [1, 1], atol=1e-15)
        for corner in ([1, 1], [1, -1], [-1, 1], [-1, -1]):
            inside, s = contains_point(mapped, corner)
            assert inside and s == pytest.approx(1.0, abs=1e-9)

    def test_mapped_samples_stay_inside(self, rng):
        # Rejection-sampling oracle: 1e4 points of Z mapped through A must
        # land inside linear_map(A, Z).
        Z = random_zonotope(rng, dim=2, max_gens=4)
        A = rng.normal(size=(3, 2))
        mapped = linear_map(A, Z)
        beta = rng.uniform(-1, 1, size=(10_000, Z.n_generators))
        pts = (Z.center + beta @ Z.generators.T) @ A.T
        # Containment certificate: the same coefficients must stay in [-1, 1],
        # and the exact LP agrees on a subsample.
        for p in pts[:: 200]:
            inside, s = contains_point(mapped, p)
            assert inside, s
        for p in pts:
            delta = p - mapped.center
            beta_hat, *_ = np.linalg.lstsq(mapped.generators, delta, rcond=None)
            assert np.max(np.abs(mapped.generators @ beta_hat - delta)) < 1e-9

    def test_point_set_equality_both_directions(self, rng):
        # Samples of A Z lie in <Ac, AG> and vice versa (same beta certifies).
        Z = random_zonotope(rng, dim=2, max_gens=3)
        A = rng.normal(size=(2, 2)) + np.eye(2)
        mapped = linear_map(A, Z)
        Ainv = np.linalg.inv(A)
        for p in mapped.sample(rng, 200):
            inside, _ = contains_point(Z, Ainv @ p)
            assert inside

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            linear_map(np.eye(3), Zonotope([0, 0], np.eye(2)))


class TestMinkowskiSum:
    def test_point_translates(self, rng):
        Z = random_zonotope(rng)
        p = Zonotope([1.0, -2.0], np.zeros((2, 0)))
        total = minkowski_sum(Z, p)
        np.testing.assert_allclose(total.center, Z.center + p.center)
        np.testing.assert_array_equal(total.generators, Z.generators)

    def test_empty_generator_identity(self, rng):
        Z = random_zonotope(rng)
        total = minkowski_sum(Z, Zonotope([0.0, 0.0], np.zeros((2, 0))))
        np.testing.assert_array_equal(total.center, Z.center)
        np.testing.assert_array_equal(total.generators, Z.generators)

    def test_interval_sum(self):
        I = Zonotope([0.0], [[1.0]])
        total = minkowski_sum(I, I)
        hull = total.interval_hull()
        assert hull.lower[0] == -2.0 and hull.upper[0] == 2.0

    def test_commutes_and_associates_as_point_sets(self, rng):
        Z1, Z2, Z3 = (random_zonotope(rng) for _ in range(3))
        ab = minkowski_sum(Z1, Z2)
        ba = minkowski_sum(Z2, Z1)
        abc = minkowski_sum(ab, Z3)
        bca = minkowski_sum(minkowski_sum(Z2, Z3), Z1)
        for p in ab.sample(rng, 100):
            assert contains_point(ba, p)[0]
        for p in abc.sample(rng, 100):
            assert contains_point(bca, p)[0]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            minkowski_sum(Zonotope([0.0], [[1.0]]), Zonotope([0, 0], np.eye(2)))


class TestContainsPoint:
    def test_center_of_unit_square(self):
        inside, s = contains_point(Zonotope([0, 0], np.eye(2)), [0.0, 0.0])
        assert inside and s == 0.0

    def test_outside_point_scale(self):
        inside, s = contains_point(Zonotope([0, 0], np.eye(2)), [2.0, 0.0])
        assert not inside and s == pytest.approx(2.0, abs=1e-9)

    def test_off_subspace_point_is_infeasible(self):
        Z = Zonotope([0.0, 0.0], [[1.0], [0.0]])  # a segment on the x axis
        inside, s = contains_point(Z, [0.5, 0.3])
        assert not inside and np.isinf(s)

    def test_agrees_with_exact_solve_two_generators(self, rng):
        # With an invertible 2x2 generator matrix the coefficients are unique,
        # so the scale is just ||G^-1 (p - c)||_inf.
        for _ in range(100):
            G = rng.normal(size=(2, 2))
            if abs(np.linalg.det(G)) < 0.1:
                continue
            Z = Zonotope(rng.normal(size=2), G)
            p = rng.normal(size=2) * 2.0
            _, s = contains_point(Z, p)
            expected = np.max(np.abs(np.linalg.solve(G, p - Z.center)))
            assert s == pytest.approx(expected, abs=1e-8)

    def test_agrees_with_support_oracle(self, rng):
        # Directional-support oracle at ~1e-4 angular resolution.
        for _ in range(100):
            Z = random_zonotope(rng, dim=2, max_gens=6)
            p = rng.normal(size=2) * 2.0
            _, s = contains_point(Z, p)
            s_oracle = zonotope_support_margin(Z, p)
            if np.isinf(s_oracle) or np.isinf(s):
                assert np.isinf(s) == np.isinf(s_oracle)
            else:
                assert s == pytest.approx(s_oracle, rel=1e-3, abs=1e-6)

    def test_monotone_under_generator_scaling(self, rng):
        for _ in range(50):
            Z = random_zonotope(rng, dim=2, max_gens=4)
            p = rng.normal(size=2)
            inside, s = contains_point(Z, p)
            gamma = float(rng.uniform(1.0, 3.0))
            inside2, s2 = contains_point(Zonotope(Z.center, gamma * Z.generators), p)
            assert s2 <= s + 1e-9
            if inside:
                assert inside2


class TestIntersectionEmpty:
    def test_distant_unit_boxes(self):
        Z1 = Zonotope([0.0], [[1.0]])
        Z2 = Zonotope([10.0], [[1.0]])
        empty, s = intersection_empty(Z1, Z2)
        assert empty and s == pytest.approx(5.0, abs=1e-9)

    def test_identical_zonotopes_overlap(self, rng):
        Z = random_zonotope(rng)
        empty, s = intersection_empty(Z, Z)
        assert not empty and s == pytest.approx(0.0, abs=1e-9)

    def test_symmetric(self, rng):
        for _ in range(50):
            Z1, Z2 = random_zonotope(rng), random_zonotope(rng)
            _, s12 = intersection_empty(Z1, Z2)
            _, s21 = intersection_empty(Z2, Z1)
            assert s12 == pytest.approx(s21, abs=1e-9)

    def test_sampling_oracle_one_sided(self, rng):
        # The oracle can only certify non-emptiness: whenever a sampled point
        # of Z1 lies in Z2, the predicate must not claim emptiness.
        found_overlaps = 0
        for _ in range(100):
            Z1 = random_zonotope(rng, max_gens=4)
            Z2 = Zonotope(Z1.center + rng.normal(size=2) * 2.0,
                          rng.normal(size=(2, int(rng.integers(1, 4)))))
            empty, _ = intersection_empty(Z1, Z2)
            pts = Z1.sample(rng, 1000)
            margins = np.array([zonotope_support_margin(Z2, p, n_angles=720)
                                for p in pts[::10]])
            if np.any(margins <= 1.0 - 1e-3):
                found_overlaps += 1
                assert not empty
        assert found_overlaps > 10  # the oracle actually exercised the check
