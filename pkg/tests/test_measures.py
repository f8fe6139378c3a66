import numpy as np
import pytest

from iftflow.measures import (
    ParticleMeasure,
    TargetSpec,
    clamp_vanished,
    random_mixture_components,
    sample_target,
    simplex_project,
    uniform_measure,
)
from iftflow.solvers import SimplexQp, brute_force_simplex


class TestParticleMeasure:
    def test_valid_construction(self):
        mu = ParticleMeasure(np.zeros((3, 2)), np.array([0.5, 0.25, 0.25]))
        assert mu.size == 3 and mu.dim == 2
        assert mu.probability

    def test_arrays_are_write_locked(self):
        mu = uniform_measure(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            mu.weights[0] = 0.9
        with pytest.raises(ValueError):
            mu.locations[0, 0] = 1.0

    def test_rejects_invalid_inputs(self):
        with pytest.raises(ValueError):
            ParticleMeasure(np.zeros((2, 2)), np.array([0.5, -0.5]))
        with pytest.raises(ValueError):
            ParticleMeasure(np.zeros((2, 2)), np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            ParticleMeasure(np.array([[np.inf, 0.0]]), np.array([1.0]))
        with pytest.raises(ValueError):
            ParticleMeasure(np.zeros((2, 2)), np.array([1.0]))
        with pytest.raises(ValueError):
            ParticleMeasure(np.zeros((0, 2)), np.array([]))

    def test_non_probability_measure_allows_other_masses(self):
        mu = ParticleMeasure(np.zeros((2, 1)), np.array([2.0, 1.0]), probability=False)
        assert mu.weights.sum() == 3.0

    def test_vanished_mask(self):
        mu = ParticleMeasure(np.zeros((3, 1)), np.array([0.0, 1.0, 0.0]))
        np.testing.assert_array_equal(mu.vanished, [True, False, True])

    def test_round_trip_through_dict(self):
        mu = uniform_measure(np.arange(6.0).reshape(3, 2))
        back = ParticleMeasure.from_dict(mu.to_dict())
        np.testing.assert_array_equal(back.locations, mu.locations)
        np.testing.assert_array_equal(back.weights, mu.weights)


def test_uniform_measure_examples():
    four = uniform_measure(np.zeros((4, 2)))
    np.testing.assert_array_equal(four.weights, np.full(4, 0.25))
    one = uniform_measure(np.zeros((1, 5)))
    np.testing.assert_array_equal(one.weights, [1.0])
    rng = np.random.default_rng(11)
    for n in rng.integers(1, 400, size=10):
        mu = uniform_measure(rng.normal(size=(n, 2)))
        assert abs(mu.weights.sum() - 1.0) <= 1e-12


class TestSimplexProject:
    def test_fixed_point_inside_simplex(self):
        v = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(simplex_project(v), v, atol=1e-15)

    def test_hand_cases(self):
        np.testing.assert_allclose(simplex_project(np.array([2.0, 0.0])), [1.0, 0.0])
        np.testing.assert_allclose(simplex_project(np.array([0.6, 0.6])), [0.5, 0.5])

    def test_output_on_simplex_and_idempotent(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            v = rng.normal(scale=rng.uniform(0.1, 10.0), size=rng.integers(1, 30))
            p = simplex_project(v)
            assert np.all(p >= 0.0)
            assert abs(p.sum() - 1.0) <= 1e-12
            np.testing.assert_allclose(simplex_project(p), p, atol=1e-14)

    def test_optimality_against_grid_oracle(self):
        # Projection is the QP argmin ||b - v||^2 = b.b - 2 v.b + const over
        # the simplex; the grid minimum can never beat it by more than the
        # exact optimum, and rounding the optimum to the grid costs O(res^2).
        rng = np.random.default_rng(6)
        for _ in range(10):
            v = rng.normal(size=3)
            p = simplex_project(v)
            qp = SimplexQp(2.0 * np.eye(3), -2.0 * v)
            g = brute_force_simplex(qp, resolution=1e-3)
            f_p = np.sum((p - v) ** 2)
            f_g = np.sum((g - v) ** 2)
            assert -1e-12 <= f_g - f_p <= 1e-6

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            simplex_project(np.array([]))
        with pytest.raises(ValueError):
            simplex_project(np.array([1.0, np.nan]))
        with pytest.raises(ValueError):
            simplex_project(np.eye(2))


class TestTargetSpec:
    def test_gaussian_requires_spd_covariance(self):
        with pytest.raises(ValueError):
            TargetSpec("gaussian", 10, mean=(0.0, 0.0), covariance=((1.0, 2.0), (2.0, 1.0)))
        with pytest.raises(ValueError):
            TargetSpec("gaussian", 10, mean=(0.0,), covariance=((1.0, 0.0),))
        with pytest.raises(ValueError):
            TargetSpec("gaussian", 10)

    def test_mixture_weights_must_lie_on_simplex(self):
        good = (
            (0.5, (0.0, 0.0), ((1.0, 0.0), (0.0, 1.0))),
            (0.5, (1.0, 1.0), ((1.0, 0.0), (0.0, 1.0))),
        )
        TargetSpec("mixture", 10, components=good)
        bad = ((0.7, (0.0,), ((1.0,),)), (0.7, (1.0,), ((1.0,),)))
        with pytest.raises(ValueError):
            TargetSpec("mixture", 10, components=bad)

    def test_random_mixture_field_validation(self):
        with pytest.raises(ValueError):
            TargetSpec("random_mixture", 10, dimension=100)
        with pytest.raises(ValueError):
            TargetSpec(
                "random_mixture", 10,
                dimension=0, component_count=3, mean_norm=20.0, min_eigenvalue=0.5,
            )

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            TargetSpec("cauchy", 10, mean=(0.0,), covariance=((1.0,),))

    def test_round_trip_through_dict(self):
        spec = TargetSpec(
            "mixture", 50,
            components=(
                (0.25, (0.0, 0.0), ((1.0, 0.5), (0.5, 2.0))),
                (0.75, (3.0, -1.0), ((1.0, 0.0), (0.0, 1.0))),
            ),
        )
        assert TargetSpec.from_dict(spec.to_dict()) == spec


class TestSampleTarget:
    def test_gaussian_sample_statistics(self):
        spec = TargetSpec(
            "gaussian", 100, mean=(5.0, 5.0), covariance=((1.0, 0.0), (0.0, 1.0))
        )
        mu = sample_target(spec, seed=0)
        assert mu.size == 100
        np.testing.assert_array_equal(mu.weights, np.full(100, 0.01))
        empirical = mu.locations.mean(axis=0)
        assert np.linalg.norm(empirical - np.array([5.0, 5.0])) <= 3.0 / np.sqrt(100)

    def test_equal_seeds_are_bit_identical(self):
        spec = TargetSpec("gaussian", 25, mean=(0.0,), covariance=((2.0,),))
        a = sample_target(spec, seed=123)
        b = sample_target(spec, seed=123)
        np.testing.assert_array_equal(a.locations, b.locations)
        assert not np.array_equal(a.locations, sample_target(spec, seed=124).locations)

    def test_single_component_mixture_matches_gaussian_distribution(self):
        cov = ((1.0, 0.3), (0.3, 2.0))
        mixture = TargetSpec("mixture", 5000, components=((1.0, (1.0, -1.0), cov),))
        mu = sample_target(mixture, seed=9)
        np.testing.assert_allclose(mu.locations.mean(axis=0), [1.0, -1.0], atol=0.1)
        np.testing.assert_allclose(np.cov(mu.locations.T), np.asarray(cov), atol=0.15)

    def test_random_mixture_component_constraints(self):
        spec = TargetSpec(
            "random_mixture", 10,
            dimension=100, component_count=3, mean_norm=20.0, min_eigenvalue=0.5,
        )
        means, covariances = random_mixture_components(spec, seed=4)
        np.testing.assert_allclose(np.linalg.norm(means, axis=1), 20.0, atol=1e-9)
        for cov in covariances:
            assert np.linalg.eigvalsh(cov).min() >= 0.5 - 1e-9
        mu = sample_target(spec, seed=4)
        assert mu.locations.shape == (10, 100)

    def test_components_accessor_rejects_other_variants(self):
        spec = TargetSpec("gaussian", 5, mean=(0.0,), covariance=((1.0,),))
        with pytest.raises(ValueError):
            random_mixture_components(spec, seed=0)


def test_clamp_vanished():
    w = np.array([0.5, 1e-16, 0.3, 1e-15, 0.2])
    out = clamp_vanished(w)
    np.testing.assert_array_equal(out, [0.5, 0.0, 0.3, 1e-15, 0.2])
    # input untouched
    assert w[1] == 1e-16
