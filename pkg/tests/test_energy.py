import numpy as np
import pytest

from iftflow.energy import MmdEnergy, mmd_squared, witness, witness_gradient
from iftflow.kernels import KernelSpec, gram, kernel_eval
from iftflow.measures import ParticleMeasure, uniform_measure


def random_energy(rng, n=3, m=2, dim=2, bandwidth=1.0):
    target = uniform_measure(rng.normal(size=(m, dim)))
    mu = ParticleMeasure(rng.normal(size=(n, dim)), simplex_weights(rng, n))
    return MmdEnergy(KernelSpec(bandwidth), target), mu


def simplex_weights(rng, n):
    w = rng.uniform(0.1, 1.0, size=n)
    return w / w.sum()


def test_mmd_squared_zero_on_identical_measures():
    rng = np.random.default_rng(0)
    locations = rng.normal(size=(6, 2))
    weights = simplex_weights(rng, 6)
    energy = MmdEnergy(KernelSpec(1.0), ParticleMeasure(locations, weights))
    assert mmd_squared(energy, ParticleMeasure(locations, weights)) <= 1e-12


def test_mmd_squared_zero_on_permuted_atoms():
    rng = np.random.default_rng(1)
    locations = rng.normal(size=(5, 3))
    weights = simplex_weights(rng, 5)
    perm = rng.permutation(5)
    energy = MmdEnergy(KernelSpec(0.7), ParticleMeasure(locations, weights))
    permuted = ParticleMeasure(locations[perm], weights[perm])
    assert mmd_squared(energy, permuted) <= 1e-12


def test_mmd_squared_two_single_atoms():
    x = np.array([[0.0, 0.0]])
    y = np.array([[1.0, 2.0]])
    spec = KernelSpec(1.5)
    energy = MmdEnergy(spec, uniform_measure(y))
    expected = 2.0 * (1.0 - kernel_eval(spec, x[0], y[0]))
    np.testing.assert_allclose(mmd_squared(energy, uniform_measure(x)), expected, rtol=1e-12)


def test_mmd_squared_matches_double_loop():
    rng = np.random.default_rng(2)
    spec = KernelSpec(0.9)
    mu = ParticleMeasure(rng.normal(size=(3, 2)), simplex_weights(rng, 3))
    target = uniform_measure(rng.normal(size=(2, 2)))
    energy = MmdEnergy(spec, target)

    signed_points = np.vstack([mu.locations, target.locations])
    signed_weights = np.concatenate([mu.weights, -target.weights])
    brute = 0.0
    for i in range(5):
        for j in range(5):
            brute += (
                signed_weights[i]
                * signed_weights[j]
                * kernel_eval(spec, signed_points[i], signed_points[j])
            )
    np.testing.assert_allclose(mmd_squared(energy, mu), brute, atol=1e-12)


def test_mmd_squared_joint_gram_consistency():
    rng = np.random.default_rng(3)
    energy, mu = random_energy(rng, n=7, m=4, dim=3)
    joint = np.vstack([mu.locations, energy.target.locations])
    signed = np.concatenate([mu.weights, -energy.target.weights])
    quad = signed @ gram(energy.kernel, joint, joint) @ signed
    np.testing.assert_allclose(mmd_squared(energy, mu), quad, atol=1e-12)


def test_mmd_squared_symmetric_in_roles():
    rng = np.random.default_rng(4)
    a = uniform_measure(rng.normal(size=(4, 2)))
    b = uniform_measure(rng.normal(size=(6, 2)))
    spec = KernelSpec(1.1)
    forward = mmd_squared(MmdEnergy(spec, b), a)
    backward = mmd_squared(MmdEnergy(spec, a), b)
    np.testing.assert_allclose(forward, backward, atol=1e-12)


def test_mmd_squared_dimension_mismatch():
    energy = MmdEnergy(KernelSpec(1.0), uniform_measure(np.zeros((2, 2))))
    with pytest.raises(ValueError):
        mmd_squared(energy, uniform_measure(np.zeros((2, 3))))


def test_witness_vanishes_when_measures_match():
    rng = np.random.default_rng(5)
    locations = rng.normal(size=(5, 2))
    weights = simplex_weights(rng, 5)
    energy = MmdEnergy(KernelSpec(1.0), ParticleMeasure(locations, weights))
    mu = ParticleMeasure(locations, weights)
    z = rng.normal(size=(20, 2))
    np.testing.assert_allclose(witness(energy, mu, z), np.zeros(20), atol=1e-14)


def test_witness_two_atoms_hand_value():
    spec = KernelSpec(2.0)
    x = np.array([0.5, -0.5])
    y = np.array([1.0, 1.0])
    energy = MmdEnergy(spec, uniform_measure(y[None, :]))
    mu = uniform_measure(x[None, :])
    np.testing.assert_allclose(
        witness(energy, mu, x), 1.0 - kernel_eval(spec, y, x), rtol=1e-14
    )


def test_witness_integral_identity():
    # sum_i alpha_i w(x_i) - (1/m) sum_j w(y_j) telescopes to the squared MMD.
    rng = np.random.default_rng(6)
    energy, mu = random_energy(rng, n=6, m=5)
    lhs = mu.weights @ witness(energy, mu, mu.locations) - np.mean(
        witness(energy, mu, energy.target.locations)
    )
    np.testing.assert_allclose(lhs, mmd_squared(energy, mu), atol=1e-12)


def test_witness_gradient_zero_when_measures_match():
    rng = np.random.default_rng(7)
    locations = rng.normal(size=(4, 2))
    weights = simplex_weights(rng, 4)
    energy = MmdEnergy(KernelSpec(1.0), ParticleMeasure(locations, weights))
    mu = ParticleMeasure(locations, weights)
    grad = witness_gradient(energy, mu, rng.normal(size=(10, 2)))
    np.testing.assert_allclose(grad, np.zeros((10, 2)), atol=1e-14)


def test_witness_gradient_single_atoms_cancel():
    point = np.array([[1.0, 2.0]])
    energy = MmdEnergy(KernelSpec(1.0), uniform_measure(point))
    mu = uniform_measure(point.copy())
    np.testing.assert_allclose(
        witness_gradient(energy, mu, np.array([3.0, -1.0])), np.zeros(2), atol=1e-15
    )


@pytest.mark.parametrize("normalization", ["halved_square", "scale"])
def test_witness_gradient_matches_finite_differences(normalization):
    rng = np.random.default_rng(8)
    spec = KernelSpec(1.3, normalization=normalization)
    target = uniform_measure(rng.normal(size=(4, 2)))
    mu = ParticleMeasure(rng.normal(size=(10, 2)), simplex_weights(rng, 10))
    energy = MmdEnergy(spec, target)
    h = 1e-6
    for _ in range(20):
        z = rng.normal(size=2)
        grad = witness_gradient(energy, mu, z)
        fd = np.empty(2)
        for a in range(2):
            e = np.zeros(2)
            e[a] = h
            fd[a] = (witness(energy, mu, z + e) - witness(energy, mu, z - e)) / (2 * h)
        np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-12)


def test_witness_batch_matches_single_queries():
    rng = np.random.default_rng(9)
    energy, mu = random_energy(rng, n=5, m=3)
    z = rng.normal(size=(6, 2))
    batch_w = witness(energy, mu, z)
    batch_g = witness_gradient(energy, mu, z)
    for i in range(6):
        np.testing.assert_allclose(batch_w[i], witness(energy, mu, z[i]), rtol=1e-14)
        np.testing.assert_allclose(batch_g[i], witness_gradient(energy, mu, z[i]), rtol=1e-14)


def test_energy_requires_probability_target():
    bare = ParticleMeasure(np.zeros((2, 1)), np.array([1.0, 1.0]), probability=False)
    with pytest.raises(ValueError):
        MmdEnergy(KernelSpec(1.0), bare)
