"""Weighted particle measures, simplex operations, and target samplers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Weights below this are snapped to exactly zero so that "vanished" particles
# are machine-recognizable states rather than denormal noise.
VANISH_THRESHOLD = 1e-15

_PROBABILITY_TOL = 1e-12


@dataclass(frozen=True)
class ParticleMeasure:
    """A discrete measure sum_i weights_i * delta(locations_i).

    Immutable: the arrays are copied and write-locked on construction. When
    ``probability`` is set (the default) the weights must lie on the simplex
    up to 1e-12.
    """

    locations: np.ndarray
    weights: np.ndarray
    probability: bool = True

    def __post_init__(self) -> None:
        loc = np.array(self.locations, dtype=float)
        w = np.array(self.weights, dtype=float)
        if loc.ndim != 2:
            raise ValueError(f"locations must have shape (n, d), got {loc.shape}")
        if w.shape != (loc.shape[0],):
            raise ValueError(f"weights shape {w.shape} does not match {loc.shape[0]} atoms")
        if loc.shape[0] == 0:
            raise ValueError("a particle measure needs at least one atom")
        if not np.all(np.isfinite(loc)):
            raise ValueError("locations must be finite")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if self.probability and abs(w.sum() - 1.0) > _PROBABILITY_TOL:
            raise ValueError(f"probability weights must sum to 1, got {w.sum()!r}")
        loc.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def vanished(self) -> np.ndarray:
        """Boolean mask of atoms whose weight has been driven to exactly zero."""
        return self.weights == 0.0

    def with_weights(self, weights: np.ndarray, probability: bool = True) -> "ParticleMeasure":
        return ParticleMeasure(self.locations, weights, probability=probability)

    def with_locations(self, locations: np.ndarray) -> "ParticleMeasure":
        return ParticleMeasure(locations, self.weights, probability=self.probability)

    def to_dict(self) -> dict:
        return {"locations": self.locations.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, payload: dict, probability: bool = True) -> "ParticleMeasure":
        return cls(np.asarray(payload["locations"], dtype=float),
                   np.asarray(payload["weights"], dtype=float),
                   probability=probability)


@dataclass(frozen=True)
class TargetSpec:
    """Sampling recipe for an initial or target measure.

    Variants:

    * ``gaussian``: requires ``mean`` and ``covariance``.
    * ``mixture``: requires ``components`` as (weight, mean, covariance)
      triples with weights on the simplex.
    * ``random_mixture``: requires ``dimension``, ``component_count``,
      ``mean_norm`` and ``min_eigenvalue``; the component means and
      covariances are drawn from the sampling seed, with each mean scaled to
      the requested norm and each covariance built as A A^T / d plus
      ``min_eigenvalue`` times the identity. Component weights are equal.

    All array-like fields are stored as nested tuples so that specs compare
    by value and round-trip through JSON exactly.
    """

    variant: str
    sample_count: int
    mean: tuple = field(default=None)
    covariance: tuple = field(default=None)
    components: tuple = field(default=None)
    dimension: int = field(default=None)
    component_count: int = field(default=None)
    mean_norm: float = field(default=None)
    min_eigenvalue: float = field(default=None)

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")
        if self.variant == "gaussian":
            if self.mean is None or self.covariance is None:
                raise ValueError("gaussian target needs mean and covariance")
            object.__setattr__(self, "mean", _freeze(self.mean))
            object.__setattr__(self, "covariance", _freeze(self.covariance))
            _check_covariance(np.asarray(self.covariance, dtype=float))
        elif self.variant == "mixture":
            if not self.components:
                raise ValueError("mixture target needs at least one component")
            frozen = tuple(
                (float(w), _freeze(m), _freeze(c)) for w, m, c in self.components
            )
            object.__setattr__(self, "components", frozen)
            weights = np.array([w for w, _, _ in frozen])
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > _PROBABILITY_TOL:
                raise ValueError("mixture weights must lie on the simplex")
            for _, _, cov in frozen:
                _check_covariance(np.asarray(cov, dtype=float))
        elif self.variant == "random_mixture":
            missing = [
                name
                for name in ("dimension", "component_count", "mean_norm", "min_eigenvalue")
                if getattr(self, name) is None
            ]
            if missing:
                raise ValueError(f"random_mixture target needs {', '.join(missing)}")
            if self.dimension < 1 or self.component_count < 1:
                raise ValueError("dimension and component_count must be positive")
            if self.mean_norm < 0 or self.min_eigenvalue <= 0:
                raise ValueError("mean_norm must be >= 0 and min_eigenvalue > 0")
        else:
            raise ValueError(f"unknown target variant {self.variant!r}")

    def to_dict(self) -> dict:
        out = {"variant": self.variant, "sample_count": self.sample_count}
        for name in ("mean", "covariance", "components", "dimension",
                     "component_count", "mean_norm", "min_eigenvalue"):
            value = getattr(self, name)
            if value is not None:
                out[name] = _tolist(value)
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "TargetSpec":
        kwargs = dict(payload)
        for name in ("mean", "covariance", "components"):
            if kwargs.get(name) is not None:
                kwargs[name] = _freeze(kwargs[name])
        return cls(**kwargs)


def _freeze(value):
    """Recursively convert nested lists to nested tuples."""
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    return value


def _tolist(value):
    if isinstance(value, tuple):
        return [_tolist(v) for v in value]
    return value


def _check_covariance(cov: np.ndarray) -> None:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance must be positive definite") from exc


def uniform_measure(locations: np.ndarray) -> ParticleMeasure:
    """Particle measure with equal weights 1/n on the given locations."""
    locations = np.asarray(locations, dtype=float)
    if locations.ndim != 2 or locations.shape[0] == 0:
        raise ValueError("locations must be a nonempty (n, d) array")
    n = locations.shape[0]
    return ParticleMeasure(locations, np.full(n, 1.0 / n))


def sample_target(spec: TargetSpec, seed: int) -> ParticleMeasure:
    """Draw ``spec.sample_count`` i.i.d. samples with uniform weights.

    Deterministic given the seed; for ``random_mixture`` the component
    parameters are generated from the same stream before any samples are
    drawn, so one seed pins the full distribution and its sample.
    """
    rng = np.random.default_rng(seed)
    m = spec.sample_count

    if spec.variant == "gaussian":
        mean = np.asarray(spec.mean, dtype=float)
        chol = np.linalg.cholesky(np.asarray(spec.covariance, dtype=float))
        draws = rng.standard_normal((m, mean.size)) @ chol.T + mean
        return uniform_measure(draws)

    if spec.variant == "mixture":
        weights = np.array([w for w, _, _ in spec.components])
        means = np.array([m_ for _, m_, _ in spec.components], dtype=float)
        chols = np.array(
            [np.linalg.cholesky(np.asarray(c, dtype=float)) for _, _, c in spec.components]
        )
        return uniform_measure(_draw_mixture(rng, m, weights, means, chols))

    # random_mixture: generate components first, then sample from them.
    means, covariances = _draw_components(spec, rng)
    chols = np.array([np.linalg.cholesky(c) for c in covariances])
    weights = np.full(spec.component_count, 1.0 / spec.component_count)
    return uniform_measure(_draw_mixture(rng, m, weights, means, chols))


def random_mixture_components(spec: TargetSpec, seed: int):
    """Component means and covariances a random_mixture spec generates.

    Consumes the random stream exactly as :func:`sample_target` does before
    drawing samples, so the same seed describes the same distribution.
    """
    if spec.variant != "random_mixture":
        raise ValueError("spec must be a random_mixture target")
    return _draw_components(spec, np.random.default_rng(seed))


def _draw_components(spec: TargetSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    d, k = spec.dimension, spec.component_count
    means = rng.standard_normal((k, d))
    norms = np.linalg.norm(means, axis=1)
    means = means * (spec.mean_norm / norms)[:, None]
    covariances = []
    for _ in range(k):
        a = rng.standard_normal((d, d))
        # A A^T / d keeps the spectrum O(1); the identity shift sets the floor.
        covariances.append(a @ a.T / d + spec.min_eigenvalue * np.eye(d))
    return means, np.array(covariances)


def _draw_mixture(rng, m, weights, means, chols) -> np.ndarray:
    idx = rng.choice(weights.size, size=m, p=weights)
    z = rng.standard_normal((m, means.shape[1]))
    return means[idx] + np.einsum("nij,nj->ni", chols[idx], z)


def simplex_project(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex.

    Sort-based threshold algorithm: find the largest support size rho for
    which shifting the rho largest entries by a common theta keeps them
    positive, then clamp. Output entries are exactly nonnegative and sum to
    one up to accumulated round-off.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a nonempty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("entries must be finite")
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u)
    support = np.arange(1, v.size + 1)
    positive = u + (1.0 - cumulative) / support > 0.0
    rho = np.nonzero(positive)[0][-1]
    theta = (cumulative[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def clamp_vanished(weights: np.ndarray) -> np.ndarray:
    """Snap weights below VANISH_THRESHOLD to exactly 0 (no renormalization).

    The lost mass is at most n * 1e-15, well inside the probability
    tolerance, and exact zeros are what mark an atom as vanished.
    """
    out = np.array(weights, dtype=float)
    out[out < VANISH_THRESHOLD] = 0.0
    return out
