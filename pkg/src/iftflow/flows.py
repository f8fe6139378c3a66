"""Time-stepping loops for the particle flows, plus closed-form oracles.

The main scheme alternates a transport half-step (particle positions move
against the witness gradient) with a reaction half-step (weights re-solved on
the simplex). Baselines share the transport primitive: the vanilla/noisy MMD
flow never touches weights, the WFR flow replaces the QP by a multiplicative
update. The oracles at the bottom realize the closed-form reaction-only flow
mu_t = e^{-t} mu_0 + (1 - e^{-t}) pi and its Euler discretization, which pin
the exponential decay rate -2 used by the diagnostics.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .energy import MmdEnergy, mmd_squared, witness, witness_gradient
from .kernels import GramBundle, KernelSpec, gram
from .measures import ParticleMeasure, clamp_vanished
from .solvers import (
    _largest_eigenvalue,
    assemble_mmd_step_qp,
    qp_pgd_step,
    solve_qp_exact,
)

MMD_STEP_MODES = ("single_pgd", "exact_qp")
PROX_ANCHORS = ("old_locations", "new_locations")

_UNIFORM_TOL = 1e-12


class FlowDivergenceError(RuntimeError):
    """A location or weight became non-finite during a run.

    ``step`` is the global step index at which the update blew up and
    ``trace`` holds everything recorded before the failure (None when raised
    from a bare step function outside a run loop).
    """

    def __init__(self, message: str, step: int | None = None, trace: "Trace | None" = None):
        super().__init__(message)
        self.step = step
        self.trace = trace


class DegenerateWeightsError(RuntimeError):
    """The WFR reaction drove the total mass to zero (or to a non-finite value)."""

    def __init__(self, message: str, step: int | None = None, trace: "Trace | None" = None):
        super().__init__(message)
        self.step = step
        self.trace = trace


@dataclass(frozen=True)
class FlowConfig:
    """Shared configuration for all flow loops.

    ``tau`` and ``eta`` are the transport and reaction step sizes. The
    effective transport step is ``tau * transport_scale``: published step
    sizes for this family of methods are stated against the gradient of the
    total squared MMD of the stacked particle array, which differs from the
    per-particle witness gradient by 2/n, and ``transport_scale`` carries
    that factor explicitly instead of silently rescaling ``tau``. The default
    of 1.0 applies ``tau`` to the witness gradient literally.

    ``prox_tradeoff`` is the weight lambda of the energy term inside the
    reaction QP; None means "use eta". ``mmd_pgd_step`` selects the step size
    of the single projected-gradient reaction update: None means "use eta",
    a float is used as-is, and "auto" uses 1/lambda_max(Q), the largest
    stable step (recommended for n around 100, where eta-sized steps
    overshoot).

    ``noise_level`` only affects :func:`run_mmd_flow`; it is the standard
    deviation of the Gaussian perturbation of the gradient evaluation points,
    active for iterations before ``noise_off_iteration``.

    Losses are recorded every ``loss_every`` steps and snapshots every
    ``snapshot_every`` steps (step 0 and the final step are always kept).
    """

    tau: float
    eta: float
    prox_tradeoff: float | None = None
    mmd_step_mode: str = "single_pgd"
    prox_anchor: str = "old_locations"
    noise_level: float = 0.0
    noise_off_iteration: int = 0
    iterations: int = 1
    snapshot_every: int = 100
    seed: int = 0
    transport_scale: float = 1.0
    mmd_pgd_step: float | str | None = None
    loss_every: int = 1
    qp_tol: float = 1e-8
    qp_max_iter: int = 10_000

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.prox_tradeoff is not None and self.prox_tradeoff <= 0:
            raise ValueError("prox_tradeoff must be positive (or None for eta)")
        if self.mmd_step_mode not in MMD_STEP_MODES:
            raise ValueError(f"mmd_step_mode must be one of {MMD_STEP_MODES}")
        if self.prox_anchor not in PROX_ANCHORS:
            raise ValueError(f"prox_anchor must be one of {PROX_ANCHORS}")
        if self.noise_level < 0:
            raise ValueError("noise_level must be nonnegative")
        if self.noise_off_iteration < 0:
            raise ValueError("noise_off_iteration must be nonnegative")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.snapshot_every < 1 or self.loss_every < 1:
            raise ValueError("snapshot_every and loss_every must be at least 1")
        if self.transport_scale <= 0:
            raise ValueError("transport_scale must be positive")
        if isinstance(self.mmd_pgd_step, str):
            if self.mmd_pgd_step != "auto":
                raise ValueError('mmd_pgd_step must be a positive float, "auto", or None')
        elif self.mmd_pgd_step is not None and self.mmd_pgd_step <= 0:
            raise ValueError("mmd_pgd_step must be positive")
        if self.qp_tol <= 0 or self.qp_max_iter < 1:
            raise ValueError("qp_tol must be positive and qp_max_iter at least 1")

    @property
    def effective_tradeoff(self) -> float:
        """The lambda used by the reaction QP (prox_tradeoff, or eta if unset)."""
        return self.eta if self.prox_tradeoff is None else self.prox_tradeoff

    @property
    def transport_step(self) -> float:
        """The step actually applied to the witness gradient."""
        return self.tau * self.transport_scale

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "FlowConfig":
        return cls(**payload)


@dataclass(frozen=True)
class Trace:
    """Recorded history of one flow run.

    ``losses`` holds (step index, squared MMD to the target) pairs and
    ``snapshots`` holds (step index, measure) pairs; both are in strictly
    increasing step order. ``step_accounting`` is the number of steps one
    iteration of the generating loop contributes (2 for splitting schemes,
    1 for plain flows), and ``time_per_step`` converts step indices to the
    continuous time used by :func:`fit_decay_rate`.
    """

    losses: tuple
    snapshots: tuple
    step_accounting: int
    time_per_step: float = 1.0

    def __post_init__(self) -> None:
        if len(self.losses) == 0:
            raise ValueError("a trace must record at least one loss")
        steps = [s for s, _ in self.losses]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("loss step indices must be strictly increasing")
        snap_steps = [s for s, _ in self.snapshots]
        if any(b <= a for a, b in zip(snap_steps, snap_steps[1:])):
            raise ValueError("snapshot step indices must be strictly increasing")
        if self.step_accounting < 1:
            raise ValueError("step_accounting must be at least 1")
        if self.time_per_step <= 0:
            raise ValueError("time_per_step must be positive")

    @property
    def steps(self) -> np.ndarray:
        return np.array([s for s, _ in self.losses], dtype=int)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.losses], dtype=float)

    @property
    def final_loss(self) -> float:
        return self.losses[-1][1]

    @property
    def final_measure(self) -> ParticleMeasure:
        return self.snapshots[-1][1]

    def loss_at(self, step: int) -> float:
        for s, value in self.losses:
            if s == step:
                return value
        raise KeyError(f"no loss recorded at step {step}")


class _Recorder:
    """Accumulates (step, loss) and (step, measure) pairs during a run.

    Recording policy: step 0 and the final step are always kept; in between,
    losses every ``loss_every`` steps and snapshots every ``snapshot_every``.
    """

    def __init__(self, cfg: FlowConfig, step_accounting: int, time_per_step: float = 1.0):
        self._losses: list = []
        self._snapshots: list = []
        self._cfg = cfg
        self._accounting = step_accounting
        self._time_per_step = time_per_step
        self._final_step = cfg.iterations * step_accounting

    def record(self, step: int, loss: float, mu: ParticleMeasure) -> None:
        last = step == self._final_step
        if step % self._cfg.loss_every == 0 or last:
            self._losses.append((step, loss))
        if step % self._cfg.snapshot_every == 0 or last:
            self._snapshots.append((step, mu))

    def build(self) -> Trace:
        return Trace(
            losses=tuple(self._losses),
            snapshots=tuple(self._snapshots),
            step_accounting=self._accounting,
            time_per_step=self._time_per_step,
        )


def _require_probability(mu: ParticleMeasure, who: str) -> None:
    if not mu.probability:
        raise ValueError(f"{who} requires a probability measure")


def _quad_loss(kxx, kxy, alpha, beta, target_quad: float) -> float:
    """Squared MMD from precomputed Gram blocks (clamped at zero)."""
    value = float(alpha @ kxx @ alpha - 2.0 * (alpha @ kxy @ beta) + target_quad)
    return max(value, 0.0)


def wasserstein_step(
    energy: MmdEnergy,
    mu: ParticleMeasure,
    tau: float,
    noise_level: float = 0.0,
    rng: np.random.Generator | None = None,
) -> ParticleMeasure:
    """Transport half-step: x_i <- x_i - tau * grad w(x_i + xi_i).

    The witness gradient is taken at the current measure; ``noise_level`` is
    the standard deviation of the Gaussian perturbation xi of the evaluation
    points (zero noise evaluates at the particles themselves). Weights are
    untouched. Raises FlowDivergenceError if the update produces non-finite
    locations.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if noise_level < 0:
        raise ValueError("noise_level must be nonnegative")
    points = mu.locations
    if noise_level > 0:
        if rng is None:
            raise ValueError("noise_level > 0 requires an rng")
        eval_points = points + noise_level * rng.standard_normal(points.shape)
    else:
        eval_points = points
    moved = points - tau * witness_gradient(energy, mu, eval_points)
    if not np.all(np.isfinite(moved)):
        raise FlowDivergenceError("transport step produced non-finite locations")
    return mu.with_locations(moved)


def mmd_step(
    energy: MmdEnergy,
    mu: ParticleMeasure,
    alpha_prev: np.ndarray,
    cfg: FlowConfig,
    *,
    locations_prev: np.ndarray | None = None,
) -> ParticleMeasure:
    """Reaction half-step: re-solve the weights on the simplex.

    ``mu`` carries the post-transport locations; ``alpha_prev`` the weights
    being proximally anchored. With ``cfg.prox_anchor == "old_locations"``
    the anchor measure lives on ``locations_prev`` (required in that mode,
    per the splitting scheme's Gram block against the previous iterate);
    with ``"new_locations"`` it lives on the current support and the
    argument is ignored. Returns ``mu`` with the updated weights; weights
    below the vanish threshold are snapped to exact zero.
    """
    alpha_prev = np.asarray(alpha_prev, dtype=float)
    kernel, target = energy.kernel, energy.target
    kxx = gram(kernel, mu.locations, mu.locations)
    kxy = gram(kernel, mu.locations, target.locations)
    if cfg.prox_anchor == "old_locations":
        if locations_prev is None:
            raise ValueError('prox_anchor "old_locations" requires locations_prev')
        kx_old = gram(kernel, mu.locations, np.asarray(locations_prev, dtype=float))
    else:
        kx_old = kxx
    bundle = GramBundle(kxx=kxx, kxy=kxy, kx_old=kx_old)
    weights = _reaction_weights(bundle, alpha_prev, cfg, target.size)
    return mu.with_weights(weights)


def _reaction_weights(
    bundle: GramBundle, alpha_prev: np.ndarray, cfg: FlowConfig, m: int
) -> np.ndarray:
    qp = assemble_mmd_step_qp(bundle, alpha_prev, cfg.effective_tradeoff, m)
    if cfg.mmd_step_mode == "exact_qp":
        beta = solve_qp_exact(qp, alpha_prev, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
    else:
        beta = qp_pgd_step(qp, alpha_prev, _pgd_step_size(qp, cfg))
    return clamp_vanished(beta)


def _pgd_step_size(qp, cfg: FlowConfig) -> float:
    choice = cfg.mmd_pgd_step
    if choice is None:
        return cfg.eta
    if choice == "auto":
        return 1.0 / max(_largest_eigenvalue(qp.q), 1e-12)
    return float(choice)


def run_ift(energy: MmdEnergy, mu0: ParticleMeasure, cfg: FlowConfig) -> Trace:
    """Splitting flow: alternate transport and reaction for cfg.iterations.

    No noise is injected regardless of cfg.noise_level (the weight step makes
    it unnecessary). Loss is recorded after every half-step, so one iteration
    contributes two steps; step_accounting = 2. Deterministic given the
    config.
    """
    _require_probability(mu0, "run_ift")
    kernel, target = energy.kernel, energy.target
    tau = cfg.transport_step
    recorder = _Recorder(cfg, step_accounting=2)
    mu = mu0
    recorder.record(0, mmd_squared(energy, mu), mu)
    step = 0
    for _ in range(cfg.iterations):
        locations_prev = mu.locations
        try:
            mu = wasserstein_step(energy, mu, tau)
        except FlowDivergenceError as err:
            raise FlowDivergenceError(
                f"run_ift diverged at step {step + 1}: {err}",
                step=step + 1,
                trace=recorder.build(),
            ) from err
        step += 1
        kxx = gram(kernel, mu.locations, mu.locations)
        kxy = gram(kernel, mu.locations, target.locations)
        recorder.record(
            step, _quad_loss(kxx, kxy, mu.weights, target.weights, energy.target_quad), mu
        )
        if cfg.prox_anchor == "old_locations":
            kx_old = gram(kernel, mu.locations, locations_prev)
        else:
            kx_old = kxx
        bundle = GramBundle(kxx=kxx, kxy=kxy, kx_old=kx_old)
        mu = mu.with_weights(_reaction_weights(bundle, mu.weights, cfg, target.size))
        step += 1
        recorder.record(
            step, _quad_loss(kxx, kxy, mu.weights, target.weights, energy.target_quad), mu
        )
    return recorder.build()


def run_mmd_flow(energy: MmdEnergy, mu0: ParticleMeasure, cfg: FlowConfig) -> Trace:
    """Plain MMD flow baseline: transport only, weights stay uniform.

    Gradient evaluation points are perturbed with cfg.noise_level noise for
    iterations before cfg.noise_off_iteration and exactly thereafter (set
    noise_level=0 for the vanilla flow). step_accounting = 1.
    """
    _require_probability(mu0, "run_mmd_flow")
    if np.max(np.abs(mu0.weights - 1.0 / mu0.size)) > _UNIFORM_TOL:
        raise ValueError("run_mmd_flow requires uniform weights")
    rng = np.random.default_rng(cfg.seed)
    tau = cfg.transport_step
    recorder = _Recorder(cfg, step_accounting=1)
    mu = mu0
    recorder.record(0, mmd_squared(energy, mu), mu)
    for iteration in range(cfg.iterations):
        level = cfg.noise_level if iteration < cfg.noise_off_iteration else 0.0
        try:
            mu = wasserstein_step(energy, mu, tau, noise_level=level, rng=rng)
        except FlowDivergenceError as err:
            raise FlowDivergenceError(
                f"run_mmd_flow diverged at step {iteration + 1}: {err}",
                step=iteration + 1,
                trace=recorder.build(),
            ) from err
        recorder.record(iteration + 1, mmd_squared(energy, mu), mu)
    return recorder.build()


def run_wfr(energy: MmdEnergy, mu0: ParticleMeasure, cfg: FlowConfig) -> Trace:
    """Wasserstein-Fisher-Rao flow: transport plus multiplicative reaction.

    After each transport half-step the weights update as
    alpha_i <- alpha_i * exp(-eta * w(x_i^{new})), where w is the witness of
    the measure from the start of the iteration (the explicit-Euler reading
    of the entropic mirror-descent step: the first variation is frozen at the
    current iterate and evaluated at the transported locations). The weights
    then renormalize onto the simplex. step_accounting = 2.
    """
    _require_probability(mu0, "run_wfr")
    tau = cfg.transport_step
    recorder = _Recorder(cfg, step_accounting=2)
    mu = mu0
    recorder.record(0, mmd_squared(energy, mu), mu)
    step = 0
    for _ in range(cfg.iterations):
        prev = mu
        try:
            mu = wasserstein_step(energy, mu, tau)
        except FlowDivergenceError as err:
            raise FlowDivergenceError(
                f"run_wfr diverged at step {step + 1}: {err}",
                step=step + 1,
                trace=recorder.build(),
            ) from err
        step += 1
        recorder.record(step, mmd_squared(energy, mu), mu)
        scores = witness(energy, prev, mu.locations)
        raw = mu.weights * np.exp(-cfg.eta * scores)
        total = raw.sum()
        if not np.isfinite(total) or total <= 0.0:
            raise DegenerateWeightsError(
                f"run_wfr weights degenerated at step {step + 1} (total mass {total!r})",
                step=step + 1,
                trace=recorder.build(),
            )
        mu = mu.with_weights(raw / total)
        step += 1
        recorder.record(step, mmd_squared(energy, mu), mu)
    return recorder.build()


def interpolation_oracle(
    mu0: ParticleMeasure, target: ParticleMeasure, t: float
) -> ParticleMeasure:
    """Closed-form reaction-only flow state mu_t = e^{-t} mu_0 + (1 - e^{-t}) pi.

    Returns a measure on the joint support (mu0 atoms then target atoms) with
    weights (e^{-t} alpha_0, (1 - e^{-t}) beta). Along this path the squared
    MMD to the target decays exactly as e^{-2t}.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    _require_probability(mu0, "interpolation_oracle")
    _require_probability(target, "interpolation_oracle")
    if mu0.dim != target.dim:
        raise ValueError(f"dimension mismatch: {mu0.dim} vs {target.dim}")
    decay = float(np.exp(-t))
    locations = np.vstack([mu0.locations, target.locations])
    weights = np.concatenate([decay * mu0.weights, (1.0 - decay) * target.weights])
    return ParticleMeasure(locations, weights)


def euler_spherical_mmd(
    mu0: ParticleMeasure,
    target: ParticleMeasure,
    h: float,
    steps: int,
    *,
    kernel: KernelSpec | None = None,
) -> Trace:
    """Explicit Euler for the reaction-only flow on the joint support.

    The flow mu-dot = -(mu - pi) moves no atoms, so the joint support is
    exact: stack the atoms, set w_pi to the target's weights there, and step
    w <- w - h (w - w_pi). For h < 1 every iterate is a convex combination of
    two simplex points and stays on the simplex. The recorded loss is the
    squared MMD to the target under ``kernel`` (unit bandwidth by default;
    the decay exponent is kernel-independent). time_per_step = h.
    """
    if not 0.0 < h < 1.0:
        raise ValueError("h must lie in (0, 1)")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    _require_probability(mu0, "euler_spherical_mmd")
    _require_probability(target, "euler_spherical_mmd")
    if mu0.dim != target.dim:
        raise ValueError(f"dimension mismatch: {mu0.dim} vs {target.dim}")
    if kernel is None:
        kernel = KernelSpec(bandwidth=1.0)

    n = mu0.size
    joint = np.vstack([mu0.locations, target.locations])
    w = np.concatenate([mu0.weights, np.zeros(target.size)])
    w_pi = np.concatenate([np.zeros(n), target.weights])
    joint_gram = gram(kernel, joint, joint)

    def loss(weights: np.ndarray) -> float:
        diff = weights - w_pi
        return max(float(diff @ joint_gram @ diff), 0.0)

    losses = [(0, loss(w))]
    snapshots = [(0, ParticleMeasure(joint, w))]
    for step in range(1, steps + 1):
        w = w - h * (w - w_pi)
        losses.append((step, loss(w)))
    snapshots.append((steps, ParticleMeasure(joint, w)))
    return Trace(
        losses=tuple(losses),
        snapshots=tuple(snapshots),
        step_accounting=1,
        time_per_step=h,
    )


def fit_decay_rate(trace: Trace, window) -> float:
    """Least-squares exponent of the loss decay over a window of the trace.

    ``window`` selects positions in ``trace.losses``: either a (start, stop)
    pair or any iterable of indices. The fit is the slope of log(loss)
    against continuous time, step * trace.time_per_step. Losses in the window
    must be strictly positive.
    """
    if isinstance(window, tuple):
        indices = range(*window)
    else:
        indices = window
    pairs = [trace.losses[i] for i in indices]
    if len(pairs) < 2:
        raise ValueError("window must select at least two recorded losses")
    steps = np.array([s for s, _ in pairs], dtype=float)
    values = np.array([v for _, v in pairs], dtype=float)
    if np.any(values <= 0.0):
        raise ValueError("losses must be strictly positive on the window")
    times = steps * trace.time_per_step
    slope, _ = np.polyfit(times, np.log(values), 1)
    return float(slope)
