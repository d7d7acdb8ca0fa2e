"""Continuous-state engines: an Euler-Maruyama jump-diffusion integrator for
the interacting SDE and an explicit time-change stepper driven by Levy
increments, plus the generator oracle and martingale-residual estimator used
to validate both.

Scheme conventions (weak order 1 throughout):
  * negativity from Euler overshoot is a numerical artifact (the SDE's
    solution is nonnegative), so states are clamped at 0 after each step and
    the clamped fraction is reported;
  * the square root argument in the diffusion term is ``max(Y, 0)``;
  * per step, the number of type-i jumps of a finite-activity component is
    Poisson(mass * Y_i * dt) with the intensity frozen at the step start;
    jump times are not refined within a step, so recorded jump times are the
    grid times of flagged steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .drivers import LevyDriverSpec, validate_levy
from .model import ContinuousModelSpec, as_continuous_state, validate_continuous
from .paths import ContinuousPath


class StepRejectedError(RuntimeError):
    """A single Euler step moved a coordinate by more than the configured
    multiple of its magnitude; dt is too coarse for this model."""


@dataclass(frozen=True)
class EulerConfig:
    """Integrator settings.

    ``truncation_level`` switches on the stabilized variant that caps every
    coefficient argument and jump size at the given level (useful to stress
    explosive cooperation).  Negativity handling is clamp-to-zero, fixed.
    """

    dt: float = 1e-3
    truncation_level: float | None = None
    max_step_multiple: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def _grid(horizon: float, dt: float) -> tuple[int, float]:
    n_steps = max(1, int(round(horizon / dt)))
    return n_steps, horizon / n_steps


def _drift_matrix_part(states: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    # row convention: coordinate j gets sum_i C[i,j] y_i y_j + sum_i B[i,j] y_i
    return (states @ C) * states + states @ B


def euler_simulate(
    spec: ContinuousModelSpec,
    y,
    horizon: float,
    cfg: EulerConfig,
    rng: np.random.Generator,
    normals: np.ndarray | None = None,
    drift_override=None,
) -> ContinuousPath:
    """One Euler path of the interacting SDE.

    ``normals`` optionally injects the Brownian increments (shape
    (n_steps, d), standard normal) for common-noise comparisons;
    ``drift_override(yc, step) -> (d,)`` replaces the drift matrix part
    (the grid approximation hooks its frozen-competition drift in here).
    """
    validate_continuous(spec)
    state = as_continuous_state(y, spec.d)
    n_steps, dt = _grid(horizon, cfg.dt)
    d = spec.d
    out = np.empty((n_steps + 1, d))
    out[0] = state
    jump_flags = np.zeros(n_steps + 1, dtype=bool)
    clamped = 0
    sqrt_dt = math.sqrt(dt)
    trunc = cfg.truncation_level

    for k in range(n_steps):
        yc = state if trunc is None else np.minimum(state, trunc)
        if drift_override is not None:
            drift = np.asarray(drift_override(yc, k), dtype=float).copy()
        else:
            drift = _drift_matrix_part(yc[None, :], spec.B, spec.C)[0]
        incr = np.zeros(d)
        jumped = False
        for i in range(d):
            m = spec.jump_measures[i]
            if m.is_trivial or yc[i] <= 0.0:
                continue
            for comp in m.components:
                n_jumps = rng.poisson(comp.mass * yc[i] * dt)
                if n_jumps:
                    jumps = comp.dist.sample(rng, int(n_jumps))
                    if trunc is not None:
                        jumps = np.minimum(jumps, trunc)
                    incr += jumps.sum(axis=0)
                    jumped = True
                if comp.compensated:
                    mean = comp.dist.mean() if trunc is None else np.minimum(comp.dist.mean(), trunc)
                    drift -= yc[i] * comp.mass * mean
            if m.small_jump_truncation is not None:
                drift -= yc[i] * m.small_jump_truncation.compensator_drift
        z = rng.standard_normal(d) if normals is None else normals[k]
        diffusion = np.sqrt(2.0 * spec.sigma * np.maximum(yc, 0.0)) * sqrt_dt * z
        delta = drift * dt + diffusion + incr
        if cfg.max_step_multiple is not None:
            if np.any(np.abs(delta) > cfg.max_step_multiple * (np.abs(state) + 1.0)):
                raise StepRejectedError(
                    f"step {k}: move {delta} from {state} exceeds {cfg.max_step_multiple}x; reduce dt"
                )
        state = state + delta
        neg = state < 0.0
        clamped += int(neg.sum())
        state[neg] = 0.0
        out[k + 1] = state
        jump_flags[k + 1] = jumped

    times = np.linspace(0.0, horizon, n_steps + 1)
    return ContinuousPath(times, out, horizon, jump_flags, clamped / (n_steps * d))


@dataclass
class EnsembleResult:
    """Vectorized ensemble output: time-t marginals at the requested
    checkpoints and any accumulated path functional."""

    checkpoints: tuple[float, ...]
    marginals: dict[float, np.ndarray]  # t -> (n_paths, d)
    clamped_fraction: float
    accumulated: np.ndarray | None = None

    def final(self) -> np.ndarray:
        return self.marginals[self.checkpoints[-1]]


def euler_ensemble(
    spec: ContinuousModelSpec,
    y,
    horizon: float,
    cfg: EulerConfig,
    n_paths: int,
    rng: np.random.Generator,
    checkpoints: Sequence[float] | None = None,
    accumulator: Callable[[np.ndarray], np.ndarray] | None = None,
    drift_override: Callable[[np.ndarray, int], np.ndarray] | None = None,
) -> EnsembleResult:
    """Euler ensemble, vectorized across paths; records marginals at the
    checkpoint grid times.

    ``accumulator(states) -> (n_paths,)`` is integrated with left endpoints
    (used for martingale residuals).  ``drift_override(states, step)``
    replaces the drift matrix part wholesale when given (the grid
    approximation plugs in its frozen-competition linear drift here).
    """
    validate_continuous(spec)
    y0 = as_continuous_state(y, spec.d)
    n_steps, dt = _grid(horizon, cfg.dt)
    checkpoints = (horizon,) if checkpoints is None else tuple(checkpoints)
    cp_steps = {}
    for c in checkpoints:
        k = int(round(c / dt))
        if not (0 <= k <= n_steps) or abs(k * dt - c) > 1e-9 * max(1.0, horizon):
            raise ValueError(f"checkpoint {c} is not on the dt={dt} grid")
        cp_steps.setdefault(k, []).append(c)

    d = spec.d
    states = np.tile(y0, (n_paths, 1))
    marginals: dict[float, np.ndarray] = {}
    for c in cp_steps.get(0, []):
        marginals[c] = states.copy()
    acc = np.zeros(n_paths) if accumulator is not None else None
    clamped = 0
    sqrt_dt = math.sqrt(dt)
    trunc = cfg.truncation_level
    sigma_row = 2.0 * spec.sigma[None, :]
    has_jumps = [not m.is_trivial for m in spec.jump_measures]

    for k in range(n_steps):
        if accumulator is not None:
            acc += accumulator(states) * dt
        yc = states if trunc is None else np.minimum(states, trunc)
        if drift_override is not None:
            drift = np.asarray(drift_override(yc, k), dtype=float).copy()
        else:
            drift = _drift_matrix_part(yc, spec.B, spec.C)
        incr = np.zeros_like(states)
        for i in range(d):
            if not has_jumps[i]:
                continue
            m = spec.jump_measures[i]
            intens = np.maximum(yc[:, i], 0.0)
            for comp in m.components:
                counts = rng.poisson(comp.mass * intens * dt)
                from .model import DiracJump, GammaJump

                if isinstance(comp.dist, DiracJump):
                    r0 = comp.dist.r0 if trunc is None else np.minimum(comp.dist.r0, trunc)
                    incr += counts[:, None] * r0[None, :]
                elif isinstance(comp.dist, GammaJump) and trunc is None:
                    totals = rng.gamma(counts * comp.dist.shape, comp.dist.scale)
                    incr += totals[:, None] * comp.dist.direction[None, :]
                else:
                    # per-jump sampling (needed when jump sizes are capped)
                    total_jumps = int(counts.sum())
                    if total_jumps:
                        jumps = comp.dist.sample(rng, total_jumps)
                        if trunc is not None:
                            jumps = np.minimum(jumps, trunc)
                        owner = np.repeat(np.arange(n_paths), counts)
                        np.add.at(incr, owner, jumps)
                if comp.compensated:
                    mean = comp.dist.mean() if trunc is None else np.minimum(comp.dist.mean(), trunc)
                    drift -= intens[:, None] * (comp.mass * mean)[None, :]
            if m.small_jump_truncation is not None:
                drift -= intens[:, None] * m.small_jump_truncation.compensator_drift[None, :]
        z = rng.standard_normal((n_paths, d))
        diffusion = np.sqrt(sigma_row * np.maximum(yc, 0.0)) * (sqrt_dt * z)
        states = states + drift * dt + diffusion + incr
        neg = states < 0.0
        clamped += int(neg.sum())
        states[neg] = 0.0
        for c in cp_steps.get(k + 1, []):
            marginals[c] = states.copy()

    return EnsembleResult(checkpoints, marginals, clamped / (n_steps * d * n_paths), acc)


# ---------------------------------------------------------------------------
# Time-change stepper on Levy drivers
# ---------------------------------------------------------------------------


def lamperti_simulate(
    drivers: Sequence[LevyDriverSpec],
    C,
    z,
    horizon: float,
    dt: float,
    rng: np.random.Generator,
    cfg: EulerConfig | None = None,
    quad_override=None,
) -> ContinuousPath:
    """Explicit stepping of the Levy time-change equation: per step the
    driver-i clock advances by Z^i dt, the increment is drawn exactly for
    that advance, and the quadratic interaction term is added.
    ``quad_override(state, step) -> (d,)`` swaps the quadratic term (grid
    approximation hook)."""
    d = len(drivers)
    for spec in drivers:
        validate_levy(spec)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    state = as_continuous_state(z, d)
    cfg = cfg or EulerConfig(dt=dt)
    n_steps, dt = _grid(horizon, dt)
    out = np.empty((n_steps + 1, d))
    out[0] = state
    clamped = 0

    for k in range(n_steps):
        incr = np.zeros(d)
        for i, drv in enumerate(drivers):
            adv = state[i] * dt
            if adv <= 0.0:
                continue
            incr += drv.drift * adv
            if drv.brownian_variance > 0.0:
                incr[drv.index] += math.sqrt(drv.brownian_variance * adv) * rng.standard_normal()
            for comp in drv.jumps.components:
                n_jumps = rng.poisson(comp.mass * adv)
                if n_jumps:
                    incr += comp.dist.sample(rng, int(n_jumps)).sum(axis=0)
                if comp.compensated:
                    incr -= comp.mass * comp.dist.mean() * adv
            if drv.jumps.small_jump_truncation is not None:
                incr -= drv.jumps.small_jump_truncation.compensator_drift * adv
        if quad_override is not None:
            quad = np.asarray(quad_override(state, k), dtype=float)
        else:
            quad = _drift_matrix_part(state[None, :], np.zeros((d, d)), C)[0]
        delta = incr + quad * dt
        if cfg.max_step_multiple is not None:
            if np.any(np.abs(delta) > cfg.max_step_multiple * (np.abs(state) + 1.0)):
                raise StepRejectedError(f"step {k}: move {delta} from {state}; reduce dt")
        state = state + delta
        neg = state < 0.0
        clamped += int(neg.sum())
        state[neg] = 0.0
        out[k + 1] = state

    times = np.linspace(0.0, horizon, n_steps + 1)
    return ContinuousPath(times, out, horizon, None, clamped / (n_steps * d))


def lamperti_ensemble(
    drivers: Sequence[LevyDriverSpec],
    C,
    z,
    horizon: float,
    dt: float,
    n_paths: int,
    rng: np.random.Generator,
    checkpoints: Sequence[float] | None = None,
    quad_override: Callable[[np.ndarray, int], np.ndarray] | None = None,
) -> EnsembleResult:
    """Vectorized version of ``lamperti_simulate`` recording checkpoint
    marginals; ``quad_override`` swaps the quadratic interaction term as in
    ``euler_ensemble``'s drift override."""
    d = len(drivers)
    for spec in drivers:
        validate_levy(spec)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    y0 = as_continuous_state(z, d)
    n_steps, dt = _grid(horizon, dt)
    checkpoints = (horizon,) if checkpoints is None else tuple(checkpoints)
    cp_steps = {}
    for c in checkpoints:
        k = int(round(c / dt))
        if not (0 <= k <= n_steps) or abs(k * dt - c) > 1e-9 * max(1.0, horizon):
            raise ValueError(f"checkpoint {c} is not on the dt={dt} grid")
        cp_steps.setdefault(k, []).append(c)

    states = np.tile(y0, (n_paths, 1))
    marginals: dict[float, np.ndarray] = {}
    for c in cp_steps.get(0, []):
        marginals[c] = states.copy()
    clamped = 0

    from .model import DiracJump, GammaJump

    for k in range(n_steps):
        incr = np.zeros_like(states)
        for i, drv in enumerate(drivers):
            adv = np.maximum(states[:, i], 0.0) * dt
            incr += adv[:, None] * drv.drift[None, :]
            if drv.brownian_variance > 0.0:
                incr[:, drv.index] += np.sqrt(drv.brownian_variance * adv) * rng.standard_normal(n_paths)
            for comp in drv.jumps.components:
                counts = rng.poisson(comp.mass * adv)
                if isinstance(comp.dist, DiracJump):
                    incr += counts[:, None] * comp.dist.r0[None, :]
                elif isinstance(comp.dist, GammaJump):
                    totals = rng.gamma(counts * comp.dist.shape, comp.dist.scale)
                    incr += totals[:, None] * comp.dist.direction[None, :]
                else:
                    raise NotImplementedError(f"unsupported jump family {type(comp.dist)}")
                if comp.compensated:
                    incr -= adv[:, None] * (comp.mass * comp.dist.mean())[None, :]
            if drv.jumps.small_jump_truncation is not None:
                incr -= adv[:, None] * drv.jumps.small_jump_truncation.compensator_drift[None, :]
        if quad_override is not None:
            quad = np.asarray(quad_override(states, k), dtype=float)
        else:
            quad = _drift_matrix_part(states, np.zeros((d, d)), C)
        states = states + incr + quad * dt
        neg = states < 0.0
        clamped += int(neg.sum())
        states[neg] = 0.0
        for c in cp_steps.get(k + 1, []):
            marginals[c] = states.copy()

    return EnsembleResult(checkpoints, marginals, clamped / (n_steps * d * n_paths), None)


# ---------------------------------------------------------------------------
# Generator oracle and martingale residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Twice-differentiable test function with callable gradient and Hessian
    diagonal; all callables must broadcast over a leading batch axis."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess_diag: Callable[[np.ndarray], np.ndarray]


def coordinate(j: int, d: int) -> TestFunction:
    e = np.zeros(d)
    e[j] = 1.0
    return TestFunction(
        f"x_{j + 1}",
        lambda x: np.asarray(x)[..., j],
        lambda x: np.broadcast_to(e, np.shape(x)).copy(),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def square(j: int, d: int) -> TestFunction:
    def grad(x):
        g = np.zeros_like(np.asarray(x, dtype=float))
        g[..., j] = 2.0 * np.asarray(x)[..., j]
        return g

    def hess(x):
        h = np.zeros_like(np.asarray(x, dtype=float))
        h[..., j] = 2.0
        return h

    return TestFunction(f"x_{j + 1}^2", lambda x: np.asarray(x)[..., j] ** 2, grad, hess)


def product(i: int, j: int, d: int) -> TestFunction:
    if i == j:
        return square(i, d)

    def grad(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        g[..., i] = x[..., j]
        g[..., j] = x[..., i]
        return g

    return TestFunction(
        f"x_{i + 1}*x_{j + 1}",
        lambda x: np.asarray(x)[..., i] * np.asarray(x)[..., j],
        grad,
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def constant(c: float, d: int) -> TestFunction:
    return TestFunction(
        f"const_{c}",
        lambda x: np.broadcast_to(c, np.shape(x)[:-1]).copy(),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def generator_apply(spec: ContinuousModelSpec, tf: TestFunction, x) -> np.ndarray:
    """Apply the process generator to ``tf`` at ``x`` ((d,) or batch (n, d)).

    Drift and diffusion terms are evaluated in closed form; jump integrals
    sum exactly over atomic components and use quadrature for continuous
    ones (continuous components require scalar ``x``).  Uncompensated
    components omit the first-order subtraction, matching the engines.
    """
    x = np.asarray(x, dtype=float)
    batched = x.ndim > 1
    g = _drift_matrix_part(np.atleast_2d(x), spec.B, spec.C)
    if not batched:
        g = g[0]
    grad_x = tf.grad(x)
    val = np.sum(g * grad_x, axis=-1)
    val = val + np.sum(spec.sigma * x * tf.hess_diag(x), axis=-1)

    from .model import DiracJump

    for i in range(spec.d):
        m = spec.jump_measures[i]
        if m.is_trivial:
            continue
        jump_term = 0.0
        for comp in m.components:
            if comp.compensated:
                integrand = lambda r: tf.f(x + r) - tf.f(x) - np.sum(r * grad_x, axis=-1)
            else:
                integrand = lambda r: tf.f(x + r) - tf.f(x)
            if not isinstance(comp.dist, DiracJump) and batched:
                raise NotImplementedError("continuous jump families support scalar x only")
            jump_term = jump_term + comp.mass * comp.dist.expect(integrand)
        val = val + x[..., i] * jump_term
        if m.small_jump_truncation is not None:
            drift_term = np.sum(m.small_jump_truncation.compensator_drift * grad_x, axis=-1)
            val = val - x[..., i] * drift_term
    return val if batched else float(val)


def martingale_residual(spec: ContinuousModelSpec, tf: TestFunction, paths: Sequence[ContinuousPath]) -> dict:
    """Estimate E[f(Y_T)] - f(y0) - E[int_0^T (Af)(Y_s) ds] over given paths.

    A value within Monte Carlo error of zero validates the integrator against
    the generator; the integral uses left endpoints, matching the Euler
    scheme's order.
    """
    residuals = np.empty(len(paths))
    for k, path in enumerate(paths):
        dts = np.diff(path.times)
        af = generator_apply(spec, tf, path.states[:-1])
        residuals[k] = tf.f(path.states[-1]) - tf.f(path.states[0]) - float(np.sum(af * dts))
    return _residual_summary(residuals)


def martingale_residual_mc(
    spec: ContinuousModelSpec,
    tf: TestFunction,
    y,
    horizon: float,
    cfg: EulerConfig,
    n_paths: int,
    rng: np.random.Generator,
) -> dict:
    """Streaming variant: simulates the ensemble and accumulates the
    generator integral on the fly (no path storage)."""
    res = euler_ensemble(
        spec,
        y,
        horizon,
        cfg,
        n_paths,
        rng,
        checkpoints=(horizon,),
        accumulator=lambda states: generator_apply(spec, tf, states),
    )
    y0 = as_continuous_state(y, spec.d)
    residuals = tf.f(res.final()) - tf.f(y0) - res.accumulated
    out = _residual_summary(residuals)
    out["clamped_fraction"] = res.clamped_fraction
    return out


def _residual_summary(residuals: np.ndarray) -> dict:
    n = residuals.shape[0]
    mean = float(residuals.mean())
    se = float(residuals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return {"residual": mean, "stderr": se, "n_paths": n, "within_3se": bool(abs(mean) <= 3.0 * se or se == 0.0)}
