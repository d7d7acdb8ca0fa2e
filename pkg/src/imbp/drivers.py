"""Driving noise: continuous-time random walks, Poisson clocks, Levy
increments, and the lazily materialized jump paths the time-change solvers
consume.

Structural constraints follow the branching setup: driver family i owns
coordinate i, whose jumps stay in {-1, 1, 2, ...} (downwards skip-free);
every other coordinate of the family must be nondecreasing (off-diagonal
jumps >= 0, and for Levy drivers a nonnegative effective drift).

Increments are sampled lazily on clock advance; clocks are only ever consumed
monotonically, so lazy sampling is distributionally exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import FinitePMF, JumpMeasureSpec, SpecValidationError, Violation, _frozen
from .seeding import driver_rng

KIND_WALK = 1
KIND_POISSON = 2
KIND_LEVY = 3

_BLOCK = 256


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomWalkSpec:
    """Continuous-time random walk in Z^d for driver family ``index``."""

    index: int
    jump_rate: float
    jump_pmf: FinitePMF

    def d(self) -> int:
        return self.jump_pmf.dim


def walk_violations(spec: RandomWalkSpec) -> list[Violation]:
    out: list[Violation] = []
    where = f"walk[{spec.index}]"
    if not (spec.jump_rate > 0.0) or not math.isfinite(spec.jump_rate):
        out.append(Violation("NonpositiveRate", where, f"jump rate must be positive, got {spec.jump_rate}"))
    pmf = spec.jump_pmf
    if abs(pmf.total_mass() - 1.0) > 1e-12:
        out.append(Violation("NonstochasticPMF", where, f"jump PMF mass {pmf.total_mass()!r} != 1"))
    if np.any(pmf.probs < 0):
        out.append(Violation("NonstochasticPMF", where, "negative jump probability"))
    i = spec.index
    if np.any(pmf.atoms[:, i] < -1):
        out.append(
            Violation("DiagonalNotSkipFree", where, "diagonal jumps must stay in {-1, 1, 2, ...}")
        )
    off = np.delete(pmf.atoms, i, axis=1)
    if off.size and np.any(off < 0):
        out.append(Violation("NegativeOffDiagonalJump", where, "off-diagonal components must be nondecreasing"))
    if np.any(np.all(pmf.atoms == 0, axis=1) & (pmf.probs > 0)):
        out.append(Violation("ZeroJumpVector", where, "the zero vector is not a jump"))
    return out


def validate_walk(spec: RandomWalkSpec) -> RandomWalkSpec:
    violations = walk_violations(spec)
    if violations:
        raise SpecValidationError(violations)
    return spec


def walk_spec_from_model(model, i: int) -> RandomWalkSpec:
    """Driver walk of type i: rate lam[i], jumps = offspring shifted by -e_i."""
    pmf = model.offspring[i]
    atoms = pmf.atoms.copy()
    atoms[:, i] -= 1
    return validate_walk(RandomWalkSpec(i, float(model.lam[i]), FinitePMF(atoms, pmf.probs)))


@dataclass(frozen=True)
class LevyDriverSpec:
    """Limit driver X^i: drift vector, Brownian part on coordinate ``index``
    only, and nonnegative jump components (optionally compensated)."""

    index: int
    drift: np.ndarray
    brownian_variance: float = 0.0
    jumps: JumpMeasureSpec = JumpMeasureSpec()

    def __init__(self, index, drift, brownian_variance=0.0, jumps=None):
        object.__setattr__(self, "index", int(index))
        object.__setattr__(self, "drift", _frozen(np.atleast_1d(drift)))
        object.__setattr__(self, "brownian_variance", float(brownian_variance))
        object.__setattr__(self, "jumps", jumps if jumps is not None else JumpMeasureSpec())

    @property
    def d(self) -> int:
        return self.drift.shape[0]

    def effective_drift(self) -> np.ndarray:
        """Drift after compensator subtraction; must be >= 0 off-diagonal."""
        out = self.drift.astype(float).copy()
        for comp in self.jumps.components:
            if comp.compensated:
                out -= comp.mass * comp.dist.mean()
        if self.jumps.small_jump_truncation is not None:
            out -= self.jumps.small_jump_truncation.compensator_drift
        return out


def levy_violations(spec: LevyDriverSpec) -> list[Violation]:
    from .model import _jump_measure_violations

    out: list[Violation] = []
    where = f"levy[{spec.index}]"
    d = spec.d
    if not 0 <= spec.index < d:
        out.append(Violation("ShapeMismatch", where, f"index {spec.index} outside 0..{d - 1}"))
        return out
    if spec.brownian_variance < 0.0:
        out.append(Violation("NegativeSigma", where, "Brownian variance must be >= 0"))
    out.extend(_jump_measure_violations(spec.jumps, where, d))
    if not out:
        eff = spec.effective_drift()
        for j in range(d):
            if j != spec.index and eff[j] < 0.0:
                out.append(
                    Violation(
                        "SubordinatorViolation",
                        f"{where}.drift[{j}]",
                        f"effective off-diagonal drift {eff[j]} < 0 would make coordinate {j} decrease",
                    )
                )
    return out


def validate_levy(spec: LevyDriverSpec) -> LevyDriverSpec:
    violations = levy_violations(spec)
    if violations:
        raise SpecValidationError(violations)
    return spec


def brownian_driver(index: int, d: int, variance: float = 1.0, drift=None) -> LevyDriverSpec:
    """Pure diffusion driver (standard Brownian motion when variance = 1)."""
    drift = np.zeros(d) if drift is None else drift
    return validate_levy(LevyDriverSpec(index, drift, brownian_variance=variance))


def drift_driver(index: int, drift) -> LevyDriverSpec:
    return validate_levy(LevyDriverSpec(index, drift))


# ---------------------------------------------------------------------------
# Increment stream
# ---------------------------------------------------------------------------


class IncrementStream:
    """Seeded source of driver increments with per-driver clock cursors.

    One stream is single-owner; Monte Carlo ensembles derive one stream per
    path from ``(master_seed, path_index)``.  Each driver key gets its own
    counter-based substream, so queries to one family never perturb another.
    """

    def __init__(self, master_seed: int, path_index: int = 0, resolution: float | None = None):
        self.master_seed = int(master_seed)
        self.path_index = int(path_index)
        self.resolution = resolution
        self._generators: dict[tuple, np.random.Generator] = {}
        self._cursors: dict[tuple, float] = {}

    def generator(self, kind: int, i: int, j: int = 0) -> np.random.Generator:
        key = (kind, i, j)
        gen = self._generators.get(key)
        if gen is None:
            gen = driver_rng(self.master_seed, self.path_index, kind, i, j)
            self._generators[key] = gen
        return gen

    def cursor(self, kind: int, i: int, j: int = 0) -> float:
        return self._cursors.get((kind, i, j), 0.0)

    def _advance(self, kind: int, i: int, j: int, delta: float) -> None:
        if delta < 0:
            raise ValueError("driver clocks only move forward")
        key = (kind, i, j)
        self._cursors[key] = self._cursors.get(key, 0.0) + delta


def sample_poisson_count(rate: float, window: float, stream: IncrementStream, driver=(0, 0)) -> int:
    """Poisson(rate * window) count from the (i, j) Poisson clock."""
    if rate < 0 or window < 0:
        raise ValueError("rate and window must be nonnegative")
    i, j = driver
    stream._advance(KIND_POISSON, i, j, window)
    mean = rate * window
    if mean == 0.0:
        return 0
    if not math.isfinite(mean):
        raise ValueError("rate * window must be finite")
    return int(stream.generator(KIND_POISSON, i, j).poisson(mean))


def sample_walk_increment(spec: RandomWalkSpec, clock_advance: float, stream: IncrementStream) -> np.ndarray:
    """Sum of Poisson(rate * advance)-many i.i.d. PMF jumps."""
    if clock_advance < 0:
        raise ValueError("clock_advance must be >= 0")
    d = spec.d()
    stream._advance(KIND_WALK, spec.index, 0, clock_advance)
    if clock_advance == 0.0:
        return np.zeros(d, dtype=np.int64)
    gen = stream.generator(KIND_WALK, spec.index, 0)
    k = int(gen.poisson(spec.jump_rate * clock_advance))
    if k == 0:
        return np.zeros(d, dtype=np.int64)
    return spec.jump_pmf.sample(gen, k).sum(axis=0)


def sample_levy_increment(spec: LevyDriverSpec, clock_advance: float, stream: IncrementStream) -> np.ndarray:
    """Drift + Brownian part on the own coordinate + compound-Poisson jumps,
    minus compensator drift for compensated/truncated parts."""
    if clock_advance < 0:
        raise ValueError("clock_advance must be >= 0")
    d = spec.d
    out = np.zeros(d)
    if clock_advance == 0.0:
        stream._advance(KIND_LEVY, spec.index, 0, 0.0)
        return out
    stream._advance(KIND_LEVY, spec.index, 0, clock_advance)
    gen = stream.generator(KIND_LEVY, spec.index, 0)
    out += spec.drift * clock_advance
    if spec.brownian_variance > 0.0:
        out[spec.index] += math.sqrt(spec.brownian_variance * clock_advance) * gen.standard_normal()
    for comp in spec.jumps.components:
        k = int(gen.poisson(comp.mass * clock_advance))
        if k:
            out += comp.dist.sample(gen, k).sum(axis=0)
        if comp.compensated:
            out -= comp.mass * comp.dist.mean() * clock_advance
    trunc = spec.jumps.small_jump_truncation
    if trunc is not None:
        out -= trunc.compensator_drift * clock_advance
    return out


# ---------------------------------------------------------------------------
# Materialized jump paths (consumed by the discrete time-change solver)
# ---------------------------------------------------------------------------


class WalkPath:
    """One realization of a walk's jump sequence, extended lazily.

    ``jump_time(k)`` / ``jump_vector(k)`` expose the k-th jump (0-based) in
    the walk's own clock; several consumers may hold independent cursors into
    the same path, which is what shared-noise coupling experiments rely on.
    Blocks grow geometrically so short paths stay cheap.
    """

    def __init__(self, spec: RandomWalkSpec, rng: np.random.Generator):
        self.spec = spec
        self._rng = rng
        self._scale = 1.0 / spec.jump_rate
        self._cum = np.cumsum(spec.jump_pmf.probs)
        self._times: list[float] = []
        self._atom_idx: list[int] = []
        self._clock_end = 0.0
        self._block = 8

    def _extend(self) -> None:
        n = self._block
        self._block = min(2 * n, _BLOCK)
        gaps = self._rng.exponential(self._scale, size=n)
        new_times = self._clock_end + np.cumsum(gaps)
        idx = np.searchsorted(self._cum, self._rng.random(n) * self._cum[-1])
        self._times.extend(new_times.tolist())
        self._atom_idx.extend(idx.tolist())
        self._clock_end = self._times[-1]

    def jump_time(self, k: int) -> float:
        while k >= len(self._times):
            self._extend()
        return self._times[k]

    def jump_vector(self, k: int) -> np.ndarray:
        while k >= len(self._atom_idx):
            self._extend()
        return self.spec.jump_pmf.atoms[self._atom_idx[k]]


class PoissonPath:
    """Unit-rate Poisson jump times, extended lazily."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._times: list[float] = []
        self._clock_end = 0.0
        self._block = 8

    def jump_time(self, k: int) -> float:
        while k >= len(self._times):
            n = self._block
            self._block = min(2 * n, _BLOCK)
            gaps = self._rng.exponential(1.0, size=n)
            new_times = self._clock_end + np.cumsum(gaps)
            self._times.extend(new_times.tolist())
            self._clock_end = self._times[-1]
        return self._times[k]


class ScriptedWalkPath:
    """Deterministic walk path for tests: explicit jump times and vectors."""

    def __init__(self, times, vectors):
        self._times = np.asarray(times, dtype=float)
        self._vectors = np.atleast_2d(np.asarray(vectors, dtype=np.int64))
        if np.any(np.diff(self._times) <= 0):
            raise ValueError("scripted jump times must be strictly increasing")

    def jump_time(self, k: int) -> float:
        if k >= self._times.shape[0]:
            return math.inf
        return float(self._times[k])

    def jump_vector(self, k: int) -> np.ndarray:
        return self._vectors[k]


class ScriptedPoissonPath:
    def __init__(self, times):
        self._times = np.asarray(times, dtype=float)

    def jump_time(self, k: int) -> float:
        if k >= self._times.shape[0]:
            return math.inf
        return float(self._times[k])
