"""Parameter containers and validation for the discrete and continuous models.

The discrete model is a d-type population where a type-i individual dies at
rate ``lam[i]`` leaving offspring drawn from a finite PMF ``offspring[i]``,
and pairwise interactions fire at rate ``|C[i, j]| * u_i * u_j`` adding
(cooperation, ``C[i, j] > 0``) or removing (competition, ``C[i, j] < 0``) one
type-j individual.  The continuous model is the nonnegative jump diffusion
whose coordinate j has drift ``sum_i C[i, j] y_i y_j + sum_i B[i, j] y_i``,
diffusion ``sqrt(2 sigma[j] y_j)``, and type-i jumps at intensity
``y_i * m_i(dr)``.

Matrix convention throughout: index ``[i, j]`` is the action of type i on
coordinate j, so mean flows read as row vectors, ``E[Z_t] = z @ expm(t A)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

PMF_TOL = 1e-12


class SpecValidationError(ValueError):
    """Raised when a model spec violates an invariant.

    Carries the full list of violations so callers (e.g. the CLI) can report
    every problem at once.
    """

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


@dataclass(frozen=True)
class Violation:
    code: str
    where: str
    detail: str

    def __str__(self) -> str:
        return f"{self.code} at {self.where}: {self.detail}"


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FinitePMF:
    """Finite-support distribution over integer d-vectors.

    ``atoms`` has shape (k, d); ``probs`` has shape (k,) and sums to one
    within PMF_TOL.  Infinite-support laws must be pre-truncated by the
    caller (report the discarded tail mass yourself).
    """

    atoms: np.ndarray
    probs: np.ndarray

    def __init__(self, atoms, probs):
        object.__setattr__(self, "atoms", _frozen(np.atleast_2d(atoms), dtype=np.int64))
        object.__setattr__(self, "probs", _frozen(probs))
        if self.atoms.shape[0] != self.probs.shape[0]:
            raise ValueError("atoms and probs length mismatch")

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def total_mass(self) -> float:
        return float(self.probs.sum())

    def mass_at(self, v) -> float:
        hit = np.all(self.atoms == np.asarray(v, dtype=np.int64), axis=1)
        return float(self.probs[hit].sum())

    def mean(self) -> np.ndarray:
        return self.probs @ self.atoms

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(self.atoms.shape[0], size=size, p=self.probs / self.total_mass())
        return self.atoms[idx]


# ---------------------------------------------------------------------------
# Jump measures for the continuous model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiracJump:
    """Point mass at a fixed nonnegative, nonzero d-vector."""

    r0: np.ndarray

    def __init__(self, r0):
        object.__setattr__(self, "r0", _frozen(np.atleast_1d(r0)))

    @property
    def dim(self) -> int:
        return self.r0.shape[0]

    def mean(self) -> np.ndarray:
        return self.r0.copy()

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.broadcast_to(self.r0, (size, self.dim)).copy()

    def expect(self, g: Callable[[np.ndarray], float]) -> float:
        return float(g(self.r0))

    def is_valid(self) -> bool:
        return bool(np.all(self.r0 >= 0.0) and np.any(self.r0 > 0.0))


@dataclass(frozen=True)
class GammaJump:
    """Jumps ``s * direction`` with s ~ Gamma(shape, scale).

    ``direction`` is a nonnegative, nonzero d-vector; ``expect`` integrates
    against the gamma density by adaptive quadrature.
    """

    direction: np.ndarray
    shape: float = 1.0
    scale: float = 1.0

    def __init__(self, direction, shape=1.0, scale=1.0):
        object.__setattr__(self, "direction", _frozen(np.atleast_1d(direction)))
        object.__setattr__(self, "shape", float(shape))
        object.__setattr__(self, "scale", float(scale))

    @property
    def dim(self) -> int:
        return self.direction.shape[0]

    def mean(self) -> np.ndarray:
        return self.shape * self.scale * self.direction

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        s = rng.gamma(self.shape, self.scale, size=size)
        return s[:, None] * self.direction[None, :]

    def expect(self, g: Callable[[np.ndarray], float]) -> float:
        from scipy.stats import gamma as gamma_dist

        dist = gamma_dist(a=self.shape, scale=self.scale)
        val, _ = integrate.quad(
            lambda s: g(s * self.direction) * dist.pdf(s), 0.0, np.inf, limit=200
        )
        return float(val)

    def is_valid(self) -> bool:
        return bool(
            np.all(self.direction >= 0.0)
            and np.any(self.direction > 0.0)
            and self.shape > 0.0
            and self.scale > 0.0
        )


@dataclass(frozen=True)
class JumpComponent:
    """One finite-activity piece of a jump measure: total mass times a
    normalized jump distribution.  ``compensated`` selects whether the SDE
    subtracts the first-moment drift (the paper's convention) for this piece.
    """

    mass: float
    dist: DiracJump | GammaJump
    compensated: bool = True


@dataclass(frozen=True)
class SmallJumpTruncation:
    """Stand-in for a truncated infinite-activity small-jump part: jumps below
    r_min are dropped and replaced by their (user-supplied) compensator drift.
    The truncation error is the caller's responsibility.
    """

    r_min: float
    compensator_drift: np.ndarray

    def __init__(self, r_min, compensator_drift):
        object.__setattr__(self, "r_min", float(r_min))
        object.__setattr__(self, "compensator_drift", _frozen(np.atleast_1d(compensator_drift)))


@dataclass(frozen=True)
class JumpMeasureSpec:
    components: tuple[JumpComponent, ...] = ()
    small_jump_truncation: SmallJumpTruncation | None = None

    def __init__(self, components=(), small_jump_truncation=None):
        object.__setattr__(self, "components", tuple(components))
        object.__setattr__(self, "small_jump_truncation", small_jump_truncation)

    @property
    def is_trivial(self) -> bool:
        return not self.components and self.small_jump_truncation is None

    def total_mean(self) -> np.ndarray:
        """First moment vector of the full (finite-activity) measure."""
        if not self.components:
            raise ValueError("empty jump measure has no dimension")
        out = np.zeros(self.components[0].dist.dim)
        for comp in self.components:
            out += comp.mass * comp.dist.mean()
        return out


def empty_jump_measures(d: int) -> tuple[JumpMeasureSpec, ...]:
    return tuple(JumpMeasureSpec() for _ in range(d))


# ---------------------------------------------------------------------------
# Model specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteModelSpec:
    """Discrete-state interacting multitype branching process parameters.

    All containers are immutable after construction; validated specs are safe
    to share across concurrent workers.
    """

    d: int
    lam: np.ndarray
    offspring: tuple[FinitePMF, ...]
    interaction: np.ndarray

    def __init__(self, d, lam, offspring, interaction=None):
        object.__setattr__(self, "d", int(d))
        object.__setattr__(self, "lam", _frozen(np.atleast_1d(lam)))
        object.__setattr__(self, "offspring", tuple(offspring))
        if interaction is None:
            interaction = np.zeros((self.d, self.d))
        object.__setattr__(self, "interaction", _frozen(np.atleast_2d(interaction)))


@dataclass(frozen=True)
class ContinuousModelSpec:
    """Continuous-state model parameters: linear drift B, interaction C,
    diffusion coefficients sigma, and one jump measure per type."""

    d: int
    B: np.ndarray
    C: np.ndarray
    sigma: np.ndarray
    jump_measures: tuple[JumpMeasureSpec, ...]

    def __init__(self, d, B=None, C=None, sigma=None, jump_measures=None):
        object.__setattr__(self, "d", int(d))
        object.__setattr__(self, "B", _frozen(np.zeros((d, d)) if B is None else np.atleast_2d(B)))
        object.__setattr__(self, "C", _frozen(np.zeros((d, d)) if C is None else np.atleast_2d(C)))
        object.__setattr__(self, "sigma", _frozen(np.zeros(d) if sigma is None else np.atleast_1d(sigma)))
        object.__setattr__(
            self,
            "jump_measures",
            empty_jump_measures(d) if jump_measures is None else tuple(jump_measures),
        )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def discrete_violations(spec: DiscreteModelSpec) -> list[Violation]:
    out: list[Violation] = []
    if spec.d < 1:
        out.append(Violation("NonpositiveRate", "d", f"d must be >= 1, got {spec.d}"))
        return out
    if spec.lam.shape != (spec.d,):
        out.append(Violation("ShapeMismatch", "lambda", f"expected ({spec.d},), got {spec.lam.shape}"))
        return out
    if len(spec.offspring) != spec.d:
        out.append(Violation("ShapeMismatch", "offspring", f"expected {spec.d} PMFs, got {len(spec.offspring)}"))
        return out
    if spec.interaction.shape != (spec.d, spec.d):
        out.append(Violation("ShapeMismatch", "interaction", f"expected ({spec.d},{spec.d}), got {spec.interaction.shape}"))
        return out

    for i, rate in enumerate(spec.lam):
        if not (rate > 0.0) or not math.isfinite(rate):
            out.append(Violation("NonpositiveRate", f"lambda[{i}]", f"death rate must be positive, got {rate}"))

    ei = np.eye(spec.d, dtype=np.int64)
    for i, pmf in enumerate(spec.offspring):
        if pmf.dim != spec.d:
            out.append(Violation("ShapeMismatch", f"offspring[{i}]", f"atoms have dim {pmf.dim}, model has d={spec.d}"))
            continue
        if np.any(pmf.atoms < 0):
            out.append(Violation("NonstochasticPMF", f"offspring[{i}]", "offspring counts must be nonnegative"))
        if np.any(pmf.probs < 0):
            out.append(Violation("NonstochasticPMF", f"offspring[{i}]", "negative probability"))
        if abs(pmf.total_mass() - 1.0) > PMF_TOL:
            out.append(
                Violation("NonstochasticPMF", f"offspring[{i}]", f"total mass {pmf.total_mass()!r} != 1 within {PMF_TOL}")
            )
        if pmf.mass_at(ei[i]) != 0.0:
            out.append(
                Violation("SelfOffspringLoop", f"offspring[{i}]", "mu_i(e_i) must be 0 (a no-op reproduction event)")
            )
    return out


def validate_discrete(spec: DiscreteModelSpec) -> DiscreteModelSpec:
    """Return ``spec`` unchanged iff every invariant holds; idempotent."""
    violations = discrete_violations(spec)
    if violations:
        raise SpecValidationError(violations)
    return spec


def _jump_measure_violations(m: JumpMeasureSpec, where: str, d: int) -> list[Violation]:
    out: list[Violation] = []
    for k, comp in enumerate(m.components):
        loc = f"{where}.components[{k}]"
        if not (comp.mass > 0.0) or not math.isfinite(comp.mass):
            out.append(Violation("JumpMeasureIntegrability", loc, f"component mass must be positive and finite, got {comp.mass}"))
        if comp.dist.dim != d:
            out.append(Violation("ShapeMismatch", loc, f"jump dim {comp.dist.dim}, model d={d}"))
            continue
        if not comp.dist.is_valid():
            out.append(
                Violation("JumpMeasureIntegrability", loc, "jump distribution must put no mass at the origin and be nonnegative")
            )
            continue
        if not np.all(np.isfinite(comp.dist.mean())):
            out.append(Violation("JumpMeasureIntegrability", loc, "jump first moment must be finite"))
    trunc = m.small_jump_truncation
    if trunc is not None:
        loc = f"{where}.small_jump_truncation"
        if not (trunc.r_min > 0.0):
            out.append(Violation("JumpMeasureIntegrability", loc, f"r_min must be positive, got {trunc.r_min}"))
        if trunc.compensator_drift.shape != (d,):
            out.append(Violation("ShapeMismatch", loc, f"compensator_drift must have shape ({d},)"))
    return out


def continuous_violations(spec: ContinuousModelSpec) -> list[Violation]:
    out: list[Violation] = []
    d = spec.d
    if d < 1:
        out.append(Violation("ShapeMismatch", "d", f"d must be >= 1, got {d}"))
        return out
    for name, arr, shape in (("B", spec.B, (d, d)), ("C", spec.C, (d, d)), ("sigma", spec.sigma, (d,))):
        if arr.shape != shape:
            out.append(Violation("ShapeMismatch", name, f"expected {shape}, got {arr.shape}"))
            return out

    offdiag = spec.B - np.diag(np.diag(spec.B))
    if np.any(offdiag < 0.0):
        i, j = np.argwhere(offdiag < 0.0)[0]
        out.append(
            Violation("NegativeOffDiagonalB", f"B[{i},{j}]", f"off-diagonal entries must be >= 0, got {spec.B[i, j]}")
        )
    for j, s in enumerate(spec.sigma):
        if s < 0.0 or not math.isfinite(s):
            out.append(Violation("NegativeSigma", f"sigma[{j}]", f"diffusion coefficient must be >= 0, got {s}"))
    if len(spec.jump_measures) != d:
        out.append(Violation("ShapeMismatch", "jump_measures", f"expected {d} measures, got {len(spec.jump_measures)}"))
    else:
        for i, m in enumerate(spec.jump_measures):
            out.extend(_jump_measure_violations(m, f"jump_measures[{i}]", d))
    return out


def validate_continuous(spec: ContinuousModelSpec) -> ContinuousModelSpec:
    """Return ``spec`` unchanged iff every invariant holds; idempotent."""
    violations = continuous_violations(spec)
    if violations:
        raise SpecValidationError(violations)
    return spec


# ---------------------------------------------------------------------------
# State vectors and first moments
# ---------------------------------------------------------------------------


def as_discrete_state(z, d: int) -> np.ndarray:
    out = np.asarray(z, dtype=np.int64).reshape(d)
    if np.any(out < 0):
        raise ValueError(f"discrete state must be componentwise nonnegative, got {out}")
    return out


def as_continuous_state(y, d: int) -> np.ndarray:
    out = np.asarray(y, dtype=float).reshape(d).copy()
    if np.any(out < 0.0) or not np.all(np.isfinite(out)):
        raise ValueError(f"continuous state must be finite and nonnegative, got {out}")
    return out


def derive_mean_matrix(spec: DiscreteModelSpec) -> np.ndarray:
    """First-moment generator of the interaction-free model.

    ``A[i, j] = lam[i] * (E[offspring_i][j] - delta_ij)``; with C = 0 the mean
    flow is ``E[Z_t] = z @ expm(t A)``.  Off-diagonal entries are nonnegative
    for any valid spec since offspring counts are nonnegative.
    """
    A = np.empty((spec.d, spec.d))
    for i, pmf in enumerate(spec.offspring):
        mean = pmf.mean()
        for j in range(spec.d):
            A[i, j] = spec.lam[i] * (mean[j] - (1.0 if i == j else 0.0))
    return A


def mean_flow(spec: DiscreteModelSpec, z, t: float) -> np.ndarray:
    """Interaction-free mean ``E[Z_t]`` from start z (row-vector flow)."""
    from scipy.linalg import expm

    A = derive_mean_matrix(spec)
    return np.asarray(z, dtype=float) @ expm(t * A)
