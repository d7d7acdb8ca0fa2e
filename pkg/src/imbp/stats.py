"""Oracles and estimators: uniformization of the truncated generator,
two-sample tests, Wasserstein-1, and ensemble summaries.

The uniformization oracle restricts the exact jump rates to the lattice box
``{0..cap}^d``; transitions leaving the box are routed to a tracked absorbing
leak state, so the returned vector is an exact sub-distribution and the leak
mass upper-bounds the truncation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy import stats as sps

from .model import DiscreteModelSpec, as_discrete_state, validate_discrete

POISSON_TAIL = 1e-12


class BoxTooSmallError(RuntimeError):
    def __init__(self, leak: float, threshold: float):
        self.leak = leak
        self.threshold = threshold
        super().__init__(f"leak mass {leak:.3e} exceeds threshold {threshold:.3e}; enlarge the box cap")


@dataclass(frozen=True)
class TransientDistribution:
    """Sub-distribution over the box plus the leaked mass."""

    cap: int
    d: int
    probs: np.ndarray  # shape (cap+1,)*d
    leak_mass: float
    t: float

    def prob(self, state) -> float:
        return float(self.probs[tuple(int(v) for v in state)])

    def flat(self) -> np.ndarray:
        return self.probs.reshape(-1)

    def support_states(self) -> np.ndarray:
        grid = np.indices((self.cap + 1,) * self.d).reshape(self.d, -1).T
        return grid


def _box_generator(spec: DiscreteModelSpec, cap: int):
    """Sparse uniformizable generator on the box plus one leak state."""
    d = spec.d
    n_box = (cap + 1) ** d
    shape = (cap + 1,) * d
    states = np.indices(shape).reshape(d, -1).T  # (n_box, d)

    rows, cols, vals = [], [], []
    leak_rate = np.zeros(n_box)
    out_rate = np.zeros(n_box)

    strides = np.array([(cap + 1) ** (d - 1 - k) for k in range(d)], dtype=np.int64)

    def index_of(u_arr):
        return int(u_arr @ strides)

    for s_idx in range(n_box):
        u = states[s_idx]
        for i in range(d):
            if u[i] == 0:
                continue
            base = spec.lam[i] * u[i]
            pmf = spec.offspring[i]
            for atom, p in zip(pmf.atoms, pmf.probs):
                if p == 0.0:
                    continue
                rate = base * p
                target = u.copy()
                target[i] -= 1
                target += atom
                out_rate[s_idx] += rate
                if np.all(target <= cap):
                    rows.append(s_idx)
                    cols.append(index_of(target))
                    vals.append(rate)
                else:
                    leak_rate[s_idx] += rate
        for i in range(d):
            for j in range(d):
                c = spec.interaction[i, j]
                if c == 0.0 or u[i] == 0 or u[j] == 0:
                    continue
                rate = abs(c) * u[i] * u[j]
                target = u.copy()
                target[j] += 1 if c > 0 else -1
                out_rate[s_idx] += rate
                if np.all(target <= cap):
                    rows.append(s_idx)
                    cols.append(index_of(target))
                    vals.append(rate)
                else:
                    leak_rate[s_idx] += rate

    jump = sparse.csr_matrix((vals, (rows, cols)), shape=(n_box, n_box))
    return jump, out_rate, leak_rate


def transient_distribution(
    spec: DiscreteModelSpec,
    z,
    t: float,
    cap: int,
    leak_threshold: float = 1e-3,
    tail: float = POISSON_TAIL,
) -> TransientDistribution:
    """Exact P(Z_t = .) on the box by uniformization.

    The Poisson series over the uniformized chain is truncated once the
    accumulated weight reaches ``1 - tail``; the result is accurate to
    absolute tolerance well below 1e-10 for the default tail.
    """
    validate_discrete(spec)
    z0 = as_discrete_state(z, spec.d)
    if np.any(z0 > cap):
        raise ValueError(f"start state {z0} outside box cap {cap}")
    if t < 0:
        raise ValueError("t must be >= 0")

    jump, out_rate, leak_rate = _box_generator(spec, cap)
    n_box = jump.shape[0]
    lam_unif = float(out_rate.max())

    strides = np.array([(cap + 1) ** (spec.d - 1 - k) for k in range(spec.d)], dtype=np.int64)
    v = np.zeros(n_box)
    v[int(z0 @ strides)] = 1.0
    leak = 0.0

    if lam_unif == 0.0 or t == 0.0:
        probs = v.reshape((cap + 1,) * spec.d)
        return TransientDistribution(cap, spec.d, probs, 0.0, t)

    # uniformized step: stay with prob 1 - out/lam, move along jump/lam,
    # or leak with prob leak_rate/lam (absorbing)
    stay = 1.0 - out_rate / lam_unif
    p_leak = leak_rate / lam_unif

    mu = lam_unif * t
    log_w = -mu  # log Poisson weight at k=0
    w = math.exp(log_w)
    acc = w * v
    leak_acc = 0.0
    cum_w = w
    v_k = v
    leak_k = 0.0
    k = 0
    max_iter = int(mu + 12.0 * math.sqrt(mu) + 50)
    while cum_w < 1.0 - tail and k < max_iter + 200:
        k += 1
        leak_k = leak_k + float(v_k @ p_leak)
        v_k = v_k * stay + jump.T.dot(v_k) / lam_unif
        log_w += math.log(mu) - math.log(k)
        w = math.exp(log_w)
        acc = acc + w * v_k
        leak_acc += w * leak_k
        cum_w += w
    # distribute the cut Poisson tail as additional (unknown-location) mass:
    # it is below `tail` and ignored per the stated tolerance
    leak = leak_acc + (1.0 - cum_w)

    if leak > leak_threshold:
        raise BoxTooSmallError(leak, leak_threshold)
    probs = acc.reshape((cap + 1,) * spec.d)
    return TransientDistribution(cap, spec.d, probs, float(leak), t)


# ---------------------------------------------------------------------------
# Distances and tests
# ---------------------------------------------------------------------------


def ks_two_sample(a, b) -> tuple[float, float]:
    """Classical two-sample KS statistic with asymptotic p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    res = sps.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


def wasserstein1(a, b) -> float:
    """Mean absolute difference of sorted samples.

    Unequal sizes are handled by deterministic quantile thinning of the
    larger sample (evenly spaced order statistics), keeping the result
    reproducible without an RNG.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    if a.size != b.size:
        if a.size > b.size:
            a = a[np.linspace(0, a.size - 1, b.size).round().astype(int)]
        else:
            b = b[np.linspace(0, b.size - 1, a.size).round().astype(int)]
    return float(np.mean(np.abs(a - b)))


def tv_distance(empirical_counts: dict, exact: dict) -> float:
    """0.5 * sum |p_hat - q| over the union support; inputs are mappings from
    state (hashable) to count / probability."""
    total = sum(empirical_counts.values())
    if total <= 0:
        raise ValueError("empirical counts must be nonempty")
    keys = set(empirical_counts) | set(exact)
    return 0.5 * sum(abs(empirical_counts.get(k, 0) / total - exact.get(k, 0.0)) for k in keys)


def empirical_tv(a_states: np.ndarray, b_states: np.ndarray) -> float:
    """TV between two empirical lattice distributions given as (n, d) arrays."""
    ka = {}
    for row in map(tuple, a_states.tolist()):
        ka[row] = ka.get(row, 0) + 1
    kb = {}
    for row in map(tuple, b_states.tolist()):
        kb[row] = kb.get(row, 0) + 1
    na, nb = a_states.shape[0], b_states.shape[0]
    keys = set(ka) | set(kb)
    return 0.5 * sum(abs(ka.get(k, 0) / na - kb.get(k, 0) / nb) for k in keys)


def joint_occupancy_tests(a_states: np.ndarray, b_states: np.ndarray) -> tuple[float, float, int, float]:
    """Chi-square homogeneity test on pooled joint cells plus the joint TV."""
    ka = {}
    for row in map(tuple, a_states.tolist()):
        ka[row] = ka.get(row, 0) + 1
    kb = {}
    for row in map(tuple, b_states.tolist()):
        kb[row] = kb.get(row, 0) + 1
    keys = sorted(set(ka) | set(kb))
    na, nb = a_states.shape[0], b_states.shape[0]
    tv = 0.5 * sum(abs(ka.get(k, 0) / na - kb.get(k, 0) / nb) for k in keys)

    # pool cells until each pooled expected count is >= 5 in both rows
    counts_a = np.array([ka.get(k, 0) for k in keys], dtype=float)
    counts_b = np.array([kb.get(k, 0) for k in keys], dtype=float)
    order = np.argsort(-(counts_a + counts_b))
    pooled_a, pooled_b = [], []
    acc_a = acc_b = 0.0
    min_expected = 5.0
    frac_a = na / (na + nb)
    for idx in order:
        acc_a += counts_a[idx]
        acc_b += counts_b[idx]
        tot = acc_a + acc_b
        if tot * frac_a >= min_expected and tot * (1 - frac_a) >= min_expected:
            pooled_a.append(acc_a)
            pooled_b.append(acc_b)
            acc_a = acc_b = 0.0
    if acc_a + acc_b > 0:
        if pooled_a:
            pooled_a[-1] += acc_a
            pooled_b[-1] += acc_b
        else:
            pooled_a, pooled_b = [acc_a], [acc_b]
    table = np.array([pooled_a, pooled_b])
    if table.shape[1] < 2:
        return 0.0, 1.0, 0, tv  # identical single-cell distributions
    chi2, p, dof, _ = sps.chi2_contingency(table)
    return float(chi2), float(p), int(dof), tv


@dataclass(frozen=True)
class SampleSummary:
    n: int
    mean: np.ndarray
    cov: np.ndarray
    sorted_samples: np.ndarray  # (n, d), each column sorted

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "SampleSummary":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] < 1:
            raise ValueError("need at least one sample")
        cov = np.cov(x.T) if x.shape[0] > 1 else np.zeros((x.shape[1], x.shape[1]))
        return cls(x.shape[0], x.mean(axis=0), np.atleast_2d(cov), np.sort(x, axis=0))

    def stderr(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov) / self.n)


def bootstrap_ci(values_a, values_b, n_boot: int, rng: np.random.Generator, alpha: float = 0.05):
    """Percentile bootstrap CI for wasserstein1(a, b)."""
    a = np.asarray(values_a, dtype=float)
    b = np.asarray(values_b, dtype=float)
    stats = np.empty(n_boot)
    for k in range(n_boot):
        ra = a[rng.integers(0, a.size, a.size)]
        rb = b[rng.integers(0, b.size, b.size)]
        stats[k] = wasserstein1(ra, rb)
    lo, hi = np.quantile(stats, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)
