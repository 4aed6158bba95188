"""Branching particle approximation of the measure-valued diffusion.

A cloud of N atoms, each of mass 1/n, performs independent diffusion steps
(kernel shared with :mod:`mvdsim.generator`) and branches at rate c*n (for
p = 2, finite-variance offspring) or n^(p-1) (for p in (1,2), heavy-tailed
offspring).  Spatial dependence of the mass-creation rate beta and the
nonlinearity coefficient alpha enters through the offspring law evaluated
at the parent position: the binary law uses mean 1 + gamma(y)/n and
centered second moment m(y) with gamma = beta/c, m = 2*alpha/c.

Pure Galton-Watson oracles for the critical binary skeleton (survival
recursion, conditioned population samples) live here too; they are the
independent reference the particle runs are checked against.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coefficients import as_coefficient, is_positive
from .generator import GeneratorSpec, diffusion_step


class ResolutionTooCoarseError(ValueError):
    """The offspring law is not a probability distribution at this n."""


def _coef_sup(coef):
    f = getattr(coef, "sup", None)
    if f is not None:
        return f()
    return float(np.max(coef(np.geomspace(1e-6, 1e6, 64))))


def _coef_inf(coef):
    f = getattr(coef, "inf", None)
    if f is not None:
        return f()
    return float(np.min(coef(np.geomspace(1e-6, 1e6, 64))))


OFFSPRING_MODES = (
    "binary-critical-exponential",
    "binary-critical-deterministic",
    "stable",
)


@dataclass(frozen=True)
class BranchingTriplet:
    """Branching data (beta, alpha, p) plus the offspring-model choice.

    beta is the mass-creation rate (must be bounded above), alpha > 0 the
    nonlinearity coefficient, p in (1, 2] the nonlinearity power.  c is the
    branching-rate constant for the p = 2 modes.
    """

    beta: object
    alpha: object
    p: float
    offspring_mode: str = "binary-critical-exponential"
    c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "beta", as_coefficient(self.beta))
        object.__setattr__(self, "alpha", as_coefficient(self.alpha))
        if not 1.0 < self.p <= 2.0:
            raise ValueError("p must lie in (1, 2]")
        if self.offspring_mode not in OFFSPRING_MODES:
            raise ValueError(f"unknown offspring mode {self.offspring_mode!r}")
        if self.offspring_mode.startswith("binary") and self.p != 2.0:
            raise ValueError("binary offspring modes require p = 2")
        if self.offspring_mode == "stable" and not self.p < 2.0:
            raise ValueError("the stable offspring mode requires p < 2")
        if self.c <= 0:
            raise ValueError("branching rate constant c must be positive")
        sup = getattr(self.beta, "sup", None)
        bsup = sup() if sup is not None else float(np.max(self.beta(np.geomspace(1e-6, 1e6, 64))))
        if not np.isfinite(bsup):
            raise ValueError("beta must be bounded from above")
        if not is_positive(self.alpha):
            raise ValueError("alpha must be positive")

    def stable_rate_factor(self, n: int) -> float:
        """Rate multiplier q >= 1 making the heavy-tailed law a probability
        vector: q >= sup(alpha)*p - inf(beta)*n^(1-p), with headroom."""
        sup_a = _coef_sup(self.alpha)
        if not np.isfinite(sup_a):
            raise ValueError("stable offspring mode needs bounded alpha")
        inf_b = min(_coef_inf(self.beta), 0.0)
        need = sup_a * self.p - inf_b * float(n) ** (1.0 - self.p)
        return max(1.0, 1.25 * need)

    def branch_rate(self, n: int) -> float:
        if self.p == 2.0:
            return self.c * n
        return self.stable_rate_factor(n) * float(n) ** (self.p - 1.0)


@dataclass(frozen=True)
class ParticleCloud:
    """Atomic measure (1/n) * sum of delta_{positions[i]} at a given time."""

    positions: np.ndarray        # (N, d)
    n: int
    time: float = 0.0
    generation: int = 0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "positions", pos)
        if self.n < 1:
            raise ValueError("resolution n must be >= 1")

    @property
    def atom_count(self) -> int:
        return self.positions.shape[0]

    @property
    def total_mass(self) -> float:
        return self.atom_count / self.n

    @property
    def mass(self) -> float:
        return 1.0 / self.n

    def support_radius(self) -> float:
        if self.atom_count == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.positions, axis=1)))


def point_cloud(n: int, x0, dimension: int, time: float = 0.0) -> ParticleCloud:
    """n atoms of mass 1/n at the point x0 (approximates a unit point mass)."""
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (dimension,))
    return ParticleCloud(np.tile(x0, (n, 1)), n=n, time=time)


# ---------------------------------------------------------------------------
# Galton-Watson oracles (critical binary offspring: 0 or 2 children, prob 1/2)
# ---------------------------------------------------------------------------

@dataclass
class GWOracle:
    survival: np.ndarray                       # s_k, k = 0..K
    conditioned_tail_samples: Optional[np.ndarray] = None

    def __post_init__(self):
        s = np.asarray(self.survival, dtype=float)
        if s[0] != 1.0:
            raise ValueError("s_0 must equal 1")
        if np.any(np.diff(s) > 1e-15) or np.any(s < 0) or np.any(s > 1):
            raise ValueError("survival sequence must be nonincreasing in [0, 1]")
        self.survival = s


def gw_survival_recursion(K: int) -> GWOracle:
    """Survival probabilities from the extinction iteration e <- 1/2 + e^2/2."""
    if K < 1:
        raise ValueError("K must be >= 1")
    s = np.empty(K + 1)
    s[0] = 1.0
    e = 0.0
    for k in range(1, K + 1):
        e = 0.5 + 0.5 * e * e
        s[k] = 1.0 - e
    return GWOracle(survival=s)


def gw_survival_mc(K: int, n_trees: int, seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo survival curve from n_trees simulated critical binary trees.

    Returns (s_hat, se) for k = 0..K.  Extinct trees are pruned from the
    working array each generation, so the cost is sum_k P(alive at k).
    """
    rng = np.random.default_rng(seed)
    z = np.ones(n_trees, dtype=np.int64)
    alive_counts = np.empty(K + 1, dtype=np.int64)
    alive_counts[0] = n_trees
    for k in range(1, K + 1):
        z = 2 * rng.binomial(z, 0.5)
        z = z[z > 0]
        alive_counts[k] = z.size
    s = alive_counts / n_trees
    se = np.sqrt(np.maximum(s * (1 - s), 0.0) / n_trees)
    return s, se


def conditioned_population_mc(generations: int, n_samples: int, seed=0,
                              batch: int = 2_000_000,
                              max_batches: int = 60) -> np.ndarray:
    """Samples of the generation-k population conditioned on survival.

    Simulates batches of critical binary trees for ``generations`` steps and
    collects the populations of surviving trees until ``n_samples`` are on
    hand.  Used for the conditional exponential-limit check.
    """
    rng = np.random.default_rng(seed)
    out = []
    have = 0
    for _ in range(max_batches):
        z = np.ones(batch, dtype=np.int64)
        for _ in range(generations):
            z = 2 * rng.binomial(z, 0.5)
            z = z[z > 0]
            if z.size == 0:
                break
        out.append(z.copy())
        have += z.size
        if have >= n_samples:
            break
    if have < n_samples:
        raise RuntimeError(f"collected only {have} conditioned samples")
    return np.concatenate(out)[:n_samples]


# ---------------------------------------------------------------------------
# Offspring laws
# ---------------------------------------------------------------------------

def binary_offspring_probs(gamma_over_n, m):
    """Binary-family probabilities with mean 1 + gamma/n and (k-1)^2-moment m.

    p0 = (m - gamma/n)/2, p2 = (m + gamma/n)/2, p1 = 1 - p0 - p2.
    """
    p0 = 0.5 * (m - gamma_over_n)
    p2 = 0.5 * (m + gamma_over_n)
    return p0, p2


class StableOffspringLaw:
    """Integer offspring law with generating function

        Phi(s) = s + (1/q) * [alpha*(1-s)^p - beta*n^(1-p)*(1-s)],

    attached to branch events at rate q * n^(p-1).  The event rate and the
    1/q inside cancel, so the branching mechanism seen by the scaling limit
    is exactly alpha*lam^p - beta*lam:

        q * n^p * (Phi(1 - lam/n) - (1 - lam/n)) = alpha*lam^p - beta*lam.

    Expanding (1-s)^p gives p_0 = (alpha - beta*n^(1-p))/q,
    p_1 = 1 - (alpha*p - beta*n^(1-p))/q and, for k >= 2,
    p_k = (alpha/q) * w_k with w_k = (-1)^k binom(p, k) > 0.  The rate
    multiplier q >= 1 exists precisely so that p_1 stays nonnegative when
    alpha*p > 1; validity of p_0 still requires n^(p-1) >= beta/alpha,
    which is the genuine resolution requirement.  Tail weights are
    truncated at ``k_max`` with the exactly-known remainder lumped into
    the cap; the normalized tail is shared by every (alpha, beta, n, q),
    only the entry probability (alpha/q)*(p-1) is local.  Moments of order
    below p are finite, the p-th moment is not.
    """

    def __init__(self, p: float, k_max: int = 1_000_000):
        if not 1.0 < p < 2.0:
            raise ValueError("stable offspring law requires p in (1, 2)")
        self.p = p
        self.k_max = int(k_max)
        ks = np.arange(2, self.k_max)            # w_{k+1} = w_k (k-p)/(k+1)
        w = np.empty(self.k_max - 1)             # w[k-2] holds w_k, k <= k_max
        w[0] = p * (p - 1.0) / 2.0
        w[1:] = w[0] * np.cumprod((ks - p) / (ks + 1.0))
        total = w.sum()
        w[-1] += max((p - 1.0) - total, 0.0)    # lump the truncated remainder
        self.tail_weights = w                    # index k-2 holds w_k
        self.tail_mass = p - 1.0
        self._tail_cdf = np.cumsum(w) / self.tail_mass

    def probabilities(self, alpha_y, beta_y, n: int, q: float = 1.0):
        """(p0, p1, tail) arrays for coefficients evaluated at positions y."""
        b = np.asarray(beta_y, dtype=float) * float(n) ** (1.0 - self.p)
        a = np.asarray(alpha_y, dtype=float)
        p0 = (a - b) / q
        p1 = 1.0 - (a * self.p - b) / q
        tail = a * self.tail_mass / q
        return p0, p1, tail

    def _validate(self, p0, p1, positions):
        bad = np.nonzero((p0 < -1e-12) | (p1 < -1e-12))[0]
        if bad.size:
            i = int(bad[0])
            where = positions[i] if positions is not None else "?"
            raise ResolutionTooCoarseError(
                f"offspring probabilities invalid at y={where} "
                f"(p0={p0.flat[i]:.4g}, p1={p1.flat[i]:.4g}); increase n")

    def sample(self, alpha_y, beta_y, n: int, rng, positions=None,
               q: float = 1.0) -> np.ndarray:
        p0, p1, _ = self.probabilities(alpha_y, beta_y, n, q)
        self._validate(np.atleast_1d(p0), np.atleast_1d(p1), positions)
        u = rng.random(np.shape(p0))
        counts = np.ones(np.shape(p0), dtype=np.int64)
        counts[u < p0] = 0
        tail_pick = u >= p0 + p1
        k = tail_pick.sum()
        if k:
            counts[tail_pick] = 2 + np.searchsorted(self._tail_cdf, rng.random(k))
        return counts

    def pmf(self, k, alpha: float, beta: float, n: int,
            q: float = 1.0) -> np.ndarray:
        p0, p1, _ = self.probabilities(alpha, beta, n, q)
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        out = np.zeros(k.shape)
        out[k == 0] = p0
        out[k == 1] = p1
        big = k >= 2
        idx = np.clip(k[big] - 2, 0, self.k_max - 2)
        vals = (alpha / q) * self.tail_weights[idx]
        vals[k[big] > self.k_max] = 0.0
        out[big] = vals
        return out

    def mean(self, beta: float, n: int, q: float = 1.0) -> float:
        return 1.0 + beta * float(n) ** (1.0 - self.p) / q

    def mechanism_transform(self, lam: float, alpha: float, beta: float,
                            n: int, q: float = 1.0) -> float:
        """q * n^p * (Phi(1 - lam/n) - (1 - lam/n)), from the stored pmf."""
        ks = np.arange(0, self.k_max + 1)
        pk = self.pmf(ks, alpha, beta, n, q)
        s = 1.0 - lam / n
        phi = float(np.sum(pk * np.exp(ks * np.log(s))))
        return q * float(n) ** self.p * (phi - s)


_STABLE_CACHE: dict = {}


def stable_law(p: float, k_max: int = 1_000_000) -> StableOffspringLaw:
    key = (p, k_max)
    if key not in _STABLE_CACHE:
        _STABLE_CACHE[key] = StableOffspringLaw(p, k_max)
    return _STABLE_CACHE[key]


def stable_offspring_sample(y, trip: BranchingTriplet, n: int, rng) -> int:
    """One offspring count for a branch event at position y (stable mode)."""
    r = float(np.linalg.norm(np.atleast_1d(y)))
    law = stable_law(trip.p)
    counts = law.sample(trip.alpha(r), trip.beta(r), n, rng,
                        positions=np.atleast_2d(y),
                        q=trip.stable_rate_factor(n))
    return int(counts.flat[0])


def _offspring_counts(trip: BranchingTriplet, radii, n: int, rng, positions):
    """Vectorized offspring counts for branch events at the given radii."""
    if trip.offspring_mode == "stable":
        law = stable_law(trip.p)
        return law.sample(trip.alpha(radii), trip.beta(radii), n, rng,
                          positions=positions, q=trip.stable_rate_factor(n))
    gamma_over_n = trip.beta(radii) / (trip.c * n)
    m = 2.0 * trip.alpha(radii) / trip.c
    p0, p2 = binary_offspring_probs(gamma_over_n, m)
    bad = np.nonzero((p0 < -1e-12) | (p2 < -1e-12) | (p0 + p2 > 1 + 1e-12))[0]
    if bad.size:
        i = int(bad[0])
        raise ResolutionTooCoarseError(
            f"binary offspring probabilities invalid at y={positions[i]} "
            f"(p0={p0[i]:.4g}, p2={p2[i]:.4g}); increase n or adjust c")
    u = rng.random(radii.shape)
    counts = np.ones(radii.shape, dtype=np.int64)
    counts[u < p0] = 0
    counts[(u >= p0) & (u < p0 + p2)] = 2
    return counts


def _apply_domain(positions, spec: GeneratorSpec):
    """Remove atoms absorbed at domain boundaries; return (kept mask)."""
    dom = spec.domain
    if dom.kind == "full":
        return np.ones(positions.shape[0], dtype=bool)
    radii = np.linalg.norm(positions, axis=1)
    keep = np.ones(positions.shape[0], dtype=bool)
    if dom.has_inner_boundary:
        keep &= radii > dom.inner
    if np.isfinite(dom.outer):
        keep &= radii < dom.outer
    return keep


def _branch_window(pos, rep, trip: BranchingTriplet, n: int, rate: float,
                   dt: float, rng, max_rounds: int = 500):
    """Exact exponential-clock branching over one window of length dt.

    Every atom carries its remaining window time; an atom whose next
    Exp(rate) waiting time fits in the remainder branches there, and its
    children inherit the leftover and may branch again.  Collapsing the
    window to at most one event per atom would bias the effective
    branching rate down by O(rate*dt), which is visible in extinction
    frequencies; the compounding loop removes that bias (positions stay
    frozen within the window, in line with the per-event parameter
    lookup).  ``rep`` may be None when no replica bookkeeping is needed.
    """
    dim = pos.shape[1]
    done_pos = []
    done_rep = []
    tau = np.full(pos.shape[0], dt)
    for _ in range(max_rounds):
        if pos.shape[0] == 0:
            break
        waits = rng.exponential(1.0 / rate, pos.shape[0])
        settle = waits >= tau
        if settle.any():
            done_pos.append(pos[settle])
            if rep is not None:
                done_rep.append(rep[settle])
        pos, tau = pos[~settle], tau[~settle] - waits[~settle]
        if rep is not None:
            rep = rep[~settle]
        if pos.shape[0] == 0:
            break
        radii = np.linalg.norm(pos, axis=1)
        counts = _offspring_counts(trip, radii, n, rng, pos)
        pos = np.repeat(pos, counts, axis=0)
        tau = np.repeat(tau, counts)
        if rep is not None:
            rep = np.repeat(rep, counts)
    else:
        raise RuntimeError("branching window failed to settle; "
                           "dt is far above 1/branch_rate")
    new_pos = np.concatenate(done_pos) if done_pos else np.empty((0, dim))
    if rep is None:
        return new_pos, None
    new_rep = np.concatenate(done_rep) if done_rep \
        else np.empty(0, dtype=np.int64)
    return new_pos, new_rep


def step_cloud(cloud: ParticleCloud, gen: GeneratorSpec, trip: BranchingTriplet,
               dt: float, rng) -> ParticleCloud:
    """Advance the cloud by one time step: diffusion move, then branching.

    In the exponential modes each atom branches with probability
    1 - exp(-rate*dt); the precondition dt <= 1/rate keeps the expected
    number of events per atom per step at most one.  In the deterministic
    mode every atom branches when the clock crosses a multiple of 1/n.
    """
    rate = trip.branch_rate(cloud.n)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt * rate > 1.0 + 1e-9:
        raise ValueError(f"dt={dt} exceeds 1/branch_rate={1.0/rate:.3g}")
    if cloud.atom_count == 0:
        return ParticleCloud(np.empty((0, gen.dimension)), cloud.n,
                             cloud.time + dt, cloud.generation)

    pos = diffusion_step(cloud.positions, gen, dt, rng)
    pos = pos[_apply_domain(pos, gen)]
    t_new = cloud.time + dt
    generation = cloud.generation

    if trip.offspring_mode == "binary-critical-deterministic":
        epochs_passed = int(np.floor(t_new * cloud.n * trip.c + 1e-12))
        if epochs_passed > generation and pos.shape[0]:
            radii = np.linalg.norm(pos, axis=1)
            counts = _offspring_counts(trip, radii, cloud.n, rng, pos)
            pos = np.repeat(pos, counts, axis=0)
            generation = epochs_passed
        else:
            generation = max(generation, epochs_passed)
    elif pos.shape[0]:
        pos, _ = _branch_window(pos, None, trip, cloud.n, rate, dt, rng)

    return ParticleCloud(pos, cloud.n, t_new, generation)


# ---------------------------------------------------------------------------
# Replica harness
# ---------------------------------------------------------------------------

@dataclass
class ReplicaStats:
    """Per-replica outcomes of a batch of particle-system runs.

    Replica r is extinct when its cloud died before t_end; overflow marks
    replicas aborted at the census cap (they are excluded from frequency
    denominators and counted separately).  ``support_radius[r, k]`` is the
    largest atom radius of replica r at checkpoint k (0 once extinct).
    """

    n_replicas: int
    n: int
    t_end: float
    seed: int
    checkpoint_times: np.ndarray
    extinct: np.ndarray
    final_mass: np.ndarray
    support_radius: np.ndarray
    overflow: np.ndarray
    escaped: np.ndarray
    hit: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def valid(self) -> np.ndarray:
        return ~self.overflow

    def extinction_frequency(self):
        v = self.valid
        k = int(v.sum())
        if k == 0:
            return np.nan, np.nan
        f = float(self.extinct[v].mean())
        return f, float(np.sqrt(max(f * (1 - f), 0.0) / k))

    def hitting_frequency(self):
        v = self.valid
        k = int(v.sum())
        if k == 0:
            return np.nan, np.nan
        f = float(self.hit[v].mean())
        return f, float(np.sqrt(max(f * (1 - f), 0.0) / k))

    def support_quantiles(self, qs=(0.25, 0.5, 0.75)):
        return np.quantile(self.support_radius[self.valid], qs, axis=0)


def run_replicas(gen: GeneratorSpec, trip: BranchingTriplet, *, n: int, x0,
                 t_end: float, dt: float, n_replicas: int, seed: int = 0,
                 census_cap: int = 10_000_000, replica_batch: int = 256,
                 n_checkpoints: int = 11, mark=None, mark_radius: float = 0.1,
                 escape_radius: float = 1e6,
                 functional=None) -> ReplicaStats:
    """Run independent particle-system replicas and collect statistics.

    Replicas are grouped into batches that advance as one flat atom array
    (vectorization across replicas); each batch draws from its own stream,
    spawned from ``numpy.random.SeedSequence(seed)`` in batch order, so
    results are deterministic for a fixed (seed, replica_batch, config).

    ``mark`` is an optional point whose ``mark_radius``-neighborhood is
    watched: a replica counts as hitting when any atom enters it at any
    step.  ``functional`` is an optional callable f(positions_2d) -> values
    per atom; its per-replica atom sums at t_end are returned in
    ``extra['functional_sum']`` (used for log-Laplace checks).
    """
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    rate = trip.branch_rate(n)
    if dt * rate > 1.0 + 1e-9:
        raise ValueError(f"dt={dt} exceeds 1/branch_rate={1.0/rate:.3g}")
    dim = gen.dimension
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (dim,))
    n_steps = max(1, int(round(t_end / dt)))
    dt = t_end / n_steps
    check_steps = np.unique(np.round(
        np.linspace(0, n_steps, n_checkpoints)).astype(int))
    checkpoint_times = check_steps * dt
    deterministic = trip.offspring_mode == "binary-critical-deterministic"

    extinct = np.zeros(n_replicas, dtype=bool)
    final_mass = np.zeros(n_replicas)
    support = np.zeros((n_replicas, len(check_steps)))
    overflow = np.zeros(n_replicas, dtype=bool)
    escaped = np.zeros(n_replicas, dtype=bool)
    hit = np.zeros(n_replicas, dtype=bool)
    func_sum = np.zeros(n_replicas) if functional is not None else None

    mark_point = None if mark is None else np.broadcast_to(
        np.asarray(mark, dtype=float), (dim,))

    batches = [(lo, min(lo + replica_batch, n_replicas))
               for lo in range(0, n_replicas, replica_batch)]
    streams = np.random.SeedSequence(seed).spawn(len(batches))

    for (lo, hi), ss in zip(batches, streams):
        rng = np.random.default_rng(ss)
        nb = hi - lo
        pos = np.tile(x0, (nb * n, 1))
        rep = np.repeat(np.arange(nb), n)
        generation = 0
        ci = 0
        if 0 in check_steps:
            support[lo:hi, 0] = np.linalg.norm(x0)
            ci = 1
        for step in range(1, n_steps + 1):
            if pos.shape[0]:
                pos = diffusion_step(pos, gen, dt, rng)
                radii = np.linalg.norm(pos, axis=1)
                keep = np.ones(pos.shape[0], dtype=bool)
                dom = gen.domain
                if dom.has_inner_boundary:
                    keep &= radii > dom.inner
                if np.isfinite(dom.outer):
                    keep &= radii < dom.outer
                esc = radii >= escape_radius
                if esc.any():
                    np.logical_or.at(escaped, lo + rep[esc], True)
                    keep &= ~esc
                if not keep.all():
                    pos, rep = pos[keep], rep[keep]

            if pos.shape[0]:
                if deterministic:
                    epochs = int(np.floor(step * dt * n * trip.c + 1e-12))
                    if epochs > generation:
                        generation = epochs
                        pradii = np.linalg.norm(pos, axis=1)
                        counts = _offspring_counts(trip, pradii, n, rng, pos)
                        pos = np.repeat(pos, counts, axis=0)
                        rep = np.repeat(rep, counts)
                else:
                    pos, rep = _branch_window(pos, rep, trip, n, rate, dt, rng)

            if pos.shape[0]:
                counts_per_rep = np.bincount(rep, minlength=nb)
                too_big = counts_per_rep > census_cap
                if too_big.any():
                    overflow[lo:hi] |= too_big
                    keep = ~too_big[rep]
                    pos, rep = pos[keep], rep[keep]

            if mark_point is not None and pos.shape[0]:
                near = np.linalg.norm(pos - mark_point, axis=1) <= mark_radius
                if near.any():
                    np.logical_or.at(hit, lo + rep[near], True)

            if ci < len(check_steps) and step == check_steps[ci]:
                if pos.shape[0]:
                    radii = np.linalg.norm(pos, axis=1)
                    np.maximum.at(support[lo:hi, ci], rep, radii)
                ci += 1

        counts_per_rep = np.bincount(rep, minlength=nb) if pos.shape[0] \
            else np.zeros(nb, dtype=int)
        final_mass[lo:hi] = counts_per_rep / n
        extinct[lo:hi] = (counts_per_rep == 0) & ~overflow[lo:hi]
        if functional is not None and pos.shape[0]:
            np.add.at(func_sum[lo:hi], rep, functional(pos) / n)

    extra = {}
    if functional is not None:
        extra["functional_sum"] = func_sum
    return ReplicaStats(
        n_replicas=n_replicas, n=n, t_end=t_end, seed=seed,
        checkpoint_times=checkpoint_times, extinct=extinct,
        final_mass=final_mass, support_radius=support, overflow=overflow,
        escaped=escaped, hit=hit, extra=extra)
