"""The underlying diffusion: radial generators, paths, and explosion tests.

The generator is L = A(|x|) Laplacian + b(|x|) d/dr acting on R^d (or a
radially symmetric subdomain).  Explosion of the diffusion is decided
through the minimal solution g of L g = -1 on expanding balls: g_R(x) is
the expected exit time from the ball of radius R, it increases with R,
and the diffusion explodes exactly when the limit stays bounded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .coefficients import Constant, as_coefficient


class CoefficientError(ValueError):
    """Generator coefficients violate an ellipticity/positivity requirement."""


class ConsistencyError(RuntimeError):
    """An internal invariant (e.g. monotonicity in the truncation) failed."""


@dataclass(frozen=True)
class Domain:
    """Radially symmetric domain: full space, ball, punctured space, annulus."""

    kind: str = "full"          # full | ball | punctured | annulus
    inner: float = 0.0          # > 0 for punctured / annulus
    outer: float = np.inf       # finite for ball / annulus

    KINDS = ("full", "ball", "punctured", "annulus")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind in ("punctured", "annulus") and not self.inner > 0:
            raise ValueError(f"{self.kind} domain requires inner radius > 0")
        if self.kind in ("ball", "annulus") and not np.isfinite(self.outer):
            raise ValueError(f"{self.kind} domain requires finite outer radius")
        if self.inner >= self.outer:
            raise ValueError("inner radius must be below outer radius")

    @property
    def has_inner_boundary(self):
        return self.kind in ("punctured", "annulus")


FULL_SPACE = Domain()


@dataclass(frozen=True)
class GeneratorSpec:
    """Radial diffusion operator A(r)*Laplacian + drift(r)*d/dr in dimension d."""

    dimension: int
    diffusion: object = field(default_factory=lambda: Constant(1.0))
    drift: Optional[object] = None
    domain: Domain = FULL_SPACE

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.domain.kind == "punctured" and self.dimension < 2:
            raise ValueError("punctured domains require dimension >= 2")
        object.__setattr__(self, "diffusion", as_coefficient(self.diffusion))
        if self.drift is not None:
            object.__setattr__(self, "drift", as_coefficient(self.drift))
        probe = np.geomspace(1e-3, 1e3, 25)
        if np.any(self.diffusion(probe) <= 0):
            raise CoefficientError("diffusion coefficient must be positive")


@dataclass(frozen=True)
class RadialOperator:
    """Coefficients (p, q) with L u = p(r) u'' + q(r) u' on radial functions."""

    p: Callable
    q: Callable
    singular_origin: bool


def radialize(spec: GeneratorSpec) -> RadialOperator:
    """Reduce A(r)*Laplacian + b(r) d/dr to p(r) u'' + q(r) u'.

    For radial u the Laplacian is u'' + (d-1)/r u', so p = A and
    q = A*(d-1)/r + b.  When d >= 2 and the domain contains the origin,
    q is singular at r = 0; the mesh constructors stagger the first node
    away from zero, and the returned flag marks the situation.
    """
    A = spec.diffusion
    b = spec.drift
    d = spec.dimension

    def p(r):
        return A(r)

    if d == 1 and b is None:
        q = Constant(0.0)
    elif d == 1:
        q = b
    else:
        def q(r):
            r = np.asarray(r, dtype=float)
            out = A(r) * (d - 1) / r
            if b is not None:
                out = out + b(r)
            return out

    singular = d >= 2 and not spec.domain.has_inner_boundary
    return RadialOperator(p=p, q=q, singular_origin=singular)


@dataclass
class ExplosionReport:
    explosive: bool
    mean_exit_time_at: list          # (r0, R, g_R(r0)) triples
    sup_g: float                     # sup over the state space; inf when not explosive
    converged: bool
    truncation_radii_used: list

    def __post_init__(self):
        if not self.explosive and np.isfinite(self.sup_g):
            raise ConsistencyError("non-explosive report must carry sup_g = inf")


def exit_time_mesh(r_inner: float, R: float, h0: float = 0.01, stretch: float = 1.02):
    """Radial mesh for two-point solves: staggered-uniform near 0, geometric after."""
    if r_inner > 0:
        n = max(64, int(np.ceil(np.log(R / r_inner) / np.log(stretch))))
        return np.geomspace(r_inner, R, n)
    r = list(np.arange(h0 / 2, min(1.0, R), h0))
    h = h0
    while r[-1] < R:
        h = min(h * stretch, max(R / 64, h0))
        r.append(r[-1] + h)
    r[-1] = R
    return np.asarray(r)


def second_order_rows(r, p, q):
    """Banded rows (lo, di, up) of p(r) u'' + q(r) u' on a nonuniform mesh."""
    n = len(r)
    lo = np.zeros(n)
    di = np.zeros(n)
    up = np.zeros(n)
    h0 = r[1:-1] - r[:-2]
    h1 = r[2:] - r[1:-1]
    lo[1:-1] = p[1:-1] * 2 / (h0 * (h0 + h1)) + q[1:-1] * (-h1 / (h0 * (h0 + h1)))
    di[1:-1] = p[1:-1] * (-2 / (h0 * h1)) + q[1:-1] * ((h1 - h0) / (h0 * h1))
    up[1:-1] = p[1:-1] * 2 / (h1 * (h0 + h1)) + q[1:-1] * (h0 / (h1 * (h0 + h1)))
    return lo, di, up


def reflect_origin_row(r, p0, q0):
    """First-row stencil with a ghost node mirrored through r = 0 (g'(0) = 0)."""
    h0 = 2 * r[0]
    h1 = r[1] - r[0]
    di = p0 * (-2 / (h0 * h1) + 2 / (h0 * (h0 + h1))) \
        + q0 * ((h1 - h0) / (h0 * h1) - h1 / (h0 * (h0 + h1)))
    up = p0 * 2 / (h1 * (h0 + h1)) + q0 * h0 / (h1 * (h0 + h1))
    return di, up


def reflect_outer_row(r, p_last, q_last):
    """Last-row stencil with a mirrored ghost beyond the mesh (u'(R) = 0)."""
    h = r[-1] - r[-2]
    lo = p_last / h**2 + q_last * (-1.0 / (2 * h))
    di = p_last * (-2.0 / h**2 + 1.0 / h**2) + q_last * (1.0 / (2 * h))
    return lo, di


def solve_exit_time(spec: GeneratorSpec, R: float, h0: float = 0.01):
    """Solve p g'' + q g' = -1 on [inner, R] with g(R) = 0.

    Full-space specs get the reflecting condition g'(0) = 0 on a staggered
    mesh; domains with an inner boundary get the absorbing condition
    g(inner) = 0.  Returns (r_nodes, g_values).
    """
    op = radialize(spec)
    inner = spec.domain.inner if spec.domain.has_inner_boundary else 0.0
    r = exit_time_mesh(inner, R, h0=h0)
    n = len(r)
    pv = np.asarray(op.p(r), dtype=float)
    qv = np.asarray(op.q(r), dtype=float)
    if np.any(pv <= 0):
        raise CoefficientError("p(r) must stay positive on the mesh")
    lo, di, up = second_order_rows(r, pv, qv)
    rhs = -np.ones(n)
    if inner == 0.0:
        di[0], up[0] = reflect_origin_row(r, pv[0], qv[0])
    else:
        di[0], up[0], rhs[0] = 1.0, 0.0, 0.0
    di[-1], lo[-1], rhs[-1] = 1.0, 0.0, 0.0

    ab = np.zeros((3, n))
    ab[0, 1:] = up[:-1]
    ab[1, :] = di
    ab[2, :-1] = lo[1:]
    g = solve_banded((1, 1), ab, rhs)
    if inner > 0:
        g[0] = 0.0
    g[-1] = 0.0
    return r, g


def mean_exit_time(spec: GeneratorSpec, r0: float, truncations,
                   tol_g: float = 1e-3, h0: float = 0.01) -> ExplosionReport:
    """Expected exit times from expanding balls and the explosion verdict.

    The values g_R(r0) are nondecreasing in R (maximum principle); the
    diffusion is declared explosive once two consecutive doublings move
    g_R(r0) by less than ``tol_g``.  If the list is exhausted without
    convergence the verdict is non-explosive with sup_g = inf.
    """
    truncations = [float(R) for R in truncations]
    if any(b <= a for a, b in zip(truncations, truncations[1:])):
        raise ValueError("truncations must be strictly increasing")
    if truncations and r0 >= truncations[0]:
        raise ValueError("r0 must lie inside the smallest truncation")

    samples = []
    diffs = []
    explosive = False
    sup_g = np.inf
    used = []
    last_solution = None
    for R in truncations:
        r, g = solve_exit_time(spec, R, h0=h0)
        val = float(np.interp(r0, r, g))
        if samples and val < samples[-1][2] - max(tol_g, 1e-6 * abs(val)):
            raise ConsistencyError(
                f"g_R(r0) decreased from {samples[-1][2]:.6g} to {val:.6g} at R={R}")
        samples.append((r0, R, val))
        used.append(R)
        last_solution = (r, g)
        if len(samples) >= 2:
            diffs.append(abs(samples[-1][2] - samples[-2][2]))
        if len(diffs) >= 2 and diffs[-1] < tol_g and diffs[-2] < tol_g:
            explosive = True
            break

    if explosive and last_solution is not None:
        sup_g = float(np.max(last_solution[1]))
    return ExplosionReport(
        explosive=explosive,
        mean_exit_time_at=samples,
        sup_g=sup_g,
        converged=explosive,
        truncation_radii_used=used,
    )


def doubling_truncations(start: float = 25.0, count: int = 20):
    """Default truncation ladder: geometric doublings from ``start``."""
    return [start * 2.0**k for k in range(count)]


@dataclass
class PathResult:
    times: np.ndarray
    positions: np.ndarray            # (n_times, d)
    status: str                      # none | inner | outer | escaped
    t_stop: float


def diffusion_step(positions, spec: GeneratorSpec, dt, rng):
    """One Euler-Maruyama step for the generator A(|x|)*Laplacian (+ drift).

    The SDE matching the generator is dX = drift(r) X/|X| dt + sqrt(2A(r)) dW.
    ``dt`` may be a scalar or a per-particle vector.
    """
    radii = np.linalg.norm(positions, axis=1)
    dt = np.broadcast_to(np.asarray(dt, dtype=float), radii.shape)
    sigma = np.sqrt(2.0 * spec.diffusion(radii) * dt)
    out = positions + sigma[:, None] * rng.standard_normal(positions.shape)
    if spec.drift is not None:
        safe = np.maximum(radii, 1e-300)
        out = out + (spec.drift(radii) * dt / safe)[:, None] * positions
    return out


def adapted_step(radii, A_values, dt: float, rel_step: float = 0.05):
    """Adaptive time step: nominal dt shrunk where the diffusion is fast.

    The base rule dt/A keeps the per-step variance at 2*dt everywhere; on
    generators with polynomially growing A that freezes the spatial
    increment and makes large radii unreachable, so the shrink is floored
    at the step whose spatial increment is rel_step*(1+r) (variance bounded
    relative to the current scale).  For bounded A this reduces to dt.
    """
    floor = (rel_step * (1.0 + radii)) ** 2 / (2.0 * A_values)
    return np.minimum(dt, np.maximum(dt / A_values, floor))


def simulate_path(spec: GeneratorSpec, x0, t_end: float, dt: float,
                  rng_seed=0, escape_radius: float = 1e6,
                  rel_step: float = 0.05,
                  max_steps: int = 10_000_000) -> PathResult:
    """Simulate one path with the adaptive step of :func:`adapted_step`.

    The clock advances by the adapted step, so fast-diffusion regions are
    resolved without shrinking the nominal step elsewhere.  The path stops
    at the domain boundary (absorbing sides), at the escape radius, or at
    t_end, whichever comes first; exhausting the step budget while the
    diffusion keeps accelerating is reported as an escape rather than a
    hang.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    if x.shape[1] != spec.dimension:
        raise ValueError("x0 has wrong dimension")
    rng = np.random.default_rng(rng_seed)
    dom = spec.domain
    times = [0.0]
    traj = [x[0].copy()]
    t = 0.0
    status = "none"
    for _ in range(max_steps):
        if t >= t_end - 1e-15:
            break
        r = np.linalg.norm(x, axis=1)
        step = float(adapted_step(r, spec.diffusion(r), dt, rel_step)[0])
        step = min(step, t_end - t)
        x = diffusion_step(x, spec, step, rng)
        t += step
        r = float(np.linalg.norm(x[0]))
        times.append(t)
        traj.append(x[0].copy())
        if dom.has_inner_boundary and r <= dom.inner:
            status = "inner"
            break
        if np.isfinite(dom.outer) and r >= dom.outer:
            status = "outer"
            break
        if r >= escape_radius:
            status = "escaped"
            break
    else:
        status = "escaped"  # step budget exhausted while A kept growing
    return PathResult(np.asarray(times), np.asarray(traj), status, t)


def simulate_paths(spec: GeneratorSpec, x0, t_end: float, dt: float,
                   n_paths: int, rng_seed=0, escape_radius: float = 1e6,
                   rel_step: float = 0.05, max_steps: int = 5_000_000):
    """Vectorized batch of independent paths (no trajectories kept).

    Returns a dict with per-path ``status`` ("none", "inner", "outer",
    "escaped"), ``exit_time`` (the absorption/escape time, or t_end), and
    ``final_radius``.  All paths share one stream; results are
    deterministic for a fixed seed.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(rng_seed)
    dom = spec.domain
    x = np.tile(np.broadcast_to(np.asarray(x0, dtype=float),
                                (spec.dimension,)), (n_paths, 1))
    t = np.zeros(n_paths)
    status = np.zeros(n_paths, dtype=np.int8)        # 0 none 1 inner 2 outer 3 escaped
    exit_time = np.full(n_paths, t_end)
    final_radius = np.zeros(n_paths)
    active = np.arange(n_paths)
    for _ in range(max_steps):
        if active.size == 0:
            break
        xa = x[active]
        r = np.linalg.norm(xa, axis=1)
        step = adapted_step(r, np.asarray(spec.diffusion(r), dtype=float),
                            dt, rel_step)
        step = np.minimum(step, t_end - t[active])
        xa = diffusion_step(xa, spec, step, rng)
        x[active] = xa
        t[active] += step
        r = np.linalg.norm(xa, axis=1)
        stop = t[active] >= t_end - 1e-15
        code = np.zeros(active.size, dtype=np.int8)
        if dom.has_inner_boundary:
            hit = r <= dom.inner
            code[hit] = 1
            stop |= hit
        if np.isfinite(dom.outer):
            out = r >= dom.outer
            code[out & (code == 0)] = 2
            stop |= out
        esc = r >= escape_radius
        code[esc & (code == 0)] = 3
        stop |= esc
        if stop.any():
            idx = active[stop]
            status[idx] = code[stop]
            exit_time[idx] = t[idx]
            final_radius[idx] = r[stop]
            active = active[~stop]
    else:
        status[active] = 3                            # treated as escaped
        exit_time[active] = t[active]
    names = np.array(["none", "inner", "outer", "escaped"])
    return {"status": names[status], "exit_time": exit_time,
            "final_radius": final_radius}


@dataclass(frozen=True)
class LineOperator:
    """One-dimensional operator a2(z) v'' + a1(z) v' on the whole line."""

    diffusion: object
    drift: object
    z_of_r: Callable
    r_of_z: Callable


def change_of_variables_to_line(spec: GeneratorSpec) -> LineOperator:
    """Map a radial operator on (0, inf) to the line via z = 1/r - r.

    With u(r) = v(z(r)) and z' = -1/r^2 - 1, z'' = 2/r^3:

        A (u'' + (d-1)/r u') + b u'
          = [A z'^2] v'' + [A (z'' + (d-1)/r z') + b z'] v'.

    The inverse map is r(z) = (sqrt(z^2+4) - z)/2.  Coefficients are
    returned as closed-form functions of z.
    """
    if spec.domain.kind == "ball":
        raise ValueError("change of variables expects an unbounded radial domain")
    A = spec.diffusion
    b = spec.drift
    d = spec.dimension

    def r_of_z(z):
        z = np.asarray(z, dtype=float)
        return (np.sqrt(z * z + 4.0) - z) / 2.0

    def z_of_r(r):
        r = np.asarray(r, dtype=float)
        return 1.0 / r - r

    def a2(z):
        r = r_of_z(z)
        zp = -1.0 / r**2 - 1.0
        return A(r) * zp * zp

    def a1(z):
        r = r_of_z(z)
        zp = -1.0 / r**2 - 1.0
        zpp = 2.0 / r**3
        out = A(r) * (zpp + (d - 1) / r * zp)
        if b is not None:
            out = out + b(r) * zp
        return out

    return LineOperator(diffusion=a2, drift=a1, z_of_r=z_of_r, r_of_z=r_of_z)
