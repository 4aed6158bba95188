"""Semilinear evolution solver on radial meshes.

Solves u_t = p(r) u'' + q(r) u' + beta(r) u - alpha(r) u^P by a
semi-implicit scheme: the diffusion part is implicit (one tridiagonal
solve per step), the reaction part explicit under the step restriction
dt <= 0.5 / max(|beta| + alpha u^(P-1)) taken over the explicitly
updated (non-Dirichlet) nodes.  This preserves nonnegativity: the
explicit half maps u to at least u/2 >= 0 and the implicit matrix is an
M-matrix.

The maximal solution with vanishing initial data is approximated by
solves with boundary height B ("blow-up proxy"), saturated in B, then
swept over domain radii; the probe value at a reference point decides
between the trivial and nontrivial regimes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .generator import (GeneratorSpec, radialize, reflect_origin_row,
                        reflect_outer_row, second_order_rows)
from .branching import BranchingTriplet
from .supersolutions import ComparisonFunction, verify_comparison, \
    search_growth_rate, ResidualReport  # noqa: F401  (re-exported API)


class StepSizeError(RuntimeError):
    """The scheme went unstable (runaway values away from blow-up data)."""


class MaximumPrincipleError(RuntimeError):
    """Solutions failed to be monotone in the boundary height."""


class DiscretizationError(RuntimeError):
    """Negative values beyond the clip tolerance."""


@dataclass(frozen=True)
class Boundary:
    kind: str                 # "reflecting" | "dirichlet"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("reflecting", "dirichlet"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")


ABSORBING = Boundary("dirichlet", 0.0)
REFLECTING = Boundary("reflecting")


def blowup(height: float) -> Boundary:
    return Boundary("dirichlet", float(height))


@dataclass
class GridFunction:
    """Nonnegative space-time lattice values u(r_i, t_j)."""

    r_nodes: np.ndarray
    t_nodes: np.ndarray
    values: np.ndarray                    # (len(r_nodes), len(t_nodes))
    boundary: tuple                       # (inner Boundary, outer Boundary)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (len(self.r_nodes), len(self.t_nodes)):
            raise ValueError("values shape must be (n_r, n_t)")
        if np.any(self.values < 0):
            raise ValueError("grid values must be nonnegative")

    def at(self, r: float, t: Optional[float] = None) -> float:
        j = -1 if t is None else int(np.argmin(np.abs(self.t_nodes - t)))
        return float(np.interp(r, self.r_nodes, self.values[:, j]))

    def final(self) -> np.ndarray:
        return self.values[:, -1]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("r,t,u\n")
            for j, t in enumerate(self.t_nodes):
                for i, r in enumerate(self.r_nodes):
                    fh.write(f"{r:.17g},{t:.17g},{self.values[i, j]:.17g}\n")


def ball_mesh(R: float, h0: float = 0.02, stretch: float = 1.02,
              fine_to: float = 2.0) -> np.ndarray:
    """Staggered-uniform mesh near the origin, geometric out to r = R."""
    r = list(np.arange(h0 / 2, min(fine_to, R), h0))
    h = h0
    while r[-1] < R:
        h = min(h * stretch, R / 40)
        r.append(r[-1] + h)
    r[-1] = R
    return np.asarray(r)


def annulus_mesh(r_inner: float, R: float, nodes_per_decade: int = 160) -> np.ndarray:
    n = max(80, int(np.ceil(np.log10(R / r_inner) * nodes_per_decade)))
    return np.geomspace(r_inner, R, n)


def uniform_ball_mesh(R: float, h0: float = 0.02) -> np.ndarray:
    """Staggered uniform mesh; needed when coefficients vary fast near R."""
    r = np.arange(h0 / 2, R, h0)
    return np.append(r, R)


def mesh_for(spec: GeneratorSpec, R: float, eps: Optional[float] = None,
             h0: float = 0.02, nodes_per_decade: int = 160,
             uniform: bool = False) -> np.ndarray:
    if spec.domain.has_inner_boundary or eps is not None:
        inner = eps if eps is not None else spec.domain.inner
        return annulus_mesh(inner, R, nodes_per_decade)
    if uniform:
        return uniform_ball_mesh(R, h0)
    return ball_mesh(R, h0=h0)


def _power_safe(u, expo):
    # u**(expo) without overflow surprises for expo in (0, 1]
    if expo == 1.0:
        return u
    return np.power(u, expo)


def evolve(r, p, q, alpha_r, beta_r, pexp, u0, t_end, inner: Boundary,
           outer: Boundary, dt_max: float = 1e-3, out_times=None,
           instability_factor: float = 10.0):
    """March the semi-implicit scheme; returns (t_out, values, diagnostics)."""
    n = len(r)
    lo, di, up = second_order_rows(r, p, q)
    rhs_fixed = {}
    explicit = np.ones(n, dtype=bool)
    if inner.kind == "reflecting":
        di[0], up[0] = reflect_origin_row(r, p[0], q[0])
    else:
        rhs_fixed[0] = inner.value
        explicit[0] = False
    if outer.kind == "reflecting":
        lo[n - 1], di[n - 1] = reflect_outer_row(r, p[n - 1], q[n - 1])
    else:
        rhs_fixed[n - 1] = outer.value
        explicit[n - 1] = False

    out_times = np.asarray([t_end] if out_times is None else out_times, dtype=float)
    guard = max(1e10, instability_factor * max(
        [abs(v) for v in rhs_fixed.values()] + [1.0]))

    u = np.asarray(u0, dtype=float).copy()
    for i, v in rhs_fixed.items():
        u[i] = v
    snapshots = []
    clip_count = 0
    t = 0.0
    next_out = 0
    if out_times[0] == 0.0:
        snapshots.append(u.copy())
        next_out = 1
    while next_out < len(out_times):
        target = out_times[next_out]
        while t < target - 1e-13:
            alup = alpha_r * _power_safe(u, pexp - 1.0)
            rate = np.abs(beta_r[explicit]) + alup[explicit]
            dt = min(dt_max, 0.5 / max(float(rate.max()), 1e-12), target - t)
            rhs = u + dt * u * (beta_r - alup)
            for i, v in rhs_fixed.items():
                rhs[i] = v
            # Dirichlet rows are identity by construction: their lo/di/up
            # entries were never filled, so only explicit rows get -dt*D.
            ab = np.zeros((3, n))
            ab[0, 1:] = -dt * up[:-1]
            ab[1, :] = 1.0
            ab[2, :-1] = -dt * lo[1:]
            ab[1, explicit] -= dt * di[explicit]
            u = solve_banded((1, 1), ab, rhs)
            neg = u < 0
            if neg.any():
                if float(u.min()) < -1e-6 * max(1.0, float(np.abs(u).max())):
                    raise DiscretizationError(
                        f"negative values beyond clip tolerance: min={u.min():.3g}")
                clip_count += int(neg.sum())
                u[neg] = 0.0
            if float(u[explicit].max(initial=0.0)) > guard:
                raise StepSizeError(
                    "interior values exceeded the stability guard; "
                    "reduce dt_max or refine the mesh")
            t += dt
        snapshots.append(u.copy())
        next_out += 1
    values = np.stack(snapshots, axis=1)
    return out_times, values, {"clipped_nodes": clip_count}


def solve_cauchy(spec: GeneratorSpec, trip: BranchingTriplet, f, *,
                 t_end: float = 1.0, R: Optional[float] = None,
                 eps: Optional[float] = None, out_times=None,
                 inner: Optional[Boundary] = None, outer: Boundary = ABSORBING,
                 h0: float = 0.02, nodes_per_decade: int = 160,
                 dt_max: float = 1e-3) -> GridFunction:
    """Solve the evolution equation with initial data f on a radial mesh.

    ``f`` may be a callable of r or an array on the mesh; it must be
    nonnegative.  Full-space specs are truncated at radius R with a
    reflecting origin; domains with an inner boundary get a Dirichlet
    condition there (absorbing by default).
    """
    dom = spec.domain
    if R is None:
        R = dom.outer if np.isfinite(dom.outer) else 10.0
    r = mesh_for(spec, R, eps=eps, h0=h0, nodes_per_decade=nodes_per_decade)
    op = radialize(spec)
    pv = np.asarray(op.p(r), dtype=float)
    qv = np.asarray(op.q(r), dtype=float)
    u0 = np.asarray(f(r) if callable(f) else f, dtype=float)
    if u0.shape != r.shape:
        raise ValueError("initial data must match the mesh")
    if np.any(u0 < 0):
        raise ValueError("initial data must be nonnegative")
    if inner is None:
        inner = ABSORBING if (dom.has_inner_boundary or eps is not None) \
            else REFLECTING
    if out_times is None:
        out_times = np.linspace(0.0, t_end, 11)
    alpha_r = np.asarray(trip.alpha(r), dtype=float)
    beta_r = np.asarray(trip.beta(r), dtype=float)
    t_out, values, diag = evolve(r, pv, qv, alpha_r, beta_r, trip.p, u0,
                                 t_end, inner, outer, dt_max=dt_max,
                                 out_times=out_times)
    meta = {"diagnostics": diag, "R": R, "eps": eps, "t_end": t_end}
    return GridFunction(r, t_out, values, (inner, outer), meta)


# ---------------------------------------------------------------------------
# Maximal solution with vanishing initial data
# ---------------------------------------------------------------------------

@dataclass
class MaximalSolutionResult:
    verdict: str                       # trivial | nontrivial | unknown
    probe_trace: list                  # one record per sweep stage
    grid: GridFunction
    probe_r: float
    message: str = ""

    @property
    def probe_values(self):
        return [rec["probe"] for rec in self.probe_trace]


def boundary_ceiling(spec: GeneratorSpec, trip: BranchingTriplet, radius: float,
                     h_local: float, b_max: float = 1e290) -> float:
    """Height of the discrete blow-up boundary layer at the given radius.

    The local steady balance p u'' ~ alpha u^P gives the profile
    C * delta^(-2/(P-1)) with C^(P-1) = 2(P+1) p / ((P-1)^2 alpha); heights
    above its value one cell in are indistinguishable from infinity.
    """
    op = radialize(spec)
    pv = float(op.p(radius))
    al = max(float(trip.alpha(radius)), 1e-290)
    P = trip.p
    C = (2.0 * (P + 1.0) * pv / ((P - 1.0) ** 2 * al)) ** (1.0 / (P - 1.0))
    return float(min(C * h_local ** (-2.0 / (P - 1.0)), b_max))


def maximal_solution(spec: GeneratorSpec, trip: BranchingTriplet, R_sweep,
                     B_sweep, t_end: float, *, eps_sweep=None,
                     probe_r: float = 1.0, tol_B: float = 1e-4,
                     tol_triv: float = 1e-3, floor: float = 5e-2,
                     stabilize_tol: float = 0.25,
                     boundary_mode: str = "absolute", b_max: float = 1e290,
                     h0: float = 0.02, nodes_per_decade: int = 160,
                     dt_max: float = 1e-3) -> MaximalSolutionResult:
    """Approximate the maximal solution with zero initial data; classify it.

    For each sweep stage the equation is solved with f = 0 and boundary
    height B (at r = R, and at the inner radius for punctured domains),
    increasing B through ``B_sweep`` until the probe value moves by less
    than ``tol_B`` relatively (monotone saturation).  In ``ceiling`` mode
    the B_sweep entries are multipliers of the discrete blow-up layer
    height at the boundary, which is the largest height the mesh can
    distinguish; heights are clamped at ``b_max``.

    The saturated probe values are then read across stages: the verdict is
    ``trivial`` when the final probe value falls below ``tol_triv``,
    ``nontrivial`` when it sits above ``floor`` and has stabilized
    (relative change below ``stabilize_tol``), otherwise ``unknown``.
    """
    if boundary_mode not in ("absolute", "ceiling"):
        raise ValueError("boundary_mode must be 'absolute' or 'ceiling'")
    R_sweep = [float(R) for R in R_sweep]
    B_sweep = [float(B) for B in B_sweep]
    if any(b2 <= b1 for b1, b2 in zip(B_sweep, B_sweep[1:])):
        raise ValueError("B_sweep must be strictly increasing")
    if any(r2 <= r1 for r1, r2 in zip(R_sweep, R_sweep[1:])):
        raise ValueError("R_sweep must be strictly increasing")
    punctured = spec.domain.has_inner_boundary or eps_sweep is not None
    if punctured:
        eps_list = list(eps_sweep) if eps_sweep is not None \
            else [spec.domain.inner] * len(R_sweep)
        if len(eps_list) < len(R_sweep):
            eps_list = eps_list + [eps_list[-1]] * (len(R_sweep) - len(eps_list))
    op = radialize(spec)

    trace = []
    last_grid = None
    for k, R in enumerate(R_sweep):
        eps = eps_list[k] if punctured else None
        # ceiling mode puts enormous gradients at the boundary: the mesh
        # must resolve the decay scale of alpha there, so keep it uniform.
        r = mesh_for(spec, R, eps=eps, h0=h0, nodes_per_decade=nodes_per_decade,
                     uniform=(boundary_mode == "ceiling"))
        pv = np.asarray(op.p(r), dtype=float)
        qv = np.asarray(op.q(r), dtype=float)
        alpha_r = np.asarray(trip.alpha(r), dtype=float)
        beta_r = np.asarray(trip.beta(r), dtype=float)
        probes = []
        heights = []
        for B in B_sweep:
            if boundary_mode == "ceiling":
                h_out = r[-1] - r[-2]
                B_out = min(B * boundary_ceiling(spec, trip, R, h_out, b_max), b_max)
                if punctured:
                    h_in = r[1] - r[0]
                    B_in = min(B * boundary_ceiling(spec, trip, eps, h_in, b_max),
                               b_max)
            else:
                B_out = B
                B_in = B
            inner = blowup(B_in) if punctured else REFLECTING
            t_out, values, _ = evolve(r, pv, qv, alpha_r, beta_r, trip.p,
                                      np.zeros_like(r), t_end, inner,
                                      blowup(B_out), dt_max=dt_max)
            probe = float(np.interp(probe_r, r, values[:, -1]))
            probes.append(probe)
            heights.append(B_out)
            if len(probes) >= 2:
                prev, cur = probes[-2], probes[-1]
                if cur < prev - max(1e-9, 1e-6 * abs(prev)):
                    raise MaximumPrincipleError(
                        f"probe decreased when raising B at R={R}: "
                        f"{prev:.6g} -> {cur:.6g}; refine the mesh")
                if abs(cur - prev) <= tol_B * max(abs(cur), 1e-30):
                    break
        last_grid = GridFunction(r, t_out, values,
                                 (blowup(B_in) if punctured else REFLECTING,
                                  blowup(B_out)),
                                 {"R": R, "eps": eps, "B": heights[-1]})
        trace.append({"stage": k, "R": R, "eps": eps, "B_levels": heights,
                      "B_probe_values": probes, "probe": probes[-1],
                      "B_saturated": len(probes) < len(B_sweep)})

    v = [rec["probe"] for rec in trace]
    if v[-1] < tol_triv:
        verdict, msg = "trivial", f"probe fell to {v[-1]:.3g} < {tol_triv:g}"
    elif v[-1] >= floor and (len(v) == 1 or
                             abs(v[-1] - v[-2]) <= stabilize_tol * abs(v[-2])):
        verdict, msg = "nontrivial", \
            f"probe stabilized at {v[-1]:.3g} >= {floor:g}"
    else:
        verdict, msg = "unknown", f"probe trace {v} met neither threshold"
    return MaximalSolutionResult(verdict=verdict, probe_trace=trace,
                                 grid=last_grid, probe_r=probe_r, message=msg)


@dataclass
class HittingEstimate:
    probability: float
    verdict: str
    probe_value: float
    trace: list


def hitting_probability(spec: GeneratorSpec, trip: BranchingTriplet, *,
                        mu_radius: float, mu_mass: float, t_end: float,
                        R_sweep, B_sweep, eps_sweep=None,
                        **kwargs) -> HittingEstimate:
    """Probability that the process charges the excluded point.

    Uses the punctured-domain maximal solution: the chance of ever sending
    mass onto the puncture by time t is 1 - exp(-mass * u_max(r_mu, t)).
    An empty initial measure gives probability zero exactly; an unknown
    sweep verdict is propagated.
    """
    if spec.dimension < 2:
        raise ValueError("hitting a point requires dimension >= 2")
    if mu_radius <= 0:
        raise ValueError("the initial atom must sit away from the point")
    if mu_mass < 0:
        raise ValueError("mass must be nonnegative")
    if mu_mass == 0.0:
        return HittingEstimate(0.0, "trivial", 0.0, [])
    res = maximal_solution(spec, trip, R_sweep, B_sweep, t_end,
                           eps_sweep=eps_sweep, probe_r=mu_radius, **kwargs)
    u = res.probe_trace[-1]["probe"]
    prob = float(-np.expm1(-mu_mass * u))
    return HittingEstimate(prob, res.verdict, u, res.probe_trace)


# ---------------------------------------------------------------------------
# Binary grid cache keyed by configuration hash
# ---------------------------------------------------------------------------

def config_key(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


def save_grid(cache_dir, key: str, grid: GridFunction) -> Path:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{key}.npz"
    np.savez_compressed(path, r_nodes=grid.r_nodes, t_nodes=grid.t_nodes,
                        values=grid.values,
                        metadata=json.dumps(grid.metadata, default=str))
    return path


def load_grid(cache_dir, key: str) -> Optional[GridFunction]:
    path = Path(cache_dir) / f"{key}.npz"
    if not path.exists():
        return None
    data = np.load(path, allow_pickle=False)
    return GridFunction(data["r_nodes"], data["t_nodes"], data["values"],
                        (REFLECTING, ABSORBING),
                        json.loads(str(data["metadata"])))
