"""Closed-form comparison functions and their symbolic residual checks.

Three families of explicit functions certify solver behavior analytically:

* ``M_RK``         -- (1+r)^a (R-r)^-a exp(K(t+1)), a = 2/(P-1): a
  supersolution on the ball of radius R once K is large enough.
* ``psi_R_eps``    -- phi_{R,eps}(r) exp(gamma(t+1)) with
  phi = ((r-eps)(R-r))^-a (1+r)^a (1 + (eps^l/r^l) R^a): a supersolution
  on the annulus (eps, R) for suitable gamma and l, used with a singular
  mass-creation term on punctured domains.
* ``stationary_W`` -- kappa^(1/(P-1)) r^(-2/(P-1)): an exact stationary
  solution when beta = (beta0 + kappa)/r^2 with
  beta0 = (d(P-1) - 2P)/(P-1)^2 (convention: diffusion part (1/2)Lap).

Residuals are evaluated from exact symbolic derivatives of the stored
expressions (no finite differences): the operator applied is

    p(r) u_rr + q(r) u_r + beta(r) u - alpha(r) u^P - u_t,

with (p, q) taken from the generator's radial reduction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .coefficients import R_SYMBOL

T_SYMBOL = sp.Symbol("t", nonnegative=True)

KINDS = ("M_RK", "psi_R_eps", "stationary_W")


class ParameterRangeError(ValueError):
    """A comparison-function parameter violates its admissible range."""


def beta0_value(d: int, p: float) -> float:
    return (d * (p - 1.0) - 2.0 * p) / (p - 1.0) ** 2


@dataclass(frozen=True)
class ComparisonFunction:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterRangeError(f"unknown comparison kind {self.kind!r}")
        q = self.params
        need = {"M_RK": ("R", "K", "p"),
                "psi_R_eps": ("R", "eps", "l", "gamma", "p"),
                "stationary_W": ("kappa", "p", "d")}[self.kind]
        missing = [k for k in need if k not in q]
        if missing:
            raise ParameterRangeError(f"{self.kind} needs parameters {missing}")
        p = q["p"]
        if not 1.0 < p <= 2.0:
            raise ParameterRangeError("p must lie in (1, 2]")
        if self.kind == "M_RK":
            if q["R"] <= 0:
                raise ParameterRangeError("M_RK requires R > 0")
            if q["K"] <= 0:
                raise ParameterRangeError("M_RK requires K > 0")
        elif self.kind == "psi_R_eps":
            if not 0 < q["eps"] < 1:
                raise ParameterRangeError("psi requires 0 < eps < 1")
            if not q["R"] > 1:
                raise ParameterRangeError("psi requires R > 1")
            if not 0 < q["l"] <= 1:
                raise ParameterRangeError("psi requires l in (0, 1]")
            if q["gamma"] <= 0:
                raise ParameterRangeError("psi requires gamma > 0")
        else:
            b0 = beta0_value(q["d"], p)
            if not 0 < q["kappa"] <= -b0:
                raise ParameterRangeError(
                    f"stationary_W requires kappa in (0, {-b0:g}]")

    def expression(self):
        q = self.params
        p = q["p"]
        a = sp.Rational(2) / (sp.nsimplify(p) - 1)
        r, t = R_SYMBOL, T_SYMBOL
        if self.kind == "M_RK":
            return (1 + r) ** a * (q["R"] - r) ** (-a) * sp.exp(q["K"] * (t + 1))
        if self.kind == "psi_R_eps":
            R, eps, l = q["R"], q["eps"], q["l"]
            phi = ((r - eps) * (R - r)) ** (-a) * (1 + r) ** a \
                * (1 + eps**l / r**l * R**a)
            return phi * sp.exp(q["gamma"] * (t + 1))
        kap = sp.nsimplify(q["kappa"])
        return kap ** (1 / (sp.nsimplify(p) - 1)) * r ** (-a)

    def singular_radii(self):
        q = self.params
        if self.kind == "M_RK":
            return (0.0, q["R"])
        if self.kind == "psi_R_eps":
            return (q["eps"], q["R"])
        return (0.0, np.inf)


def symbolic_radial_operator(spec):
    """Exact (p_expr, q_expr) with L u = p u'' + q u' for radial u."""
    A = spec.diffusion.expr()
    d = spec.dimension
    q = A * (d - 1) / R_SYMBOL
    if spec.drift is not None:
        q = q + spec.drift.expr()
    return A, q


@dataclass
class ResidualReport:
    kind: str
    params: dict
    max_residual: float
    max_abs_residual: float
    n_sign_violations: int
    n_samples: int
    sign_tol: float
    worst: tuple = ()

    def clean(self) -> bool:
        return self.n_sign_violations == 0


def verify_comparison(cf: ComparisonFunction, spec, trip, r_samples,
                      t_samples=(0.0,), sign_tol: float = 1e-9,
                      margin: float = 1e-6) -> ResidualReport:
    """Evaluate the semilinear operator on cf symbolically over a grid.

    The residual p u'' + q u' + beta u - alpha u^P - u_t is formed with
    exact derivatives and sampled on the (r, t) grid; for a supersolution
    every sample must be <= sign_tol.  The grid must stay ``margin`` away
    from the function's singular radii.
    """
    r_samples = np.asarray(r_samples, dtype=float)
    t_samples = np.asarray(t_samples, dtype=float)
    lo, hi = cf.singular_radii()
    if np.any(r_samples <= lo + margin) or np.any(r_samples >= hi - margin):
        raise ParameterRangeError(
            f"sample radii must stay within ({lo}, {hi}) by margin {margin}")
    if spec.dimension >= 2 and np.any(r_samples <= 0):
        raise ParameterRangeError("radial samples must be positive")

    u = cf.expression()
    p_expr, q_expr = symbolic_radial_operator(spec)
    beta_expr = trip.beta.expr()
    alpha_expr = trip.alpha.expr()
    P = cf.params["p"] if "p" in cf.params else trip.p
    r, t = R_SYMBOL, T_SYMBOL
    residual = (p_expr * sp.diff(u, r, 2) + q_expr * sp.diff(u, r)
                + beta_expr * u - alpha_expr * u ** sp.nsimplify(P)
                - sp.diff(u, t))
    fn = sp.lambdify((r, t), residual, "numpy")
    Rg, Tg = np.meshgrid(r_samples, t_samples, indexing="ij")
    vals = np.asarray(fn(Rg, Tg), dtype=float)
    vals = np.broadcast_to(vals, Rg.shape)
    viol = vals > sign_tol
    worst_idx = np.unravel_index(int(np.argmax(vals)), vals.shape)
    return ResidualReport(
        kind=cf.kind, params=dict(cf.params),
        max_residual=float(vals.max()),
        max_abs_residual=float(np.abs(vals).max()),
        n_sign_violations=int(viol.sum()),
        n_samples=int(vals.size),
        sign_tol=sign_tol,
        worst=(float(Rg[worst_idx]), float(Tg[worst_idx]), float(vals[worst_idx])),
    )


def search_growth_rate(kind: str, spec, trip, base_params: dict, r_samples,
                       t_samples=(0.0, 0.5, 1.0), candidates=None,
                       sign_tol: float = 1e-9):
    """Find the exponential rate (K or gamma) giving zero sign violations.

    Doubles through ``candidates`` (default 1, 2, 4, ..., 4096) and returns
    (rate, report) for the first clean value; raises if none works.
    """
    if candidates is None:
        candidates = [2.0**k for k in range(0, 13)]
    key = {"M_RK": "K", "psi_R_eps": "gamma"}[kind]
    last = None
    for cand in candidates:
        params = dict(base_params)
        params[key] = float(cand)
        report = verify_comparison(ComparisonFunction(kind, params), spec,
                                   trip, r_samples, t_samples,
                                   sign_tol=sign_tol)
        last = report
        if report.clean():
            return float(cand), report
    raise RuntimeError(
        f"no {key} among {candidates} cleared the sign check "
        f"(last max residual {last.max_residual:.3g})")
