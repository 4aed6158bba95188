"""Rule-based classifier for the compact support property (CSP).

A scenario bundles a radial generator with branching data drawn from
closed coefficient families (constants, powers of 1+r, stretched
exponentials, inverse squares).  ``classify`` applies a fixed sequence of
sufficient conditions; each fired rule carries a certificate listing the
inequalities it checked, every one of which must evaluate to True.  When
no rule applies the verdict is Unknown -- hypotheses are matched
syntactically against the supported families only, never guessed for
arbitrary functions.

Rule identifiers (EP2, EP3, Theorem P, ...) are the toolkit's fixed rule
names; the docstring of each rule states the hypothesis it encodes.

Cheap syntactic rules run first.  Two rules need the explosion engine
(the minimal solution of L g = -1 from :mod:`mvdsim.generator`) and are
evaluated only when nothing cheaper fired.  A comparison step closes the
verdict set under the coefficient ordering "smaller beta and larger
alpha preserve Holds" (and its contrapositive).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import sympy as sp

from . import coefficients as cf
from .coefficients import R_SYMBOL, as_power_law
from .generator import (GeneratorSpec, mean_exit_time, doubling_truncations,
                        ConsistencyError)
from .branching import BranchingTriplet


def critical_dimension(p: float) -> float:
    """Dimension threshold 2p/(p-1) for charging points."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    return 2.0 * p / (p - 1.0)


def beta0(d: int, p: float) -> float:
    """Critical inverse-square strength (d(p-1) - 2p)/(p-1)^2."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    if d < 1:
        raise ValueError("d must be >= 1")
    return (d * (p - 1.0) - 2.0 * p) / (p - 1.0) ** 2


CLOSED_FAMILIES = (cf.Constant, cf.PowerLaw, cf.ExpDecay, cf.InverseSquare)


def _sup(coef):
    """Exact supremum for the closed families; None for opaque functions.

    Rules must not probe arbitrary coefficients numerically: a sampled
    minimum of a decaying function is positive even when its infimum is 0,
    which would fire hypotheses that do not hold.
    """
    if isinstance(coef, CLOSED_FAMILIES):
        return coef.sup()
    return None


def _inf(coef):
    if isinstance(coef, CLOSED_FAMILIES):
        return coef.inf()
    return None


def _probed_sup(coef):
    if isinstance(coef, CLOSED_FAMILIES):
        return coef.sup()
    return float(np.max(coef(np.geomspace(1e-6, 1e6, 64))))


@dataclass(frozen=True)
class ScenarioSpec:
    """A generator plus branching coefficients, ready for classification."""

    generator: GeneratorSpec
    alpha: object
    beta: object
    p: float

    def __post_init__(self):
        if not 1.0 < self.p <= 2.0:
            raise ValueError("p must lie in (1, 2]")
        if not np.isfinite(_probed_sup(self.beta)):
            raise ValueError("beta must be bounded from above")
        if not cf.is_positive(self.alpha):
            raise ValueError("alpha must be positive")

    @property
    def d(self) -> int:
        return self.generator.dimension

    @property
    def punctured(self) -> bool:
        return self.generator.domain.has_inner_boundary

    def triplet(self, offspring_mode: Optional[str] = None,
                c: float = 1.0) -> BranchingTriplet:
        if offspring_mode is None:
            offspring_mode = ("binary-critical-exponential"
                              if self.p == 2.0 else "stable")
        return BranchingTriplet(beta=self.beta, alpha=self.alpha, p=self.p,
                                offspring_mode=offspring_mode, c=c)


@dataclass
class Verdict:
    status: str                        # Holds | Fails | Unknown
    rule: str = ""
    certificate: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in ("Holds", "Fails", "Unknown"):
            raise ValueError(f"bad status {self.status!r}")
        if self.status != "Unknown":
            if not self.rule:
                raise ValueError("definite verdicts must cite a rule")
            bad = [k for k, v in self.certificate.items() if not v]
            if bad:
                raise ConsistencyError(
                    f"certificate inequalities failed: {bad}")


def _drift_ok_linear(spec: GeneratorSpec):
    """|drift| <= C(1+r): true for no drift or power laws with exponent <= 1."""
    if spec.drift is None:
        return True
    view = as_power_law(spec.drift)
    return view is not None and view[1] <= 1.0


def _rule_ep2(s: ScenarioSpec):
    """Holds: a_ij growth at most quadratic (power exponent <= 2), linear
    drift bound, and alpha bounded away from zero."""
    if s.punctured:
        return None
    view = as_power_law(s.generator.diffusion)
    if view is None or not _drift_ok_linear(s.generator):
        return None
    scale, m = view
    inf_a = _inf(s.alpha)
    if inf_a is not None and m <= 2.0 and inf_a > 0:
        return ("Holds", "EP2(2)", {
                f"A ~ (1+r)^{m:g} with m <= 2": m <= 2.0,
                f"inf alpha = {inf_a:g} > 0": inf_a > 0},
                {"m": m})
    return None


def _alpha_dominates_stretched_exp(alpha, threshold: float) -> Optional[str]:
    """A witness that alpha(r) >= C1 exp(-C2 r^threshold), if one exists."""
    if isinstance(alpha, cf.Constant) and alpha.value > 0:
        return f"alpha = {alpha.value:g} constant"
    view = as_power_law(alpha)
    if view is not None and view[0] > 0 and threshold > 0:
        return f"alpha ~ (1+r)^{view[1]:g} decays polynomially"
    if isinstance(alpha, cf.ExpDecay) and alpha.scale > 0 \
            and alpha.power <= threshold:
        return (f"alpha decays like exp(-{alpha.rate:g} r^{alpha.power:g}) "
                f"with {alpha.power:g} <= {threshold:g}")
    return None


def _rule_theorem1(s: ScenarioSpec):
    """For A comparable to (1+r)^m, m in [0,2]: Holds when alpha decays no
    faster than exp(-C r^(2-m)); Fails when alpha decays strictly faster
    and beta is not too negative (power exponent below 2-m+2*epsilon)."""
    if s.punctured or s.generator.drift is not None:
        return None
    view = as_power_law(s.generator.diffusion)
    if view is None:
        return None
    scale, m = view
    if not (0.0 <= m <= 2.0 and scale > 0):
        return None
    threshold = 2.0 - m
    witness = _alpha_dominates_stretched_exp(s.alpha, threshold)
    if witness is not None:
        return ("Holds", "Theorem 1(1)", {
                f"m = {m:g} in [0, 2]": True,
                witness: True}, {"m": m})
    if isinstance(s.alpha, cf.ExpDecay) and s.alpha.scale > 0 \
            and s.alpha.power > threshold:
        epsilon = s.alpha.power - threshold
        ok_beta = False
        why = ""
        if isinstance(s.beta, (cf.Constant, cf.ExpDecay)):
            ok_beta, why = True, "beta bounded"
        else:
            bview = as_power_law(s.beta)
            if bview is not None:
                c_b, s_b = bview
                if c_b >= 0 or s_b < threshold + 2 * epsilon:
                    ok_beta, why = True, \
                        f"beta >= -C(1+r)^{s_b:g}, {s_b:g} < {threshold + 2*epsilon:g}"
        if ok_beta:
            return ("Fails", "Theorem 1(2)", {
                    f"m = {m:g} in [0, 2]": True,
                    f"alpha <= C exp(-r^{s.alpha.power:g}), "
                    f"{s.alpha.power:g} > {threshold:g}": True,
                    why: True}, {"m": m, "epsilon": epsilon})
    return None


def _rule_ep3(s: ScenarioSpec):
    """Fast diffusion (1+r)^m: Fails for m > 2 in d >= 2 and m > 1+p in
    d = 1 (alpha bounded, beta >= 0); Holds for m <= 1+p in d = 1 (alpha
    bounded below, beta <= 0)."""
    if s.punctured or s.generator.drift is not None:
        return None
    view = as_power_law(s.generator.diffusion)
    if view is None or view[0] <= 0:
        return None
    m = view[1]
    sup_a, inf_a = _sup(s.alpha), _inf(s.alpha)
    inf_b, sup_b = _inf(s.beta), _sup(s.beta)
    if None in (sup_a, inf_a, inf_b, sup_b):
        return None
    if s.d >= 2 and m > 2.0 and np.isfinite(sup_a) and inf_b >= 0:
        return ("Fails", "EP3(1)", {
                f"d = {s.d} >= 2": True, f"m = {m:g} > 2": True,
                f"sup alpha = {sup_a:g} finite": True,
                f"inf beta = {inf_b:g} >= 0": True}, {"m": m})
    if s.d == 1 and m > 1.0 + s.p and np.isfinite(sup_a) and inf_b >= 0:
        return ("Fails", "EP3(2)", {
                "d = 1": True, f"m = {m:g} > 1+p = {1+s.p:g}": True,
                f"sup alpha = {sup_a:g} finite": True,
                f"inf beta = {inf_b:g} >= 0": True}, {"m": m})
    if s.d == 1 and m <= 1.0 + s.p and inf_a > 0 and sup_b <= 0:
        return ("Holds", "EP3(3)", {
                "d = 1": True, f"m = {m:g} <= 1+p = {1+s.p:g}": True,
                f"inf alpha = {inf_a:g} > 0": True,
                f"sup beta = {sup_b:g} <= 0": True}, {"m": m})
    return None


def _rule_prop1(s: ScenarioSpec):
    """Holds for A = cA (1+r)^m whenever alpha dominates cA (1+r)^(m-2)
    and beta <= 0 (matched-decay branching beats even explosive motion)."""
    if s.punctured or s.generator.drift is not None:
        return None
    view = as_power_law(s.generator.diffusion)
    aview = as_power_law(s.alpha)
    if view is None or aview is None:
        return None
    c_A, m = view
    c_a, s_a = aview
    sup_b = _sup(s.beta)
    if sup_b is not None and c_a >= c_A > 0 and s_a >= m - 2.0 and sup_b <= 0:
        return ("Holds", "Proposition 1", {
                f"alpha scale {c_a:g} >= A scale {c_A:g}": True,
                f"alpha exponent {s_a:g} >= m-2 = {m-2:g}": True,
                f"sup beta = {sup_b:g} <= 0": True}, {"m": m})
    return None


def _rule_theorem_p(s: ScenarioSpec):
    """Punctured space, constant coefficients: Fails below the critical
    dimension 2p/(p-1) (beta >= 0), Holds at or above it (beta <= 0)."""
    if not s.punctured or s.generator.drift is not None:
        return None
    if not isinstance(s.generator.diffusion, cf.Constant):
        return None
    if not isinstance(s.alpha, cf.Constant):
        return None
    dc = critical_dimension(s.p)
    inf_b, sup_b = _inf(s.beta), _sup(s.beta)
    if inf_b is None:
        return None
    if s.d < dc and inf_b >= 0:
        return ("Fails", "Theorem P(1)", {
                f"d = {s.d} < 2p/(p-1) = {dc:g}": True,
                f"inf beta = {inf_b:g} >= 0 (comparison)": True},
                {"critical_dimension": dc})
    if s.d >= dc and sup_b <= 0:
        return ("Holds", "Theorem P(2)", {
                f"d = {s.d} >= 2p/(p-1) = {dc:g}": True,
                f"sup beta = {sup_b:g} <= 0 (comparison)": True},
                {"critical_dimension": dc})
    return None


def _rule_theorem3(s: ScenarioSpec):
    """Punctured space below the critical dimension with an inverse-square
    mass creation c/r^2: Fails for c above beta0 (up to 0), Holds for c
    strictly below beta0.  A constant diffusion a rescales time, so the
    effective strength is c/(2a) against the (1/2)Lap convention."""
    if not s.punctured or s.generator.drift is not None:
        return None
    if not isinstance(s.generator.diffusion, cf.Constant):
        return None
    if not isinstance(s.alpha, cf.Constant):
        return None
    if not isinstance(s.beta, cf.InverseSquare):
        return None
    dc = critical_dimension(s.p)
    if not s.d < dc:
        return None
    b0 = beta0(s.d, s.p)
    c_eff = s.beta.strength / (2.0 * s.generator.diffusion.value)
    if b0 < c_eff <= 0:
        kappa = c_eff - b0
        return ("Fails", "Theorem 3(1)", {
                f"d = {s.d} < 2p/(p-1) = {dc:g}": True,
                f"kappa = {kappa:g} in (0, {-b0:g}]": 0 < kappa <= -b0},
                {"beta0": b0, "kappa": kappa})
    if c_eff < b0:
        return ("Holds", "Theorem 3(2)", {
                f"d = {s.d} < 2p/(p-1) = {dc:g}": True,
                f"limsup r^2 beta = {c_eff:g} < beta0 = {b0:g}": True},
                {"beta0": b0})
    return None


CHEAP_RULES = (_rule_ep2, _rule_theorem1, _rule_ep3, _rule_prop1,
               _rule_theorem_p, _rule_theorem3)


def _ratio_bounded_below(beta, alpha):
    """A witness that inf beta/alpha > 0, or None."""
    inf_b, sup_a = _inf(beta), _sup(alpha)
    if inf_b is None or sup_a is None:
        return None
    if inf_b > 0 and np.isfinite(sup_a):
        return f"inf beta = {inf_b:g} > 0 and sup alpha = {sup_a:g} finite"
    bview, aview = as_power_law(beta), as_power_law(alpha)
    if bview and aview and bview[0] > 0 and bview[1] >= aview[1]:
        return (f"beta/alpha ~ (1+r)^{bview[1]-aview[1]:g} with positive "
                f"scale {bview[0]/aview[0]:g}")
    if bview and bview[0] > 0 and isinstance(alpha, cf.ExpDecay) \
            and alpha.scale > 0:
        return "beta polynomial and positive, alpha exponentially decaying"
    return None


def _expensive_rules(s: ScenarioSpec, truncations, tol_g, h0):
    """EP4 and Theorem 2, both needing the explosion engine."""
    if s.punctured:
        return None
    report = mean_exit_time(s.generator, 0.5,
                            truncations or doubling_truncations(),
                            tol_g=tol_g, h0=h0)
    if not report.explosive:
        return None
    witness = _ratio_bounded_below(s.beta, s.alpha)
    if witness is not None:
        return ("Fails", "EP4", {
                "Y(t) explodes (exit times converged)": report.converged,
                witness: True}, {"sup_exit_time": report.sup_g})
    sup_a = _sup(s.alpha)
    inf_b = _inf(s.beta)
    S = report.sup_g
    if sup_a is None or inf_b is None:
        return None
    if np.isfinite(S) and np.isfinite(sup_a) and inf_b > -1.0 / S:
        return ("Fails", "Theorem 2", {
                f"sup E tau = {S:g} finite": True,
                f"sup alpha = {sup_a:g} finite": True,
                f"inf beta = {inf_b:g} > -1/sup E tau = {-1.0/S:g}": True},
                {"sup_exit_time": S})
    return None


def scale_coefficient(coef, factor: float):
    """Multiply a coefficient by a positive constant, staying in-family."""
    if isinstance(coef, cf.Constant):
        return cf.Constant(coef.value * factor)
    if isinstance(coef, cf.PowerLaw):
        return cf.PowerLaw(coef.exponent, coef.scale * factor)
    if isinstance(coef, cf.ExpDecay):
        return cf.ExpDecay(coef.scale * factor, coef.rate, coef.power)
    if isinstance(coef, cf.InverseSquare):
        return cf.InverseSquare(coef.strength * factor)
    return cf.Symbolic(coef.expr() * factor)


def _comparison_closure(s: ScenarioSpec):
    """Extend verdicts across the coefficient ordering.

    Holds survives lowering beta / raising alpha; Fails survives raising
    beta / lowering alpha.  The closure normalizes beta to zero and re-runs
    the cheap rules on the dominating (resp. dominated) scenario.
    """
    sup_b, inf_b = _sup(s.beta), _inf(s.beta)
    if sup_b is None or (isinstance(s.beta, cf.Constant)
                         and s.beta.value == 0.0):
        return None
    base = replace(s, beta=cf.Constant(0.0))
    fired = _run_cheap(base)
    if fired is None:
        return None
    status, rule, cert, info = fired
    if status == "Holds" and sup_b <= 0:
        cert = dict(cert)
        cert[f"sup beta = {sup_b:g} <= 0 (comparison with beta = 0)"] = True
        return ("Holds", f"Comparison + {rule}", cert, info)
    if status == "Fails" and inf_b >= 0:
        cert = dict(cert)
        cert[f"inf beta = {inf_b:g} >= 0 (comparison with beta = 0)"] = True
        return ("Fails", f"Comparison + {rule}", cert, info)
    return None


def _run_cheap(s: ScenarioSpec):
    fired = []
    for rule in CHEAP_RULES:
        out = rule(s)
        if out is not None:
            fired.append(out)
    if not fired:
        return None
    statuses = {f[0] for f in fired}
    if len(statuses) > 1:
        raise ConsistencyError(
            "contradictory rule firings: "
            + ", ".join(f"{f[1]}->{f[0]}" for f in fired))
    return fired[0]


def classify(s: ScenarioSpec, *, truncations=None, tol_g: float = 1e-3,
             h0: float = 0.01) -> Verdict:
    """Classify the compact support property of a scenario.

    Applies the documented rule order (cheap syntactic rules, then the
    explosion-based rules, then the comparison closure) and returns the
    first conclusion, with its certificate.  Contradictory firings among
    the cheap rules raise :class:`ConsistencyError` -- they would mean a
    bug in the rule table, not bad user input.
    """
    fired = _run_cheap(s)
    if fired is None:
        fired = _expensive_rules(s, truncations, tol_g, h0)
    if fired is None:
        fired = _comparison_closure(s)
    if fired is None:
        return Verdict("Unknown", "", {}, {})
    status, rule, cert, info = fired
    return Verdict(status, rule, cert, info)


# ---------------------------------------------------------------------------
# h-transform
# ---------------------------------------------------------------------------

def h_transform(spec: GeneratorSpec, trip: BranchingTriplet, h):
    """Conjugate the pair (spec, triplet) by a positive radial function h.

    With L^h f = (1/h) L(f h) one gets L^h = L0 + Lh/h where L0 adds the
    drift a h'/h (a = 2A) to L; the transformed branching data is
    (beta + Lh/h, alpha h^(p-1)).  The CSP is invariant under this map.
    ``h`` must be a positive, twice-differentiable expression in r (exact
    symbolic derivatives are required).
    """
    if isinstance(h, cf.Symbolic):
        h_expr = h.expr()
    else:
        h_expr = sp.sympify(h)
    extra = h_expr.free_symbols - {R_SYMBOL}
    if extra:
        raise ValueError(f"h must depend on r only, got symbols {extra}")
    probe = np.geomspace(1e-6, 1e6, 128)
    h_num = sp.lambdify(R_SYMBOL, h_expr, "numpy")
    vals = np.broadcast_to(np.asarray(h_num(probe), dtype=float), probe.shape)
    if np.any(vals <= 0):
        raise ValueError("h must be positive on the domain")

    d = spec.dimension
    A_expr = spec.diffusion.expr()
    b_expr = spec.drift.expr() if spec.drift is not None else sp.Integer(0)
    hp = sp.diff(h_expr, R_SYMBOL)
    hpp = sp.diff(h_expr, R_SYMBOL, 2)
    Lh = A_expr * (hpp + (d - 1) / R_SYMBOL * hp) + b_expr * hp

    if hp == 0:                                    # constant h: only alpha moves
        factor = float(h_expr) ** (trip.p - 1.0)
        new_trip = BranchingTriplet(
            beta=trip.beta, alpha=scale_coefficient(trip.alpha, factor),
            p=trip.p, offspring_mode=trip.offspring_mode, c=trip.c)
        return spec, new_trip

    drift_expr = b_expr + 2 * A_expr * hp / h_expr
    new_spec = GeneratorSpec(dimension=d, diffusion=spec.diffusion,
                             drift=cf.Symbolic(sp.simplify(drift_expr)),
                             domain=spec.domain)
    beta_expr = trip.beta.expr() + sp.simplify(Lh / h_expr)
    alpha_expr = trip.alpha.expr() * h_expr ** (sp.nsimplify(trip.p) - 1)
    new_trip = BranchingTriplet(beta=cf.Symbolic(beta_expr),
                                alpha=cf.Symbolic(alpha_expr),
                                p=trip.p, offspring_mode=trip.offspring_mode,
                                c=trip.c)
    return new_spec, new_trip


def transform_scenario(s: ScenarioSpec, h) -> ScenarioSpec:
    """Scenario-level h-transform (stays in closed families for constant h)."""
    spec2, trip2 = h_transform(s.generator, s.triplet(), h)
    return ScenarioSpec(generator=spec2, alpha=trip2.alpha, beta=trip2.beta,
                        p=s.p)
