"""Radial coefficient functions.

Everything spatial in this toolkit (diffusion strength, drift, branching
rates) is a scalar function of the radius r >= 0.  A handful of concrete
families covers all supported inputs:

* ``Constant``       -- c
* ``PowerLaw``       -- scale * (1+r)**exponent, exponent retrievable exactly
* ``ExpDecay``       -- scale * exp(-rate * r**power)
* ``InverseSquare``  -- strength / r**2 (singular at the origin)
* ``Symbolic``       -- arbitrary sympy expression in r (exact derivatives)
* ``Tabulated``      -- linear interpolation of sampled values

All families are callable on floats or numpy arrays.  Families with a
closed form expose ``expr()`` (a sympy expression) so operators can be
applied to them exactly; ``Tabulated`` raises instead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

R_SYMBOL = sp.Symbol("r", positive=True)


class NoClosedFormError(TypeError):
    """Raised when an exact expression is required but unavailable."""


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, r):
        return np.full_like(np.asarray(r, dtype=float), self.value)

    def expr(self):
        return sp.Float(self.value) if self.value else sp.Integer(0)

    def sup(self):
        return self.value

    def inf(self):
        return self.value


@dataclass(frozen=True)
class PowerLaw:
    """scale * (1+r)**exponent on r >= 0."""

    exponent: float
    scale: float = 1.0

    def __call__(self, r):
        return self.scale * (1.0 + np.asarray(r, dtype=float)) ** self.exponent

    def expr(self):
        return self.scale * (1 + R_SYMBOL) ** self.exponent

    def sup(self):
        if self.scale >= 0:
            return np.inf if self.exponent > 0 else self.scale
        return self.scale if self.exponent > 0 else 0.0

    def inf(self):
        if self.scale >= 0:
            return self.scale if self.exponent > 0 else 0.0 if self.exponent < 0 else self.scale
        return -np.inf if self.exponent > 0 else self.scale


@dataclass(frozen=True)
class ExpDecay:
    """scale * exp(-rate * r**power); rate > 0, power > 0."""

    scale: float
    rate: float
    power: float

    def __post_init__(self):
        if self.rate <= 0 or self.power <= 0:
            raise ValueError("ExpDecay requires rate > 0 and power > 0")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.scale * np.exp(-self.rate * r**self.power)

    def expr(self):
        return self.scale * sp.exp(-self.rate * R_SYMBOL**self.power)

    def sup(self):
        return max(self.scale, 0.0)

    def inf(self):
        return min(self.scale, 0.0) if self.scale < 0 else 0.0


@dataclass(frozen=True)
class InverseSquare:
    """strength / r**2; singular at the origin."""

    strength: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.strength / r**2

    def expr(self):
        return self.strength / R_SYMBOL**2

    def sup(self):
        return np.inf if self.strength > 0 else 0.0

    def inf(self):
        return -np.inf if self.strength < 0 else 0.0


class Symbolic:
    """Coefficient given as a sympy expression in the radius symbol r."""

    def __init__(self, expression):
        expression = sp.sympify(expression)
        for s in list(expression.free_symbols):
            if s.name == "r":                     # unify with the shared symbol
                expression = expression.subs(s, R_SYMBOL)
        self.expression = expression
        free = self.expression.free_symbols - {R_SYMBOL}
        if free:
            raise ValueError(f"expression has free symbols besides r: {free}")
        self._fn = sp.lambdify(R_SYMBOL, self.expression, "numpy")

    def __call__(self, r):
        with np.errstate(over="ignore", invalid="ignore"):
            out = self._fn(np.asarray(r, dtype=float))
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(r)).copy() \
            if np.shape(out) != np.shape(r) else out

    def expr(self):
        return self.expression

    def __repr__(self):
        return f"Symbolic({self.expression})"

    def __eq__(self, other):
        return isinstance(other, Symbolic) and self.expression == other.expression


class Tabulated:
    """Piecewise-linear coefficient from sampled (r, value) pairs."""

    def __init__(self, radii, values):
        radii = np.asarray(radii, dtype=float)
        values = np.asarray(values, dtype=float)
        if radii.ndim != 1 or radii.shape != values.shape:
            raise ValueError("radii and values must be 1-d arrays of equal length")
        if np.any(np.diff(radii) <= 0):
            raise ValueError("radii must be strictly increasing")
        self.radii = radii
        self.values = values

    def __call__(self, r):
        return np.interp(np.asarray(r, dtype=float), self.radii, self.values)

    def expr(self):
        raise NoClosedFormError("tabulated coefficients have no closed form")


def as_coefficient(obj):
    """Coerce numbers to Constant; pass coefficient objects through."""
    if isinstance(obj, (int, float)):
        return Constant(float(obj))
    if callable(obj):
        return obj
    raise TypeError(f"cannot interpret {obj!r} as a radial coefficient")


def as_power_law(coef):
    """View Constant/PowerLaw uniformly as (scale, exponent); None otherwise."""
    if isinstance(coef, Constant):
        return coef.value, 0.0
    if isinstance(coef, PowerLaw):
        return coef.scale, coef.exponent
    return None


def is_positive(coef) -> bool:
    """Structural positivity on (0, inf) where known; probed otherwise.

    The probe stays within radii where closed-form decays do not underflow
    to exactly zero in double precision.
    """
    if isinstance(coef, (Constant, PowerLaw)):
        scale, _ = as_power_law(coef)
        return scale > 0
    if isinstance(coef, ExpDecay):
        return coef.scale > 0
    if isinstance(coef, InverseSquare):
        return coef.strength > 0
    probe = np.geomspace(1e-6, 1e2, 64)
    return bool(np.all(coef(probe) > 0))
