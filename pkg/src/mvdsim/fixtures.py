"""Named benchmark scenarios with pinned classifier verdicts.

Each fixture records the expected CSP status together with the rule that
decides it; the table is the regression oracle for the classifier and the
work list for the engine-agreement experiment.  ``pde`` entries carry the
sweep settings under which the maximal-solution engine resolves the same
scenario; ``mc`` entries mark scenarios where a particle run gives a
meaningful qualitative indicator (escape of atoms to huge radii).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import coefficients as cf
from .csp import ScenarioSpec
from .generator import Domain, GeneratorSpec


@dataclass(frozen=True)
class Fixture:
    name: str
    scenario: ScenarioSpec
    expected_status: str
    expected_rule: str
    pde: Optional[dict] = None          # maximal_solution settings
    mc: Optional[dict] = None           # particle-indicator settings
    note: str = ""


def _full(d, A, drift=None):
    return GeneratorSpec(dimension=d, diffusion=A, drift=drift)


def _punctured(d, A, inner=1e-3):
    return GeneratorSpec(dimension=d, diffusion=A,
                         domain=Domain("punctured", inner=inner))


_PDE_BALL = {"R_sweep": [10.0, 20.0, 40.0, 80.0],
             "B_sweep": [1e2, 1e3, 1e4, 1e5]}
_PDE_FAST = {"R_sweep": [25.0, 50.0, 100.0],
             "B_sweep": [1e2, 1e3, 1e4]}
_PDE_PUNCTURED = {"R_sweep": [20.0, 40.0, 80.0],
                  "eps_sweep": [1e-1, 1e-2, 1e-3],
                  "B_sweep": [1e2, 1e3, 1e4, 1e5]}


def builtin_fixtures() -> list[Fixture]:
    return [
        Fixture(
            "bounded-baseline",
            ScenarioSpec(_full(3, cf.Constant(0.5)), cf.Constant(1.0),
                         cf.Constant(0.0), 2.0),
            "Holds", "EP2(2)",
            pde=dict(_PDE_BALL),
            note="slow motion, branching bounded below: support stays compact"),
        Fixture(
            "fast-diffusion-d2",
            ScenarioSpec(_full(2, cf.PowerLaw(3.0)), cf.Constant(1.0),
                         cf.Constant(0.0), 2.0),
            "Fails", "EP3(1)",
            pde=dict(_PDE_FAST),
            mc={"expect": "escape"},
            note="cubic diffusion growth outruns constant branching"),
        Fixture(
            "p-flip-low",
            ScenarioSpec(_full(1, cf.PowerLaw(2.8)), cf.Constant(1.0),
                         cf.Constant(0.0), 1.5),
            "Fails", "EP3(2)",
            note="m = 2.8 > 1+p for p = 1.5; borderline decay defeats the "
                 "probe sweep, so no pde lane"),
        Fixture(
            "p-flip-high",
            ScenarioSpec(_full(1, cf.PowerLaw(2.8)), cf.Constant(1.0),
                         cf.Constant(0.0), 2.0),
            "Holds", "EP3(3)",
            note="same motion, p = 2: m = 2.8 <= 1+p; classifier-only, as "
                 "for the other half of the pair"),
        Fixture(
            "punctured-d3",
            ScenarioSpec(_punctured(3, cf.Constant(0.5)), cf.Constant(1.0),
                         cf.Constant(0.0), 2.0),
            "Fails", "Theorem P(1)",
            pde=dict(_PDE_PUNCTURED),
            note="d = 3 below the critical dimension 4"),
        Fixture(
            "punctured-d5",
            ScenarioSpec(_punctured(5, cf.Constant(0.5)), cf.Constant(1.0),
                         cf.Constant(0.0), 2.0),
            "Holds", "Theorem P(2)",
            pde=dict(_PDE_PUNCTURED),
            note="d = 5 at or above the critical dimension 4"),
        Fixture(
            "matched-decay",
            ScenarioSpec(_full(3, cf.PowerLaw(3.0)), cf.PowerLaw(1.0),
                         cf.Constant(0.0), 2.0),
            "Holds", "Proposition 1",
            note="alpha ~ (1+r)^(m-2) keeps the support compact despite "
                 "strong explosion of the motion; exactly balanced decay, "
                 "classifier-only"),
        Fixture(
            "thin-branching",
            ScenarioSpec(_full(3, cf.Constant(1.0)),
                         cf.ExpDecay(1.0, 1.0, 2.5), cf.Constant(0.0), 2.0),
            "Fails", "Theorem 1(2)",
            pde={"R_sweep": [6.0, 8.0, 10.0, 12.0],
                 "B_sweep": [1e-2, 1e-1, 1.0],
                 "boundary_mode": "ceiling"},
            note="alpha below the exp(-r^2) threshold for m = 0"),
        Fixture(
            "thick-branching",
            ScenarioSpec(_full(3, cf.Constant(1.0)),
                         cf.ExpDecay(1.0, 1.0, 2.0), cf.Constant(0.0), 2.0),
            "Holds", "Theorem 1(1)",
            pde={"R_sweep": [20.0, 40.0, 80.0],
                 "B_sweep": [1e2, 1e3, 1e4, 1e5]},
            note="alpha exactly at the exp(-r^2) threshold"),
        Fixture(
            "singular-beta-fails",
            ScenarioSpec(_punctured(3, cf.Constant(0.5)), cf.Constant(1.0),
                         cf.InverseSquare(-0.75), 2.0),
            "Fails", "Theorem 3(1)",
            note="inverse-square strength -0.75 above beta0 = -1"),
        Fixture(
            "singular-beta-holds",
            ScenarioSpec(_punctured(3, cf.Constant(0.5)), cf.Constant(1.0),
                         cf.InverseSquare(-1.5), 2.0),
            "Holds", "Theorem 3(2)",
            note="inverse-square strength -1.5 below beta0 = -1"),
        Fixture(
            "explosive-positive-beta",
            ScenarioSpec(_full(3, cf.Symbolic("(1+r)**3")), cf.Constant(1.0),
                         cf.Constant(0.2), 2.0),
            "Fails", "EP4",
            pde=dict(_PDE_FAST),
            mc={"expect": "escape"},
            note="explosive motion (detected by the exit-time engine; the "
                 "symbolic A bypasses the syntactic rules) plus uniformly "
                 "positive mass creation"),
        Fixture(
            "explosive-matched-ratio",
            ScenarioSpec(_full(3, cf.Symbolic("(1+r)**3")),
                         cf.PowerLaw(-1.0, 0.2), cf.PowerLaw(-1.0, 0.3), 2.0),
            "Fails", "EP4",
            note="beta/alpha = 1.5 bounded below although inf beta = 0: the "
                 "general ratio form of the rule"),
        Fixture(
            "explosive-slightly-negative-beta",
            ScenarioSpec(_full(3, cf.PowerLaw(3.0)), cf.Constant(1.0),
                         cf.Constant(-0.05), 2.0),
            "Fails", "Theorem 2",
            note="strong explosion tolerates beta above -1/sup E tau"),
        Fixture(
            "unknown-deep-negative-beta",
            ScenarioSpec(_full(3, cf.PowerLaw(3.0)), cf.Constant(1.0),
                         cf.Constant(-5.0), 2.0),
            "Unknown", "",
            note="beta below every rule's tolerance: honestly undecided"),
    ]


def fixture_map() -> dict:
    return {f.name: f for f in builtin_fixtures()}


def pde_fixture_names() -> list[str]:
    return [f.name for f in builtin_fixtures() if f.pde is not None]


# --- structured-text round trip (same dialect as experiment configs) -------

def _coefficient_table(coef) -> dict:
    if isinstance(coef, cf.Constant):
        return {"kind": "constant", "value": coef.value}
    if isinstance(coef, cf.PowerLaw):
        return {"kind": "power", "exponent": coef.exponent, "scale": coef.scale}
    if isinstance(coef, cf.ExpDecay):
        return {"kind": "exp-decay", "scale": coef.scale, "rate": coef.rate,
                "power": coef.power}
    if isinstance(coef, cf.InverseSquare):
        return {"kind": "inverse-square", "strength": coef.strength}
    if isinstance(coef, cf.Symbolic):
        return {"kind": "symbolic", "expression": str(coef.expr())}
    raise TypeError(f"cannot serialize coefficient {coef!r}")


def scenario_table(s: ScenarioSpec) -> dict:
    out = {"dimension": s.generator.dimension,
           "domain": s.generator.domain.kind,
           "p": s.p,
           "A": _coefficient_table(s.generator.diffusion),
           "alpha": _coefficient_table(s.alpha),
           "beta": _coefficient_table(s.beta)}
    if s.generator.domain.inner:
        out["inner"] = s.generator.domain.inner
    if s.generator.drift is not None:
        out["drift"] = _coefficient_table(s.generator.drift)
    return out


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int,)):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{ " + ", ".join(f"{k} = {_toml_value(x)}"
                                for k, x in v.items()) + " }"
    raise TypeError(f"cannot serialize {v!r} to the config dialect")


def write_verdict_table(path, rows: list[dict]):
    """Write fixture/verdict rows as structured text (one [[verdict]] each)."""
    with open(path, "w") as fh:
        for row in rows:
            fh.write("[[verdict]]\n")
            for k, v in row.items():
                fh.write(f"{k} = {_toml_value(v)}\n")
            fh.write("\n")


def write_fixture_table(path, fixtures=None):
    fixtures = builtin_fixtures() if fixtures is None else fixtures
    with open(path, "w") as fh:
        for f in fixtures:
            fh.write("[[fixture]]\n")
            fh.write(f"name = {_toml_value(f.name)}\n")
            fh.write(f"expected_status = {_toml_value(f.expected_status)}\n")
            fh.write(f"expected_rule = {_toml_value(f.expected_rule)}\n")
            for k, v in scenario_table(f.scenario).items():
                fh.write(f"scenario.{k} = {_toml_value(v)}\n")
            fh.write("\n")
