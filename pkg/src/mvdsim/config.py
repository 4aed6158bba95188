"""Experiment configuration: a strict, human-writable structured format.

Configs are TOML files (JSON with identical structure is also accepted,
which is how a run's ``summary.json`` echo reproduces the run).  The
schema is strict: unknown keys are rejected by name, so typos fail fast
instead of silently running with defaults.

Every numeric parameter has a documented default, collected in
``NUMERIC_DEFAULTS`` below and reproduced in the README table.
"""
from __future__ import annotations

import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:                      # Python 3.10
    import tomli as tomllib

import numpy as np

from . import coefficients as cf
from .csp import ScenarioSpec
from .generator import Domain, GeneratorSpec


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


EXPERIMENTS = ("classify", "maximal-solution", "hitting", "particle-mc",
               "duality-check", "gw-oracle", "residual-check", "explosion",
               "compare-engines")

TOP_LEVEL_KEYS = {"experiment", "seed", "output_dir", "scenario", "numerics",
                  "bundle", "comparison"}

SCENARIO_KEYS = {"dimension", "domain", "inner", "outer", "p", "A", "alpha",
                 "beta", "drift"}

COEFFICIENT_KINDS = {
    "constant": {"value"},
    "power": {"exponent", "scale"},
    "exp-decay": {"scale", "rate", "power"},
    "inverse-square": {"strength"},
    "symbolic": {"expression"},
}

NUMERIC_DEFAULTS = {
    "classify": {
        "truncation_start": 25.0, "truncation_count": 20,
        "tol_g": 1e-3, "exit_h0": 0.01,
    },
    "explosion": {
        "r0": 1.0, "truncation_start": 25.0, "truncation_count": 20,
        "tol_g": 1e-3, "exit_h0": 0.01,
    },
    "gw-oracle": {
        "K": 100_000, "mc_trees": 0, "mc_ks": [1, 5, 10, 50],
    },
    "particle-mc": {
        "n": 500, "dt": 5e-4, "t_end": 1.0, "replicas": 2000,
        "x0_radius": 0.0, "replica_batch": 256, "census_cap": 10_000_000,
        "n_checkpoints": 11, "mark_radius": 0.1, "escape_radius": 1e6,
        "offspring_mode": "", "c": 1.0, "mark": [],
    },
    "duality-check": {
        "n": 500, "dt": 5e-4, "t_end": 1.0, "replicas": 2000,
        "replica_batch": 256, "census_cap": 10_000_000,
        "hat_height": 0.8, "hat_width": 1.0,
        "R": 8.0, "h0": 0.01, "dt_max": 2.5e-4, "c": 1.0,
    },
    "maximal-solution": {
        "R_sweep": [10.0, 20.0, 40.0, 80.0],
        "B_sweep": [1e2, 1e3, 1e4, 1e5],
        "eps_sweep": [1e-1, 1e-2, 1e-3],
        "t_end": 1.0, "probe_r": 1.0, "tol_B": 1e-4, "tol_triv": 1e-3,
        "floor": 5e-2, "stabilize_tol": 0.25, "boundary_mode": "absolute",
        "b_max": 1e290, "h0": 0.02, "nodes_per_decade": 160, "dt_max": 1e-3,
    },
    "hitting": {
        "R_sweep": [10.0, 20.0, 40.0, 80.0],
        "B_sweep": [1e2, 1e3, 1e4, 1e5],
        "eps_sweep": [1e-1, 1e-2, 1e-3],
        "t_end": 1.0, "tol_B": 1e-4, "tol_triv": 1e-3, "floor": 5e-2,
        "stabilize_tol": 0.25, "boundary_mode": "absolute", "b_max": 1e290,
        "h0": 0.02, "nodes_per_decade": 160, "dt_max": 1e-3,
        "mu_radius": 1.0, "mu_mass": 1.0,
    },
    "residual-check": {
        "kind": "stationary_W", "r_min": 0.1, "r_max": 10.0, "n_r": 200,
        "t_values": [0.0, 0.5, 1.0], "sign_tol": 1e-9, "search_rate": False,
        "params": {},
    },
    "compare-engines": {
        "jobs": 1,
    },
}

BUNDLE_KEYS = {"fixtures", "run_mc"}


def load_config(path) -> dict:
    path = Path(path)
    try:
        if path.suffix == ".json":
            with open(path) as fh:
                return json.load(fh)
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def _check_keys(table: dict, allowed: set, where: str):
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key '{where}{key}' "
                              f"(allowed: {sorted(allowed)})")


def coefficient_from_table(table, where: str):
    if isinstance(table, (int, float)):
        return cf.Constant(float(table))
    if not isinstance(table, dict) or "kind" not in table:
        raise ConfigError(f"'{where}' must be a number or a table with 'kind'")
    kind = table["kind"]
    if kind not in COEFFICIENT_KINDS:
        raise ConfigError(f"'{where}.kind' must be one of "
                          f"{sorted(COEFFICIENT_KINDS)}, got {kind!r}")
    _check_keys({k: v for k, v in table.items() if k != "kind"},
                COEFFICIENT_KINDS[kind], where + ".")
    try:
        if kind == "constant":
            return cf.Constant(float(table["value"]))
        if kind == "power":
            return cf.PowerLaw(float(table["exponent"]),
                               float(table.get("scale", 1.0)))
        if kind == "exp-decay":
            return cf.ExpDecay(float(table["scale"]), float(table["rate"]),
                               float(table["power"]))
        if kind == "inverse-square":
            return cf.InverseSquare(float(table["strength"]))
        return cf.Symbolic(table["expression"])
    except KeyError as exc:
        raise ConfigError(f"'{where}' is missing parameter {exc}") from exc


def scenario_from_table(table: dict) -> ScenarioSpec:
    _check_keys(table, SCENARIO_KEYS, "scenario.")
    for required in ("dimension", "A", "alpha", "beta"):
        if required not in table:
            raise ConfigError(f"'scenario.{required}' is required")
    kind = table.get("domain", "full")
    if kind not in Domain.KINDS:
        raise ConfigError(f"'scenario.domain' must be one of {Domain.KINDS}")
    domain = Domain(kind, inner=float(table.get("inner", 0.0) or 0.0),
                    outer=float(table.get("outer", np.inf)))
    drift = table.get("drift")
    gen = GeneratorSpec(
        dimension=int(table["dimension"]),
        diffusion=coefficient_from_table(table["A"], "scenario.A"),
        drift=None if drift is None
        else coefficient_from_table(drift, "scenario.drift"),
        domain=domain)
    return ScenarioSpec(
        generator=gen,
        alpha=coefficient_from_table(table["alpha"], "scenario.alpha"),
        beta=coefficient_from_table(table["beta"], "scenario.beta"),
        p=float(table.get("p", 2.0)))


def resolve(config: dict) -> dict:
    """Validate a raw config and fill numeric defaults.

    Returns a plain-dict echo of the fully resolved configuration (this is
    what ``summary.json`` stores, and it reloads as a valid config).
    """
    if not isinstance(config, dict):
        raise ConfigError("config must be a table")
    _check_keys(config, TOP_LEVEL_KEYS, "")
    if "experiment" not in config:
        raise ConfigError("'experiment' is required")
    exp = config["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(f"'experiment' must be one of {EXPERIMENTS}, "
                          f"got {exp!r}")
    out = {"experiment": exp, "seed": int(config.get("seed", 12345))}
    if "output_dir" in config:
        out["output_dir"] = str(config["output_dir"])

    needs_scenario = exp in ("classify", "maximal-solution", "hitting",
                             "particle-mc", "duality-check", "explosion")
    if needs_scenario:
        if "scenario" not in config:
            raise ConfigError(f"experiment '{exp}' requires a [scenario] table")
        scenario_from_table(config["scenario"])      # validate eagerly
        out["scenario"] = dict(config["scenario"])
    elif "scenario" in config and exp != "residual-check":
        raise ConfigError(f"experiment '{exp}' takes no [scenario] table")
    elif "scenario" in config:
        scenario_from_table(config["scenario"])
        out["scenario"] = dict(config["scenario"])

    defaults = NUMERIC_DEFAULTS.get(exp, {})
    numerics = dict(config.get("numerics", {}))
    _check_keys(numerics, set(defaults), "numerics.")
    merged = dict(defaults)
    merged.update(numerics)
    out["numerics"] = merged

    if exp == "compare-engines":
        bundle = dict(config.get("bundle", {"fixtures": "all-pde"}))
        _check_keys(bundle, BUNDLE_KEYS, "bundle.")
        bundle.setdefault("fixtures", "all-pde")
        bundle.setdefault("run_mc", False)
        out["bundle"] = bundle
    elif "bundle" in config:
        raise ConfigError("only compare-engines takes a [bundle] table")
    return out
