"""Named experiments tying the engines together.

Every experiment consumes a resolved configuration (see
:mod:`mvdsim.config`), returns tidy result rows plus a summary-output
dict, and is written to disk as ``results.csv`` (or ``.json``) together
with ``summary.json`` carrying the full config echo, outputs, seed and
runtimes.  CSV floats are printed with 17 significant digits so reruns
with the same config and seed are byte-identical.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import pde
from .branching import (BranchingTriplet, gw_survival_mc,
                        gw_survival_recursion, run_replicas)
from .config import ConfigError, resolve, scenario_from_table
from .coefficients import Constant, InverseSquare
from .csp import ScenarioSpec, beta0, classify
from .fixtures import fixture_map, pde_fixture_names
from .generator import (GeneratorSpec, doubling_truncations, mean_exit_time)
from .supersolutions import ComparisonFunction, search_growth_rate, \
    verify_comparison


def fmt_float(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_csv(path: Path, rows: list[dict]):
    with open(path, "w") as fh:
        if not rows:
            fh.write("\n")
            return
        cols = list(rows[0].keys())
        for row in rows[1:]:
            for k in row:
                if k not in cols:
                    cols.append(k)
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(fmt_float(row.get(c, "")) for c in cols) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


# ---------------------------------------------------------------------------
# Individual experiments
# ---------------------------------------------------------------------------

def _scenario(cfg) -> ScenarioSpec:
    return scenario_from_table(cfg["scenario"])


def _triplet(s: ScenarioSpec, num: dict) -> BranchingTriplet:
    mode = num.get("offspring_mode") or None
    return s.triplet(offspring_mode=mode, c=float(num.get("c", 1.0)))


def exp_classify(cfg, out_dir):
    s = _scenario(cfg)
    num = cfg["numerics"]
    truncs = doubling_truncations(num["truncation_start"],
                                  int(num["truncation_count"]))
    verdict = classify(s, truncations=truncs, tol_g=num["tol_g"],
                       h0=num["exit_h0"])
    rows = [{"status": verdict.status, "rule": verdict.rule,
             "certificate": json.dumps(verdict.certificate, default=str)}]
    outputs = {"status": verdict.status, "rule": verdict.rule,
               "certificate": verdict.certificate, "info": verdict.info}
    return rows, outputs, ("unknown" if verdict.status == "Unknown" else "ok")


def exp_explosion(cfg, out_dir):
    s = _scenario(cfg)
    num = cfg["numerics"]
    truncs = doubling_truncations(num["truncation_start"],
                                  int(num["truncation_count"]))
    report = mean_exit_time(s.generator, num["r0"], truncs,
                            tol_g=num["tol_g"], h0=num["exit_h0"])
    rows = [{"r": r0, "R": R, "g": g} for (r0, R, g) in report.mean_exit_time_at]
    outputs = {"explosive": report.explosive, "sup_g": report.sup_g,
               "converged": report.converged,
               "truncation_radii_used": report.truncation_radii_used}
    return rows, outputs, "ok"


def exp_gw_oracle(cfg, out_dir):
    num = cfg["numerics"]
    K = int(num["K"])
    oracle = gw_survival_recursion(K)
    ks = sorted(set([1, 2, 3, 5, 10, 50, 100]
                    + [int(x) for x in np.geomspace(1, K, 40)]
                    + [int(k) for k in num["mc_ks"]] + [K]))
    ks = [k for k in ks if 0 < k <= K]
    rows = [{"k": k, "s_k": float(oracle.survival[k])} for k in ks]
    outputs = {"K": K, "s_K": float(oracle.survival[K]),
               "K_times_s_K": float(K * oracle.survival[K])}
    mc_trees = int(num["mc_trees"])
    if mc_trees > 0:
        kmax = max(int(k) for k in num["mc_ks"])
        s_mc, se = gw_survival_mc(kmax, mc_trees, seed=cfg["seed"])
        mc = {}
        for k in num["mc_ks"]:
            k = int(k)
            mc[k] = {"s_mc": float(s_mc[k]), "se": float(se[k]),
                     "s_recursion": float(oracle.survival[k])}
            for row in rows:
                if row["k"] == k:
                    row["s_mc"] = float(s_mc[k])
                    row["se_mc"] = float(se[k])
        outputs["mc"] = mc
        outputs["mc_trees"] = mc_trees
    return rows, outputs, "ok"


def exp_particle_mc(cfg, out_dir):
    s = _scenario(cfg)
    num = cfg["numerics"]
    trip = _triplet(s, num)
    d = s.generator.dimension
    x0 = np.zeros(d)
    x0[0] = float(num["x0_radius"])
    mark = num.get("mark") or None
    stats = run_replicas(
        s.generator, trip, n=int(num["n"]), x0=x0, t_end=num["t_end"],
        dt=num["dt"], n_replicas=int(num["replicas"]), seed=cfg["seed"],
        census_cap=int(num["census_cap"]),
        replica_batch=int(num["replica_batch"]),
        n_checkpoints=int(num["n_checkpoints"]), mark=mark,
        mark_radius=num["mark_radius"], escape_radius=num["escape_radius"])
    rows = []
    for i in range(stats.n_replicas):
        rows.append({"replica": i, "extinct": int(stats.extinct[i]),
                     "final_mass": float(stats.final_mass[i]),
                     "support_radius_final": float(stats.support_radius[i, -1]),
                     "overflow": int(stats.overflow[i]),
                     "escaped": int(stats.escaped[i]),
                     "hit": int(stats.hit[i])})
    freq, se = stats.extinction_frequency()
    hit_freq, hit_se = stats.hitting_frequency()
    qs = stats.support_quantiles()
    outputs = {"extinction_frequency": freq, "extinction_se": se,
               "hitting_frequency": hit_freq, "hitting_se": hit_se,
               "overflow_count": int(stats.overflow.sum()),
               "escaped_count": int(stats.escaped.sum()),
               "checkpoint_times": stats.checkpoint_times.tolist(),
               "support_radius_quantiles": {
                   "q25": qs[0].tolist(), "q50": qs[1].tolist(),
                   "q75": qs[2].tolist()}}
    return rows, outputs, "ok"


def _hat(height, width):
    def f(r):
        return height * np.maximum(0.0, 1.0 - np.abs(r) / width)
    return f


def exp_duality(cfg, out_dir):
    """Laplace-functional duality: MC expectation vs PDE exponent."""
    s = _scenario(cfg)
    num = cfg["numerics"]
    if s.generator.dimension != 1:
        raise ConfigError("duality-check is defined for dimension = 1")
    trip = _triplet(s, num)
    f = _hat(num["hat_height"], num["hat_width"])
    stats = run_replicas(
        s.generator, trip, n=int(num["n"]), x0=np.zeros(1),
        t_end=num["t_end"], dt=num["dt"], n_replicas=int(num["replicas"]),
        seed=cfg["seed"], replica_batch=int(num["replica_batch"]),
        census_cap=int(num["census_cap"]),
        functional=lambda pos: f(np.linalg.norm(pos, axis=1)))
    lap = np.exp(-stats.extra["functional_sum"][stats.valid])
    mc_mean = float(lap.mean())
    mc_se = float(lap.std(ddof=1) / np.sqrt(lap.size))
    grid = pde.solve_cauchy(s.generator, trip, f, t_end=num["t_end"],
                            R=num["R"], h0=num["h0"], dt_max=num["dt_max"])
    u0t = grid.at(0.0, num["t_end"])
    pde_value = float(np.exp(-u0t))
    gap = abs(mc_mean - pde_value)
    rows = [{"mc_mean": mc_mean, "mc_se": mc_se, "pde_value": pde_value,
             "u_f_at_origin": u0t, "gap": gap, "gap_over_se": gap / mc_se}]
    outputs = {"mc_mean": mc_mean, "mc_se": mc_se, "pde_value": pde_value,
               "u_f_at_origin": u0t, "agree_3se": bool(gap <= 3 * mc_se)}
    return rows, outputs, "ok"


def _max_solution_from_config(s, num, probe_r=None):
    trip = s.triplet()
    punctured = s.generator.domain.has_inner_boundary
    return pde.maximal_solution(
        s.generator, trip, num["R_sweep"], num["B_sweep"], num["t_end"],
        eps_sweep=(num["eps_sweep"] if punctured else None),
        probe_r=probe_r if probe_r is not None else num.get("probe_r", 1.0),
        tol_B=num["tol_B"], tol_triv=num["tol_triv"], floor=num["floor"],
        stabilize_tol=num["stabilize_tol"],
        boundary_mode=num["boundary_mode"], b_max=num["b_max"],
        h0=num["h0"], nodes_per_decade=int(num["nodes_per_decade"]),
        dt_max=num["dt_max"])


def _trace_rows(res):
    rows = []
    for rec in res.probe_trace:
        for B, v in zip(rec["B_levels"], rec["B_probe_values"]):
            rows.append({"stage": rec["stage"], "R": rec["R"],
                         "eps": rec["eps"] if rec["eps"] is not None else "",
                         "B": B, "probe": v})
    return rows


def exp_maximal_solution(cfg, out_dir):
    s = _scenario(cfg)
    num = cfg["numerics"]
    res = _max_solution_from_config(s, num)
    rows = _trace_rows(res)
    outputs = {"verdict": res.verdict, "message": res.message,
               "probe_r": res.probe_r, "probe_values": res.probe_values,
               "trace": res.probe_trace}
    if out_dir is not None:
        res.grid.to_csv(Path(out_dir) / "grid.csv")
        key = pde.config_key(cfg)
        pde.save_grid(Path(out_dir) / "cache", key, res.grid)
        outputs["grid_cache_key"] = key
    return rows, outputs, ("unknown" if res.verdict == "unknown" else "ok")


def exp_hitting(cfg, out_dir):
    s = _scenario(cfg)
    num = cfg["numerics"]
    if not s.generator.domain.has_inner_boundary:
        raise ConfigError("hitting requires a punctured scenario domain")
    est = pde.hitting_probability(
        s.generator, s.triplet(), mu_radius=num["mu_radius"],
        mu_mass=num["mu_mass"], t_end=num["t_end"],
        R_sweep=num["R_sweep"], B_sweep=num["B_sweep"],
        eps_sweep=num["eps_sweep"], tol_B=num["tol_B"],
        tol_triv=num["tol_triv"], floor=num["floor"],
        stabilize_tol=num["stabilize_tol"],
        boundary_mode=num["boundary_mode"], b_max=num["b_max"], h0=num["h0"],
        nodes_per_decade=int(num["nodes_per_decade"]), dt_max=num["dt_max"])
    rows = [{"probability": est.probability, "verdict": est.verdict,
             "u_max_probe": est.probe_value}]
    outputs = {"probability": est.probability, "verdict": est.verdict,
               "u_max_probe": est.probe_value, "trace": est.trace}
    return rows, outputs, ("unknown" if est.verdict == "unknown" else "ok")


def _default_residual_setup(kind, params):
    """Canonical (scenario, triplet) for each comparison-function family."""
    p = float(params.get("p", 2.0))
    d = int(params.get("d", 3))
    if kind == "stationary_W":
        kappa = float(params.get("kappa", 1.0))
        strength = beta0(d, p) + kappa
        gen = GeneratorSpec(dimension=d, diffusion=Constant(0.5))
        return gen, BranchingTriplet(beta=InverseSquare(strength)
                                     if strength else Constant(0.0),
                                     alpha=Constant(1.0), p=p)
    if kind == "psi_R_eps":
        strength = float(params.get("beta_strength", beta0(d, p) - 0.5))
        gen = GeneratorSpec(dimension=d, diffusion=Constant(0.5))
        return gen, BranchingTriplet(beta=InverseSquare(strength),
                                     alpha=Constant(1.0), p=p)
    gen = GeneratorSpec(dimension=d, diffusion=Constant(1.0))
    return gen, BranchingTriplet(beta=Constant(0.0), alpha=Constant(1.0), p=p)


def exp_residual_check(cfg, out_dir):
    num = cfg["numerics"]
    kind = num["kind"]
    params = dict(num["params"])
    if "scenario" in cfg:
        s = _scenario(cfg)
        gen, trip = s.generator, s.triplet()
        params.setdefault("p", s.p)
        params.setdefault("d", gen.dimension)
    else:
        gen, trip = _default_residual_setup(kind, params)
        params.setdefault("p", trip.p)
        if kind == "stationary_W":
            params.setdefault("d", gen.dimension)
            params.setdefault("kappa", 1.0)
    r_samples = np.geomspace(num["r_min"], num["r_max"], int(num["n_r"]))
    t_samples = [float(t) for t in num["t_values"]]
    searched = None
    if num["search_rate"]:
        rate_key = {"M_RK": "K", "psi_R_eps": "gamma"}[kind]
        params.pop(rate_key, None)
        searched, report = search_growth_rate(kind, gen, trip, params,
                                              r_samples, t_samples,
                                              sign_tol=num["sign_tol"])
        params[rate_key] = searched
    else:
        cfn = ComparisonFunction(kind, params)
        report = verify_comparison(cfn, gen, trip, r_samples, t_samples,
                                   sign_tol=num["sign_tol"])
    rows = [{"kind": kind, "max_residual": report.max_residual,
             "max_abs_residual": report.max_abs_residual,
             "sign_violations": report.n_sign_violations,
             "n_samples": report.n_samples}]
    outputs = {"kind": kind, "params": params,
               "max_residual": report.max_residual,
               "max_abs_residual": report.max_abs_residual,
               "sign_violations": report.n_sign_violations,
               "clean": report.clean(), "worst": list(report.worst)}
    if searched is not None:
        outputs["searched_rate"] = searched
    if out_dir is not None:
        with open(Path(out_dir) / "residual.json", "w") as fh:
            json.dump(outputs, fh, indent=2, default=_json_default)
    return rows, outputs, "ok"


V_AGREE = {("Holds", "trivial"): True, ("Fails", "nontrivial"): True,
           ("Holds", "nontrivial"): False, ("Fails", "trivial"): False}


def _fixture_pde_verdict(fix):
    num = dict(NUMERIC_BASE_MAXSOL)
    num.update(fix.pde)
    res = _max_solution_from_config(fix.scenario, num)
    return res


NUMERIC_BASE_MAXSOL = {
    "R_sweep": [10.0, 20.0, 40.0, 80.0], "B_sweep": [1e2, 1e3, 1e4, 1e5],
    "eps_sweep": [1e-1, 1e-2, 1e-3], "t_end": 1.0, "probe_r": 1.0,
    "tol_B": 1e-4, "tol_triv": 1e-3, "floor": 5e-2, "stabilize_tol": 0.25,
    "boundary_mode": "absolute", "b_max": 1e290, "h0": 0.02,
    "nodes_per_decade": 160, "dt_max": 1e-3,
}


def _fixture_mc_indicator(fix, seed):
    stats = run_replicas(fix.scenario.generator, fix.scenario.triplet(),
                         n=100, x0=np.zeros(fix.scenario.d), t_end=0.25,
                         dt=1e-3, n_replicas=40, seed=seed,
                         escape_radius=1e5, replica_batch=40,
                         census_cap=2_000_000)
    return "escape" if stats.escaped.any() else "no-escape"


def exp_compare_engines(cfg, out_dir):
    bundle = cfg["bundle"]
    names = bundle["fixtures"]
    if names == "all-pde":
        names = pde_fixture_names()
    elif names == "all":
        names = list(fixture_map())
    if isinstance(names, str):
        raise ConfigError("bundle.fixtures must be 'all', 'all-pde' or a list")
    table = fixture_map()
    unknown_names = [n for n in names if n not in table]
    if unknown_names:
        raise ConfigError(f"bundle.fixtures contains unknown fixtures: "
                          f"{unknown_names} (available: {sorted(table)})")
    jobs = max(1, int(cfg["numerics"].get("jobs", 1)))
    fixtures = [table[n] for n in names]

    def work(fix):
        verdict = classify(fix.scenario)
        pde_res = _fixture_pde_verdict(fix) if fix.pde is not None else None
        mc = None
        if bundle.get("run_mc") and fix.mc is not None:
            mc = _fixture_mc_indicator(fix, cfg["seed"])
        return fix, verdict, pde_res, mc

    if jobs > 1 and len(fixtures) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, fixtures))
    else:
        results = [work(f) for f in fixtures]

    rows = []
    disagreements = 0
    unknowns = 0
    for fix, verdict, pde_res, mc in results:
        pde_verdict = pde_res.verdict if pde_res is not None else ""
        agree = ""
        if verdict.status in ("Holds", "Fails") and \
                pde_verdict in ("trivial", "nontrivial"):
            ok = V_AGREE[(verdict.status, pde_verdict)]
            agree = "yes" if ok else "no"
            if not ok:
                disagreements += 1
        elif pde_verdict == "unknown" or verdict.status == "Unknown":
            unknowns += 1
        rows.append({"scenario": fix.name, "classifier": verdict.status,
                     "rule": verdict.rule, "pde": pde_verdict,
                     "mc_indicator": mc if mc is not None else "",
                     "agree": agree,
                     "probe_values": ";".join(
                         fmt_float(v) for v in
                         (pde_res.probe_values if pde_res else []))})
    outputs = {"n_scenarios": len(rows), "disagreements": disagreements,
               "unknowns": unknowns,
               "verdicts": {r["scenario"]: {"classifier": r["classifier"],
                                            "pde": r["pde"],
                                            "agree": r["agree"]}
                            for r in rows}}
    if out_dir is not None:
        from .fixtures import write_verdict_table
        write_verdict_table(Path(out_dir) / "verdicts.toml", rows)
    status = "ok"
    if disagreements:
        status = "disagree"
    elif unknowns:
        status = "unknown"
    return rows, outputs, status


EXPERIMENT_FNS = {
    "classify": exp_classify,
    "explosion": exp_explosion,
    "gw-oracle": exp_gw_oracle,
    "particle-mc": exp_particle_mc,
    "duality-check": exp_duality,
    "maximal-solution": exp_maximal_solution,
    "hitting": exp_hitting,
    "residual-check": exp_residual_check,
    "compare-engines": exp_compare_engines,
}


@dataclass
class RunResult:
    exit_code: int
    outputs: dict
    summary_path: Optional[Path]
    results_path: Optional[Path]


def run(config: dict, *, output_dir=None, seed: Optional[int] = None,
        fmt: str = "csv", jobs: Optional[int] = None) -> RunResult:
    """Validate, execute and persist one experiment.

    Exit code 0 for definite results, 2 when a verdict came back Unknown,
    1 for validation/user errors (raised as ConfigError and mapped by the
    CLI).  Engine disagreements in compare-engines exit 1.
    """
    resolved = resolve(config)
    if seed is not None:
        resolved["seed"] = int(seed)
    if jobs is not None and resolved["experiment"] == "compare-engines":
        resolved["numerics"]["jobs"] = int(jobs)
    if output_dir is not None:
        resolved["output_dir"] = str(output_dir)

    out_dir = None
    if resolved.get("output_dir"):
        out_dir = Path(resolved["output_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    rows, outputs, status = EXPERIMENT_FNS[resolved["experiment"]](
        resolved, out_dir)
    elapsed = time.perf_counter() - t0

    summary = {"config": resolved, "outputs": outputs,
               "seed": resolved["seed"],
               "runtimes": {"total_seconds": elapsed},
               "status": status}
    summary_path = results_path = None
    if out_dir is not None:
        if fmt == "json":
            results_path = out_dir / "results.json"
            with open(results_path, "w") as fh:
                json.dump(rows, fh, indent=1, default=_json_default)
        else:
            results_path = out_dir / "results.csv"
            write_csv(results_path, rows)
        summary_path = out_dir / "summary.json"
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=1, default=_json_default)

    code = {"ok": 0, "unknown": 2, "disagree": 1}[status]
    return RunResult(code, summary, summary_path, results_path)
