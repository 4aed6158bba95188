"""Acceptance gate: one test per criterion, each printing PASS/FAIL.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines; the
assertions enforce both the numerical tolerances and the runtime budgets.
"""
import time

import numpy as np
import pytest
from scipy.stats import kstest

from mvdsim import coefficients as cf
from mvdsim.branching import (BranchingTriplet, conditioned_population_mc,
                              gw_survival_mc, gw_survival_recursion,
                              run_replicas)
from mvdsim.config import resolve
from mvdsim.csp import beta0, classify
from mvdsim.experiments import exp_compare_engines, exp_duality
from mvdsim.fixtures import builtin_fixtures, fixture_map
from mvdsim.generator import GeneratorSpec, doubling_truncations, \
    mean_exit_time
from mvdsim.pde import maximal_solution
from mvdsim.supersolutions import (ComparisonFunction, search_growth_rate,
                                   verify_comparison)

EXP_MINUS_2 = 0.1353352832366127


def report(criterion, ok, detail):
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} -- {detail}")
    assert ok, detail


class TestAcceptance:
    def test_01_critical_survival_recursion_and_mc(self):
        t0 = time.perf_counter()
        K = 100_000
        oracle = gw_survival_recursion(K)
        ksk = K * oracle.survival[K]
        t_rec = time.perf_counter() - t0
        ok = 1.99 <= ksk <= 2.01 and t_rec < 1.0

        t0 = time.perf_counter()
        s_mc, se = gw_survival_mc(50, 100_000, seed=202)
        t_mc = time.perf_counter() - t0
        gaps = []
        for k in (1, 5, 10, 50):
            gaps.append(abs(s_mc[k] - oracle.survival[k])
                        / max(3 * se[k], 1e-9))
        ok = ok and max(gaps) <= 1.0 and t_mc < 30.0
        report(1, ok, f"K*s_K={ksk:.4f} in [1.99,2.01], recursion {t_rec:.2f}s;"
                      f" MC max gap {max(gaps):.2f} of 3SE, {t_mc:.1f}s")

    def test_02_conditional_exponential_limit(self):
        t0 = time.perf_counter()
        n = 200
        z = conditioned_population_mc(n, 100_000, seed=7)
        stat = kstest(z / n, "expon", args=(0.0, 0.5)).statistic
        elapsed = time.perf_counter() - t0
        ok = stat < 0.05 and elapsed < 120.0
        report(2, ok, f"KS distance to Exp(2) = {stat:.4f} < 0.05, "
                      f"{elapsed:.1f}s")

    def test_03_extinction_probability(self):
        # oracle: v' = -alpha v^2 from v(0+) = inf gives v(t) = 1/(alpha t),
        # so P(extinct by 1) = exp(-v(1)) = exp(-2) for alpha = 1/2
        t0 = time.perf_counter()
        gen = GeneratorSpec(1, cf.Constant(0.5))
        trip = BranchingTriplet(cf.Constant(0.0), cf.Constant(0.5), 2.0)
        stats = run_replicas(gen, trip, n=500, x0=0.0, t_end=1.0, dt=5e-4,
                             n_replicas=2000, seed=31, replica_batch=500)
        freq, se = stats.extinction_frequency()
        elapsed = time.perf_counter() - t0
        ok = abs(freq - EXP_MINUS_2) <= 0.03 and elapsed < 300.0
        report(3, ok, f"extinction {freq:.4f} vs exp(-2)={EXP_MINUS_2:.4f} "
                      f"(gap {abs(freq-EXP_MINUS_2):.4f} <= 0.03), "
                      f"{elapsed:.0f}s")

    def test_04_laplace_duality(self):
        t0 = time.perf_counter()
        cfg = resolve({
            "experiment": "duality-check", "seed": 1234,
            "scenario": {"dimension": 1, "p": 2.0,
                         "A": {"kind": "constant", "value": 0.5},
                         "alpha": {"kind": "constant", "value": 0.5},
                         "beta": {"kind": "constant", "value": 0.0}},
            "numerics": {"n": 500, "replicas": 2000, "dt": 5e-4,
                         "replica_batch": 500}})
        rows, outputs, _ = exp_duality(cfg, None)
        elapsed = time.perf_counter() - t0
        gap_se = rows[0]["gap_over_se"]
        ok = outputs["agree_3se"] and elapsed < 600.0
        report(4, ok, f"MC {outputs['mc_mean']:.4f} vs PDE "
                      f"{outputs['pde_value']:.4f}: gap {gap_se:.2f} SE "
                      f"(<= 3), {elapsed:.0f}s")

    def test_05_punctured_dichotomy(self):
        fm = fixture_map()
        times = {}
        res = {}
        for name in ("punctured-d3", "punctured-d5"):
            fix = fm[name]
            t0 = time.perf_counter()
            res[name] = maximal_solution(
                fix.scenario.generator, fix.scenario.triplet(),
                fix.pde["R_sweep"], fix.pde["B_sweep"], 1.0,
                eps_sweep=fix.pde["eps_sweep"], tol_triv=1e-3, floor=5e-2)
            times[name] = time.perf_counter() - t0
        d3, d5 = res["punctured-d3"], res["punctured-d5"]
        ok = (d3.verdict == "nontrivial" and d5.verdict == "trivial"
              and max(times.values()) < 300.0)
        report(5, ok, f"d=3 {d3.verdict} (probe {d3.probe_values[-1]:.3f} >= "
                      f"0.05), d=5 {d5.verdict} (probe "
                      f"{d5.probe_values[-1]:.2e} < 1e-3); sweeps "
                      f"{times['punctured-d3']:.0f}s/"
                      f"{times['punctured-d5']:.0f}s")

    def test_06_stationary_solution_residual(self):
        t0 = time.perf_counter()
        cfn = ComparisonFunction("stationary_W",
                                 {"kappa": 1.0, "p": 2.0, "d": 3})
        gen = GeneratorSpec(3, cf.Constant(0.5))
        trip = BranchingTriplet(
            cf.InverseSquare(beta0(3, 2.0) + 1.0) if beta0(3, 2.0) + 1.0
            else cf.Constant(0.0), cf.Constant(1.0), 2.0)
        rep = verify_comparison(cfn, gen, trip, np.geomspace(0.1, 10.0, 400))
        elapsed = time.perf_counter() - t0
        ok = rep.max_abs_residual < 1e-12 and elapsed < 10.0
        report(6, ok, f"max |residual| = {rep.max_abs_residual:.2e} < 1e-12 "
                      f"on r in [0.1, 10], {elapsed:.1f}s")

    def test_07_supersolution_sign_checks(self):
        t0 = time.perf_counter()
        gen = GeneratorSpec(3, cf.Constant(1.0))
        trip = BranchingTriplet(cf.Constant(0.0), cf.Constant(1.0), 2.0)
        violations = 0
        rates = {}
        for R in (5.0, 10.0, 20.0):
            K, rep = search_growth_rate(
                "M_RK", gen, trip, {"R": R, "p": 2.0},
                np.linspace(0.05, R - 0.1, 300))
            rates[R] = K
            violations += rep.n_sign_violations
        gen_h = GeneratorSpec(3, cf.Constant(0.5))
        trip_s = BranchingTriplet(cf.InverseSquare(beta0(3, 2.0) - 0.5),
                                  cf.Constant(1.0), 2.0)
        psi = ComparisonFunction("psi_R_eps",
                                 {"R": 50.0, "eps": 0.01, "l": 0.5,
                                  "gamma": 8.0, "p": 2.0})
        rep_psi = verify_comparison(psi, gen_h, trip_s,
                                    np.geomspace(0.0125, 49.5, 400),
                                    t_samples=(0.0, 0.5, 1.0))
        violations += rep_psi.n_sign_violations
        elapsed = time.perf_counter() - t0
        ok = violations == 0 and elapsed < 60.0
        report(7, ok, f"0 sign violations (ball barriers K={rates}, annulus "
                      f"barrier gamma=8), {elapsed:.1f}s")

    def test_08_explosion_dichotomy(self):
        results = {}
        times = {}
        for label, A in (("m=3", cf.PowerLaw(3.0)), ("m=2", cf.PowerLaw(2.0)),
                         ("brownian", cf.Constant(1.0))):
            t0 = time.perf_counter()
            rep = mean_exit_time(GeneratorSpec(3, A), 1.0,
                                 doubling_truncations(25.0, 20))
            times[label] = time.perf_counter() - t0
            results[label] = rep
        ok = (results["m=3"].explosive and results["m=3"].converged
              and np.isfinite(results["m=3"].sup_g)
              and not results["m=2"].explosive
              and not results["brownian"].explosive
              and max(times.values()) < 60.0)
        report(8, ok, f"m=3 explosive (sup E tau = "
                      f"{results['m=3'].sup_g:.3f}), m=2 and brownian "
                      f"non-explosive; {max(times.values()):.1f}s max")

    def test_09_classifier_truth_table(self):
        t0 = time.perf_counter()
        fixtures = builtin_fixtures()
        definite = [f for f in fixtures if f.expected_status != "Unknown"]
        mismatches = []
        for f in fixtures:
            v = classify(f.scenario)
            if (v.status, v.rule) != (f.expected_status, f.expected_rule):
                mismatches.append(f.name)
        fm = fixture_map()
        lo = classify(fm["p-flip-low"].scenario).status
        hi = classify(fm["p-flip-high"].scenario).status
        elapsed = time.perf_counter() - t0
        ok = (not mismatches and len(definite) >= 10
              and {lo, hi} == {"Fails", "Holds"} and elapsed < 10.0)
        report(9, ok, f"{len(fixtures)} fixtures ({len(definite)} definite) "
                      f"reproduce their rules exactly, p-flip pair flips, "
                      f"{elapsed:.2f}s")

    def test_10_engine_agreement(self):
        t0 = time.perf_counter()
        cfg = resolve({"experiment": "compare-engines", "seed": 5,
                       "bundle": {"fixtures": "all"}})
        rows, outputs, status = exp_compare_engines(cfg, None)
        elapsed = time.perf_counter() - t0
        n_pairs = sum(1 for r in rows if r["agree"] in ("yes", "no"))
        ok = (outputs["disagreements"] == 0 and len(rows) >= 8
              and n_pairs >= 6 and elapsed < 1800.0)
        report(10, ok, f"{len(rows)} scenarios, {n_pairs} definite "
                       f"classifier/pde pairs, 0 disagreements, "
                       f"{elapsed:.0f}s")

    def test_11_branching_decay_threshold_dichotomy(self):
        fm = fixture_map()
        t0 = time.perf_counter()
        thin = fm["thin-branching"]          # alpha = exp(-r^2.5): fails
        res_thin = maximal_solution(
            thin.scenario.generator, thin.scenario.triplet(),
            thin.pde["R_sweep"], thin.pde["B_sweep"], 1.0,
            boundary_mode=thin.pde["boundary_mode"], floor=5e-2)
        thick = fm["thick-branching"]        # alpha = exp(-r^2): holds
        res_thick = maximal_solution(
            thick.scenario.generator, thick.scenario.triplet(),
            thick.pde["R_sweep"], thick.pde["B_sweep"], 1.0, tol_triv=1e-3)
        elapsed = time.perf_counter() - t0
        # qualitative criterion: an Unknown on either side is a failure
        ok = (res_thin.verdict == "nontrivial"
              and res_thin.probe_values[-1] > 5e-2
              and res_thick.verdict == "trivial"
              and res_thick.probe_values[-1] < 1e-3
              and elapsed < 1200.0)
        report(11, ok, f"exp(-r^2.5): probe stabilizes at "
                       f"{res_thin.probe_values[-1]:.3g} > 5e-2; exp(-r^2): "
                       f"decays to {res_thick.probe_values[-1]:.2e} < 1e-3 "
                       f"over R 20->80; {elapsed:.0f}s")
