"""Acceptance suite: one verdict line per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdicts inline;
they are also repeated in the terminal summary.
"""
import json
import math
import os
import time

import numpy as np
import pytest
from scipy.stats import kstest

from ifkit import catalog
from ifkit.catalog import LinearPolicy, exact_bundle, get_entry, stochastic_entry
from ifkit.cli import main
from ifkit.dist import Schema, random_positive
from ifkit.dsl import check_if, derive_if, evaluate_functional, if_values, parse_functional
from ifkit.simlab import StudyConfig, dr_experiment, get_dgp, remainder_scaling, run_study

THREADS = os.cpu_count() or 1
KNN_CV = "knn(cv=5, grid=[5, 10, 25, 50, 100, 200])"
ATE_TEXT = "sum_x { E[y | x=x, a=1] * p(x=x) }"

# Variables that play a treatment or instrument role stay binary; the others get 2 to 4 levels.
BINARY_ROLES = {"a", "r", "a2"}


def random_schema(entry, rng):
    return Schema.of({name: 2 if name in BINARY_ROLES else int(rng.integers(2, 5))
                      for name in entry.dsl_schema})


def symbolic_entries():
    ids = ["mean_treated", "ate_contrast", "expected_density", "expected_cond_cov",
           "late_numerator", "late_denominator", "gformula_2t"]
    entries = [get_entry(i) for i in ids]
    entries.append(stochastic_entry())
    entries.append(stochastic_entry(LinearPolicy(0.2, 0.2)))
    return entries


# 1 ------------------------------------------------------------------------


def test_symbolic_matches_gateaux_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_gap, worst_residual, count = 0.0, 0.0, 0
    failing = []
    for entry in symbolic_entries():
        expr = parse_functional(entry.dsl)
        phi = derive_if(expr)[0]
        for _ in range(100):
            P = random_positive(random_schema(entry, rng), rng)
            report = check_if(expr, P, ifexpr=phi)
            worst_gap = max(worst_gap, report.max_gap)
            worst_residual = max(worst_residual, report.residual)
            if report.max_gap > 1e-6 or report.residual > 1e-9:
                failing.append(entry.id)
            count += 1
    elapsed = time.perf_counter() - start
    ok = not failing and elapsed <= 60
    detail = (f"{count} distributions over {len(symbolic_entries())} functionals, max gap {worst_gap:.2e} (<=1e-6), "
              f"max mean-zero residual {worst_residual:.2e} (<=1e-9), {elapsed:.1f} s (<=60)")
    if failing:
        detail += f"; failing: {sorted(set(failing))}"
    assert verdict("1 symbolic vs oracle", ok, detail)


# 2 ------------------------------------------------------------------------


def closed_form_ate_if(P):
    """A / pi(X) * (Y - mu(X)) + mu(X) - psi, computed straight from the table."""
    t = P.table  # axes x, a, y
    y_levels = np.arange(t.shape[2], dtype=float)
    px = t.sum(axis=(1, 2))
    pi = t[:, 1, :].sum(axis=1) / px
    mu = (t[:, 1, :] * y_levels).sum(axis=1) / t[:, 1, :].sum(axis=1)
    psi = float((mu * px).sum())
    a = np.arange(2, dtype=float)
    return (a[None, :, None] / pi[:, None, None] * (y_levels[None, None, :] - mu[:, None, None])
            + mu[:, None, None] - psi)


def test_derived_ate_equals_closed_form(verdict):
    phi = derive_if(parse_functional(ATE_TEXT))[0]
    rng = np.random.default_rng(2)
    gap = 0.0
    for _ in range(20):
        schema = Schema.of({"x": int(rng.integers(2, 5)), "a": 2, "y": int(rng.integers(2, 5))})
        P = random_positive(schema, rng)
        gap = max(gap, float(np.max(np.abs(if_values(phi, P) - closed_form_ate_if(P)))))
    assert verdict("2 ATE closed form", gap <= 1e-12, f"20 distributions, max atom-wise gap {gap:.2e} (<=1e-12)")


# 3 ------------------------------------------------------------------------


def identity_gap(entry, rng):
    """|remainder - [psi(Q) - psi(P) + E_P phi(.; Q)]| with psi and phi(.; Q) from independent routes."""
    expr = parse_functional(entry.dsl)
    phi = derive_if(expr)[0]
    schema = random_schema(entry, rng)
    P, Q = random_positive(schema, rng), random_positive(schema, rng)
    rem = catalog.remainder(entry, exact_bundle(entry, Q), P=P)
    phi_q = if_values(phi, Q)  # centered at psi(Q), evaluated on the common support
    identity = evaluate_functional(expr, Q) - evaluate_functional(expr, P) + float(np.sum(P.table * phi_q))
    return abs(rem - identity)


def test_remainder_identity_and_scaling(verdict):
    rng = np.random.default_rng(3)
    entries = symbolic_entries()
    id_gap = max(identity_gap(e, rng) for e in entries for _ in range(20))
    mt = remainder_scaling("mean_treated", "ate-smooth-1d")
    ecc = remainder_scaling("expected_cond_cov", "ate-smooth-1d")
    dens = remainder_scaling("expected_density", "density-gauss-mix")
    ok_id = id_gap <= 1e-8
    ok_quad = all(3.5 <= r <= 4.5 for r in mt.ratios + ecc.ratios) and len(mt.ratios) == len(ecc.ratios) == 2
    ok_dens = len(dens.ratios) == 2 and all(abs(r - 4) <= 1e-6 for r in dens.ratios)
    fmt = lambda rs: "/".join(f"{r:.4f}" for r in rs)  # noqa: E731
    detail = (f"identity gap {id_gap:.1e} (<=1e-8) over {len(entries) * 20} pairs; ratios mean_treated {fmt(mt.ratios)}, "
              f"ECC {fmt(ecc.ratios)} (in [3.5, 4.5]); density {fmt(dens.ratios)} (4 +- 1e-6)")
    assert verdict("3 remainder identity and scaling", ok_id and ok_quad and ok_dens, detail)


# 4 ------------------------------------------------------------------------


@pytest.mark.slow
def test_oracle_regime(verdict):
    start = time.perf_counter()
    n, R = 2000, 1000
    config = StudyConfig("ate-smooth-1d", "mean_treated", {"*": "oracle"}, (n,), R, 5)
    res = run_study(config, THREADS)
    elapsed = time.perf_counter() - start
    recs = [r for r in res.records if r["failure"] is None]
    est = np.array([r["psi_hat"] for r in recs])
    coverage = float(np.mean([r["covered"] for r in recs]))
    var_phi = catalog.variance_of_if(get_entry("mean_treated"), get_dgp("ate-smooth-1d"))
    z = math.sqrt(n) * (est - res.truth) / math.sqrt(var_phi)
    ks_p = float(kstest(z, "norm").pvalue)
    ratio = n * float(np.var(est, ddof=1)) / var_phi
    cell = res.cell(n)
    consistent = (cell["coverage"] == coverage and math.isclose(cell["ks_pvalue"], ks_p, rel_tol=1e-9)
                  and math.isclose(cell["n_var_ratio"], ratio, rel_tol=1e-9))
    ok = (len(recs) == R and 0.93 <= coverage <= 0.97 and ks_p > 0.001 and abs(ratio - 1) <= 0.10
          and consistent and elapsed <= 300)
    detail = (f"n={n} R={R}: coverage {coverage:.3f} (in [0.93, 0.97]), KS p {ks_p:.3f} (>0.001), "
              f"n*var/var(phi) {ratio:.3f} (within 10%), {elapsed:.0f} s (<=300)")
    assert verdict("4 oracle regime", ok, detail)


# 5 and 7 share one learned-nuisance study ---------------------------------


@pytest.fixture(scope="module")
def learned_study():
    start = time.perf_counter()
    config = StudyConfig("ate-smooth-1d", "mean_treated", {"*": KNN_CV}, (500, 2000, 8000), 1000, 5,
                         decompose=True, R_per_n={8000: 400})
    res = run_study(config, THREADS)
    return res, time.perf_counter() - start


@pytest.mark.slow
def test_learned_nuisance_coverage(learned_study, verdict):
    res, elapsed = learned_study
    c500, c2000, c8000 = (res.cell(n) for n in (500, 2000, 8000))
    recs = [r for r in res.records if r["n"] == 2000 and r["failure"] is None]
    coverage = float(np.mean([r["covered"] for r in recs]))
    scaled = []
    for n in (500, 2000, 8000):
        err = np.array([r["psi_hat"] for r in res.records if r["n"] == n and r["failure"] is None]) - res.truth
        scaled.append(float(np.sqrt(np.mean(err ** 2)) * math.sqrt(n)))
    spread = max(scaled) / min(scaled)
    consistent = c2000["coverage"] == coverage and all(
        math.isclose(c["rmse_sqrt_n"], s, rel_tol=1e-12) for c, s in zip((c500, c2000, c8000), scaled))
    ok = (len(recs) == 1000 and 0.92 <= coverage <= 0.98 and spread < 1.5 and consistent and elapsed <= 1200)
    detail = (f"n=2000 R=1000 coverage {coverage:.3f} (in [0.92, 0.98]); RMSE*sqrt(n) "
              f"{scaled[0]:.3f}/{scaled[1]:.3f}/{scaled[2]:.3f} at n=500/2000/8000, spread x{spread:.2f} (<1.5); "
              f"{elapsed:.0f} s (<=1200)")
    assert verdict("5 learned-nuisance coverage", ok, detail)


# 6 ------------------------------------------------------------------------


@pytest.mark.slow
def test_double_robustness(verdict):
    mu_broken = dr_experiment("ate-smooth-1d", "mean_treated", "mu", 5000, 200, threads=THREADS)
    both = dr_experiment("ate-smooth-1d", "mean_treated", "both", 5000, 200, threads=THREADS)
    ok = (abs(mu_broken.onestep_bias) < 0.02 and -0.353 <= mu_broken.plugin_bias <= -0.313
          and abs(both.onestep_bias) > 0.05 and mu_broken.failures == 0)
    detail = (f"broken=mu: one-step bias {mu_broken.onestep_bias:+.4f} (|.|<0.02), plug-in bias "
              f"{mu_broken.plugin_bias:+.4f} (in [-0.353, -0.313]); broken=both: one-step bias "
              f"{both.onestep_bias:+.4f} (|.|>0.05)")
    assert verdict("6 double robustness", ok, detail)


# 7 ------------------------------------------------------------------------


@pytest.mark.slow
def test_decomposition(learned_study, verdict):
    res, _ = learned_study
    recs = [r for r in res.records if r["failure"] is None]
    worst = max(abs((r["psi_hat"] - res.truth) - (r["S_star"] + r["T1"] + r["T2"])) for r in recs)
    tol = 1e-12
    m500 = res.cell(500)["median_abs_T2_sqrt_n"]
    m8000 = res.cell(8000)["median_abs_T2_sqrt_n"]
    direct = np.median([abs(r["T2"]) * math.sqrt(8000) for r in recs if r["n"] == 8000])
    ok = worst <= tol and m8000 < m500 and math.isclose(direct, m8000, rel_tol=1e-12)
    detail = (f"max |error - (S*+T1+T2)| {worst:.1e} over {len(recs)} replications (<={tol:.0e}); "
              f"median |T2|*sqrt(n) {m500:.4f} at n=500 > {m8000:.4f} at n=8000")
    assert verdict("7 decomposition", ok, detail)


# 8 ------------------------------------------------------------------------


def test_determinism_and_round_trip(tmp_path, verdict, capsys):
    cfg = {"dgp": "ate-smooth-1d", "functional": "mean_treated", "learners": {"*": KNN_CV},
           "n": [500, 1000], "R": 4, "K": 5, "seed": 8}
    (tmp_path / "study.json").write_text(json.dumps(cfg))
    base = ["simulate", "--config", str(tmp_path / "study.json"), "--quiet"]
    codes = [main(base + ["--out", str(tmp_path / "a.json"), "--emit-data", str(tmp_path / "data")]),
             main(base + ["--out", str(tmp_path / "b.json")])]
    identical = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    records = json.loads((tmp_path / "a.json").read_text())["records"]
    worst = 0.0
    for rec in records:
        csv = tmp_path / "data" / f"n{rec['n']}_r{rec['rep']}_seed{rec['seed']}.csv"
        out = tmp_path / f"est_{rec['n']}_{rec['rep']}.json"
        codes.append(main(["estimate", "--functional", "mean_treated", "--data", str(csv), "--learner-default",
                           KNN_CV, "--seed", str(rec["seed"]), "--out", str(out), "--quiet"]))
        worst = max(worst, abs(json.loads(out.read_text())["psi_hat"] - rec["psi_hat"]))
    capsys.readouterr()
    ok = identical and worst <= 1e-12 and set(codes) == {0} and len(records) == 8
    detail = (f"repeated simulate output byte-identical: {identical}; {len(records)} emitted datasets re-estimated, "
              f"max |psi_hat gap| {worst:.1e} (<=1e-12)")
    assert verdict("8 determinism and round trip", ok, detail)
