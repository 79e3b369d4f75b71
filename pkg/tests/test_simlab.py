import json
import math

import numpy as np
import pytest

from ifkit.catalog import get_entry, truth, variance_of_if
from ifkit.dsl import evaluate_functional, parse_functional
from ifkit.errors import UnknownDGP
from ifkit.simlab import (
    DGP_IDS,
    StudyConfig,
    dr_experiment,
    get_dgp,
    remainder_scaling,
    replication_seed,
    run_replication,
    run_study,
)
from ifkit.simlab.study import broken_switches

KNN_CV = "knn(cv=5, grid=[5, 10, 25, 50, 100, 200])"


class TestDGPs:
    def test_registered(self):
        assert set(DGP_IDS) == {"ate-smooth-1d", "ecc-randomized", "density-gauss-mix", "late-binary", "gf-2t-binary"}

    def test_smooth_truth(self):
        assert get_dgp("ate-smooth-1d").truth("mean_treated") == pytest.approx(1 / 3, abs=1e-14)

    def test_randomized_truth(self):
        assert get_dgp("ecc-randomized").truth("expected_cond_cov") == pytest.approx(0.25, abs=1e-14)

    def test_unknown(self):
        with pytest.raises(UnknownDGP):
            get_dgp("unknown")

    def test_density_closed_form(self):
        closed = 0.25 * (2 / (2 * math.sqrt(math.pi)) + 2 * math.exp(-1) / (2 * math.sqrt(math.pi)))
        assert get_dgp("density-gauss-mix").truth("expected_density") == pytest.approx(closed, abs=1e-12)

    def test_late_truth_by_summation(self):
        P = get_dgp("late-binary").dist
        t = P.table
        # E[E(Y|X,R=1) - E(Y|X,R=0)] / E[E(A|X,R=1) - E(A|X,R=0)], summed by hand
        num = den = 0.0
        for x in (0, 1):
            px = t[x].sum()
            ey = [t[x, r, :, 1].sum() / t[x, r].sum() for r in (0, 1)]
            ea = [t[x, r, 1].sum() / t[x, r].sum() for r in (0, 1)]
            num += px * (ey[1] - ey[0])
            den += px * (ea[1] - ea[0])
        assert num / den == pytest.approx(0.4, abs=1e-14)
        assert truth(get_entry("late_ratio"), P) == pytest.approx(num / den, abs=1e-14)

    def test_gformula_truth(self):
        P = get_dgp("gf-2t-binary").dist
        hand = 0.5 * (0.6 * 0.8 + 0.4 * 0.6) + 0.5 * (0.8 * 0.9 + 0.2 * 0.7)
        assert hand == pytest.approx(0.79, abs=1e-15)
        assert get_dgp("gf-2t-binary").truth("gformula_2t") == pytest.approx(0.79, abs=1e-14)
        expr = parse_functional(get_entry("gformula_2t").dsl)
        assert evaluate_functional(expr, P) == pytest.approx(0.79, abs=1e-14)

    def test_sampler_deterministic(self):
        dgp = get_dgp("ate-smooth-1d")
        assert dgp.sample(50, 3) == dgp.sample(50, 3)
        assert not dgp.sample(50, 3) == dgp.sample(50, 4)

    def test_samples_match_truth(self):
        dgp = get_dgp("ate-smooth-1d")
        d = dgp.sample(20000, 1)
        treated = d.a == 1
        assert abs(treated.mean() - 0.5) < 0.02
        assert abs(d.y[treated].mean() - np.mean(d.x[treated, 0] ** 2)) < 0.02

    def test_variance_of_if_monte_carlo(self):
        dgp = get_dgp("ate-smooth-1d")
        e = get_entry("mean_treated")
        d = dgp.sample(200000, 2)
        from ifkit.catalog import eval_uncentered_if

        phi = eval_uncentered_if(e, dgp.true_bundle(e), d)
        assert variance_of_if(e, dgp) == pytest.approx(np.var(phi), rel=0.02)

    def test_unsupported_functional(self):
        with pytest.raises(ValueError):
            get_dgp("late-binary").measure(get_entry("mean_treated"))


class TestConfig:
    def test_round_trip(self):
        c = StudyConfig("ate-smooth-1d", "mean_treated", {"*": KNN_CV}, (500, 2000), 10, R_per_n={2000: 4})
        doc = json.loads(json.dumps(c.to_json()))
        assert StudyConfig.from_json(doc) == c
        assert c.replications(2000) == 4 and c.replications(500) == 10

    @pytest.mark.parametrize(
        "kw",
        [
            dict(R=0),
            dict(n=(40,)),
            dict(functional="late_ratio"),
            dict(estimator="tmle"),
            dict(learners={"*": "forest()"}),
            dict(broken={"nope": 0.0}),
        ],
    )
    def test_invalid(self, kw):
        base = dict(dgp="ate-smooth-1d", functional="mean_treated", n=(500,), R=2)
        base.update(kw)
        with pytest.raises(Exception):
            StudyConfig(**base)

    def test_unknown_keys(self):
        with pytest.raises(ValueError):
            StudyConfig.from_json({"dgp": "ate-smooth-1d", "functional": "mean_treated", "reps": 3})

    def test_seed_derivation(self):
        s = {replication_seed(1, n, r) for n in (500, 2000) for r in range(50)}
        assert len(s) == 100
        assert replication_seed(1, 500, 0) == replication_seed(1, 500, 0)


class TestStudy:
    def test_single_replication(self):
        c = StudyConfig("ate-smooth-1d", "mean_treated", {"*": "knn(k=20)"}, (500,), 1, decompose=True)
        res = run_study(c)
        cell = res.cell(500)
        assert cell["sd_undefined"] is True and cell["sd"] is None
        assert cell["bias"] == res.records[0]["psi_hat"] - res.truth

    def test_deterministic_and_thread_independent(self):
        c = StudyConfig("ate-smooth-1d", "ate_contrast", {"*": "knn(k=20)"}, (300,), 6)
        a, b = run_study(c), run_study(c)
        assert a.dumps() == b.dumps()
        assert run_study(c, threads=2).dumps() == a.dumps()

    def test_cell_identities(self):
        c = StudyConfig("ate-smooth-1d", "mean_treated", {"*": KNN_CV}, (400, 800), 12, decompose=True)
        res = run_study(c)
        for cell in res.cells:
            assert cell["rmse"] ** 2 == pytest.approx(cell["bias"] ** 2 + cell["sd"] ** 2, rel=1e-12)
            assert 0.0 <= cell["coverage"] <= 1.0
        for r in res.records:
            parts = r["S_star"] + r["T1"] + r["T2"]
            assert parts == pytest.approx(r["psi_hat"] - res.truth, abs=1e-14)
        lines = res.records_csv().splitlines()
        assert lines[0].startswith("n,rep,seed,psi_hat") and len(lines) == 25

    def test_exact_nuisances_cover(self):
        c = StudyConfig("ate-smooth-1d", "mean_treated", {"*": "oracle"}, (500,), 200)
        cell = run_study(c).cell(500)
        assert abs(cell["coverage"] - 0.95) <= 3 * math.sqrt(0.95 * 0.05 / 200)
        assert abs(cell["bias"]) * math.sqrt(500) <= 3 * math.sqrt(cell["n_var_ratio"] * 0.33674 / 200)

    def test_failures_are_recorded(self):
        c = StudyConfig("ate-smooth-1d", "mean_treated", {"*": "knn(k=20)"}, (200,), 3, broken={"pi": 0.001})
        res = run_study(c)
        assert res.cell(200)["failures"] == 3 and res.cell(200)["failure_rate"] == 1.0
        assert res.records[0]["failure"].startswith("PositivityViolation")

    def test_replication_matches_direct_call(self):
        c = StudyConfig("late-binary", "late_ratio", {"*": "knn(k=30)"}, (600,), 2)
        rec = run_replication(c, 600, 1)
        from ifkit.estimate import crossfit_estimate

        d = get_dgp("late-binary").sample(600, rec["seed"])
        assert crossfit_estimate(c.entry(), c.learners, d, 5, rec["seed"]).psi_hat == rec["psi_hat"]

    @pytest.mark.parametrize("estimator", ["onestep", "plugin", "full-onestep"])
    def test_other_estimators(self, estimator):
        fid = "late_ratio" if estimator == "full-onestep" else "mean_treated"
        dgp = "late-binary" if estimator == "full-onestep" else "ate-smooth-1d"
        c = StudyConfig(dgp, fid, {"*": "knn(k=25)"}, (500,), 3, estimator=estimator)
        res = run_study(c)
        assert res.cell(500)["failures"] == 0


class TestDoubleRobustness:
    def test_switches(self):
        e = get_entry("mean_treated")
        assert broken_switches(e, "mu") == {"mu": 0.0}
        assert broken_switches(e, "pi") == {"pi": 0.5}
        assert broken_switches(e, "both") == {"pi": 0.5, "mu": 0.0}
        assert broken_switches(e, "none") == {}
        with pytest.raises(ValueError):
            broken_switches(e, "all")

    def test_broken_regression_small_scale(self):
        rec = dr_experiment("ate-smooth-1d", "mean_treated", "mu", 1000, 20)
        assert rec.plugin_bias == pytest.approx(-1 / 3, abs=1e-12)
        assert abs(rec.onestep_bias) < 0.03
        assert rec.failures == 0


class TestScaling:
    def test_mean_treated(self):
        rec = remainder_scaling("mean_treated", "ate-smooth-1d")
        assert all(3.5 <= r <= 4.5 for r in rec.ratios)

    def test_ecc_regression_only_direction_is_exact_zero(self):
        rec = remainder_scaling("expected_cond_cov", "ate-smooth-1d", direction={"mu": lambda X: 0.3 + 0 * X[:, 0]})
        assert rec.exact_zero and rec.ratios == ()

    def test_density_exactly_quadratic(self):
        rec = remainder_scaling("expected_density", "density-gauss-mix")
        assert all(abs(r - 4) <= 1e-6 for r in rec.ratios)
        assert all(v < 0 for v in rec.remainders)
